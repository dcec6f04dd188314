//! End-to-end subcommand tests driving the compiled binary.

use std::io::Write;
use std::path::Path;
use std::process::{Command, Output, Stdio};

use tires_core::trace::Trajectory;
use tires_core::world::WorldSpec;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_tires")
}

/// Runs the binary with a judge-free environment and returns its output.
fn run(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env_remove("TIRES_JUDGE_ENDPOINT")
        .output()
        .expect("binary launches")
}

fn assert_success(out: &Output, what: &str) {
    assert!(
        out.status.success(),
        "{what} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Overrides for a seconds-scale training run.
fn tiny_run_args<'a>(out_dir: &'a str, extra: &[&'a str]) -> Vec<String> {
    let mut args: Vec<String> = ["train"].iter().map(|s| (*s).to_owned()).collect();
    for ov in [
        "seed=7",
        "world.seed=3",
        "world.entities=40",
        "world.chains=5",
        "world.distractors=4",
        "world.question_hops=2",
        "world.pool=6",
        "rollout.group_size=4",
        "rollout.max_steps=8",
        "optimizer.steps=4",
        "optimizer.batch_questions=3",
    ] {
        args.push("--override".to_owned());
        args.push((*ov).to_owned());
    }
    for ov in extra {
        args.push("--override".to_owned());
        args.push((*ov).to_owned());
    }
    args.push("--out".to_owned());
    args.push(out_dir.to_owned());
    args
}

fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

#[test]
fn gen_world_exports_world_and_question_pool() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("w");
    let o = run(&[
        "gen-world",
        "--override",
        "world.entities=40",
        "--override",
        "world.chains=5",
        "--override",
        "world.pool=4",
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_success(&o, "gen-world");

    let world: WorldSpec = serde_json::from_str(&read(&out.join("world.json"))).unwrap();
    assert_eq!(world.entities.len(), 40);
    assert_eq!(world.chain_count(), 5);

    let questions = read(&out.join("questions.jsonl"));
    let lines: Vec<&str> = questions.lines().collect();
    assert_eq!(lines.len(), 4);
    for line in lines {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        assert_eq!(v["hops"].as_u64().unwrap(), 3);
        assert_eq!(v["hop_chain"].as_array().unwrap().len(), 3);
        assert_eq!(
            v["hop_chain"].as_array().unwrap().last().unwrap()["object"],
            v["gold_answer"]
        );
        assert!(v["config_hash"].is_string());
    }
}

#[test]
fn train_writes_every_artifact_with_a_consistent_hash() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = tiny_run_args(out.to_str().unwrap(), &[]);
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert_success(&o, "train");

    let config: serde_json::Value = serde_json::from_str(&read(&out.join("config.json"))).unwrap();
    let hash = config["config_hash"].as_str().unwrap();
    assert_eq!(hash.len(), 64);

    for csv in ["curves.csv", "audit.csv"] {
        let text = read(&out.join(csv));
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), format!("# config_hash={hash}"), "{csv} hash line");
        let header = lines.next().unwrap();
        assert!(header.starts_with("step,"), "{csv} header: {header}");
        assert!(lines.next().is_some(), "{csv} has data rows");
    }
    let curves = read(&out.join("curves.csv"));
    assert_eq!(curves.lines().count(), 2 + 4, "one curve row per step");

    let audit = read(&out.join("audit.csv"));
    assert_eq!(
        audit.lines().nth(1).unwrap(),
        "step,question_id,rollout_index,r_sum,A_i,A_S,A_T,A_A,penalty,W,A_final,filtered"
    );
    // steps × batch_questions × group_size rollouts, one audit row each.
    assert_eq!(audit.lines().count(), 2 + 4 * 3 * 4);

    let trajectories = read(&out.join("trajectories.jsonl"));
    assert_eq!(trajectories.lines().count(), 4 * 3 * 4);
    for line in trajectories.lines() {
        let t: Trajectory = serde_json::from_str(line).unwrap();
        assert_eq!(t.meta["config_hash"].as_str().unwrap(), hash);
        assert!(t.meta["reward"]["total"].is_number());
        assert!(!t.segments.is_empty());
    }

    let ck: serde_json::Value = serde_json::from_str(&read(&out.join("checkpoint.json"))).unwrap();
    assert_eq!(ck["version"].as_u64().unwrap(), 1);
    assert_eq!(ck["config_hash"].as_str().unwrap(), hash);
    assert!(ck["policy"]["entries"].is_array());
}

#[test]
fn identical_runs_produce_identical_artifacts_anywhere() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let args = tiny_run_args(out.to_str().unwrap(), &[]);
        assert_success(&run(&args.iter().map(String::as_str).collect::<Vec<_>>()), "train");
    }
    for f in ["curves.csv", "audit.csv", "trajectories.jsonl", "questions.jsonl", "world.json"] {
        assert_eq!(read(&a.join(f)), read(&b.join(f)), "{f} must not depend on the out dir");
    }
}

#[test]
fn strict_filtering_on_binary_rewards_trips_the_collapse_guard() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    // One-hop questions make every answer reward exactly 0 or 1, so the
    // strict-interior filter drops every group until the guard fires.
    let args = tiny_run_args(
        out.to_str().unwrap(),
        &[
            "world.question_hops=1",
            "filter.mode=alg1",
            "optimizer.steps=60",
            "optimizer.batch_questions=2",
            "rollout.group_size=2",
        ],
    );
    let o = run(&args.iter().map(String::as_str).collect::<Vec<_>>());
    assert!(!o.status.success(), "collapse must exit nonzero");
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("collapse guard"), "stderr: {stderr}");
}

#[test]
fn unknown_config_keys_are_rejected_by_name() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("never-created");
    let o = run(&["train", "--override", "optimizer.foo=1", "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("foo"), "stderr: {stderr}");
    assert!(!out.exists(), "a rejected config must not leave artifacts behind");
}

#[test]
fn eval_reports_metrics_and_is_idempotent() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let args = tiny_run_args(run_dir.to_str().unwrap(), &[]);
    assert_success(&run(&args.iter().map(String::as_str).collect::<Vec<_>>()), "train");

    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for out in [&e1, &e2] {
        let o = run(&[
            "eval",
            "--checkpoint",
            run_dir.join("checkpoint.json").to_str().unwrap(),
            "--world",
            run_dir.join("world.json").to_str().unwrap(),
            "--questions",
            run_dir.join("questions.jsonl").to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_success(&o, "eval");
        let stdout = String::from_utf8_lossy(&o.stdout);
        assert!(stdout.contains("EM"), "stdout: {stdout}");
        assert!(stdout.contains("underthinking"), "stdout: {stdout}");
    }
    assert_eq!(read(&e1.join("report.csv")), read(&e2.join("report.csv")));
    assert_eq!(read(&e1.join("summary.json")), read(&e2.join("summary.json")));

    let summary: serde_json::Value = serde_json::from_str(&read(&e1.join("summary.json"))).unwrap();
    assert_eq!(summary["n"].as_u64().unwrap(), 6);
    let c = &summary["categories"];
    let total: u64 = ["over_correct", "over_incorrect", "good_correct", "good_incorrect", "under_correct", "under_incorrect"]
        .iter()
        .map(|k| c[k].as_u64().unwrap())
        .sum();
    assert_eq!(total, 6, "six category cells sum to n");
}

#[test]
fn score_trace_lists_unreadable_records_and_exits_nonzero() {
    let dir = tempfile::tempdir().unwrap();
    let world_dir = dir.path().join("w");
    let o = run(&[
        "gen-world",
        "--override",
        "world.entities=40",
        "--override",
        "world.chains=5",
        "--override",
        "world.pool=2",
        "--out",
        world_dir.to_str().unwrap(),
    ]);
    assert_success(&o, "gen-world");

    let first_question: serde_json::Value =
        serde_json::from_str(read(&world_dir.join("questions.jsonl")).lines().next().unwrap())
            .unwrap();
    let qid = first_question["question_id"].as_str().unwrap();

    let traces = dir.path().join("traces.jsonl");
    let good = serde_json::json!({
        "question_id": qid,
        "segments": [
            {"kind": "think", "text": "answering blind"},
            {"kind": "answer", "text": first_question["gold_answer"]},
        ],
    });
    let unpaired_search = serde_json::json!({
        "question_id": qid,
        "segments": [
            {"kind": "search", "text": "dangling"},
            {"kind": "answer", "text": "x"},
        ],
    });
    std::fs::write(
        &traces,
        format!(
            "{good}\n{{not json\n{}\n{unpaired_search}\n",
            serde_json::json!({"question_id": "q-nowhere", "segments": [{"kind": "answer", "text": "x"}]})
        ),
    )
    .unwrap();

    let out = dir.path().join("scores");
    let o = run(&[
        "score-trace",
        "--traces",
        traces.to_str().unwrap(),
        "--world",
        world_dir.join("world.json").to_str().unwrap(),
        "--questions",
        world_dir.join("questions.jsonl").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(!o.status.success(), "malformed records must exit nonzero");
    let stderr = String::from_utf8_lossy(&o.stderr);
    assert!(stderr.contains("line 2"), "stderr: {stderr}");
    assert!(stderr.contains("line 3"), "stderr: {stderr}");
    assert!(stderr.contains("line 4"), "stderr: {stderr}");
    assert!(stderr.contains("3 unreadable"), "stderr: {stderr}");

    // The readable record was still scored: a correct blind answer earns
    // full answer reward with no retrieved evidence.
    let scores = read(&out.join("scores.csv"));
    let rows: Vec<&str> = scores.lines().skip(2).collect();
    assert_eq!(rows.len(), 1, "scores: {scores}");
    assert!(rows[0].starts_with(&format!("1,{qid},1,0,")), "row: {}", rows[0]);
}

#[test]
fn replay_renders_the_stored_trajectory_with_rewards() {
    let dir = tempfile::tempdir().unwrap();
    let run_dir = dir.path().join("run");
    let args = tiny_run_args(run_dir.to_str().unwrap(), &[]);
    assert_success(&run(&args.iter().map(String::as_str).collect::<Vec<_>>()), "train");

    let o = run(&[
        "replay",
        "--traces",
        run_dir.join("trajectories.jsonl").to_str().unwrap(),
        "--world",
        run_dir.join("world.json").to_str().unwrap(),
        "--questions",
        run_dir.join("questions.jsonl").to_str().unwrap(),
        "--index",
        "1",
    ]);
    assert_success(&o, "replay");
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(stdout.contains("=== line 1:"), "stdout: {stdout}");
    assert!(stdout.contains("<answer>"), "stdout: {stdout}");
    assert!(stdout.contains("rewards:  answer"), "stdout: {stdout}");
}

#[test]
fn judge_stub_speaks_the_wire_protocol() {
    let mut child = Command::new(bin())
        .args(["judge-stub", "--sufficient-score", "1", "--thinking-score", "0.25"])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut stdin = child.stdin.take().unwrap();
    writeln!(
        stdin,
        r#"{{"kind":"sufficient","question":"q","trajectory":"<answer>x</answer>","gold":"x","request_id":"r1"}}"#
    )
    .unwrap();
    writeln!(
        stdin,
        r#"{{"kind":"thinking","question":"q","trajectory":"<answer>x</answer>","gold":"x","request_id":"r2"}}"#
    )
    .unwrap();
    drop(stdin);

    let out = child.wait_with_output().unwrap();
    assert!(out.status.success());
    let lines: Vec<serde_json::Value> = String::from_utf8_lossy(&out.stdout)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["request_id"], "r1");
    assert_eq!(lines[0]["score"], 1.0);
    assert_eq!(lines[1]["request_id"], "r2");
    assert_eq!(lines[1]["score"], 0.25);
}

#[test]
fn the_environment_variable_routes_training_through_the_external_judge() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = tiny_run_args(out.to_str().unwrap(), &["optimizer.steps=2"]);
    let o = Command::new(bin())
        .args(args.iter().map(String::as_str))
        .env(
            "TIRES_JUDGE_ENDPOINT",
            format!("cmd:{} judge-stub --sufficient-score 1 --thinking-score 0.75", bin()),
        )
        .output()
        .unwrap();
    assert_success(&o, "train with external judge");

    let config: serde_json::Value = serde_json::from_str(&read(&out.join("config.json"))).unwrap();
    assert_eq!(config["config"]["judge"]["mode"], "external");

    // The stub pins thinking to 0.75 and sufficiency to 1 for every rollout.
    let curves = read(&out.join("curves.csv"));
    for row in curves.lines().skip(2) {
        let cols: Vec<&str> = row.split(',').collect();
        assert_eq!(cols[2], "0.75", "thinking column in {row}");
        assert_eq!(cols[3], "1", "sufficiency column in {row}");
    }
}

#[test]
fn top_level_help_enumerates_the_config_keys() {
    let o = run(&["--help"]);
    assert_success(&o, "--help");
    let stdout = String::from_utf8_lossy(&o.stdout);
    for needle in [
        "[world]",
        "[optimizer]",
        "[judge]",
        "w_thinking = 0.6",
        "learning_rate = 0.1",
        "TIRES_JUDGE_ENDPOINT",
        "gen-world",
        "score-trace",
        "replay",
    ] {
        assert!(stdout.contains(needle), "--help lacks {needle}\n{stdout}");
    }
}
