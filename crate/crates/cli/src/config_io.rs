//! Configuration resolution: defaults ← file ← environment ← command-line
//! overrides, then validation and a content hash that every artifact embeds.

use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use sha2::{Digest, Sha256};
use tires_core::config::Config;

/// Environment variable that switches the run to an external judge at the
/// given endpoint (`cmd:<program> [args…]` or `host:port`).
pub const JUDGE_ENDPOINT_VAR: &str = "TIRES_JUDGE_ENDPOINT";

/// A validated configuration plus the hash artifacts carry.
#[derive(Debug, Clone)]
pub struct ResolvedConfig {
    pub config: Config,
    pub hash: String,
}

/// SHA-256 over the canonical JSON form of a validated config.
///
/// The output directory is excluded: it names where artifacts land, not
/// what experiment produced them, so the same experiment hashes the same
/// wherever it is written.
pub fn config_hash(cfg: &Config) -> String {
    let mut keyed = cfg.clone();
    keyed.out_dir = String::new();
    let json = serde_json::to_vec(&keyed).expect("config serializes");
    hex::encode(Sha256::digest(&json))
}

/// Loads and layers configuration. Precedence, lowest to highest: built-in
/// defaults, the optional TOML file, `TIRES_JUDGE_ENDPOINT`, each
/// `--override key=value` in order, then the `--out` flag.
pub fn resolve(
    file: Option<&Path>,
    overrides: &[String],
    out_flag: Option<&Path>,
) -> Result<ResolvedConfig> {
    let endpoint = std::env::var(JUDGE_ENDPOINT_VAR).ok().filter(|e| !e.is_empty());
    resolve_with_endpoint(file, overrides, out_flag, endpoint)
}

fn resolve_with_endpoint(
    file: Option<&Path>,
    overrides: &[String],
    out_flag: Option<&Path>,
    judge_endpoint: Option<String>,
) -> Result<ResolvedConfig> {
    let mut table = match file {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            text.parse::<toml::Table>()
                .with_context(|| format!("parsing config file {}", path.display()))?
        }
        None => toml::Table::new(),
    };

    if let Some(endpoint) = judge_endpoint {
        set_path(&mut table, "judge.mode", toml::Value::String("external".into()))?;
        set_path(&mut table, "judge.endpoint", toml::Value::String(endpoint))?;
    }

    for entry in overrides {
        let (key, raw) = entry
            .split_once('=')
            .ok_or_else(|| anyhow!("override {entry:?} is not of the form key=value"))?;
        set_path(&mut table, key, parse_value(raw))
            .with_context(|| format!("applying override {entry:?}"))?;
    }

    if let Some(out) = out_flag {
        set_path(&mut table, "out_dir", toml::Value::String(out.display().to_string()))?;
    }

    let config: Config =
        Config::deserialize(toml::Value::Table(table)).context("invalid configuration")?;
    config.validate().context("invalid configuration")?;
    let hash = config_hash(&config);
    Ok(ResolvedConfig { config, hash })
}

use serde::Deserialize;

/// Sets `table[a][b]…[leaf] = value` for a dotted path, creating
/// intermediate tables as needed.
fn set_path(table: &mut toml::Table, path: &str, value: toml::Value) -> Result<()> {
    let mut parts = path.split('.').peekable();
    let mut cursor = table;
    while let Some(part) = parts.next() {
        if part.is_empty() {
            bail!("config key {path:?} has an empty path component");
        }
        if parts.peek().is_none() {
            cursor.insert(part.to_owned(), value);
            return Ok(());
        }
        cursor = cursor
            .entry(part.to_owned())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| anyhow!("config key {part:?} in {path:?} is not a section"))?;
    }
    unreachable!("split always yields at least one part");
}

/// Parses an override value with TOML literal syntax; anything that does
/// not parse (like a bare `reinforce++`) is taken as a string.
fn parse_value(raw: &str) -> toml::Value {
    format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

/// The full key/default listing shown in `--help`, generated from the real
/// defaults so it can never drift.
pub fn config_help() -> String {
    let defaults = toml::to_string_pretty(&Config::default()).expect("defaults serialize");
    format!(
        "Configuration keys and their defaults (TOML; override any of them with \
         --override dotted.path=value):\n\n{defaults}\n\
         The reward weights also accept the short keys w_t, w_s, and w_r.\n\
         {JUDGE_ENDPOINT_VAR}, when set, switches judge.mode to \"external\" with that endpoint\n\
         (precedence: config file < environment < --override flags)."
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resolve_clean(overrides: &[&str]) -> Result<ResolvedConfig> {
        let owned: Vec<String> = overrides.iter().map(|s| (*s).to_owned()).collect();
        resolve_with_endpoint(None, &owned, None, None)
    }

    #[test]
    fn defaults_resolve_without_a_file() {
        let r = resolve_clean(&[]).unwrap();
        assert_eq!(r.config, Config::default());
        assert_eq!(r.hash.len(), 64);
    }

    #[test]
    fn overrides_take_effect_and_change_the_hash() {
        let base = resolve_clean(&[]).unwrap();
        let r = resolve_clean(&["optimizer.mode=reinforce++", "reward.w_s=0", "seed=9"]).unwrap();
        assert_eq!(r.config.reward.w_sufficiency, 0.0);
        assert_eq!(r.config.seed, 9);
        assert_ne!(r.hash, base.hash);
    }

    #[test]
    fn later_overrides_win() {
        let r = resolve_clean(&["seed=1", "seed=2"]).unwrap();
        assert_eq!(r.config.seed, 2);
    }

    #[test]
    fn the_output_directory_does_not_change_the_hash() {
        let a = resolve_clean(&["out_dir=runs/a"]).unwrap();
        let b = resolve_clean(&["out_dir=runs/b"]).unwrap();
        assert_eq!(a.hash, b.hash);
    }

    #[test]
    fn the_endpoint_variable_selects_the_external_judge() {
        let r = resolve_with_endpoint(None, &[], None, Some("127.0.0.1:4000".into())).unwrap();
        assert_eq!(r.config.judge.endpoint, "127.0.0.1:4000");
        // Flags still win over the environment.
        let r = resolve_with_endpoint(
            None,
            &["judge.mode=oracle".to_owned(), "judge.endpoint=".to_owned()],
            None,
            Some("127.0.0.1:4000".into()),
        )
        .unwrap();
        assert_eq!(r.config, Config::default());
    }

    #[test]
    fn bad_overrides_name_the_key() {
        let err = resolve_clean(&["optimizer.clips=0.3"]).unwrap_err();
        assert!(format!("{err:#}").contains("clips"), "{err:#}");
        let err = resolve_clean(&["penalty.lambda=-1"]).unwrap_err();
        assert!(format!("{err:#}").contains("lambda"), "{err:#}");
        let err = resolve_clean(&["seed"]).unwrap_err();
        assert!(format!("{err:#}").contains("key=value"), "{err:#}");
    }

    #[test]
    fn help_listing_contains_every_top_level_section() {
        let help = config_help();
        for section in
            ["[world]", "[rollout]", "[reward]", "[difficulty]", "[penalty]", "[filter]", "[optimizer]", "[judge]"]
        {
            assert!(help.contains(section), "missing {section} in help");
        }
        assert!(help.contains("seed = 0"));
    }
}
