//! Finite-difference verification of the analytic surrogate gradient.
//!
//! Each case rolls out a group under one policy, scores it with synthetic
//! advantages, then evaluates objective and gradient under a *different*
//! (perturbed) policy. Evaluating away from the rollout policy keeps every
//! importance ratio off the clip kinks, where the surrogate is smooth and a
//! central difference must agree with the analytic derivative.

use std::collections::BTreeSet;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use tires_core::advantage::normalize_group;
use tires_core::policy::{
    batch_gradient, batch_objective, rollout_group, Action, AgentState, RolloutConfig,
    TabularPolicy, TrainSample,
};
use tires_core::world::{generate_world, sample_question};

const CLIP: f64 = 0.2;
const FD_STEP: f64 = 1e-5;
/// Minimum distance any ratio must keep from the clip boundaries so the
/// difference quotient never straddles a kink.
const KINK_MARGIN: f64 = 1e-3;

fn action_from_index(i: usize) -> Action {
    match i {
        0..=3 => Action::SearchHop(i as u8 + 1),
        4 => Action::SearchNoise,
        5 => Action::AnswerBest,
        6 => Action::AnswerRandom,
        7 => Action::Reflect,
        8 => Action::Stop,
        other => panic!("no action has index {other}"),
    }
}

/// One reproducible test instance: samples rolled out under a uniform
/// policy, synthetic grid-valued advantages, and an evaluation policy whose
/// preferences were nudged off the rollout policy.
fn build_case(seed: u64) -> (Vec<TrainSample<f64>>, TabularPolicy<f64>) {
    let world = generate_world(seed, 30, 5, 6).expect("world parameters are valid");
    let q = sample_question(&world, 2, seed ^ 0xABCD).expect("2 hops is in range");

    let rollout_policy = TabularPolicy::<f64>::new(1.0);
    let cfg = RolloutConfig { group_size: 5, ..RolloutConfig::default() };
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9E37_79B9));
    let rollouts = rollout_group(&rollout_policy, &world, &q, &cfg, &mut rng);

    // Synthetic advantages: grid values, redrawn until they carry signal,
    // then z-scored like the trainer would.
    let advantages = loop {
        let raw: Vec<f64> =
            (0..rollouts.len()).map(|_| rng.gen_range(-8i32..=8) as f64 / 4.0).collect();
        let z = normalize_group(&raw);
        if z.iter().any(|&a| a != 0.0) {
            break z;
        }
    };
    let samples: Vec<TrainSample<f64>> =
        rollouts.iter().zip(&advantages).map(|(r, &a)| TrainSample::new(r, a)).collect();

    // Perturb every preference the batch can see. Redraw until all ratios
    // clear the clip kinks (deterministic: the rng stream just advances).
    'attempt: loop {
        let mut policy = TabularPolicy::<f64>::new(1.0);
        let mut seen: BTreeSet<(AgentState, usize)> = BTreeSet::new();
        for s in &samples {
            for d in &s.decisions {
                for &a in &d.legal {
                    if seen.insert((d.state, a.index())) {
                        let delta = rng.gen_range(-8i32..=8) as f64 / 20.0;
                        policy.set_pref(d.state, a, delta);
                    }
                }
            }
        }
        for s in &samples {
            for (d, &old) in s.decisions.iter().zip(&s.old_logprobs) {
                let lps = policy.logprobs(&d.state, &d.legal);
                let at = d.legal.iter().position(|&a| a == d.action).expect("action is legal");
                let ratio = (lps[at] - old).exp();
                if (ratio - (1.0 - CLIP)).abs() < KINK_MARGIN
                    || (ratio - (1.0 + CLIP)).abs() < KINK_MARGIN
                {
                    continue 'attempt;
                }
            }
        }
        return (samples, policy);
    }
}

fn fd_derivative(
    policy: &TabularPolicy<f64>,
    samples: &[TrainSample<f64>],
    state: AgentState,
    action: Action,
) -> f64 {
    let base = policy.pref(&state, action);
    let mut plus = policy.clone();
    plus.set_pref(state, action, base + FD_STEP);
    let mut minus = policy.clone();
    minus.set_pref(state, action, base - FD_STEP);
    (batch_objective(&plus, samples, CLIP) - batch_objective(&minus, samples, CLIP))
        / (2.0 * FD_STEP)
}

#[test]
fn analytic_gradient_matches_central_differences() {
    let mut checked = 0usize;
    for seed in 0..12u64 {
        let (samples, policy) = build_case(seed);
        let grad = batch_gradient(&policy, &samples, CLIP).expect("temperature is positive");
        assert!(!grad.is_empty(), "seed {seed} produced an empty gradient");

        for (&(state, idx), &analytic) in &grad {
            let fd = fd_derivative(&policy, &samples, state, action_from_index(idx));
            let rel = (fd - analytic).abs() / f64::max(1e-6, analytic.abs());
            assert!(
                rel <= 1e-5,
                "seed {seed} state {state:?} action {idx}: analytic {analytic} vs fd {fd} (rel {rel})",
            );
            checked += 1;
        }
    }
    // The loop must have actually exercised a meaningful table.
    assert!(checked > 100, "only {checked} coordinates checked");
}

#[test]
fn masked_action_preferences_never_move_the_objective() {
    for seed in [3u64, 7, 11] {
        let (samples, policy) = build_case(seed);
        // Stop is illegal before the first answer, so its preference at the
        // initial state is invisible to any pre-answer decision.
        let initial = AgentState::initial();
        let visible = samples
            .iter()
            .flat_map(|s| &s.decisions)
            .any(|d| d.state == initial && d.legal.contains(&Action::Stop));
        assert!(!visible, "Stop should be masked at the initial state");

        let before = batch_objective(&policy, &samples, CLIP);
        let mut shifted = policy.clone();
        shifted.set_pref(initial, Action::Stop, 999.0);
        let after = batch_objective(&shifted, &samples, CLIP);
        assert_eq!(before, after, "seed {seed}: masked preference leaked into the objective");

        let grad = batch_gradient(&policy, &samples, CLIP).expect("temperature is positive");
        assert!(!grad.contains_key(&(initial, Action::Stop.index())));
    }
}

#[test]
fn small_ascent_steps_raise_the_objective() {
    for seed in [1u64, 5, 9] {
        let (samples, policy) = build_case(seed);
        let grad = batch_gradient(&policy, &samples, CLIP).expect("temperature is positive");
        let norm_sq: f64 = grad.values().map(|g| g * g).sum();
        assert!(norm_sq > 1e-12, "seed {seed}: gradient vanished");

        let lr = 1e-3;
        let mut stepped = policy.clone();
        for (&(state, idx), &g) in &grad {
            let action = action_from_index(idx);
            let base = stepped.pref(&state, action);
            stepped.set_pref(state, action, base + lr * g);
        }
        let before = batch_objective(&policy, &samples, CLIP);
        let after = batch_objective(&stepped, &samples, CLIP);
        assert!(
            after > before,
            "seed {seed}: objective fell from {before} to {after} along the gradient",
        );
    }
}
