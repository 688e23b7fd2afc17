//! Solver, estimator and simulator against independently computed answers.

mod common;

use approx::assert_abs_diff_eq;
use bcrl_core::rng;
use bcrl_core::simulator::{simulate_policy, DeterministicHook, GroundTruth};
use bcrl_core::solver::{
    derive_policy, optimal_policy, solve_mdp, value_iteration, Objective, Policy, PolicyMode,
    PolicyRole, TabularMdp,
};
use bcrl_core::{estimate_dynamics, DynamicsModel, SolverConfig};

/// Two states, one action each: closed-form inverse of `I - gamma P`.
#[test]
fn two_state_chain_closed_form() {
    let (p, q) = (0.3, 0.6); // P(0 -> 1), P(1 -> 0)
    let (r0, r1) = (1.0, -0.5);
    let gamma = 0.85;
    let mdp = TabularMdp {
        n_states: 2,
        n_actions: 1,
        reward: vec![r0, r1],
        transitions: vec![vec![(0, 1.0 - p), (1, p)], vec![(0, q), (1, 1.0 - q)]],
    };
    let vf = solve_mdp(&mdp, &SolverConfig::default(), Objective::Maximize).unwrap();
    let a = 1.0 - gamma * (1.0 - p);
    let b = -gamma * p;
    let c = -gamma * q;
    let d = 1.0 - gamma * (1.0 - q);
    let det = a * d - b * c;
    let v0 = (d * r0 - b * r1) / det;
    let v1 = (-c * r0 + a * r1) / det;
    assert_abs_diff_eq!(vf.v[0], v0, epsilon = 1e-7);
    assert_abs_diff_eq!(vf.v[1], v1, epsilon = 1e-7);
}

#[test]
fn zero_discount_picks_the_best_immediate_reward() {
    let m = common::random_model(&mut rng::stream(7, &[]), 5, 3, -1.0, 1.0);
    let cfg = SolverConfig {
        gamma: 0.0,
        ..SolverConfig::default()
    };
    let vf = value_iteration(&m, &cfg).unwrap();
    let policy = derive_policy(&vf, PolicyMode::Best);
    for s in 0..5 {
        let best = (0..3).map(|a| m.reward(s, a)).fold(f64::MIN, f64::max);
        assert_eq!(vf.v[s], best);
        assert_eq!(m.reward(s, policy.actions().unwrap()[s]), best);
    }
}

#[test]
fn ties_go_to_the_lowest_action() {
    let mdp = TabularMdp {
        n_states: 1,
        n_actions: 3,
        reward: vec![0.5, 0.5, 0.5],
        transitions: vec![vec![(0, 1.0)]; 3],
    };
    let cfg = SolverConfig::default();
    let best = derive_policy(
        &solve_mdp(&mdp, &cfg, Objective::Maximize).unwrap(),
        PolicyMode::Best,
    );
    let worst = derive_policy(
        &solve_mdp(&mdp, &cfg, Objective::Minimize).unwrap(),
        PolicyMode::Worst,
    );
    assert_eq!(best.actions(), Some(&[0][..]));
    assert_eq!(worst.actions(), Some(&[0][..]));
}

/// Exact expected reward at step `t` by propagating the state distribution.
fn expected_rewards(
    truth: &DynamicsModel,
    actions: &[usize],
    start: &[f64],
    horizon: usize,
) -> Vec<f64> {
    let n = truth.n_states;
    let mut mu = start.to_vec();
    let mut out = Vec::new();
    for _ in 0..horizon {
        out.push((0..n).map(|s| mu[s] * truth.reward(s, actions[s])).sum());
        let mut next = vec![0.0; n];
        for s in 0..n {
            for (j, p) in truth.row(s, actions[s]).iter().enumerate() {
                next[j] += mu[s] * p;
            }
        }
        mu = next;
    }
    out
}

#[test]
fn simulated_means_track_exact_propagation() {
    let spec = common::spec(common::FOUR_BY_TWO);
    let truth = common::random_model(&mut rng::stream(12, &[]), 4, 2, -1.0, 1.0);
    let start = vec![0.1, 0.2, 0.3, 0.4];
    let gt = GroundTruth::new(truth.clone(), DeterministicHook::Identity, start.clone()).unwrap();
    let actions = vec![1, 0, 0, 1];
    let policy = Policy::table(PolicyRole::Human, actions.clone());
    let series = simulate_policy(&policy, &gt, &spec, 4000, 8, 3).unwrap();
    let exact = expected_rewards(&truth, &actions, &start, 8);
    for (t, want) in exact.iter().enumerate() {
        let gap = (series.mean[t] - want).abs();
        assert!(
            gap < 4.0 * series.std_err[t] + 1e-9,
            "t={t}: {} vs {want}",
            series.mean[t]
        );
        assert!(series.ci_low[t] <= series.mean[t] && series.mean[t] <= series.ci_high[t]);
    }
}

#[test]
fn estimator_recovers_a_known_model() {
    let spec = common::spec(common::FOUR_BY_TWO);
    let truth = common::random_model(&mut rng::stream(44, &[]), 4, 2, -0.5, 0.5);
    let samples = common::draw_samples(&spec, &truth, 20_000, 0.4, 1);
    let est = estimate_dynamics(&samples, &spec, 0.0).unwrap();
    for i in 0..truth.reward_mean.len() {
        assert_abs_diff_eq!(est.reward_mean[i], truth.reward_mean[i], epsilon = 0.02);
    }
    for i in 0..truth.transition.len() {
        assert_abs_diff_eq!(est.transition[i], truth.transition[i], epsilon = 0.03);
    }
    let policy_truth = optimal_policy(&spec, &truth, &SolverConfig::default()).unwrap();
    let policy_est = optimal_policy(&spec, &est, &SolverConfig::default()).unwrap();
    assert_eq!(policy_truth.rule, policy_est.rule);
}

#[test]
fn smoothing_matches_the_additive_formula() {
    let spec = common::spec(common::FOUR_BY_TWO);
    let truth = common::random_model(&mut rng::stream(45, &[]), 4, 2, -0.5, 0.5);
    let samples = common::draw_samples(&spec, &truth, 30, 0.0, 2);
    let alpha = 0.5;
    let est = estimate_dynamics(&samples, &spec, alpha).unwrap();
    for s in 0..4 {
        for a in 0..2 {
            let hits: Vec<usize> = samples
                .iter()
                .filter(|x| x.action_id == a && spec.encode_state(&x.state).unwrap() == s)
                .map(|x| spec.encode_state(&x.next_state).unwrap())
                .collect();
            if hits.is_empty() {
                continue;
            }
            for next in 0..4 {
                let count = hits.iter().filter(|&&h| h == next).count() as f64;
                let want = (count + alpha) / (hits.len() as f64 + 4.0 * alpha);
                assert_abs_diff_eq!(est.transition_prob(s, a, next), want, epsilon = 1e-12);
            }
        }
    }
}
