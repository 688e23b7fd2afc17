//! Invariants over randomly generated studies, models and MDPs.

mod common;

use bcrl_core::dynamics::oracle_subsample;
use bcrl_core::metrics::{credible_interval, l1_reward, l1_transition};
use bcrl_core::rng;
use bcrl_core::solver::{
    bellman_residual, derive_policy, solve_mdp, Objective, PolicyMode, TabularMdp,
};
use bcrl_core::study::parse_study_spec;
use bcrl_core::{estimate_dynamics, DynamicsModel, SolverConfig, StudySpec};
use proptest::prelude::*;

fn spec_with(cards: &[usize], n_actions: usize) -> StudySpec {
    let mut text = String::from(
        "[study]\nid = \"p\"\ncriterion = \"mean_reward\"\nprompt_set = \"t\"\ndefault_horizon = 5\n",
    );
    for (i, c) in cards.iter().enumerate() {
        let labels: Vec<String> = (0..*c).map(|v| format!("\"v{v}\"")).collect();
        text.push_str(&format!(
            "[[feature]]\nname = \"f{i}\"\nrole = \"learned\"\ncardinality = {c}\nvalue_labels = [{}]\n",
            labels.join(", ")
        ));
    }
    for a in 0..n_actions {
        text.push_str(&format!(
            "[[action]]\nid = {a}\nname = \"a{a}\"\ncluster = {a}\n"
        ));
    }
    text.push_str("[reward]\nkind = \"scaled_effort\"\nrange = [-1.0, 1.0]\n");
    parse_study_spec(&text).unwrap()
}

fn model(seed: u64, n_states: usize, n_actions: usize) -> DynamicsModel {
    common::random_model(&mut rng::stream(seed, &[]), n_states, n_actions, -1.0, 1.0)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn state_encoding_is_a_bijection(cards in prop::collection::vec(2usize..5, 1..4)) {
        let spec = spec_with(&cards, 2);
        prop_assert_eq!(spec.n_states(), cards.iter().product::<usize>());
        for i in 0..spec.n_states() {
            let st = spec.decode_state(i).unwrap();
            prop_assert_eq!(spec.encode_state(&st).unwrap(), i);
        }
        // first feature is the most significant digit
        let mut top = vec![0; cards.len()];
        top[0] = 1;
        let stride: usize = cards[1..].iter().product();
        prop_assert_eq!(spec.encode_state(&bcrl_core::State::new(top)).unwrap(), stride);
        prop_assert!(spec.decode_state(spec.n_states()).is_err());
    }

    #[test]
    fn l1_is_a_metric(a in 0u64..1000, b in 0u64..1000, c in 0u64..1000, s in 1usize..5, k in 1usize..4) {
        let (x, y, z) = (model(a, s, k), model(b, s, k), model(c, s, k));
        for f in [l1_reward, l1_transition] {
            let xy = f(&x, &y).unwrap();
            prop_assert_eq!(f(&x, &x).unwrap(), 0.0);
            prop_assert!(xy >= 0.0);
            prop_assert!((xy - f(&y, &x).unwrap()).abs() < 1e-12);
            prop_assert!(xy <= f(&x, &z).unwrap() + f(&z, &y).unwrap() + 1e-12);
        }
        // per-row L1 between distributions is at most 2, spread over S entries
        prop_assert!(l1_transition(&x, &y).unwrap() <= 2.0 / s as f64 + 1e-12);
    }

    #[test]
    fn greedy_policy_ignores_reward_shifts(seed in 0u64..10_000, s in 1usize..6, k in 1usize..4, c in -5.0f64..5.0) {
        let mdp = TabularMdp::from(&model(seed, s, k));
        let cfg = SolverConfig::default();
        let base = solve_mdp(&mdp, &cfg, Objective::Maximize).unwrap();
        let moved = solve_mdp(&mdp.clone().shifted(c), &cfg, Objective::Maximize).unwrap();
        prop_assert_eq!(
            derive_policy(&base, PolicyMode::Best),
            derive_policy(&moved, PolicyMode::Best)
        );
        for (v, w) in base.v.iter().zip(&moved.v) {
            prop_assert!((w - v - c / (1.0 - cfg.gamma)).abs() < 1e-6);
        }
    }

    #[test]
    fn converged_values_satisfy_bellman(seed in 0u64..10_000, s in 1usize..6, k in 1usize..4, gamma in 0.0f64..0.95) {
        let mdp = TabularMdp::from(&model(seed, s, k));
        let cfg = SolverConfig { gamma, ..SolverConfig::default() };
        for objective in [Objective::Maximize, Objective::Minimize] {
            let vf = solve_mdp(&mdp, &cfg, objective).unwrap();
            prop_assert!(vf.converged);
            prop_assert!(bellman_residual(&mdp, &vf, gamma) < 1e-7);
        }
        let best = solve_mdp(&mdp, &cfg, Objective::Maximize).unwrap();
        let worst = solve_mdp(&mdp, &cfg, Objective::Minimize).unwrap();
        for (b, w) in best.v.iter().zip(&worst.v) {
            prop_assert!(b + 1e-9 >= *w);
        }
    }

    #[test]
    fn estimates_are_stochastic_and_flag_unseen_cells(seed in 0u64..10_000, n in 0usize..6, alpha in 0.0f64..2.0) {
        let spec = spec_with(&[2, 2], 2);
        let truth = model(seed, 4, 2);
        let samples = common::draw_samples(&spec, &truth, n, 0.3, seed);
        let est = estimate_dynamics(&samples, &spec, alpha).unwrap();
        est.check_rows().unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let seen = samples.iter().any(|x| {
                    x.action_id == a && spec.encode_state(&x.state).unwrap() == s
                });
                prop_assert_eq!(est.is_fallback(s, a), !seen);
                if !seen {
                    prop_assert_eq!(est.reward(s, a), 0.0);
                    prop_assert!(est.row(s, a).iter().all(|&p| p == 0.25));
                }
                prop_assert!((-1.0..=1.0).contains(&est.reward(s, a)));
            }
        }
    }

    #[test]
    fn credible_interval_brackets_and_scales(values in prop::collection::vec(-100.0f64..100.0, 2..40), level in 0.5f64..0.99, k in 0.1f64..10.0, c in -50.0f64..50.0) {
        let (lo, hi) = credible_interval(&values, level).unwrap();
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(min <= lo && lo <= hi && hi <= max);
        let moved: Vec<f64> = values.iter().map(|v| k * v + c).collect();
        let (lo2, hi2) = credible_interval(&moved, level).unwrap();
        prop_assert!((lo2 - (k * lo + c)).abs() < 1e-8);
        prop_assert!((hi2 - (k * hi + c)).abs() < 1e-8);
    }

    #[test]
    fn oracle_subsample_draws_without_replacement(seed in any::<u64>(), n in 0usize..30, per in 1usize..20) {
        let spec = spec_with(&[2, 2], 2);
        let truth = model(3, 4, 2);
        let pool = common::draw_samples(&spec, &truth, per, 0.0, 5);
        let tagged: Vec<_> = pool
            .iter()
            .enumerate()
            .map(|(i, s)| { let mut s = s.clone(); s.slot = Some(i); s })
            .collect();
        let draw = oracle_subsample(&tagged, &spec, n, seed);
        prop_assert_eq!(draw.samples.len(), 2 * n.min(per));
        let mut ids: Vec<usize> = draw.samples.iter().map(|s| s.slot.unwrap()).collect();
        ids.sort_unstable();
        ids.dedup();
        prop_assert_eq!(ids.len(), draw.samples.len());
        prop_assert_eq!(draw.shortfall.is_empty(), n <= per);
        prop_assert_eq!(&draw, &oracle_subsample(&tagged, &spec, n, seed));
    }

    #[test]
    fn categorical_draws_respect_support(seed in any::<u64>(), weights in prop::collection::vec(0.0f64..1.0, 1..8)) {
        let total: f64 = weights.iter().sum();
        prop_assume!(total > 1e-6);
        let probs: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mut r = rng::stream(seed, &[]);
        for _ in 0..50 {
            let i = rng::sample_categorical(&mut r, &probs);
            prop_assert!(probs[i] > 0.0);
        }
    }
}
