//! The bundled studies and their prompt templates.

mod common;

use bcrl_core::dynamics::baseline_equal_probability;
use bcrl_core::generation::{render_prompt, QuestionKind, TemplateSet};
use bcrl_core::simulator::{simulate_policy, DeterministicHook, GroundTruth};
use bcrl_core::solver::{no_learned_dynamics_policy, optimal_policy, random_policy};
use bcrl_core::study::{Criterion, PromptStyle};
use bcrl_core::SolverConfig;

const ALL: [&str; 4] = ["study1", "study2", "study3", "study4"];

#[test]
fn every_template_loads_and_renders() {
    let dir = common::studies_dir().join("templates");
    let variants: Vec<u8> = (1..=10).collect();
    let mut total = 0;
    for name in ALL {
        let spec = common::bundled(name);
        for &length in &spec.lengths {
            for style in [PromptStyle::Plain, PromptStyle::Cot] {
                let set = TemplateSet::load(&dir, &spec, length, style, &variants).unwrap();
                total += set.len();
                for &v in &variants {
                    for kind in [QuestionKind::Reward, QuestionKind::NextState] {
                        let tpl = set.get(kind, length, style, v).unwrap();
                        let state = spec.decode_state(spec.n_states() - 1).unwrap();
                        let text =
                            render_prompt(tpl, &state, &spec.actions[0], &[], &spec).unwrap();
                        assert!(!text.contains("{{"), "{name} {v}: {text}");
                        assert!(text.contains(&spec.actions[0].name));
                    }
                }
            }
        }
    }
    let files = std::fs::read_dir(&dir).unwrap().count();
    assert_eq!(total, files);
}

#[test]
fn deterministic_components_follow_the_study() {
    let hooks: Vec<&str> = ALL
        .iter()
        .map(|n| DeterministicHook::from_spec(&common::bundled(n)).id())
        .collect();
    assert_eq!(hooks, ["identity", "competency", "identity", "diversity"]);
    let criteria: Vec<Criterion> = ALL.iter().map(|n| common::bundled(n).criterion).collect();
    assert_eq!(
        criteria,
        [
            Criterion::MeanReward,
            Criterion::CompetencyFraction,
            Criterion::MeanReward,
            Criterion::DiversityFraction
        ]
    );
}

#[test]
fn policies_simulate_on_every_study() {
    let cfg = SolverConfig::default();
    for name in ALL {
        let spec = common::bundled(name);
        let truth = baseline_equal_probability(&spec);
        let gt =
            GroundTruth::uniform_start(truth.clone(), DeterministicHook::from_spec(&spec)).unwrap();
        let mut policies = vec![
            optimal_policy(&spec, &truth, &cfg).unwrap(),
            random_policy(&spec, 1),
        ];
        if spec.has_deterministic_component() {
            policies.push(no_learned_dynamics_policy(&spec, &cfg).unwrap());
        } else {
            assert!(no_learned_dynamics_policy(&spec, &cfg).is_err());
        }
        for p in &policies {
            let s = simulate_policy(p, &gt, &spec, 20, spec.default_horizon, 0).unwrap();
            let (lo, hi) = spec.criterion.range();
            assert!(s.mean.iter().all(|m| (lo..=hi).contains(m)), "{name}");
        }
    }
}
