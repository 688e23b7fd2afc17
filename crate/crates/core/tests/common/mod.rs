#![allow(dead_code)]

use std::path::PathBuf;

use bcrl_core::rng;
use bcrl_core::study::{parse_study_spec, SampleSource};
use bcrl_core::{DynamicsModel, Sample, StudySpec};
use rand::Rng;

/// Two binary learned features, two single-action clusters, effort rewards.
pub const FOUR_BY_TWO: &str = r#"
[study]
id = "grid"
criterion = "mean_reward"
prompt_set = "templates"
default_horizon = 20

[[feature]]
name = "mood"
role = "learned"
cardinality = 2
value_labels = ["low", "high"]

[[feature]]
name = "energy"
role = "learned"
cardinality = 2
value_labels = ["low", "high"]

[[action]]
id = 0
name = "rest"
cluster = 0

[[action]]
id = 1
name = "walk"
cluster = 1

[reward]
kind = "scaled_effort"
range = [-1.0, 1.0]
"#;

/// One learned feature with four levels and three single-action clusters.
pub const FOUR_BY_THREE: &str = r#"
[study]
id = "ladder"
criterion = "mean_reward"
prompt_set = "templates"
default_horizon = 20

[[feature]]
name = "level"
role = "learned"
cardinality = 4
value_labels = ["a", "b", "c", "d"]

[[action]]
id = 0
name = "good"
cluster = 0

[[action]]
id = 1
name = "neutral"
cluster = 1

[[action]]
id = 2
name = "bad"
cluster = 2

[reward]
kind = "scaled_effort"
range = [-1.0, 1.0]
"#;

pub fn spec(text: &str) -> StudySpec {
    parse_study_spec(text).expect("test spec parses")
}

pub fn studies_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../studies")
}

pub fn bundled(name: &str) -> StudySpec {
    bcrl_core::load_study_spec(studies_dir().join(format!("{name}.toml")))
        .expect("bundled study loads")
}

/// Random row-stochastic model with rewards in `[lo, hi]`.
pub fn random_model<R: Rng>(
    r: &mut R,
    n_states: usize,
    n_actions: usize,
    lo: f64,
    hi: f64,
) -> DynamicsModel {
    let reward = (0..n_states * n_actions)
        .map(|_| r.random_range(lo..hi))
        .collect();
    let mut transition = Vec::with_capacity(n_states * n_actions * n_states);
    for _ in 0..n_states * n_actions {
        let row: Vec<f64> = (0..n_states).map(|_| r.random::<f64>() + 0.05).collect();
        let sum: f64 = row.iter().sum();
        transition.extend(row.iter().map(|p| p / sum));
    }
    DynamicsModel::from_tables(n_states, n_actions, reward, transition).expect("valid tables")
}

/// `n_per_action` samples per single-action cluster: uniform start state,
/// reward = truth mean + uniform noise of half-width `noise`, next state from
/// the truth row.
pub fn draw_samples(
    spec: &StudySpec,
    truth: &DynamicsModel,
    n_per_action: usize,
    noise: f64,
    seed: u64,
) -> Vec<Sample> {
    let mut r = rng::stream(seed, &[]);
    let mut out = Vec::with_capacity(n_per_action * spec.n_actions());
    for action in &spec.actions {
        for _ in 0..n_per_action {
            let s = r.random_range(0..spec.n_states());
            let c = action.cluster_id;
            let (lo, hi) = spec.reward.range;
            let reward = (truth.reward(s, c)
                + if noise > 0.0 {
                    r.random_range(-noise..noise)
                } else {
                    0.0
                })
            .clamp(lo, hi);
            let next = rng::sample_categorical(&mut r, truth.row(s, c));
            out.push(Sample::new(
                spec.decode_state(s).unwrap(),
                action.id,
                reward,
                spec.decode_state(next).unwrap(),
                SampleSource::Real,
            ));
        }
    }
    out
}

#[derive(Debug, serde::Deserialize)]
pub struct MalformedItem {
    pub study: String,
    pub kind: String,
    pub text: String,
    pub expect: String,
}

pub fn data(name: &str) -> String {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name);
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn malformed_corpus() -> Vec<MalformedItem> {
    data("malformed.jsonl")
        .lines()
        .map(|l| serde_json::from_str(l).expect("corpus line"))
        .collect()
}
