//! Tabular offline reinforcement learning for behavior-change studies.
//!
//! Study MDPs are declared in TOML ([`study`]); dynamics are estimated from
//! real or generated samples ([`dynamics`]), solved by value iteration
//! ([`solver`]), evaluated on simulated users ([`simulator`]) and compared by
//! L1 error ([`metrics`]). [`generation`] produces samples by prompting a
//! chat-completion endpoint.

pub mod dynamics;
pub mod generation;
pub mod manifest;
pub mod metrics;
pub mod report;
pub mod rng;
pub mod simulator;
pub mod solver;
pub mod store;
pub mod study;

pub use dynamics::{estimate_dynamics, DynamicsModel};
pub use solver::{Policy, SolverConfig};
pub use study::{load_study_spec, Sample, State, StudySpec};

#[cfg(test)]
pub(crate) mod testutil {
    /// Two states, two single-action clusters, effort rewards.
    pub const TINY_SPEC: &str = r#"
[study]
id = "tiny"
criterion = "mean_reward"
prompt_set = "templates"
default_horizon = 5

[[feature]]
name = "x"
role = "learned"
cardinality = 2
value_labels = ["lo", "hi"]

[[action]]
id = 0
name = "a"
cluster = 0

[[action]]
id = 1
name = "b"
cluster = 1

[reward]
kind = "scaled_effort"
range = [-1.0, 1.0]
"#;
}
