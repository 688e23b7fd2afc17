//! Value iteration and the policy family used for evaluation: optimal,
//! worst, uniformly random and no-learned-dynamics.

pub mod mdp;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{DynamicsError, DynamicsModel};
use crate::rng;
use crate::simulator::hook::DeterministicHook;
use crate::study::StudySpec;

pub use mdp::TabularMdp;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("invalid solver config: {0}")]
    Config(String),
    #[error("invalid dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("study '{0}' has no deterministic components; the no-learned-dynamics policy does not apply")]
    NoDeterministicComponent(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolverConfig {
    pub gamma: f64,
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            gamma: 0.85,
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<(), SolverError> {
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(SolverError::Config(format!(
                "gamma {} not in [0, 1)",
                self.gamma
            )));
        }
        if self.tolerance.is_nan() || self.tolerance <= 0.0 {
            return Err(SolverError::Config(format!(
                "tolerance {} must be positive",
                self.tolerance
            )));
        }
        if self.max_iterations == 0 {
            return Err(SolverError::Config("max_iterations must be >= 1".into()));
        }
        Ok(())
    }
}

/// Whether the backup maximizes (optimal values) or minimizes (worst values).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Maximize,
    Minimize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueFunction {
    pub v: Vec<f64>,
    /// `q[s * n_actions + a]`
    pub q: Vec<f64>,
    pub n_actions: usize,
    pub objective: Objective,
    pub iterations: usize,
    pub converged: bool,
}

impl ValueFunction {
    pub fn q(&self, s: usize, a: usize) -> f64 {
        self.q[s * self.n_actions + a]
    }

    pub fn q_row(&self, s: usize) -> &[f64] {
        &self.q[s * self.n_actions..(s + 1) * self.n_actions]
    }

    pub fn n_states(&self) -> usize {
        self.v.len()
    }
}

fn backup_q(mdp: &TabularMdp, v: &[f64], gamma: f64, q: &mut [f64]) {
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            let future: f64 = mdp.successors(s, a).iter().map(|&(n, p)| p * v[n]).sum();
            q[s * mdp.n_actions + a] = mdp.reward(s, a) + gamma * future;
        }
    }
}

fn extremum(row: &[f64], objective: Objective) -> f64 {
    match objective {
        Objective::Maximize => row.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        Objective::Minimize => row.iter().copied().fold(f64::INFINITY, f64::min),
    }
}

/// Synchronous Bellman backups until the sup-norm change drops below the tolerance.
pub fn solve_mdp(
    mdp: &TabularMdp,
    cfg: &SolverConfig,
    objective: Objective,
) -> Result<ValueFunction, SolverError> {
    cfg.validate()?;
    mdp.validate()?;
    let (n_s, n_a) = (mdp.n_states, mdp.n_actions);
    let mut v = vec![0.0; n_s];
    let mut q = vec![0.0; n_s * n_a];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < cfg.max_iterations {
        backup_q(mdp, &v, cfg.gamma, &mut q);
        iterations += 1;
        let mut delta: f64 = 0.0;
        for s in 0..n_s {
            let nv = extremum(&q[s * n_a..(s + 1) * n_a], objective);
            delta = delta.max((nv - v[s]).abs());
            v[s] = nv;
        }
        if delta < cfg.tolerance {
            converged = true;
            break;
        }
    }
    backup_q(mdp, &v, cfg.gamma, &mut q);
    if !converged {
        log::warn!(
            "value iteration stopped after {iterations} iterations without reaching tolerance {}",
            cfg.tolerance
        );
    }
    Ok(ValueFunction {
        v,
        q,
        n_actions: n_a,
        objective,
        iterations,
        converged,
    })
}

/// Optimal values of the plain MDP over learned states and action clusters.
pub fn value_iteration(
    dyn_model: &DynamicsModel,
    cfg: &SolverConfig,
) -> Result<ValueFunction, SolverError> {
    dyn_model.check_rows()?;
    solve_mdp(&TabularMdp::from(dyn_model), cfg, Objective::Maximize)
}

/// Largest residual `|max_a q(s, a) - v(s)|` (or min for worst values).
pub fn bellman_residual(mdp: &TabularMdp, vf: &ValueFunction, gamma: f64) -> f64 {
    let mut q = vec![0.0; mdp.n_states * mdp.n_actions];
    backup_q(mdp, &vf.v, gamma, &mut q);
    (0..mdp.n_states)
        .map(|s| {
            (extremum(&q[s * mdp.n_actions..(s + 1) * mdp.n_actions], vf.objective) - vf.v[s]).abs()
        })
        .fold(0.0, f64::max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyRole {
    Optimal,
    Worst,
    Random,
    NoLearnedDynamics,
    Human,
    Generated,
}

impl PolicyRole {
    pub fn label(self) -> &'static str {
        match self {
            PolicyRole::Optimal => "optimal",
            PolicyRole::Worst => "worst",
            PolicyRole::Random => "random",
            PolicyRole::NoLearnedDynamics => "no_learned_dynamics",
            PolicyRole::Human => "human",
            PolicyRole::Generated => "generated",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyMode {
    Best,
    Worst,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicyRule {
    /// One action id per policy state.
    Table { action_per_state: Vec<usize> },
    /// A fresh uniform draw over `n_actions` at every step.
    UniformRandom { n_actions: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub role: PolicyRole,
    pub rule: PolicyRule,
}

impl Policy {
    pub fn table(role: PolicyRole, action_per_state: Vec<usize>) -> Self {
        Self {
            role,
            rule: PolicyRule::Table { action_per_state },
        }
    }

    pub fn actions(&self) -> Option<&[usize]> {
        match &self.rule {
            PolicyRule::Table { action_per_state } => Some(action_per_state),
            PolicyRule::UniformRandom { .. } => None,
        }
    }

    /// Action for policy state `state`; `rng` feeds sampling policies.
    pub fn choose<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> usize {
        match &self.rule {
            PolicyRule::Table { action_per_state } => action_per_state[state],
            PolicyRule::UniformRandom { n_actions, .. } => rng.random_range(0..*n_actions),
        }
    }

    /// The first `len` draws of a sampling policy's own stream.
    pub fn action_sequence(&self, stream_id: u64, len: usize) -> Vec<usize> {
        let seed = match &self.rule {
            PolicyRule::UniformRandom { seed, .. } => *seed,
            PolicyRule::Table { .. } => 0,
        };
        let mut r = rng::stream(seed, &[stream_id]);
        (0..len)
            .map(|t| self.choose(t % self.n_states().max(1), &mut r))
            .collect()
    }

    pub fn n_states(&self) -> usize {
        self.actions().map_or(0, <[usize]>::len)
    }

    /// Check that the policy fits `n_states` policy states and `n_actions` actions.
    pub fn fits(&self, n_states: usize, n_actions: usize) -> Result<(), String> {
        match &self.rule {
            PolicyRule::Table { action_per_state } => {
                if action_per_state.len() != n_states {
                    return Err(format!(
                        "policy covers {} states, expected {n_states}",
                        action_per_state.len()
                    ));
                }
                if let Some(bad) = action_per_state.iter().find(|&&a| a >= n_actions) {
                    return Err(format!("policy action {bad} out of range {n_actions}"));
                }
                Ok(())
            }
            PolicyRule::UniformRandom { n_actions: n, .. } => {
                if *n != n_actions {
                    Err(format!(
                        "random policy over {n} actions, expected {n_actions}"
                    ))
                } else {
                    Ok(())
                }
            }
        }
    }
}

/// Greedy (best) or anti-greedy (worst) action per state; ties go to the lowest id.
pub fn derive_policy(vf: &ValueFunction, mode: PolicyMode) -> Policy {
    let actions = (0..vf.n_states())
        .map(|s| {
            let row = vf.q_row(s);
            let mut pick = 0;
            for (a, &q) in row.iter().enumerate().skip(1) {
                let better = match mode {
                    PolicyMode::Best => q > row[pick],
                    PolicyMode::Worst => q < row[pick],
                };
                if better {
                    pick = a;
                }
            }
            pick
        })
        .collect();
    let role = match mode {
        PolicyMode::Best => PolicyRole::Optimal,
        PolicyMode::Worst => PolicyRole::Worst,
    };
    Policy::table(role, actions)
}

/// Optimal (maximizing) policy for a study.
pub fn optimal_policy(
    spec: &StudySpec,
    dynamics: &DynamicsModel,
    cfg: &SolverConfig,
) -> Result<Policy, SolverError> {
    let hook = DeterministicHook::from_spec(spec);
    let mdp = TabularMdp::for_study(spec, dynamics, &hook)?;
    Ok(derive_policy(
        &solve_mdp(&mdp, cfg, Objective::Maximize)?,
        PolicyMode::Best,
    ))
}

/// Worst policy: greedy with respect to minimizing values.
pub fn worst_policy(
    spec: &StudySpec,
    dynamics: &DynamicsModel,
    cfg: &SolverConfig,
) -> Result<Policy, SolverError> {
    let hook = DeterministicHook::from_spec(spec);
    let mdp = TabularMdp::for_study(spec, dynamics, &hook)?;
    Ok(derive_policy(
        &solve_mdp(&mdp, cfg, Objective::Minimize)?,
        PolicyMode::Worst,
    ))
}

/// Per-step uniform action choice.
pub fn random_policy(spec: &StudySpec, seed: u64) -> Policy {
    Policy {
        role: PolicyRole::Random,
        rule: PolicyRule::UniformRandom {
            n_actions: spec.n_actions(),
            seed,
        },
    }
}

/// Optimal policy once the learned parts carry no information: learned reward
/// at the range midpoint and uniform learned transitions.
pub fn no_learned_dynamics_policy(
    spec: &StudySpec,
    cfg: &SolverConfig,
) -> Result<Policy, SolverError> {
    if !spec.has_deterministic_component() {
        return Err(SolverError::NoDeterministicComponent(spec.study_id.clone()));
    }
    let flat = crate::dynamics::baseline_equal_probability(spec);
    let mut policy = optimal_policy(spec, &flat, cfg)?;
    policy.role = PolicyRole::NoLearnedDynamics;
    Ok(policy)
}
