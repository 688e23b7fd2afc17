//! Finite MDPs in a sparse tabular form that the solver consumes.

use serde::{Deserialize, Serialize};

use crate::dynamics::{DynamicsError, DynamicsModel};
use crate::simulator::hook::{DeterministicHook, CHALLENGES_PER_STRATEGY};
use crate::study::StudySpec;

/// `reward[s * n_actions + a]`, `transitions[s * n_actions + a] = [(s', p)]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub reward: Vec<f64>,
    pub transitions: Vec<Vec<(usize, f64)>>,
}

impl TabularMdp {
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s * self.n_actions + a]
    }

    pub fn successors(&self, s: usize, a: usize) -> &[(usize, f64)] {
        &self.transitions[s * self.n_actions + a]
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let sa = self.n_states * self.n_actions;
        if self.reward.len() != sa || self.transitions.len() != sa {
            return Err(DynamicsError::Shape(format!(
                "MDP tables do not match {} states x {} actions",
                self.n_states, self.n_actions
            )));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.successors(s, a);
                let sum: f64 = row.iter().map(|(_, p)| p).sum();
                let bad = row
                    .iter()
                    .any(|&(n, p)| n >= self.n_states || !p.is_finite() || p < 0.0);
                if bad || (sum - 1.0).abs() > 1e-9 {
                    return Err(DynamicsError::RowSum {
                        state: s,
                        action: a,
                        sum,
                    });
                }
                if !self.reward(s, a).is_finite() {
                    return Err(DynamicsError::Shape(format!(
                        "non-finite reward at ({s}, {a})"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Add a constant to every reward.
    pub fn shifted(mut self, c: f64) -> Self {
        self.reward.iter_mut().for_each(|r| *r += c);
        self
    }

    /// Policy-study MDP over raw actions: learned dynamics looked up through each
    /// action's cluster, with the study's deterministic component folded in.
    ///
    /// * identity: reward is the learned reward.
    /// * competency: reward is the expected competency gain, the normalized
    ///   learned reward times the action's summed contributions.
    /// * diversity: states are (learned state, per-strategy counters capped at
    ///   the target); the learned reward is the completion probability and a
    ///   completion that pushes a counter past the target costs `weight`.
    ///   Completion and the learned transition are drawn independently.
    pub fn for_study(
        spec: &StudySpec,
        dynamics: &DynamicsModel,
        hook: &DeterministicHook,
    ) -> Result<Self, DynamicsError> {
        if dynamics.n_states != spec.n_states() || dynamics.n_actions != spec.n_clusters() {
            return Err(DynamicsError::Shape(format!(
                "dynamics are {}x{}, study {} needs {}x{}",
                dynamics.n_states,
                dynamics.n_actions,
                spec.study_id,
                spec.n_states(),
                spec.n_clusters()
            )));
        }
        dynamics.check_rows()?;
        let n_learned = spec.n_states();
        let n_actions = spec.n_actions();
        let (lo, hi) = spec.reward.range;
        let normalize = |r: f64| ((r - lo) / (hi - lo)).clamp(0.0, 1.0);
        let clusters: Vec<usize> = spec.actions.iter().map(|a| a.cluster_id).collect();
        let sparse_row = |s: usize, c: usize| -> Vec<(usize, f64)> {
            dynamics
                .row(s, c)
                .iter()
                .enumerate()
                .filter(|(_, &p)| p > 0.0)
                .map(|(n, &p)| (n, p))
                .collect()
        };

        let mdp = match hook {
            DeterministicHook::Identity | DeterministicHook::Competency { .. } => {
                let mut reward = Vec::with_capacity(n_learned * n_actions);
                let mut transitions = Vec::with_capacity(n_learned * n_actions);
                for s in 0..n_learned {
                    for (a, &c) in clusters.iter().enumerate() {
                        let r = dynamics.reward(s, c);
                        reward.push(match hook {
                            DeterministicHook::Competency { contribution } => {
                                normalize(r) * contribution[a].iter().sum::<f64>()
                            }
                            _ => r,
                        });
                        transitions.push(sparse_row(s, c));
                    }
                }
                TabularMdp {
                    n_states: n_learned,
                    n_actions,
                    reward,
                    transitions,
                }
            }
            DeterministicHook::Diversity {
                strategy,
                n_strategies,
                weight,
            } => {
                let k_n = *n_strategies;
                let base = CHALLENGES_PER_STRATEGY as usize + 1;
                let n_counts = base.pow(k_n as u32);
                let n_states = n_learned * n_counts;
                let mut reward = Vec::with_capacity(n_states * n_actions);
                let mut transitions = Vec::with_capacity(n_states * n_actions);
                let mut counts = vec![0usize; k_n];
                for s in 0..n_learned {
                    for ci in 0..n_counts {
                        let mut rest = ci;
                        for slot in counts.iter_mut().rev() {
                            *slot = rest % base;
                            rest /= base;
                        }
                        for (a, &c) in clusters.iter().enumerate() {
                            let p = normalize(dynamics.reward(s, c));
                            let k = strategy[a];
                            let at_target = counts[k] == CHALLENGES_PER_STRATEGY as usize;
                            let cost = if at_target { *weight } else { 0.0 };
                            reward.push(p * (1.0 - cost));
                            // counter index after a completion
                            let stride = base.pow((k_n - 1 - k) as u32);
                            let done_ci = if at_target { ci } else { ci + stride };
                            let mut row = Vec::new();
                            for (next, q) in sparse_row(s, c) {
                                if p > 0.0 {
                                    row.push((next * n_counts + done_ci, p * q));
                                }
                                if p < 1.0 {
                                    row.push((next * n_counts + ci, (1.0 - p) * q));
                                }
                            }
                            transitions.push(row);
                        }
                    }
                }
                TabularMdp {
                    n_states,
                    n_actions,
                    reward,
                    transitions,
                }
            }
        };
        Ok(mdp)
    }
}

impl From<&DynamicsModel> for TabularMdp {
    /// Plain MDP over learned states and action clusters.
    fn from(d: &DynamicsModel) -> Self {
        let mut transitions = Vec::with_capacity(d.n_states * d.n_actions);
        for s in 0..d.n_states {
            for a in 0..d.n_actions {
                transitions.push(
                    d.row(s, a)
                        .iter()
                        .enumerate()
                        .filter(|(_, &p)| p > 0.0)
                        .map(|(n, &p)| (n, p))
                        .collect(),
                );
            }
        }
        TabularMdp {
            n_states: d.n_states,
            n_actions: d.n_actions,
            reward: d.reward_mean.clone(),
            transitions,
        }
    }
}
