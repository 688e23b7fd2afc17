//! Deterministic state components advanced by known rules rather than
//! estimated from samples.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::study::{Criterion, RewardKind, StudySpec};

/// Challenges per coping strategy that count toward the diversity criterion.
pub const CHALLENGES_PER_STRATEGY: u32 = 4;

#[derive(Debug, Error, PartialEq)]
pub enum HookError {
    #[error("unknown deterministic hook '{0}'")]
    UnknownHook(String),
    #[error("deterministic state {state:?} does not fit hook '{hook}'")]
    StateMismatch { hook: &'static str, state: DetState },
    #[error("action {0} out of range for hook")]
    BadAction(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DeterministicHook {
    /// No deterministic features.
    Identity,
    /// `competency_j <- min(1, competency_j + effort_fraction * contribution[a][j])`.
    Competency { contribution: Vec<Vec<f64>> },
    /// Per-strategy challenge counters; completions beyond the target cost `weight`.
    Diversity {
        strategy: Vec<usize>,
        n_strategies: usize,
        weight: f64,
    },
}

/// Per-user deterministic state.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DetState {
    None,
    Competencies(Vec<f64>),
    Counts(Vec<u32>),
}

impl DeterministicHook {
    pub fn from_spec(spec: &StudySpec) -> Self {
        match spec.reward.kind {
            RewardKind::ScaledEffort => DeterministicHook::Identity,
            RewardKind::CompetencyIncrease => DeterministicHook::Competency {
                contribution: spec
                    .actions
                    .iter()
                    .map(|a| a.contribution.clone().unwrap_or_default())
                    .collect(),
            },
            RewardKind::CompletionWithDiversityCost => DeterministicHook::Diversity {
                strategy: spec
                    .actions
                    .iter()
                    .map(|a| a.strategy.unwrap_or(0))
                    .collect(),
                n_strategies: spec.deterministic_features().count(),
                weight: spec.reward.diversity_weight.unwrap_or(0.0),
            },
        }
    }

    /// Look a hook up by its id, configured from `spec`.
    pub fn by_id(id: &str, spec: &StudySpec) -> Result<Self, HookError> {
        let hook = Self::from_spec(spec);
        if hook.id() == id {
            Ok(hook)
        } else {
            Err(HookError::UnknownHook(format!(
                "{id} (study {} uses '{}')",
                spec.study_id,
                hook.id()
            )))
        }
    }

    pub fn id(&self) -> &'static str {
        match self {
            DeterministicHook::Identity => "identity",
            DeterministicHook::Competency { .. } => "competency",
            DeterministicHook::Diversity { .. } => "diversity",
        }
    }

    pub fn is_identity(&self) -> bool {
        matches!(self, DeterministicHook::Identity)
    }

    pub fn initial_state(&self) -> DetState {
        match self {
            DeterministicHook::Identity => DetState::None,
            DeterministicHook::Competency { contribution } => {
                DetState::Competencies(vec![0.0; contribution.first().map_or(0, Vec::len)])
            }
            DeterministicHook::Diversity { n_strategies, .. } => {
                DetState::Counts(vec![0; *n_strategies])
            }
        }
    }

    /// Number of policy states given `n_learned` learned states. Diversity
    /// policies also see each counter, capped at the per-strategy target.
    pub fn n_policy_states(&self, n_learned: usize) -> usize {
        match self {
            DeterministicHook::Diversity { n_strategies, .. } => {
                n_learned * (CHALLENGES_PER_STRATEGY as usize + 1).pow(*n_strategies as u32)
            }
            _ => n_learned,
        }
    }

    /// Index of the policy state for a learned state and a deterministic state.
    pub fn policy_state(&self, learned: usize, det: &DetState) -> usize {
        match (self, det) {
            (DeterministicHook::Diversity { n_strategies, .. }, DetState::Counts(c)) => {
                let base = CHALLENGES_PER_STRATEGY as usize + 1;
                let counts = c.iter().fold(0, |acc, &k| {
                    acc * base + k.min(CHALLENGES_PER_STRATEGY) as usize
                });
                learned * base.pow(*n_strategies as u32) + counts
            }
            _ => learned,
        }
    }
}

/// Advance the deterministic state after `action` earned `effort_fraction`
/// (reward normalized to `[0, 1]`; for completion studies 1 means completed).
pub fn deterministic_step(
    hook: &DeterministicHook,
    det: &DetState,
    action: usize,
    effort_fraction: f64,
) -> Result<DetState, HookError> {
    match (hook, det) {
        (DeterministicHook::Identity, DetState::None) => Ok(DetState::None),
        (DeterministicHook::Competency { contribution }, DetState::Competencies(c)) => {
            let contrib = contribution
                .get(action)
                .ok_or(HookError::BadAction(action))?;
            if contrib.len() != c.len() {
                return Err(HookError::StateMismatch {
                    hook: hook.id(),
                    state: det.clone(),
                });
            }
            let gain = effort_fraction.clamp(0.0, 1.0);
            Ok(DetState::Competencies(
                c.iter()
                    .zip(contrib)
                    .map(|(cj, w)| (cj + gain * w).min(1.0))
                    .collect(),
            ))
        }
        (DeterministicHook::Diversity { strategy, .. }, DetState::Counts(counts)) => {
            let k = *strategy.get(action).ok_or(HookError::BadAction(action))?;
            let mut counts = counts.clone();
            if effort_fraction >= 0.5 {
                let slot = counts.get_mut(k).ok_or(HookError::StateMismatch {
                    hook: hook.id(),
                    state: det.clone(),
                })?;
                *slot += 1;
            }
            Ok(DetState::Counts(counts))
        }
        _ => Err(HookError::StateMismatch {
            hook: hook.id(),
            state: det.clone(),
        }),
    }
}

/// Value of the study criterion at one step of a user trace.
pub fn criterion_value(criterion: Criterion, reward: f64, det: &DetState) -> f64 {
    match (criterion, det) {
        (Criterion::MeanReward, _) => reward,
        (Criterion::CompetencyFraction, DetState::Competencies(c)) if !c.is_empty() => {
            c.iter().map(|x| x.clamp(0.0, 1.0)).sum::<f64>() / c.len() as f64
        }
        (Criterion::DiversityFraction, DetState::Counts(k)) if !k.is_empty() => {
            let capped: u32 = k.iter().map(|&n| n.min(CHALLENGES_PER_STRATEGY)).sum();
            capped as f64 / (CHALLENGES_PER_STRATEGY as usize * k.len()) as f64
        }
        _ => 0.0,
    }
}
