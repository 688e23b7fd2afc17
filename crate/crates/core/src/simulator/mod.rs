//! Policy evaluation on ground-truth dynamics, tracking each study's
//! evaluation criterion over time.

pub mod hook;

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{estimate_dynamics, DynamicsError, DynamicsModel};
use crate::metrics::{credible_interval, MetricsError};
use crate::rng;
use crate::solver::Policy;
use crate::study::{Criterion, Sample, StudySpec};

pub use hook::{
    criterion_value, deterministic_step, DetState, DeterministicHook, HookError,
    CHALLENGES_PER_STRATEGY,
};

#[derive(Debug, Error)]
pub enum SimulatorError {
    #[error("policy does not fit study: {0}")]
    PolicyMismatch(String),
    #[error("ground truth does not fit study: {0}")]
    TruthMismatch(String),
    #[error("horizon and user count must be >= 1")]
    EmptyRun,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Hook(#[from] HookError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

/// Simulated users: learned dynamics, the deterministic hook and the
/// distribution of starting states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub learned: DynamicsModel,
    pub hook: DeterministicHook,
    pub initial_distribution: Vec<f64>,
}

impl GroundTruth {
    pub fn new(
        learned: DynamicsModel,
        hook: DeterministicHook,
        initial_distribution: Vec<f64>,
    ) -> Result<Self, SimulatorError> {
        learned.check_rows()?;
        let sum: f64 = initial_distribution.iter().sum();
        if initial_distribution.len() != learned.n_states
            || (sum - 1.0).abs() > 1e-9
            || initial_distribution.iter().any(|p| p.is_nan() || *p < 0.0)
        {
            return Err(SimulatorError::TruthMismatch(format!(
                "initial distribution over {} states sums to {sum}",
                initial_distribution.len()
            )));
        }
        Ok(Self {
            learned,
            hook,
            initial_distribution,
        })
    }

    /// Ground truth with a uniform initial distribution.
    pub fn uniform_start(
        learned: DynamicsModel,
        hook: DeterministicHook,
    ) -> Result<Self, SimulatorError> {
        let n = learned.n_states;
        Self::new(learned, hook, vec![1.0 / n as f64; n])
    }

    /// Estimate from real samples; users start as in [`empirical_start`].
    pub fn from_samples(
        samples: &[Sample],
        spec: &StudySpec,
        smoothing: f64,
    ) -> Result<Self, SimulatorError> {
        let learned = estimate_dynamics(samples, spec, smoothing)?;
        let init = empirical_start(samples, spec)?;
        Self::new(learned, DeterministicHook::from_spec(spec), init)
    }
}

/// Share of samples with each learned state as `s_t`; uniform without samples.
pub fn empirical_start(samples: &[Sample], spec: &StudySpec) -> Result<Vec<f64>, SimulatorError> {
    let n = spec.n_states();
    if samples.is_empty() {
        return Ok(vec![1.0 / n as f64; n]);
    }
    let mut init = vec![0.0; n];
    for (index, s) in samples.iter().enumerate() {
        let state = spec
            .encode_state(&s.state)
            .map_err(|source| DynamicsError::InvalidSample { index, source })?;
        init[state] += 1.0;
    }
    init.iter_mut().for_each(|p| *p /= samples.len() as f64);
    Ok(init)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CriterionSeries {
    pub criterion: Criterion,
    pub timesteps: usize,
    pub mean: Vec<f64>,
    pub ci_low: Vec<f64>,
    pub ci_high: Vec<f64>,
    /// Standard error of the per-step mean over users (or instances).
    pub std_err: Vec<f64>,
}

/// Simulate `n_users` independent users for `horizon` steps.
///
/// Each step: pick an action, receive the reward (the learned mean; a
/// Bernoulli completion draw for completion studies), draw the next learned
/// state, update the deterministic state, record the criterion. User `u`
/// draws from `rng::stream(seed, [u])`. The interval is mean +/- 1.96 SE.
pub fn simulate_policy(
    policy: &Policy,
    truth: &GroundTruth,
    spec: &StudySpec,
    n_users: usize,
    horizon: usize,
    seed: u64,
) -> Result<CriterionSeries, SimulatorError> {
    if n_users == 0 || horizon == 0 {
        return Err(SimulatorError::EmptyRun);
    }
    if truth.learned.n_states != spec.n_states() || truth.learned.n_actions != spec.n_clusters() {
        return Err(SimulatorError::TruthMismatch(format!(
            "learned dynamics are {}x{}, study needs {}x{}",
            truth.learned.n_states,
            truth.learned.n_actions,
            spec.n_states(),
            spec.n_clusters()
        )));
    }
    policy
        .fits(
            truth.hook.n_policy_states(spec.n_states()),
            spec.n_actions(),
        )
        .map_err(SimulatorError::PolicyMismatch)?;

    let completion = spec.criterion == Criterion::DiversityFraction;
    let (lo, hi) = spec.reward.range;
    let policy_seed = match &policy.rule {
        crate::solver::PolicyRule::UniformRandom { seed: s, .. } => *s,
        crate::solver::PolicyRule::Table { .. } => 0,
    };

    let mut sum = vec![0.0; horizon];
    let mut sum_sq = vec![0.0; horizon];
    for u in 0..n_users {
        let mut r = rng::stream(seed, &[u as u64]);
        let mut action_rng = rng::stream(rng::derive_seed(policy_seed, &[seed]), &[u as u64]);
        let mut s = rng::sample_categorical(&mut r, &truth.initial_distribution);
        let mut det = truth.hook.initial_state();
        for t in 0..horizon {
            let a = policy.choose(truth.hook.policy_state(s, &det), &mut action_rng);
            let c = spec.actions[a].cluster_id;
            let mean_r = truth.learned.reward(s, c);
            let reward = if completion {
                let p = ((mean_r - lo) / (hi - lo)).clamp(0.0, 1.0);
                if r.random::<f64>() < p {
                    hi
                } else {
                    lo
                }
            } else {
                mean_r
            };
            s = rng::sample_categorical(&mut r, truth.learned.row(s, c));
            det = deterministic_step(&truth.hook, &det, a, (reward - lo) / (hi - lo))?;
            let value = criterion_value(spec.criterion, reward, &det);
            sum[t] += value;
            sum_sq[t] += value * value;
        }
    }

    let n = n_users as f64;
    let mut series = CriterionSeries {
        criterion: spec.criterion,
        timesteps: horizon,
        mean: Vec::with_capacity(horizon),
        ci_low: Vec::with_capacity(horizon),
        ci_high: Vec::with_capacity(horizon),
        std_err: Vec::with_capacity(horizon),
    };
    for t in 0..horizon {
        let mean = sum[t] / n;
        let var = if n_users > 1 {
            ((sum_sq[t] - n * mean * mean) / (n - 1.0)).max(0.0)
        } else {
            0.0
        };
        let se = (var / n).sqrt();
        series.mean.push(mean);
        series.std_err.push(se);
        series.ci_low.push(mean - 1.96 * se);
        series.ci_high.push(mean + 1.96 * se);
    }
    Ok(series)
}

/// Combine series from several policy instances (e.g. one per prompt
/// variant): per-step mean of instance means with a percentile interval.
pub fn aggregate_series(
    instances: &[CriterionSeries],
    level: f64,
) -> Result<CriterionSeries, SimulatorError> {
    let first = instances.first().ok_or(SimulatorError::EmptyRun)?;
    let horizon = first.timesteps;
    if instances
        .iter()
        .any(|s| s.timesteps != horizon || s.criterion != first.criterion)
    {
        return Err(SimulatorError::TruthMismatch(
            "series differ in horizon or criterion".into(),
        ));
    }
    let k = instances.len() as f64;
    let mut out = CriterionSeries {
        criterion: first.criterion,
        timesteps: horizon,
        mean: Vec::new(),
        ci_low: Vec::new(),
        ci_high: Vec::new(),
        std_err: Vec::new(),
    };
    for t in 0..horizon {
        let values: Vec<f64> = instances.iter().map(|s| s.mean[t]).collect();
        let mean = values.iter().sum::<f64>() / k;
        let (low, high) = if values.len() >= 2 {
            credible_interval(&values, level)?
        } else {
            (mean, mean)
        };
        let var = if values.len() >= 2 {
            values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (k - 1.0)
        } else {
            0.0
        };
        out.mean.push(mean);
        out.ci_low.push(low.min(mean));
        out.ci_high.push(high.max(mean));
        out.std_err.push((var / k).sqrt());
    }
    Ok(out)
}
