//! L1 errors between dynamics models, percentile credible intervals and
//! sample-count sweeps.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::{
    baseline_equal_probability, baseline_mean_reward, baseline_stay_in_state, estimate_dynamics,
    oracle_subsample, DynamicsError, DynamicsModel,
};
use crate::study::{Sample, StudySpec};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("credible interval needs at least 2 values, got {0}")]
    TooFewValues(usize),
    #[error("credible level must lie in (0, 1), got {0}")]
    BadLevel(f64),
    #[error("sample-count grid must be nonempty and strictly increasing")]
    BadGrid,
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Options shared by both L1 metrics.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct L1Options {
    /// Skip `(s, a)` cells flagged as fallback in either model.
    pub exclude_fallback: bool,
}

fn check_shape(est: &DynamicsModel, reference: &DynamicsModel) -> Result<(), MetricsError> {
    if !est.same_shape(reference) {
        return Err(MetricsError::Shape(format!(
            "{}x{} vs {}x{}",
            est.n_states, est.n_actions, reference.n_states, reference.n_actions
        )));
    }
    Ok(())
}

fn cells<'a>(
    est: &'a DynamicsModel,
    reference: &'a DynamicsModel,
    opts: L1Options,
) -> impl Iterator<Item = usize> + 'a {
    (0..est.n_states * est.n_actions)
        .filter(move |&sa| !opts.exclude_fallback || !(est.fallback[sa] || reference.fallback[sa]))
}

/// Mean over `(s, a)` of `|est.R - ref.R|`; 0 when every cell is excluded.
pub fn l1_reward_with(
    est: &DynamicsModel,
    reference: &DynamicsModel,
    opts: L1Options,
) -> Result<f64, MetricsError> {
    check_shape(est, reference)?;
    let (mut total, mut n) = (0.0, 0usize);
    for sa in cells(est, reference, opts) {
        total += (est.reward_mean[sa] - reference.reward_mean[sa]).abs();
        n += 1;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

pub fn l1_reward(est: &DynamicsModel, reference: &DynamicsModel) -> Result<f64, MetricsError> {
    l1_reward_with(est, reference, L1Options::default())
}

/// Mean over `(s, a, s')` of `|est.T - ref.T|`.
pub fn l1_transition_with(
    est: &DynamicsModel,
    reference: &DynamicsModel,
    opts: L1Options,
) -> Result<f64, MetricsError> {
    check_shape(est, reference)?;
    let s_n = est.n_states;
    let (mut total, mut n) = (0.0, 0usize);
    for sa in cells(est, reference, opts) {
        let range = sa * s_n..(sa + 1) * s_n;
        total += est.transition[range.clone()]
            .iter()
            .zip(&reference.transition[range])
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>();
        n += s_n;
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}

pub fn l1_transition(est: &DynamicsModel, reference: &DynamicsModel) -> Result<f64, MetricsError> {
    l1_transition_with(est, reference, L1Options::default())
}

/// Empirical percentile at `p` with linear interpolation between order
/// statistics: position `h = (n - 1) p` on the sorted values.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Central interval holding `level` of the values: percentiles at `(1 -+ level) / 2`.
pub fn credible_interval(values: &[f64], level: f64) -> Result<(f64, f64), MetricsError> {
    if values.len() < 2 {
        return Err(MetricsError::TooFewValues(values.len()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(MetricsError::BadLevel(level));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        percentile(&sorted, (1.0 - level) / 2.0),
        percentile(&sorted, (1.0 + level) / 2.0),
    ))
}

/// How a source's repeated estimates are formed at each sample count.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// One estimate per prompt variant from the first `n` stored samples per cluster.
    Variants,
    /// One estimate per seed from a random draw of `n` per cluster.
    Draws,
}

#[derive(Debug, Clone)]
pub struct SweepSource {
    pub label: String,
    pub samples: Vec<Sample>,
    pub grouping: Grouping,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EntityKind {
    Source,
    Oracle,
    MeanReward,
    EqualProbability,
    StayInState,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub mean: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    /// Number of estimates (variants or draws) behind the cell.
    pub groups: usize,
}

impl SweepCell {
    fn from_values(values: &[f64], level: f64) -> Result<Self, MetricsError> {
        let mean = values.iter().sum::<f64>() / values.len() as f64;
        let (low, high) = if values.len() >= 2 {
            credible_interval(values, level)?
        } else {
            (mean, mean)
        };
        Ok(SweepCell {
            mean,
            ci_low: low.min(mean),
            ci_high: high.max(mean),
            groups: values.len(),
        })
    }
}

/// One comparison entity; a metric that does not apply to it is `None`,
/// a missing cell (not enough samples) is `None` inside the vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSeries {
    pub entity: String,
    pub kind: EntityKind,
    pub reward: Option<Vec<Option<SweepCell>>>,
    pub transition: Option<Vec<Option<SweepCell>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct L1Sweep {
    pub n_grid: Vec<usize>,
    pub series: Vec<SweepSeries>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub n_grid: Vec<usize>,
    /// Seeds of the random draws (oracle and `Draws` sources).
    pub seeds: Vec<u64>,
    pub smoothing: f64,
    pub level: f64,
    pub l1: L1Options,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![10, 20, 40, 100, 200, 300, 400, 500],
            seeds: (0..10).collect(),
            smoothing: 0.0,
            level: 0.95,
            l1: L1Options::default(),
        }
    }
}

/// First `n` samples per cluster, or `None` if some cluster has fewer.
fn take_first_per_cluster(samples: &[&Sample], spec: &StudySpec, n: usize) -> Option<Vec<Sample>> {
    let mut taken = vec![0usize; spec.n_clusters()];
    let mut out = Vec::with_capacity(n * taken.len());
    for s in samples {
        let c = spec.cluster_of(s.action_id)?;
        if taken[c] < n {
            taken[c] += 1;
            out.push((*s).clone());
        }
    }
    taken.iter().all(|&t| t == n).then_some(out)
}

fn pair_l1(
    est: &DynamicsModel,
    reference: &DynamicsModel,
    opts: L1Options,
) -> Result<(f64, f64), MetricsError> {
    Ok((
        l1_reward_with(est, reference, opts)?,
        l1_transition_with(est, reference, opts)?,
    ))
}

type CellPair = (Option<SweepCell>, Option<SweepCell>);

fn source_cell(
    source: &SweepSource,
    spec: &StudySpec,
    reference: &DynamicsModel,
    n: usize,
    cfg: &SweepConfig,
) -> Result<CellPair, MetricsError> {
    let mut errors: Vec<(f64, f64)> = Vec::new();
    match source.grouping {
        Grouping::Variants => {
            let mut groups: BTreeMap<u8, Vec<&Sample>> = BTreeMap::new();
            for s in &source.samples {
                groups
                    .entry(s.prompt_variant.unwrap_or(0))
                    .or_default()
                    .push(s);
            }
            for members in groups.values() {
                if let Some(subset) = take_first_per_cluster(members, spec, n) {
                    let est = estimate_dynamics(&subset, spec, cfg.smoothing)?;
                    errors.push(pair_l1(&est, reference, cfg.l1)?);
                }
            }
        }
        Grouping::Draws => {
            for &seed in &cfg.seeds {
                let draw = oracle_subsample(&source.samples, spec, n, seed);
                let est = estimate_dynamics(&draw.samples, spec, cfg.smoothing)?;
                errors.push(pair_l1(&est, reference, cfg.l1)?);
            }
        }
    }
    if errors.is_empty() {
        return Ok((None, None));
    }
    let rewards: Vec<f64> = errors.iter().map(|e| e.0).collect();
    let transitions: Vec<f64> = errors.iter().map(|e| e.1).collect();
    Ok((
        Some(SweepCell::from_values(&rewards, cfg.level)?),
        Some(SweepCell::from_values(&transitions, cfg.level)?),
    ))
}

/// L1 errors against `reference` for every source and sample count, the
/// oracle (random draws from `reference_samples`) and the three
/// data-independent baselines (constant across `n`).
pub fn sweep(
    sources: &[SweepSource],
    spec: &StudySpec,
    reference: &DynamicsModel,
    reference_samples: &[Sample],
    cfg: &SweepConfig,
) -> Result<L1Sweep, MetricsError> {
    if cfg.n_grid.is_empty() || cfg.n_grid.windows(2).any(|w| w[0] >= w[1]) || cfg.n_grid[0] == 0 {
        return Err(MetricsError::BadGrid);
    }
    let oracle = SweepSource {
        label: "oracle".into(),
        samples: reference_samples.to_vec(),
        grouping: Grouping::Draws,
    };
    let mut all: Vec<(&SweepSource, EntityKind)> =
        sources.iter().map(|s| (s, EntityKind::Source)).collect();
    all.push((&oracle, EntityKind::Oracle));

    let jobs: Vec<(usize, usize)> = (0..all.len())
        .flat_map(|i| (0..cfg.n_grid.len()).map(move |j| (i, j)))
        .collect();
    let results: Vec<CellPair> = jobs
        .par_iter()
        .map(|&(i, j)| source_cell(all[i].0, spec, reference, cfg.n_grid[j], cfg))
        .collect::<Result<_, _>>()?;

    let n_len = cfg.n_grid.len();
    let mut series: Vec<SweepSeries> = all
        .iter()
        .enumerate()
        .map(|(i, (src, kind))| {
            let cells = &results[i * n_len..(i + 1) * n_len];
            SweepSeries {
                entity: src.label.clone(),
                kind: *kind,
                reward: Some(cells.iter().map(|c| c.0.clone()).collect()),
                transition: Some(cells.iter().map(|c| c.1.clone()).collect()),
            }
        })
        .collect();

    let constant = |v: f64| -> Option<Vec<Option<SweepCell>>> {
        Some(vec![
            Some(SweepCell {
                mean: v,
                ci_low: v,
                ci_high: v,
                groups: 1,
            });
            n_len
        ])
    };
    let mean_model = baseline_mean_reward(reference_samples, spec)?;
    series.push(SweepSeries {
        entity: "mean_reward".into(),
        kind: EntityKind::MeanReward,
        reward: constant(l1_reward_with(&mean_model, reference, cfg.l1)?),
        transition: None,
    });
    series.push(SweepSeries {
        entity: "equal_probability".into(),
        kind: EntityKind::EqualProbability,
        reward: None,
        transition: constant(l1_transition_with(
            &baseline_equal_probability(spec),
            reference,
            cfg.l1,
        )?),
    });
    series.push(SweepSeries {
        entity: "stay_in_state".into(),
        kind: EntityKind::StayInState,
        reward: None,
        transition: constant(l1_transition_with(
            &baseline_stay_in_state(spec),
            reference,
            cfg.l1,
        )?),
    });
    Ok(L1Sweep {
        n_grid: cfg.n_grid.clone(),
        series,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model(reward: Vec<f64>, transition: Vec<f64>) -> DynamicsModel {
        DynamicsModel::from_tables(2, 2, reward, transition).unwrap()
    }

    #[test]
    fn reward_l1_by_hand() {
        let a = model(vec![0.0; 4], vec![0.5; 8]);
        let b = model(vec![0.1, 0.3, 0.0, 0.2], vec![0.5; 8]);
        assert!((l1_reward(&a, &b).unwrap() - 0.15).abs() < 1e-12);
        assert_eq!(l1_reward(&a, &a).unwrap(), 0.0);
        let shifted = model(vec![0.25; 4], vec![0.5; 8]);
        assert!((l1_reward(&a, &shifted).unwrap() - 0.25).abs() < 1e-12);
    }

    #[test]
    fn transition_l1_uniform_vs_identity() {
        let uniform = model(vec![0.0; 4], vec![0.5; 8]);
        let identity = model(vec![0.0; 4], vec![1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        assert!((l1_transition(&uniform, &identity).unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(l1_transition(&uniform, &uniform).unwrap(), 0.0);
        // two point masses on different states hit the simplex bound 2(S-1)/S per row average
        let other = model(vec![0.0; 4], vec![0.0, 1.0, 0.0, 1.0, 1.0, 0.0, 1.0, 0.0]);
        assert!((l1_transition(&identity, &other).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch() {
        let a = model(vec![0.0; 4], vec![0.5; 8]);
        let b = DynamicsModel::from_tables(1, 2, vec![0.0; 2], vec![1.0; 2]).unwrap();
        assert!(matches!(l1_reward(&a, &b), Err(MetricsError::Shape(_))));
        assert!(matches!(l1_transition(&a, &b), Err(MetricsError::Shape(_))));
    }

    #[test]
    fn fallback_exclusion() {
        let mut a = model(vec![0.0, 1.0, 0.0, 0.0], vec![0.5; 8]);
        let b = model(vec![0.0; 4], vec![0.5; 8]);
        a.fallback[1] = true;
        assert!((l1_reward(&a, &b).unwrap() - 0.25).abs() < 1e-12);
        let opts = L1Options {
            exclude_fallback: true,
        };
        assert_eq!(l1_reward_with(&a, &b, opts).unwrap(), 0.0);
    }

    #[test]
    fn interval_rule() {
        let v: Vec<f64> = (1..=10).map(f64::from).collect();
        let (lo, hi) = credible_interval(&v, 0.95).unwrap();
        assert!((lo - 1.225).abs() < 1e-9);
        assert!((hi - 9.775).abs() < 1e-9);
        assert_eq!(credible_interval(&[3.0; 10], 0.95).unwrap(), (3.0, 3.0));
        assert!(matches!(
            credible_interval(&[1.0], 0.95),
            Err(MetricsError::TooFewValues(1))
        ));
        assert!(credible_interval(&[1.0, 2.0], 1.0).is_err());
    }
}
