//! Discrete MDP vocabulary of a behavior-change study.
//!
//! A study is described by a TOML document with a `[study]` table, one
//! `[[feature]]` table per state feature, one `[[action]]` table per raw
//! action and a `[reward]` table. Only *learned* features enter the flat
//! state index; *deterministic* features (competencies, challenge counters)
//! are advanced by the simulator hook.

use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum StudyError {
    #[error("cannot read study spec {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse study spec {path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("invalid study spec at {location}: {rule}")]
    Invariant { location: String, rule: String },
    #[error("{what} index {index} out of range (limit {limit})")]
    OutOfRange {
        what: String,
        index: usize,
        limit: usize,
    },
    #[error("effort {0} outside 0..=10")]
    EffortOutOfRange(i64),
    #[error("raw value {raw} outside scale {lo}..={hi} of feature '{feature}'")]
    RawOutOfScale {
        feature: String,
        raw: i64,
        lo: i64,
        hi: i64,
    },
    #[error("feature '{0}' has no raw scale")]
    NoRawScale(String),
}

fn invariant(location: impl Into<String>, rule: impl Into<String>) -> StudyError {
    StudyError::Invariant {
        location: location.into(),
        rule: rule.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureRole {
    Learned,
    Deterministic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDef {
    pub name: String,
    /// Wording used when the feature is shown in a prompt.
    #[serde(default)]
    pub prompt_label: Option<String>,
    pub role: FeatureRole,
    pub cardinality: usize,
    pub value_labels: Vec<String>,
    #[serde(default)]
    pub raw_scale: Option<(i64, i64)>,
    /// Inclusive upper raw value of every bin except the last.
    #[serde(default)]
    pub bin_edges: Option<Vec<i64>>,
}

impl FeatureDef {
    pub fn label(&self) -> &str {
        self.prompt_label.as_deref().unwrap_or(&self.name)
    }

    /// Equal-width edges over the raw scale: `n` integer raw values are split
    /// into `cardinality` bins whose sizes differ by at most one, larger bins first.
    pub fn equal_width_edges(lo: i64, hi: i64, cardinality: usize) -> Vec<i64> {
        let n = hi - lo + 1;
        let k = cardinality as i64;
        (1..k).map(|i| lo + (i * n + k - 1) / k - 1).collect()
    }

    /// Cut points in effect: the declared ones or the equal-width default.
    pub fn effective_edges(&self) -> Option<Vec<i64>> {
        let (lo, hi) = self.raw_scale?;
        Some(
            self.bin_edges
                .clone()
                .unwrap_or_else(|| Self::equal_width_edges(lo, hi, self.cardinality)),
        )
    }

    /// Inclusive raw bounds of bin `index`.
    pub fn bin_bounds(&self, index: usize) -> Result<(i64, i64), StudyError> {
        let (lo, hi) = self
            .raw_scale
            .ok_or_else(|| StudyError::NoRawScale(self.name.clone()))?;
        if index >= self.cardinality {
            return Err(StudyError::OutOfRange {
                what: format!("bin of feature '{}'", self.name),
                index,
                limit: self.cardinality,
            });
        }
        let edges = self.effective_edges().unwrap_or_default();
        let start = if index == 0 { lo } else { edges[index - 1] + 1 };
        let end = if index + 1 == self.cardinality {
            hi
        } else {
            edges[index]
        };
        Ok((start, end))
    }

    fn validate(&self, location: &str) -> Result<(), StudyError> {
        if self.cardinality < 2 {
            return Err(invariant(location, "cardinality >= 2"));
        }
        if self.value_labels.len() != self.cardinality {
            return Err(invariant(
                location,
                format!(
                    "value_labels has {} entries, expected cardinality {}",
                    self.value_labels.len(),
                    self.cardinality
                ),
            ));
        }
        match (self.raw_scale, &self.bin_edges) {
            (None, Some(_)) => Err(invariant(location, "bin_edges given without raw_scale")),
            (None, None) => Ok(()),
            (Some((lo, hi)), edges) => {
                if lo >= hi {
                    return Err(invariant(location, "raw_scale must satisfy lo < hi"));
                }
                let edges = edges
                    .clone()
                    .unwrap_or_else(|| Self::equal_width_edges(lo, hi, self.cardinality));
                if edges.len() + 1 != self.cardinality {
                    return Err(invariant(
                        location,
                        format!(
                            "bin_edges must define exactly {} bins, got {}",
                            self.cardinality,
                            edges.len() + 1
                        ),
                    ));
                }
                let mut prev = lo - 1;
                for &e in &edges {
                    if e <= prev || e >= hi {
                        return Err(invariant(
                            location,
                            "bin_edges must be strictly ascending inside the raw scale with nonempty bins",
                        ));
                    }
                    prev = e;
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDef {
    pub id: usize,
    pub name: String,
    /// Learned-dynamics action group.
    #[serde(rename = "cluster")]
    pub cluster_id: usize,
    #[serde(default)]
    pub full_text: Option<String>,
    /// Per-competency contribution (competency studies only).
    #[serde(default)]
    pub contribution: Option<Vec<f64>>,
    /// Coping strategy index (diversity studies only).
    #[serde(default)]
    pub strategy: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    ScaledEffort,
    CompletionWithDiversityCost,
    CompetencyIncrease,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub range: (f64, f64),
    #[serde(default)]
    pub diversity_weight: Option<f64>,
}

impl RewardSpec {
    pub fn midpoint(&self) -> f64 {
        0.5 * (self.range.0 + self.range.1)
    }

    pub fn contains(&self, r: f64) -> bool {
        const EPS: f64 = 1e-9;
        r.is_finite() && r >= self.range.0 - EPS && r <= self.range.1 + EPS
    }

    /// Reward for a parsed 0..10 effort answer.
    pub fn reward_from_effort(&self, effort: i64) -> Result<f64, StudyError> {
        match self.kind {
            RewardKind::ScaledEffort => map_effort_to_reward(effort),
            _ => {
                if !(0..=10).contains(&effort) {
                    return Err(StudyError::EffortOutOfRange(effort));
                }
                let (lo, hi) = self.range;
                Ok(lo + (hi - lo) * effort as f64 / 10.0)
            }
        }
    }

    /// Inverse of [`RewardSpec::reward_from_effort`], rounded to the nearest effort.
    pub fn effort_from_reward(&self, reward: f64) -> i64 {
        let (lo, hi) = self.range;
        let e = 10.0 * (reward - lo) / (hi - lo);
        (e.round() as i64).clamp(0, 10)
    }

    fn validate(&self) -> Result<(), StudyError> {
        let (lo, hi) = self.range;
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(invariant("reward", "range must satisfy lo < hi"));
        }
        match self.kind {
            RewardKind::ScaledEffort if (lo, hi) != (-1.0, 1.0) => Err(invariant(
                "reward",
                "scaled_effort range must be exactly [-1, 1]",
            )),
            RewardKind::CompletionWithDiversityCost => match self.diversity_weight {
                None => Err(invariant(
                    "reward",
                    "completion_with_diversity_cost requires diversity_weight",
                )),
                Some(w) if w.is_nan() || w < 0.0 => {
                    Err(invariant("reward", "diversity_weight must be nonnegative"))
                }
                _ => Ok(()),
            },
            _ => Ok(()),
        }
    }
}

/// Linear effort-to-reward map `r = effort/5 - 1`.
pub fn map_effort_to_reward(effort: i64) -> Result<f64, StudyError> {
    if !(0..=10).contains(&effort) {
        return Err(StudyError::EffortOutOfRange(effort));
    }
    Ok(effort as f64 / 5.0 - 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Criterion {
    MeanReward,
    CompetencyFraction,
    DiversityFraction,
}

impl Criterion {
    pub fn tag(self) -> &'static str {
        match self {
            Criterion::MeanReward => "mean_reward",
            Criterion::CompetencyFraction => "competency_fraction",
            Criterion::DiversityFraction => "diversity_fraction",
        }
    }

    pub fn range(self) -> (f64, f64) {
        match self {
            Criterion::MeanReward => (-1.0, 1.0),
            _ => (0.0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptLength {
    Base,
    Extensive,
}

impl PromptLength {
    pub fn tag(self) -> &'static str {
        match self {
            PromptLength::Base => "base",
            PromptLength::Extensive => "ext",
        }
    }
}

impl std::str::FromStr for PromptLength {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "base" => Ok(Self::Base),
            "ext" | "extensive" => Ok(Self::Extensive),
            other => Err(format!("unknown prompt length '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptStyle {
    Plain,
    Cot,
}

impl PromptStyle {
    pub fn tag(self) -> &'static str {
        match self {
            PromptStyle::Plain => "plain",
            PromptStyle::Cot => "cot",
        }
    }
}

impl std::str::FromStr for PromptStyle {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "plain" => Ok(Self::Plain),
            "cot" => Ok(Self::Cot),
            other => Err(format!("unknown prompt style '{other}'")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub study_id: String,
    pub title: String,
    /// Short study description from the user's perspective, for prompts.
    pub description: String,
    pub features: Vec<FeatureDef>,
    pub actions: Vec<ActionDef>,
    pub reward: RewardSpec,
    pub criterion: Criterion,
    /// Template directory, resolved against the spec file's directory.
    pub prompt_set: PathBuf,
    pub default_horizon: usize,
    /// Prompt lengths that have templates.
    pub lengths: Vec<PromptLength>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyHeader {
    id: String,
    #[serde(default)]
    title: Option<String>,
    #[serde(default)]
    description: Option<String>,
    criterion: Criterion,
    prompt_set: PathBuf,
    default_horizon: usize,
    #[serde(default)]
    lengths: Option<Vec<PromptLength>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct StudyFile {
    study: StudyHeader,
    #[serde(default)]
    feature: Vec<FeatureDef>,
    #[serde(default)]
    action: Vec<ActionDef>,
    reward: RewardSpec,
}

/// Load and validate a study spec file.
pub fn load_study_spec(path: impl AsRef<Path>) -> Result<StudySpec, StudyError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| StudyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut spec = parse_study_spec(&text).map_err(|e| match e {
        StudyError::Parse { message, .. } => StudyError::Parse {
            path: path.to_path_buf(),
            message,
        },
        other => other,
    })?;
    if spec.prompt_set.is_relative() {
        if let Some(dir) = path.parent() {
            spec.prompt_set = dir.join(&spec.prompt_set);
        }
    }
    Ok(spec)
}

/// Parse and validate a study spec from TOML text; `prompt_set` stays as written.
pub fn parse_study_spec(text: &str) -> Result<StudySpec, StudyError> {
    let file: StudyFile = toml::from_str(text).map_err(|e| StudyError::Parse {
        path: PathBuf::new(),
        message: e.to_string(),
    })?;
    let StudyFile {
        study,
        feature,
        action,
        reward,
    } = file;
    let spec = StudySpec {
        title: study.title.unwrap_or_else(|| study.id.clone()),
        description: study.description.unwrap_or_default(),
        study_id: study.id,
        features: feature,
        actions: action,
        reward,
        criterion: study.criterion,
        prompt_set: study.prompt_set,
        default_horizon: study.default_horizon,
        lengths: study
            .lengths
            .unwrap_or_else(|| vec![PromptLength::Base, PromptLength::Extensive]),
    };
    spec.validate()?;
    Ok(spec)
}

impl StudySpec {
    pub fn validate(&self) -> Result<(), StudyError> {
        for (i, f) in self.features.iter().enumerate() {
            f.validate(&format!("feature[{i}] '{}'", f.name))?;
        }
        if self.learned_features().next().is_none() {
            return Err(invariant("features", "at least one learned feature"));
        }
        if self.actions.len() < 2 {
            return Err(invariant("actions", "at least 2 actions"));
        }
        for (i, a) in self.actions.iter().enumerate() {
            if a.id != i {
                return Err(invariant(
                    format!("action[{i}] '{}'", a.name),
                    format!("action ids must be 0..{} in order", self.actions.len()),
                ));
            }
        }
        let n_clusters = self.actions.iter().map(|a| a.cluster_id).max().unwrap_or(0) + 1;
        for c in 0..n_clusters {
            if !self.actions.iter().any(|a| a.cluster_id == c) {
                return Err(invariant(
                    "actions",
                    format!("cluster ids must be contiguous 0..{n_clusters}; cluster {c} is empty"),
                ));
            }
        }
        self.reward.validate()?;
        let expected = match self.reward.kind {
            RewardKind::ScaledEffort => Criterion::MeanReward,
            RewardKind::CompetencyIncrease => Criterion::CompetencyFraction,
            RewardKind::CompletionWithDiversityCost => Criterion::DiversityFraction,
        };
        if self.criterion != expected {
            return Err(invariant(
                "study.criterion",
                format!(
                    "criterion {:?} does not match reward kind {:?}",
                    self.criterion, self.reward.kind
                ),
            ));
        }
        let n_det = self.deterministic_features().count();
        for (i, a) in self.actions.iter().enumerate() {
            let loc = format!("action[{i}] '{}'", a.name);
            match self.reward.kind {
                RewardKind::CompetencyIncrease => match &a.contribution {
                    Some(c) if c.len() == n_det => {
                        if c.iter().any(|x| !(*x >= 0.0 && *x <= 1.0)) {
                            return Err(invariant(loc, "contributions must lie in [0, 1]"));
                        }
                    }
                    _ => {
                        return Err(invariant(
                            loc,
                            format!("contribution must list {n_det} values, one per competency"),
                        ))
                    }
                },
                RewardKind::CompletionWithDiversityCost => match a.strategy {
                    Some(k) if k < n_det => {}
                    _ => {
                        return Err(invariant(
                            loc,
                            format!("strategy must index one of {n_det} challenge counters"),
                        ))
                    }
                },
                RewardKind::ScaledEffort => {}
            }
        }
        if self.reward.kind == RewardKind::ScaledEffort && n_det > 0 {
            return Err(invariant(
                "features",
                "scaled_effort studies have no deterministic features",
            ));
        }
        if self.reward.kind != RewardKind::ScaledEffort && n_det == 0 {
            return Err(invariant(
                "features",
                "competency and diversity studies need deterministic features",
            ));
        }
        if self.lengths.is_empty() {
            return Err(invariant("study.lengths", "at least one prompt length"));
        }
        if self.default_horizon == 0 {
            return Err(invariant("study.default_horizon", "must be >= 1"));
        }
        Ok(())
    }

    pub fn learned_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features
            .iter()
            .filter(|f| f.role == FeatureRole::Learned)
    }

    pub fn deterministic_features(&self) -> impl Iterator<Item = &FeatureDef> {
        self.features
            .iter()
            .filter(|f| f.role == FeatureRole::Deterministic)
    }

    pub fn n_learned_features(&self) -> usize {
        self.learned_features().count()
    }

    /// Number of learned states: product of learned-feature cardinalities.
    pub fn n_states(&self) -> usize {
        self.learned_features().map(|f| f.cardinality).product()
    }

    pub fn n_actions(&self) -> usize {
        self.actions.len()
    }

    pub fn n_clusters(&self) -> usize {
        self.actions
            .iter()
            .map(|a| a.cluster_id)
            .max()
            .map_or(0, |c| c + 1)
    }

    pub fn cluster_of(&self, action_id: usize) -> Option<usize> {
        self.actions.get(action_id).map(|a| a.cluster_id)
    }

    /// Raw action ids of each cluster, in id order.
    pub fn cluster_members(&self) -> Vec<Vec<usize>> {
        let mut members = vec![Vec::new(); self.n_clusters()];
        for a in &self.actions {
            members[a.cluster_id].push(a.id);
        }
        members
    }

    pub fn has_deterministic_component(&self) -> bool {
        self.reward.kind != RewardKind::ScaledEffort
    }

    /// Mixed-radix encoding, first learned feature most significant.
    pub fn encode_state(&self, state: &State) -> Result<usize, StudyError> {
        let n = self.n_learned_features();
        if state.values.len() != n {
            return Err(StudyError::OutOfRange {
                what: "state length".into(),
                index: state.values.len(),
                limit: n,
            });
        }
        let mut index = 0;
        for (f, &v) in self.learned_features().zip(&state.values) {
            if v >= f.cardinality {
                return Err(StudyError::OutOfRange {
                    what: format!("value of feature '{}'", f.name),
                    index: v,
                    limit: f.cardinality,
                });
            }
            index = index * f.cardinality + v;
        }
        Ok(index)
    }

    pub fn decode_state(&self, index: usize) -> Result<State, StudyError> {
        let n_states = self.n_states();
        if index >= n_states {
            return Err(StudyError::OutOfRange {
                what: "state index".into(),
                index,
                limit: n_states,
            });
        }
        let cards: Vec<usize> = self.learned_features().map(|f| f.cardinality).collect();
        let mut values = vec![0; cards.len()];
        let mut rest = index;
        for (slot, &c) in values.iter_mut().zip(&cards).rev() {
            *slot = rest % c;
            rest /= c;
        }
        Ok(State { values })
    }

    pub fn validate_state(&self, state: &State) -> Result<(), StudyError> {
        self.encode_state(state).map(|_| ())
    }

    pub fn validate_sample(&self, sample: &Sample) -> Result<(), StudyError> {
        self.validate_state(&sample.state)?;
        self.validate_state(&sample.next_state)?;
        if sample.action_id >= self.n_actions() {
            return Err(StudyError::OutOfRange {
                what: "action id".into(),
                index: sample.action_id,
                limit: self.n_actions(),
            });
        }
        if !self.reward.contains(sample.reward) {
            return Err(invariant(
                "sample.reward",
                format!(
                    "reward {} outside [{}, {}]",
                    sample.reward, self.reward.range.0, self.reward.range.1
                ),
            ));
        }
        Ok(())
    }
}

/// Map a raw prompt-scale value to its bin index.
pub fn bin_raw_value(feature: &FeatureDef, raw: i64) -> Result<usize, StudyError> {
    let (lo, hi) = feature
        .raw_scale
        .ok_or_else(|| StudyError::NoRawScale(feature.name.clone()))?;
    if raw < lo || raw > hi {
        return Err(StudyError::RawOutOfScale {
            feature: feature.name.clone(),
            raw,
            lo,
            hi,
        });
    }
    let edges = feature.effective_edges().unwrap_or_default();
    Ok(edges.iter().take_while(|&&e| raw > e).count())
}

/// Midpoint of a bin's raw range, rounded half up.
pub fn representative_raw(feature: &FeatureDef, index: usize) -> Result<i64, StudyError> {
    let (start, end) = feature.bin_bounds(index)?;
    // floor((start + end + 1) / 2) rounds x.5 upward for nonnegative and negative sums alike
    Ok((start + end + 1).div_euclid(2))
}

/// Learned-feature value indices, in feature order.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct State {
    pub values: Vec<usize>,
}

impl State {
    pub fn new(values: Vec<usize>) -> Self {
        Self { values }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (i, v) in self.values.iter().enumerate() {
            if i > 0 {
                write!(f, ", ")?;
            }
            write!(f, "{v}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSource {
    Real,
    Llm,
    Human,
    Mock,
}

impl std::str::FromStr for SampleSource {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "real" => Ok(Self::Real),
            "llm" => Ok(Self::Llm),
            "human" => Ok(Self::Human),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown sample source '{other}'")),
        }
    }
}

/// One `<s, a, r, s'>` tuple with provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub state: State,
    pub action_id: usize,
    pub reward: f64,
    pub next_state: State,
    pub source: SampleSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_variant: Option<u8>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_length: Option<PromptLength>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_style: Option<PromptStyle>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub few_shot_k: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Campaign slot index within (variant, cluster); absent for ingested data.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub slot: Option<usize>,
}

impl Sample {
    /// A bare sample with no generation provenance.
    pub fn new(
        state: State,
        action_id: usize,
        reward: f64,
        next_state: State,
        source: SampleSource,
    ) -> Self {
        Self {
            state,
            action_id,
            reward,
            next_state,
            source,
            model_id: None,
            prompt_variant: None,
            prompt_length: None,
            prompt_style: None,
            few_shot_k: None,
            temperature: None,
            seed: None,
            slot: None,
        }
    }
}
