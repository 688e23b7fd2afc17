//! Run configuration: a TOML file whose keys command-line flags override.

use std::path::{Path, PathBuf};

use bcrl_core::generation::GenerationPlan;
use bcrl_core::metrics::SweepConfig;
use bcrl_core::solver::SolverConfig;
use bcrl_core::study::{PromptLength, PromptStyle};
use clap::Args;
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulationConfig {
    pub users: usize,
    /// Defaults to the study's horizon.
    pub horizon: Option<usize>,
    pub level: f64,
}

impl Default for SimulationConfig {
    fn default() -> Self {
        Self {
            users: 200,
            horizon: None,
            level: 0.95,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimateConfig {
    pub smoothing: f64,
}

impl Default for EstimateConfig {
    fn default() -> Self {
        Self { smoothing: 0.0 }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub study: Option<PathBuf>,
    pub seed: Option<u64>,
    pub generation: GenerationPlan,
    pub estimate: EstimateConfig,
    pub solver: SolverConfig,
    pub simulation: SimulationConfig,
    pub sweep: SweepConfig,
}

impl Config {
    /// Read a config file; relative `study` paths resolve against its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: Config = toml::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        if let (Some(study), Some(dir)) = (&cfg.study, path.parent()) {
            if study.is_relative() {
                cfg.study = Some(dir.join(study));
            }
        }
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Config::default()), Config::load)
    }

    /// Apply command-line overrides; the top-level seed feeds every stage.
    pub fn apply(&mut self, axes: &Axes) {
        if let Some(study) = &axes.study {
            self.study = Some(study.clone());
        }
        if let Some(seed) = axes.seed {
            self.seed = Some(seed);
        }
        if let Some(seed) = self.seed {
            self.generation.seed = seed;
        }
        if let Some(v) = &axes.variants {
            self.generation.variants = v.clone();
        }
        if let Some(n) = axes.n_per_action {
            self.generation.n_per_action = n;
        }
        if let Some(t) = axes.temperature {
            self.generation.temperature = t;
        }
        if let Some(k) = axes.few_shot_k {
            self.generation.few_shot_k = k;
        }
        if let Some(s) = axes.style {
            self.generation.style = s;
        }
        if let Some(l) = axes.length {
            self.generation.length = l;
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn study_path(&self) -> Result<&Path, CliError> {
        self.study.as_deref().ok_or_else(|| {
            CliError::config("no study given (use --study or the config's `study` key)")
        })
    }
}

/// Flags mirroring the experiment axes.
#[derive(Debug, Clone, Default, Args)]
pub struct Axes {
    /// Study spec file.
    #[arg(long)]
    pub study: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Prompt variants, e.g. `1,2,3`.
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<u8>>,
    #[arg(long)]
    pub n_per_action: Option<usize>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub few_shot_k: Option<usize>,
    /// `plain` or `cot`.
    #[arg(long)]
    pub style: Option<PromptStyle>,
    /// `base` or `extensive`.
    #[arg(long)]
    pub length: Option<PromptLength>,
}
