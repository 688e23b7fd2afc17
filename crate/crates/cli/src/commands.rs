//! Subcommand implementations.

use std::fs;
use std::path::{Path, PathBuf};

use bcrl_core::dynamics::{
    baseline_equal_probability, baseline_mean_reward, baseline_stay_in_state, estimate_dynamics,
    DynamicsModel,
};
use bcrl_core::generation::{
    run_campaign, CampaignOptions, ChatClient, ChatEndpoint, HttpEndpoint, MockEndpoint,
    RetryPolicy, TemplateSet,
};
use bcrl_core::manifest::{digest_files, RunManifest};
use bcrl_core::metrics::{self, Grouping, L1Options, SweepSource};
use bcrl_core::report::{write_series_csv, write_sweep_csv};
use bcrl_core::rng::derive_seed;
use bcrl_core::simulator::{
    aggregate_series, empirical_start, simulate_policy, CriterionSeries, DeterministicHook,
    GroundTruth,
};
use bcrl_core::solver::{
    no_learned_dynamics_policy, optimal_policy, random_policy, worst_policy, Policy, PolicyRole,
};
use bcrl_core::store::{export_csv, ingest_csv, read_validated, write_jsonl, SampleStore};
use bcrl_core::study::{load_study_spec, Sample, SampleSource, StudySpec};
use clap::{Args, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::config::{Axes, Config};
use crate::error::CliError;

const RANDOM_POLICY_STREAM: u64 = 0x5A;

fn load_spec(cfg: &Config) -> Result<StudySpec, CliError> {
    Ok(load_study_spec(cfg.study_path()?)?)
}

fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::new("parse", format!("{}: {e}", path.display())))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<(), CliError> {
    ensure_parent(path)?;
    let text = serde_json::to_string_pretty(value).expect("values serialize");
    fs::write(path, text + "\n").map_err(|e| CliError::io(path, e))
}

fn ensure_parent(path: &Path) -> Result<(), CliError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    }
    Ok(())
}

fn create_file(path: &Path) -> Result<fs::File, CliError> {
    ensure_parent(path)?;
    fs::File::create(path).map_err(|e| CliError::io(path, e))
}

/// Parse `label=path`; a bare path is labelled by its file stem.
fn labeled(arg: &str) -> (String, PathBuf) {
    match arg.split_once('=') {
        Some((label, path)) => (label.to_string(), PathBuf::from(path)),
        None => {
            let path = PathBuf::from(arg);
            let label = path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| arg.to_string());
            (label, path)
        }
    }
}

fn manifest_path(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn write_manifest(
    command: &str,
    cfg: &Config,
    spec: Option<&StudySpec>,
    inputs: &[PathBuf],
    outputs: &[PathBuf],
    at: &Path,
) -> Result<(), CliError> {
    let mut all_inputs: Vec<PathBuf> = cfg.study.iter().cloned().collect();
    all_inputs.extend(inputs.iter().cloned());
    let digests = digest_files(&all_inputs).map_err(|e| CliError::new("io", e.to_string()))?;
    let config = serde_json::to_value(cfg).expect("config serializes");
    let mut m = RunManifest::new(
        command,
        spec.map(|s| s.study_id.clone()),
        cfg.seed,
        config,
        digests,
    );
    m.add_outputs(outputs)
        .map_err(|e| CliError::new("io", e.to_string()))?;
    m.write(at).map_err(|e| CliError::io(at, e))
}

// ------------------------------------------------------------------ generate

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub axes: Axes,
    /// Output JSONL store (appended to; reruns resume).
    #[arg(long)]
    pub out: PathBuf,
    /// Real samples: the few-shot pool, and the mock's truth when `--truth` is absent.
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Dynamics model (JSON from `estimate`) backing the mock endpoint.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    #[arg(long)]
    pub model_id: Option<String>,
    /// Chat-completion URL, or `mock://` for the in-process mock.
    #[arg(long)]
    pub endpoint: Option<String>,
    /// Template directory (defaults to the study's prompt set).
    #[arg(long)]
    pub templates: Option<PathBuf>,
    /// Stop after this many slots.
    #[arg(long)]
    pub limit: Option<usize>,
}

pub fn generate(cfg: &Config, args: &GenerateArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let mut plan = cfg.generation.clone();
    if let Some(m) = &args.model_id {
        plan.model_id = m.clone();
    }
    if let Some(e) = &args.endpoint {
        plan.endpoint = e.clone();
    }
    plan.validate().map_err(CliError::config)?;
    let dir = args
        .templates
        .clone()
        .unwrap_or_else(|| spec.prompt_set.clone());
    let templates = TemplateSet::load(&dir, &spec, plan.length, plan.style, &plan.variants)?;
    let real = match &args.real {
        Some(p) => Some(read_validated(p, &spec)?),
        None => None,
    };

    let mock = plan.endpoint.starts_with("mock");
    let endpoint: Box<dyn ChatEndpoint> = if mock {
        let truth = match (&args.truth, &real) {
            (Some(path), _) => read_json::<DynamicsModel>(path)?,
            (None, Some(samples)) => estimate_dynamics(samples, &spec, cfg.estimate.smoothing)?,
            (None, None) => {
                return Err(CliError::config(
                    "the mock endpoint needs --truth or --real to answer from",
                ))
            }
        };
        Box::new(MockEndpoint::new(spec.clone(), truth, plan.seed))
    } else {
        Box::new(HttpEndpoint::from_plan(&plan))
    };
    let client = ChatClient::new(endpoint, RetryPolicy::default(), plan.max_parallel);
    let mut store = SampleStore::open(&args.out)?;
    let opts = CampaignOptions {
        limit: args.limit,
        source: if mock {
            SampleSource::Mock
        } else {
            SampleSource::Llm
        },
        ..CampaignOptions::default()
    };
    let stats = run_campaign(
        &spec,
        &plan,
        &templates,
        &client,
        real.as_deref(),
        &mut store,
        &opts,
    )?;
    drop(store);
    println!(
        "{}",
        serde_json::to_string_pretty(&stats).expect("stats serialize")
    );

    let mut inputs: Vec<PathBuf> = args.real.iter().chain(&args.truth).cloned().collect();
    inputs.sort();
    write_manifest(
        "generate",
        cfg,
        Some(&spec),
        &inputs,
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

// ------------------------------------------------------------------ estimate

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Baseline {
    MeanReward,
    EqualProbability,
    StayInState,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[command(flatten)]
    pub axes: Axes,
    #[arg(long)]
    pub samples: Option<PathBuf>,
    /// Build a data-independent baseline instead of estimating.
    #[arg(long, value_enum)]
    pub baseline: Option<Baseline>,
    /// Only use samples from this prompt variant.
    #[arg(long)]
    pub variant: Option<u8>,
    #[arg(long)]
    pub smoothing: Option<f64>,
    /// Output dynamics model (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn estimate(cfg: &Config, args: &EstimateArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let smoothing = args.smoothing.unwrap_or(cfg.estimate.smoothing);
    let samples = match &args.samples {
        Some(p) => {
            let mut s = read_validated(p, &spec)?;
            if let Some(v) = args.variant {
                s.retain(|x| x.prompt_variant == Some(v));
            }
            Some(s)
        }
        None => None,
    };
    let need_samples = || {
        samples
            .as_deref()
            .ok_or_else(|| CliError::config("--samples is required for this model"))
    };
    let model = match args.baseline {
        None => estimate_dynamics(need_samples()?, &spec, smoothing)?,
        Some(Baseline::MeanReward) => baseline_mean_reward(need_samples()?, &spec)?,
        Some(Baseline::EqualProbability) => baseline_equal_probability(&spec),
        Some(Baseline::StayInState) => baseline_stay_in_state(&spec),
    };
    write_json(&args.out, &model)?;
    let inputs: Vec<PathBuf> = args.samples.iter().cloned().collect();
    write_manifest(
        "estimate",
        cfg,
        Some(&spec),
        &inputs,
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

// ------------------------------------------------------------------ solve

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RoleArg {
    Optimal,
    Worst,
    Random,
    NoLearnedDynamics,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    #[command(flatten)]
    pub axes: Axes,
    /// Dynamics model (JSON from `estimate`); not needed for random and no-learned-dynamics.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "optimal")]
    pub role: RoleArg,
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Output policy (JSON).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn solve(cfg: &Config, args: &SolveArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let mut solver = cfg.solver;
    if let Some(g) = args.gamma {
        solver.gamma = g;
    }
    let model = || -> Result<DynamicsModel, CliError> {
        let path = args
            .model
            .as_deref()
            .ok_or_else(|| CliError::config("--model is required for this role"))?;
        read_json(path)
    };
    let policy = match args.role {
        RoleArg::Optimal => optimal_policy(&spec, &model()?, &solver)?,
        RoleArg::Worst => worst_policy(&spec, &model()?, &solver)?,
        RoleArg::Random => random_policy(&spec, derive_seed(cfg.seed(), &[RANDOM_POLICY_STREAM])),
        RoleArg::NoLearnedDynamics => no_learned_dynamics_policy(&spec, &solver)?,
    };
    write_json(&args.out, &policy)?;
    let inputs: Vec<PathBuf> = args.model.iter().cloned().collect();
    write_manifest(
        "solve",
        cfg,
        Some(&spec),
        &inputs,
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

// ------------------------------------------------------------------ simulate

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub axes: Axes,
    /// Ground-truth dynamics model (JSON).
    #[arg(long)]
    pub truth: PathBuf,
    /// Real samples giving the start-state distribution (uniform if absent).
    #[arg(long)]
    pub real: Option<PathBuf>,
    /// Policy to simulate as `label=path`; repeatable.
    #[arg(long = "policy", required = true)]
    pub policies: Vec<String>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn simulate(cfg: &Config, args: &SimulateArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let learned: DynamicsModel = read_json(&args.truth)?;
    let init = match &args.real {
        Some(p) => empirical_start(&read_validated(p, &spec)?, &spec)?,
        None => vec![1.0 / spec.n_states() as f64; spec.n_states()],
    };
    let truth = GroundTruth::new(learned, DeterministicHook::from_spec(&spec), init)?;
    let users = args.users.unwrap_or(cfg.simulation.users);
    let horizon = args
        .horizon
        .or(cfg.simulation.horizon)
        .unwrap_or(spec.default_horizon);
    let mut rows = Vec::new();
    let mut inputs = vec![args.truth.clone()];
    inputs.extend(args.real.iter().cloned());
    for arg in &args.policies {
        let (label, path) = labeled(arg);
        let policy: Policy = read_json(&path)?;
        rows.push((
            label,
            simulate_policy(&policy, &truth, &spec, users, horizon, cfg.seed())?,
        ));
        inputs.push(path);
    }
    write_series_csv(create_file(&args.out)?, &rows)?;
    write_manifest(
        "simulate",
        cfg,
        Some(&spec),
        &inputs,
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

// ------------------------------------------------------------------ sweep

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub axes: Axes,
    /// Real samples defining the reference dynamics and the oracle.
    #[arg(long)]
    pub reference: PathBuf,
    /// Sample source as `label=path`; repeatable.
    #[arg(long = "source")]
    pub sources: Vec<String>,
    /// Sample counts per action, e.g. `10,20,40`.
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    /// Skip (s, a) cells without data in either model.
    #[arg(long)]
    pub exclude_fallback: bool,
    /// Output CSV.
    #[arg(long)]
    pub out: PathBuf,
}

fn grouping_for(samples: &[Sample]) -> Grouping {
    if !samples.is_empty() && samples.iter().all(|s| s.prompt_variant.is_some()) {
        Grouping::Variants
    } else {
        Grouping::Draws
    }
}

fn load_sources(
    args: &[String],
    spec: &StudySpec,
) -> Result<(Vec<SweepSource>, Vec<PathBuf>), CliError> {
    let mut sources = Vec::new();
    let mut paths = Vec::new();
    for arg in args {
        let (label, path) = labeled(arg);
        let samples = read_validated(&path, spec)?;
        sources.push(SweepSource {
            label,
            grouping: grouping_for(&samples),
            samples,
        });
        paths.push(path);
    }
    Ok((sources, paths))
}

fn sweep_config(
    cfg: &Config,
    n_grid: &Option<Vec<usize>>,
    exclude_fallback: bool,
) -> metrics::SweepConfig {
    let mut sc = cfg.sweep.clone();
    if let Some(g) = n_grid {
        sc.n_grid = g.clone();
    }
    if exclude_fallback {
        sc.l1 = L1Options {
            exclude_fallback: true,
        };
    }
    if let Some(seed) = cfg.seed {
        sc.seeds = sc.seeds.iter().map(|&s| derive_seed(seed, &[s])).collect();
    }
    sc
}

pub fn sweep(cfg: &Config, args: &SweepArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let reference_samples = read_validated(&args.reference, &spec)?;
    let reference = estimate_dynamics(&reference_samples, &spec, cfg.estimate.smoothing)?;
    let (sources, mut inputs) = load_sources(&args.sources, &spec)?;
    let sc = sweep_config(cfg, &args.n_grid, args.exclude_fallback);
    let result = metrics::sweep(&sources, &spec, &reference, &reference_samples, &sc)?;
    write_sweep_csv(create_file(&args.out)?, &result)?;
    inputs.insert(0, args.reference.clone());
    write_manifest(
        "sweep",
        cfg,
        Some(&spec),
        &inputs,
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

// ------------------------------------------------------------------ report

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub axes: Axes,
    /// Real samples: ground truth for simulation and reference for L1.
    #[arg(long)]
    pub reference: PathBuf,
    /// Generated sample source as `label=path`; repeatable.
    #[arg(long = "source")]
    pub sources: Vec<String>,
    /// Human-rater samples, compared like a source and solved for a policy.
    #[arg(long)]
    pub human: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    pub n_grid: Option<Vec<usize>>,
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Optimal policies per prompt variant (one instance without variants).
fn source_policies(
    samples: &[Sample],
    spec: &StudySpec,
    cfg: &Config,
) -> Result<Vec<Policy>, CliError> {
    let mut variants: Vec<Option<u8>> = samples.iter().map(|s| s.prompt_variant).collect();
    variants.sort_unstable();
    variants.dedup();
    variants
        .into_iter()
        .map(|v| {
            let subset: Vec<Sample> = samples
                .iter()
                .filter(|s| s.prompt_variant == v)
                .cloned()
                .collect();
            let model = estimate_dynamics(&subset, spec, cfg.estimate.smoothing)?;
            let mut p = optimal_policy(spec, &model, &cfg.solver)?;
            p.role = PolicyRole::Generated;
            Ok(p)
        })
        .collect()
}

pub fn report(cfg: &Config, args: &ReportArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let real = read_validated(&args.reference, &spec)?;
    let truth = GroundTruth::from_samples(&real, &spec, cfg.estimate.smoothing)?;
    let users = args.users.unwrap_or(cfg.simulation.users);
    let horizon = args
        .horizon
        .or(cfg.simulation.horizon)
        .unwrap_or(spec.default_horizon);
    let seed = cfg.seed();
    let run = |p: &Policy| simulate_policy(p, &truth, &spec, users, horizon, seed);

    let mut rows: Vec<(String, CriterionSeries)> = Vec::new();
    rows.push((
        "optimal".into(),
        run(&optimal_policy(&spec, &truth.learned, &cfg.solver)?)?,
    ));
    rows.push((
        "worst".into(),
        run(&worst_policy(&spec, &truth.learned, &cfg.solver)?)?,
    ));
    rows.push((
        "random".into(),
        run(&random_policy(
            &spec,
            derive_seed(seed, &[RANDOM_POLICY_STREAM]),
        ))?,
    ));
    if spec.has_deterministic_component() {
        rows.push((
            "no_learned_dynamics".into(),
            run(&no_learned_dynamics_policy(&spec, &cfg.solver)?)?,
        ));
    }

    let (mut sources, mut inputs) = load_sources(&args.sources, &spec)?;
    if let Some(h) = &args.human {
        let samples = read_validated(h, &spec)?;
        sources.push(SweepSource {
            label: "human".into(),
            grouping: Grouping::Draws,
            samples,
        });
        inputs.push(h.clone());
    }
    for source in &sources {
        let instances = source_policies(&source.samples, &spec, cfg)?
            .iter()
            .map(&run)
            .collect::<Result<Vec<_>, _>>()?;
        rows.push((
            source.label.clone(),
            aggregate_series(&instances, cfg.simulation.level)?,
        ));
    }

    fs::create_dir_all(&args.out_dir).map_err(|e| CliError::io(&args.out_dir, e))?;
    let perf = args.out_dir.join("policy_performance.csv");
    write_series_csv(create_file(&perf)?, &rows)?;
    let mut outputs = vec![perf];
    if !sources.is_empty() {
        let sc = sweep_config(cfg, &args.n_grid, false);
        let l1 = metrics::sweep(&sources, &spec, &truth.learned, &real, &sc)?;
        let path = args.out_dir.join("l1_errors.csv");
        write_sweep_csv(create_file(&path)?, &l1)?;
        outputs.push(path);
    }
    inputs.insert(0, args.reference.clone());
    write_manifest(
        "report",
        cfg,
        Some(&spec),
        &inputs,
        &outputs,
        &args.out_dir.join("manifest.json"),
    )
}

// ------------------------------------------------------------------ ingest / export

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub axes: Axes,
    #[arg(long)]
    pub csv: PathBuf,
    /// Source for rows without a `source` column.
    #[arg(long, default_value = "real")]
    pub source: SampleSource,
    /// Output JSONL store (replaced).
    #[arg(long)]
    pub out: PathBuf,
}

pub fn ingest(cfg: &Config, args: &IngestArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let samples = ingest_csv(&args.csv, &spec, args.source)?;
    write_jsonl(&args.out, &samples)?;
    eprintln!("ingested {} samples", samples.len());
    write_manifest(
        "ingest",
        cfg,
        Some(&spec),
        std::slice::from_ref(&args.csv),
        std::slice::from_ref(&args.out),
        &manifest_path(&args.out),
    )
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub axes: Axes,
    #[arg(long)]
    pub samples: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

pub fn export(cfg: &Config, args: &ExportArgs) -> Result<(), CliError> {
    let spec = load_spec(cfg)?;
    let samples = read_validated(&args.samples, &spec)?;
    ensure_parent(&args.out)?;
    export_csv(&args.out, &spec, &samples)?;
    Ok(())
}
