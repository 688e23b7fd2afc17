//! Resumable sample-generation campaigns.
//!
//! A campaign walks every (variant, cluster, slot) with slot `i` in
//! `0..n_per_action`: the state is `decode(i mod S)` and the action cycles
//! through the cluster's members every `S` slots. Each slot makes a reward
//! call and a next-state call on the same rendered context. Results are
//! appended in slot order, so an interrupted run that is resumed leaves the
//! same store as an uninterrupted one.

use std::collections::{BTreeMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::client::{CallStatsSnapshot, ChatClient, ChatRequest, EndpointError, QueryContext};
use super::parse::{parse_next_state, parse_reward, ParseError};
use super::template::{render_prompt, TemplateError, TemplateSet};
use super::{GenerationPlan, QuestionKind};
use crate::rng;
use crate::store::{SampleStore, StoreError};
use crate::study::{Sample, SampleSource, StudySpec};

const FEW_SHOT_STREAM: u64 = 0xF5;

#[derive(Debug, Error)]
pub enum CampaignError {
    #[error("invalid plan: {0}")]
    Plan(String),
    #[error("few_shot_k = {0} needs a store of real samples")]
    NoRealSamples(usize),
    #[error(transparent)]
    Template(#[from] TemplateError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("endpoint refused the request: {0}")]
    Endpoint(EndpointError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CampaignOptions {
    /// Stop after this many slots have been attempted (simulates an interruption).
    pub limit: Option<usize>,
    /// Slots dispatched together before their results are appended.
    pub batch_size: usize,
    pub source: SampleSource,
}

impl Default for CampaignOptions {
    fn default() -> Self {
        Self {
            limit: None,
            batch_size: 64,
            source: SampleSource::Llm,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct CampaignStats {
    pub planned: usize,
    pub already_stored: usize,
    pub attempted: usize,
    pub stored: usize,
    /// Failed slots by reason (`no_answer`, `wrong_length`, `out_of_range`, `endpoint`).
    pub failures: BTreeMap<String, usize>,
    /// Answers rejected by a parser and re-asked.
    pub parse_retries: usize,
    pub calls: CallStatsSnapshot,
    pub interrupted: bool,
}

impl CampaignStats {
    pub fn failed(&self) -> usize {
        self.failures.values().sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
struct SlotKey {
    variant: u8,
    cluster: usize,
    slot: usize,
}

enum SlotFail {
    Parse(&'static str),
    Endpoint,
    Fatal(EndpointError),
}

enum SlotOutcome {
    Stored(Box<Sample>, usize),
    Failed(&'static str, usize),
}

/// Whether a stored sample was produced under this plan.
fn same_provenance(s: &Sample, plan: &GenerationPlan) -> bool {
    s.model_id.as_deref() == Some(plan.model_id.as_str())
        && s.prompt_length == Some(plan.length)
        && s.prompt_style == Some(plan.style)
        && s.few_shot_k == Some(plan.few_shot_k)
        && s.temperature == Some(plan.temperature)
        && s.seed == Some(plan.seed)
}

fn request_seed(plan: &GenerationPlan, key: SlotKey, kind: QuestionKind, attempt: u32) -> u64 {
    rng::derive_seed(
        plan.seed,
        &[
            u64::from(key.variant),
            key.cluster as u64,
            key.slot as u64,
            kind as u64,
            u64::from(attempt),
        ],
    )
}

struct Job<'a> {
    plan: &'a GenerationPlan,
    spec: &'a StudySpec,
    templates: &'a TemplateSet,
    client: &'a ChatClient,
    pools: &'a [Vec<&'a Sample>],
    members: &'a [Vec<usize>],
}

impl Job<'_> {
    /// Ask one question, re-asking on parse failures.
    fn ask<T>(
        &self,
        key: SlotKey,
        ctx: QueryContext,
        prompt: &str,
        parse: impl Fn(&str) -> Result<T, ParseError>,
        retries: &mut usize,
    ) -> Result<T, SlotFail> {
        let mut last = "no_answer";
        for attempt in 0..=self.plan.max_retries {
            let seed = request_seed(self.plan, key, ctx.kind, attempt);
            let mut req = ChatRequest::from_plan(self.plan, prompt, seed);
            req.context = Some(ctx);
            let text = match self.client.chat_complete(&req) {
                Ok(t) => t,
                Err(e) if e.is_retryable() || e == EndpointError::EmptyCompletion => {
                    return Err(SlotFail::Endpoint)
                }
                Err(e) => return Err(SlotFail::Fatal(e)),
            };
            match parse(&text) {
                Ok(v) => return Ok(v),
                Err(e) => {
                    last = e.kind();
                    if attempt < self.plan.max_retries {
                        *retries += 1;
                    }
                }
            }
        }
        Err(SlotFail::Parse(last))
    }

    fn run(&self, key: SlotKey) -> Result<SlotOutcome, CampaignError> {
        let spec = self.spec;
        let n_states = spec.n_states();
        let state_idx = key.slot % n_states;
        let members = &self.members[key.cluster];
        let action_id = members[(key.slot / n_states) % members.len()];
        let state = spec.decode_state(state_idx).expect("index below n_states");
        let action = &spec.actions[action_id];

        let pool = &self.pools[key.cluster];
        let k = self.plan.few_shot_k.min(pool.len());
        let mut fs_rng = rng::stream(
            self.plan.seed,
            &[
                FEW_SHOT_STREAM,
                u64::from(key.variant),
                key.cluster as u64,
                key.slot as u64,
            ],
        );
        let few_shot: Vec<Sample> = rng::choose_indices(&mut fs_rng, pool.len(), k)
            .into_iter()
            .map(|i| pool[i].clone())
            .collect();

        let render = |kind| -> Result<String, CampaignError> {
            let tpl = self
                .templates
                .get(kind, self.plan.length, self.plan.style, key.variant)
                .ok_or_else(|| {
                    TemplateError::NotFound(format!("{} variant {}", kind.tag(), key.variant))
                })?;
            Ok(render_prompt(tpl, &state, action, &few_shot, spec)?)
        };
        let reward_prompt = render(QuestionKind::Reward)?;
        let next_prompt = render(QuestionKind::NextState)?;

        let ctx = |kind| QueryContext {
            kind,
            state: state_idx,
            action: action_id,
        };
        let mut retries = 0;
        let reward = self.ask(
            key,
            ctx(QuestionKind::Reward),
            &reward_prompt,
            |t| parse_reward(t, spec),
            &mut retries,
        );
        let outcome = reward.and_then(|r| {
            self.ask(
                key,
                ctx(QuestionKind::NextState),
                &next_prompt,
                |t| parse_next_state(t, spec),
                &mut retries,
            )
            .map(|n| (r, n))
        });
        let (reward, next) = match outcome {
            Ok(v) => v,
            Err(SlotFail::Parse(kind)) => return Ok(SlotOutcome::Failed(kind, retries)),
            Err(SlotFail::Endpoint) => return Ok(SlotOutcome::Failed("endpoint", retries)),
            Err(SlotFail::Fatal(e)) => return Err(CampaignError::Endpoint(e)),
        };
        let mut sample = Sample::new(state, action_id, reward, next, SampleSource::Llm);
        sample.model_id = Some(self.plan.model_id.clone());
        sample.prompt_variant = Some(key.variant);
        sample.prompt_length = Some(self.plan.length);
        sample.prompt_style = Some(self.plan.style);
        sample.few_shot_k = Some(self.plan.few_shot_k);
        sample.temperature = Some(self.plan.temperature);
        sample.seed = Some(self.plan.seed);
        sample.slot = Some(key.slot);
        Ok(SlotOutcome::Stored(Box::new(sample), retries))
    }
}

/// Run (or resume) a campaign, appending parsed samples to `out`.
pub fn run_campaign(
    spec: &StudySpec,
    plan: &GenerationPlan,
    templates: &TemplateSet,
    client: &ChatClient,
    real: Option<&[Sample]>,
    out: &mut SampleStore,
    opts: &CampaignOptions,
) -> Result<CampaignStats, CampaignError> {
    plan.validate().map_err(CampaignError::Plan)?;
    for w in plan.warnings() {
        log::warn!("{w}");
    }
    let real = real.unwrap_or(&[]);
    if plan.few_shot_k > 0 && real.is_empty() {
        return Err(CampaignError::NoRealSamples(plan.few_shot_k));
    }
    for &variant in &plan.variants {
        for kind in [QuestionKind::Reward, QuestionKind::NextState] {
            if templates
                .get(kind, plan.length, plan.style, variant)
                .is_none()
            {
                return Err(TemplateError::NotFound(format!(
                    "{} {} {} variant {variant}",
                    kind.tag(),
                    plan.length.tag(),
                    plan.style.tag()
                ))
                .into());
            }
        }
    }

    let members = spec.cluster_members();
    let mut pools: Vec<Vec<&Sample>> = vec![Vec::new(); members.len()];
    for s in real {
        if let Some(c) = spec.cluster_of(s.action_id) {
            pools[c].push(s);
        }
    }
    if plan.few_shot_k > 0 {
        for (c, pool) in pools.iter().enumerate() {
            if pool.len() < plan.few_shot_k {
                log::warn!(
                    "cluster {c} has {} real samples, fewer than few_shot_k = {}",
                    pool.len(),
                    plan.few_shot_k
                );
            }
        }
    }

    let done: HashSet<SlotKey> = out
        .read_all()?
        .iter()
        .filter(|s| same_provenance(s, plan))
        .filter_map(|s| {
            Some(SlotKey {
                variant: s.prompt_variant?,
                cluster: spec.cluster_of(s.action_id)?,
                slot: s.slot?,
            })
        })
        .collect();

    let mut stats = CampaignStats::default();
    let mut todo = Vec::new();
    for &variant in &plan.variants {
        for cluster in 0..members.len() {
            for slot in 0..plan.n_per_action {
                stats.planned += 1;
                let key = SlotKey {
                    variant,
                    cluster,
                    slot,
                };
                if done.contains(&key) {
                    stats.already_stored += 1;
                } else {
                    todo.push(key);
                }
            }
        }
    }
    if let Some(limit) = opts.limit {
        if todo.len() > limit {
            todo.truncate(limit);
            stats.interrupted = true;
        }
    }

    let job = Job {
        plan,
        spec,
        templates,
        client,
        pools: &pools,
        members: &members,
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(plan.max_parallel)
        .build()
        .map_err(|e| CampaignError::Plan(format!("cannot start workers: {e}")))?;
    for batch in todo.chunks(opts.batch_size.max(1)) {
        let outcomes: Vec<Result<SlotOutcome, CampaignError>> =
            pool.install(|| batch.par_iter().map(|&key| job.run(key)).collect());
        let mut stored = Vec::with_capacity(batch.len());
        for outcome in outcomes {
            stats.attempted += 1;
            match outcome? {
                SlotOutcome::Stored(mut s, retries) => {
                    s.source = opts.source;
                    stats.parse_retries += retries;
                    stored.push(*s);
                }
                SlotOutcome::Failed(kind, retries) => {
                    stats.parse_retries += retries;
                    *stats.failures.entry(kind.to_string()).or_default() += 1;
                }
            }
        }
        out.append(&stored)?;
        stats.stored += stored.len();
    }
    stats.calls = client.stats();
    Ok(stats)
}
