//! Prompt templates and rendering.
//!
//! A template body is plain text with `{{name}}` placeholders:
//!
//! * `{{state}}` the user's current state, one line per learned feature
//! * `{{action}}` the action name
//! * `{{action_text}}` the action's full text (extensive prompts only)
//! * `{{few_shot}}` the block of real examples, empty when there are none
//! * `{{format}}` the output-format instruction
//!
//! Assets are named `{study}_{reward|next}_{base|ext}_{plain|cot}_v{01..10}.txt`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use regex::Regex;
use thiserror::Error;

use super::QuestionKind;
use crate::study::{
    representative_raw, ActionDef, PromptLength, PromptStyle, RewardKind, Sample, State,
    StudyError, StudySpec,
};

const KNOWN: [&str; 5] = ["state", "action", "action_text", "few_shot", "format"];

#[derive(Debug, Error)]
pub enum TemplateError {
    #[error("cannot read template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("template {name}: unknown placeholder '{{{{{placeholder}}}}}'")]
    UnknownPlaceholder { name: String, placeholder: String },
    #[error("template {name}: missing placeholder '{{{{{placeholder}}}}}'")]
    MissingPlaceholder { name: String, placeholder: String },
    #[error("no template for {0}")]
    NotFound(String),
    #[error("study {0} has no {1:?} prompts")]
    LengthNotOffered(String, PromptLength),
    #[error("few-shot example #{index} has action {found}, cluster {found_cluster}; expected cluster {expected}")]
    FewShotMismatch {
        index: usize,
        found: usize,
        found_cluster: usize,
        expected: usize,
    },
    #[error("expected {expected} raw values, got {found}")]
    RawLength { expected: usize, found: usize },
    #[error(transparent)]
    Study(#[from] StudyError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PromptTemplate {
    pub study_id: String,
    pub question_kind: QuestionKind,
    pub length: PromptLength,
    pub style: PromptStyle,
    pub variant: u8,
    pub body: String,
}

fn placeholder_re() -> Regex {
    Regex::new(r"\{\{([a-z_]+)\}\}").expect("static regex")
}

impl PromptTemplate {
    pub fn file_name(
        study_id: &str,
        kind: QuestionKind,
        length: PromptLength,
        style: PromptStyle,
        variant: u8,
    ) -> String {
        format!(
            "{study_id}_{}_{}_{}_v{variant:02}.txt",
            kind.tag(),
            length.tag(),
            style.tag()
        )
    }

    pub fn name(&self) -> String {
        Self::file_name(
            &self.study_id,
            self.question_kind,
            self.length,
            self.style,
            self.variant,
        )
    }

    /// Every placeholder must be known; the renderer's required ones must be present.
    pub fn validate(&self) -> Result<(), TemplateError> {
        let re = placeholder_re();
        let found: Vec<&str> = re
            .captures_iter(&self.body)
            .map(|c| c.get(1).expect("group").as_str())
            .collect();
        if let Some(unknown) = found.iter().find(|p| !KNOWN.contains(p)) {
            return Err(TemplateError::UnknownPlaceholder {
                name: self.name(),
                placeholder: unknown.to_string(),
            });
        }
        let mut required = vec!["state", "action", "few_shot", "format"];
        if self.length == PromptLength::Extensive {
            required.push("action_text");
        }
        for r in required {
            if !found.contains(&r) {
                return Err(TemplateError::MissingPlaceholder {
                    name: self.name(),
                    placeholder: r.to_string(),
                });
            }
        }
        Ok(())
    }
}

/// Templates of one study, keyed by (kind, length, style, variant).
#[derive(Debug, Clone, Default)]
pub struct TemplateSet {
    templates: BTreeMap<(QuestionKind, PromptLength, PromptStyle, u8), PromptTemplate>,
}

impl TemplateSet {
    pub fn insert(&mut self, tpl: PromptTemplate) -> Result<(), TemplateError> {
        tpl.validate()?;
        self.templates
            .insert((tpl.question_kind, tpl.length, tpl.style, tpl.variant), tpl);
        Ok(())
    }

    /// Load the templates a plan needs from `dir`.
    pub fn load(
        dir: &Path,
        spec: &StudySpec,
        length: PromptLength,
        style: PromptStyle,
        variants: &[u8],
    ) -> Result<Self, TemplateError> {
        if !spec.lengths.contains(&length) {
            return Err(TemplateError::LengthNotOffered(
                spec.study_id.clone(),
                length,
            ));
        }
        let mut set = TemplateSet::default();
        for &variant in variants {
            for kind in [QuestionKind::Reward, QuestionKind::NextState] {
                let name = PromptTemplate::file_name(&spec.study_id, kind, length, style, variant);
                let path = dir.join(&name);
                if !path.exists() {
                    return Err(TemplateError::NotFound(path.display().to_string()));
                }
                let body = std::fs::read_to_string(&path)
                    .map_err(|source| TemplateError::Io { path, source })?;
                set.insert(PromptTemplate {
                    study_id: spec.study_id.clone(),
                    question_kind: kind,
                    length,
                    style,
                    variant,
                    body,
                })?;
            }
        }
        Ok(set)
    }

    pub fn get(
        &self,
        kind: QuestionKind,
        length: PromptLength,
        style: PromptStyle,
        variant: u8,
    ) -> Option<&PromptTemplate> {
        self.templates.get(&(kind, length, style, variant))
    }

    pub fn len(&self) -> usize {
        self.templates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.templates.is_empty()
    }
}

fn state_lines(spec: &StudySpec, raw: &[i64]) -> String {
    let mut out = String::new();
    for (f, v) in spec.learned_features().zip(raw) {
        match f.raw_scale {
            Some((lo, hi)) => {
                let _ = writeln!(out, "- {}: {v} (on a scale from {lo} to {hi})", f.label());
            }
            None => {
                let _ = writeln!(out, "- {}: {v}", f.label());
            }
        }
    }
    out.trim_end().to_string()
}

fn raw_of(spec: &StudySpec, state: &State) -> Result<Vec<i64>, TemplateError> {
    spec.validate_state(state)?;
    spec.learned_features()
        .zip(&state.values)
        .map(|(f, &v)| {
            if f.raw_scale.is_some() {
                representative_raw(f, v).map_err(TemplateError::from)
            } else {
                Ok(v as i64)
            }
        })
        .collect()
}

fn reward_answer(spec: &StudySpec, reward: f64) -> String {
    match spec.reward.kind {
        RewardKind::CompletionWithDiversityCost => {
            let done = reward >= spec.reward.midpoint();
            format!("completion: {}", if done { "yes" } else { "no" })
        }
        _ => format!("effort: {}", spec.reward.effort_from_reward(reward)),
    }
}

fn list_answer(values: &[i64]) -> String {
    let parts: Vec<String> = values.iter().map(i64::to_string).collect();
    format!("[{}]", parts.join(", "))
}

/// The instruction that fixes the answer format.
pub fn format_instruction(spec: &StudySpec, kind: QuestionKind, style: PromptStyle) -> String {
    let answer = match kind {
        QuestionKind::Reward => match spec.reward.kind {
            RewardKind::CompletionWithDiversityCost => {
                "'completion: yes' or 'completion: no'".to_string()
            }
            _ => "'effort: N', where N is a whole number from 0 to 10".to_string(),
        },
        QuestionKind::NextState => {
            let names: Vec<&str> = spec.learned_features().map(|f| f.label()).collect();
            format!(
                "a list of {} whole numbers in the form [{}], giving the new values of: {}",
                names.len(),
                vec!["x"; names.len()].join(", "),
                names.join("; ")
            )
        }
    };
    match style {
        PromptStyle::Plain => format!("Respond only with {answer}. Do not add anything else."),
        PromptStyle::Cot => {
            format!("Finish your response with a final line containing only {answer}.")
        }
    }
}

fn few_shot_block(
    spec: &StudySpec,
    kind: QuestionKind,
    examples: &[Sample],
) -> Result<String, TemplateError> {
    if examples.is_empty() {
        return Ok(String::new());
    }
    let mut out =
        String::from("Here are examples of what real users in the same situation reported:\n");
    for (i, ex) in examples.iter().enumerate() {
        let raw = raw_of(spec, &ex.state)?;
        let answer = match kind {
            QuestionKind::Reward => reward_answer(spec, ex.reward),
            QuestionKind::NextState => list_answer(&raw_of(spec, &ex.next_state)?),
        };
        let _ = write!(
            out,
            "\nExample {}:\n{}\nAnswer: {answer}\n",
            i + 1,
            state_lines(spec, &raw)
        );
    }
    Ok(out)
}

/// Render with explicit raw prompt-scale values for the current state.
pub fn render_prompt_raw(
    tpl: &PromptTemplate,
    raw_state: &[i64],
    action: &ActionDef,
    few_shot: &[Sample],
    spec: &StudySpec,
) -> Result<String, TemplateError> {
    tpl.validate()?;
    let n = spec.n_learned_features();
    if raw_state.len() != n {
        return Err(TemplateError::RawLength {
            expected: n,
            found: raw_state.len(),
        });
    }
    for (i, ex) in few_shot.iter().enumerate() {
        let found_cluster = spec
            .cluster_of(ex.action_id)
            .ok_or(StudyError::OutOfRange {
                what: "few-shot action id".into(),
                index: ex.action_id,
                limit: spec.n_actions(),
            })?;
        if found_cluster != action.cluster_id {
            return Err(TemplateError::FewShotMismatch {
                index: i,
                found: ex.action_id,
                found_cluster,
                expected: action.cluster_id,
            });
        }
    }
    let action_text = match tpl.length {
        PromptLength::Extensive => action.full_text.clone().unwrap_or_default(),
        PromptLength::Base => String::new(),
    };
    let values = [
        ("state", state_lines(spec, raw_state)),
        ("action", action.name.clone()),
        ("action_text", action_text),
        (
            "few_shot",
            few_shot_block(spec, tpl.question_kind, few_shot)?,
        ),
        (
            "format",
            format_instruction(spec, tpl.question_kind, tpl.style),
        ),
    ];
    let re = placeholder_re();
    let rendered = re.replace_all(&tpl.body, |caps: &regex::Captures<'_>| {
        let key = caps.get(1).expect("group").as_str();
        values
            .iter()
            .find(|(k, _)| *k == key)
            .map(|(_, v)| v.clone())
            .unwrap_or_default()
    });
    // collapse the blank lines left by empty blocks
    let mut out = String::with_capacity(rendered.len());
    let mut blank_run = 0;
    for line in rendered.lines() {
        if line.trim().is_empty() {
            blank_run += 1;
            if blank_run > 1 {
                continue;
            }
        } else {
            blank_run = 0;
        }
        out.push_str(line.trim_end());
        out.push('\n');
    }
    Ok(out.trim().to_string())
}

/// Render for a binned state, shown through each bin's representative raw value.
pub fn render_prompt(
    tpl: &PromptTemplate,
    state: &State,
    action: &ActionDef,
    few_shot: &[Sample],
    spec: &StudySpec,
) -> Result<String, TemplateError> {
    let raw = raw_of(spec, state)?;
    render_prompt_raw(tpl, &raw, action, few_shot, spec)
}
