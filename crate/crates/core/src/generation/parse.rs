//! Answer extraction from model completions.
//!
//! Reward answers: `effort: N` (any case), a bare integer, a boxed integer,
//! or `completion: yes|no` / a bare yes/no for completion studies. Next-state
//! answers: a bracketed integer list, possibly inside `\boxed{...}`. When a
//! completion contains several candidates the last well-formed one wins.

use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::study::{bin_raw_value, RewardKind, State, StudySpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ParseError {
    #[error("no parseable answer")]
    NoAnswer,
    #[error("answer lists {found} values, expected {expected}")]
    WrongLength { expected: usize, found: usize },
    #[error("answer value {value} out of range")]
    OutOfRange { value: i64 },
}

impl ParseError {
    pub fn kind(&self) -> &'static str {
        match self {
            ParseError::NoAnswer => "no_answer",
            ParseError::WrongLength { .. } => "wrong_length",
            ParseError::OutOfRange { .. } => "out_of_range",
        }
    }
}

fn effort_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\beffort\**\s*[:=]\s*\**\s*(-?\d+(?:\.\d+)?)").expect("static regex")
    })
}

fn boxed_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\\boxed\{\s*(-?\d+(?:\.\d+)?)\s*\}").expect("static regex"))
}

fn bare_number_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(-?\d+)\s*\.?\s*$").expect("static regex"))
}

fn completion_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"(?i)\bcomplet(?:ion|ed)\**\s*[:=]\s*\**\s*(yes|no)\b").expect("static regex")
    })
}

fn bare_yes_no_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)^\s*\**(yes|no)\**\s*\.?\s*$").expect("static regex"))
}

fn list_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"\[\s*(-?\d+(?:\.\d+)?(?:\s*,\s*-?\d+(?:\.\d+)?)*)\s*,?\s*\]")
            .expect("static regex")
    })
}

/// Parse an integer effort token; fractional values do not count as answers.
fn int_token(tok: &str) -> Option<i64> {
    if tok.contains('.') {
        None
    } else {
        tok.parse().ok()
    }
}

/// Pick the last in-range candidate; report out-of-range only when nothing fits.
fn last_effort(candidates: &[i64]) -> Result<i64, ParseError> {
    if let Some(&e) = candidates.iter().rev().find(|e| (0..=10).contains(*e)) {
        return Ok(e);
    }
    match candidates.last() {
        Some(&value) => Err(ParseError::OutOfRange { value }),
        None => Err(ParseError::NoAnswer),
    }
}

/// Effort (0..=10) from a completion.
pub fn parse_effort(text: &str) -> Result<i64, ParseError> {
    let mut candidates: Vec<(usize, i64)> = effort_re()
        .captures_iter(text)
        .chain(boxed_number_re().captures_iter(text))
        .filter_map(|c| {
            let m = c.get(1)?;
            int_token(m.as_str()).map(|v| (m.start(), v))
        })
        .collect();
    if candidates.is_empty() {
        if let Some(c) = bare_number_re().captures(text) {
            if let Some(v) = int_token(&c[1]) {
                candidates.push((0, v));
            }
        }
    }
    candidates.sort_by_key(|(pos, _)| *pos);
    let values: Vec<i64> = candidates.into_iter().map(|(_, v)| v).collect();
    last_effort(&values)
}

/// Completion answer from a yes/no completion.
pub fn parse_completion(text: &str) -> Result<bool, ParseError> {
    let last = completion_re()
        .captures_iter(text)
        .last()
        .map(|c| c[1].to_ascii_lowercase())
        .or_else(|| {
            bare_yes_no_re()
                .captures(text)
                .map(|c| c[1].to_ascii_lowercase())
        });
    match last.as_deref() {
        Some("yes") => Ok(true),
        Some("no") => Ok(false),
        _ => Err(ParseError::NoAnswer),
    }
}

/// Reward value for the study's reward kind.
pub fn parse_reward(text: &str, spec: &StudySpec) -> Result<f64, ParseError> {
    match spec.reward.kind {
        RewardKind::CompletionWithDiversityCost => {
            let (lo, hi) = spec.reward.range;
            Ok(if parse_completion(text)? { hi } else { lo })
        }
        _ => {
            let effort = parse_effort(text)?;
            spec.reward
                .reward_from_effort(effort)
                .map_err(|_| ParseError::OutOfRange { value: effort })
        }
    }
}

/// Raw prompt-scale values of the next learned state.
pub fn parse_next_state_raw(text: &str, spec: &StudySpec) -> Result<Vec<i64>, ParseError> {
    let expected = spec.n_learned_features();
    let mut last_err = ParseError::NoAnswer;
    let mut best: Option<Vec<i64>> = None;
    for caps in list_re().captures_iter(text) {
        let tokens: Vec<&str> = caps[1].split(',').map(str::trim).collect();
        let Some(values) = tokens
            .iter()
            .map(|t| int_token(t))
            .collect::<Option<Vec<i64>>>()
        else {
            continue;
        };
        if values.len() != expected {
            last_err = ParseError::WrongLength {
                expected,
                found: values.len(),
            };
            continue;
        }
        let out_of_scale = spec.learned_features().zip(&values).find_map(|(f, &v)| {
            let ok = match f.raw_scale {
                Some((lo, hi)) => (lo..=hi).contains(&v),
                None => v >= 0 && (v as usize) < f.cardinality,
            };
            (!ok).then_some(v)
        });
        if let Some(value) = out_of_scale {
            last_err = ParseError::OutOfRange { value };
            continue;
        }
        best = Some(values);
    }
    best.ok_or(last_err)
}

/// Next learned state: raw values binned per feature.
pub fn parse_next_state(text: &str, spec: &StudySpec) -> Result<State, ParseError> {
    let raw = parse_next_state_raw(text, spec)?;
    let values = spec
        .learned_features()
        .zip(&raw)
        .map(|(f, &v)| {
            if f.raw_scale.is_some() {
                bin_raw_value(f, v).map_err(|_| ParseError::OutOfRange { value: v })
            } else {
                Ok(v as usize)
            }
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(State::new(values))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn effort_forms() {
        assert_eq!(parse_effort("effort: 8").unwrap(), 8);
        assert_eq!(parse_effort("EFFORT:3").unwrap(), 3);
        assert_eq!(parse_effort("**Effort:** 6").unwrap(), 6);
        assert_eq!(parse_effort("  7 ").unwrap(), 7);
        assert_eq!(parse_effort("7.").unwrap(), 7);
        assert_eq!(parse_effort("The answer is $\\boxed{4}$").unwrap(), 4);
        assert_eq!(
            parse_effort("effort: 3 ... on reflection effort: 9").unwrap(),
            9
        );
        assert_eq!(parse_effort("effort: 9 then effort: 12").unwrap(), 9);
    }

    #[test]
    fn effort_errors() {
        assert_eq!(parse_effort("I am not sure"), Err(ParseError::NoAnswer));
        assert_eq!(
            parse_effort("effort: 12"),
            Err(ParseError::OutOfRange { value: 12 })
        );
        assert_eq!(
            parse_effort("effort: -1"),
            Err(ParseError::OutOfRange { value: -1 })
        );
        assert_eq!(parse_effort("effort: 7.5"), Err(ParseError::NoAnswer));
        assert_eq!(
            parse_effort("I rate it 7 out of 10"),
            Err(ParseError::NoAnswer)
        );
    }

    #[test]
    fn completion_forms() {
        assert!(parse_completion("completion: yes").unwrap());
        assert!(!parse_completion("Completion: NO").unwrap());
        assert!(parse_completion("yes").unwrap());
        assert!(!parse_completion("completion: yes\nActually completion: no").unwrap());
        assert_eq!(parse_completion("maybe"), Err(ParseError::NoAnswer));
    }
}
