//! Generated samples: prompt rendering, the chat-completion client, answer
//! parsing, resumable campaigns and a mock endpoint backed by known dynamics.

pub mod campaign;
pub mod client;
pub mod mock;
pub mod parse;
pub mod template;

use serde::{Deserialize, Serialize};

use crate::study::{PromptLength, PromptStyle};

pub use campaign::{run_campaign, CampaignError, CampaignOptions, CampaignStats};
pub use client::{
    ChatClient, ChatEndpoint, ChatMessage, ChatRequest, EndpointError, HttpEndpoint, QueryContext,
    RetryPolicy,
};
pub use mock::MockEndpoint;
pub use parse::{parse_next_state, parse_next_state_raw, parse_reward, ParseError};
pub use template::{render_prompt, render_prompt_raw, PromptTemplate, TemplateError, TemplateSet};

/// Temperatures used in the reference experiments.
pub const REFERENCE_TEMPERATURES: [f64; 3] = [0.1, 0.6, 0.9];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionKind {
    Reward,
    NextState,
}

impl QuestionKind {
    pub fn tag(self) -> &'static str {
        match self {
            QuestionKind::Reward => "reward",
            QuestionKind::NextState => "next",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationPlan {
    pub model_id: String,
    pub endpoint: String,
    /// Environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    pub temperature: f64,
    pub top_p: f64,
    pub max_tokens: u32,
    pub seed: u64,
    pub n_per_action: usize,
    pub few_shot_k: usize,
    pub length: PromptLength,
    pub style: PromptStyle,
    pub variants: Vec<u8>,
    pub max_retries: u32,
    pub max_parallel: usize,
}

impl Default for GenerationPlan {
    fn default() -> Self {
        Self {
            model_id: "mock".into(),
            endpoint: "mock://".into(),
            api_key_env: Some("BCRL_API_KEY".into()),
            temperature: 0.6,
            top_p: 0.9,
            max_tokens: 4096,
            seed: 0,
            n_per_action: 500,
            few_shot_k: 0,
            length: PromptLength::Base,
            style: PromptStyle::Plain,
            variants: (1..=10).collect(),
            max_retries: 3,
            max_parallel: 4,
        }
    }
}

impl GenerationPlan {
    /// Problems that make the plan unusable.
    pub fn validate(&self) -> Result<(), String> {
        if self.variants.is_empty() {
            return Err("plan needs at least one prompt variant".into());
        }
        if let Some(v) = self.variants.iter().find(|v| !(1..=10).contains(*v)) {
            return Err(format!("prompt variant {v} outside 1..=10"));
        }
        let mut sorted = self.variants.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.variants.len() {
            return Err("prompt variants must be distinct".into());
        }
        if self.few_shot_k > 10 {
            return Err(format!("few_shot_k {} outside 0..=10", self.few_shot_k));
        }
        if !(self.temperature >= 0.0 && self.temperature.is_finite()) {
            return Err(format!(
                "temperature {} must be nonnegative",
                self.temperature
            ));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(format!("top_p {} outside (0, 1]", self.top_p));
        }
        if self.max_parallel == 0 {
            return Err("max_parallel must be >= 1".into());
        }
        Ok(())
    }

    /// Warnings for settings outside the reference grid.
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !REFERENCE_TEMPERATURES
            .iter()
            .any(|t| (t - self.temperature).abs() < 1e-12)
        {
            w.push(format!(
                "temperature {} is not one of the reference settings {:?}",
                self.temperature, REFERENCE_TEMPERATURES
            ));
        }
        w
    }
}
