//! In-process endpoint answering from known dynamics, so a campaign can be
//! checked against the model that produced its answers.

use rand::Rng;

use super::client::{ChatEndpoint, ChatRequest, EndpointError};
use super::QuestionKind;
use crate::dynamics::DynamicsModel;
use crate::rng;
use crate::study::{representative_raw, RewardKind, StudySpec};

/// Answers reward questions with an effort whose expectation maps back to the
/// true mean reward (or a yes/no completion with that probability), and
/// next-state questions with a draw from the true transition row, written as
/// representative raw values.
pub struct MockEndpoint {
    spec: StudySpec,
    truth: DynamicsModel,
    seed: u64,
    /// Probability of replying with text that has no answer in it.
    pub garble_rate: f64,
}

impl MockEndpoint {
    pub fn new(spec: StudySpec, truth: DynamicsModel, seed: u64) -> Self {
        Self {
            spec,
            truth,
            seed,
            garble_rate: 0.0,
        }
    }

    fn reward_answer<R: Rng>(&self, state: usize, cluster: usize, rng: &mut R) -> String {
        let (lo, hi) = self.spec.reward.range;
        let p = ((self.truth.reward(state, cluster) - lo) / (hi - lo)).clamp(0.0, 1.0);
        if self.spec.reward.kind == RewardKind::CompletionWithDiversityCost {
            let yes = rng.random::<f64>() < p;
            return format!("completion: {}", if yes { "yes" } else { "no" });
        }
        let target = 10.0 * p;
        let base = target.floor();
        let effort = base as i64 + i64::from(rng.random::<f64>() < target - base);
        format!("effort: {}", effort.min(10))
    }

    fn next_state_answer<R: Rng>(&self, state: usize, cluster: usize, rng: &mut R) -> String {
        let next = rng::sample_categorical(rng, self.truth.row(state, cluster));
        let decoded = self
            .spec
            .decode_state(next)
            .expect("row index is a valid state");
        let raws: Vec<String> = self
            .spec
            .learned_features()
            .zip(&decoded.values)
            .map(|(f, &v)| match f.raw_scale {
                Some(_) => representative_raw(f, v)
                    .expect("decoded value in range")
                    .to_string(),
                None => v.to_string(),
            })
            .collect();
        format!("[{}]", raws.join(", "))
    }
}

impl ChatEndpoint for MockEndpoint {
    fn complete(&self, request: &ChatRequest) -> Result<String, EndpointError> {
        let ctx = request
            .context
            .ok_or_else(|| EndpointError::Decode("mock endpoint needs the query context".into()))?;
        let cluster = self
            .spec
            .cluster_of(ctx.action)
            .ok_or_else(|| EndpointError::Decode(format!("unknown action {}", ctx.action)))?;
        if ctx.state >= self.truth.n_states || cluster >= self.truth.n_actions {
            return Err(EndpointError::Decode(format!(
                "state {} / cluster {cluster} outside the mock dynamics",
                ctx.state
            )));
        }
        let mut r = rng::stream(self.seed, &[request.seed]);
        if self.garble_rate > 0.0 && r.random::<f64>() < self.garble_rate {
            return Ok("I would rather not say.".into());
        }
        Ok(match ctx.kind {
            QuestionKind::Reward => self.reward_answer(ctx.state, cluster, &mut r),
            QuestionKind::NextState => self.next_state_answer(ctx.state, cluster, &mut r),
        })
    }
}
