//! Pluggable scoring backends.

use std::collections::BTreeSet;
use std::time::Duration;

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::matcher::MatchPrompt;
use crate::wire::{call_with_retries, CallError, HttpTransport, JsonTransport, ScoreRequest, ScoreResponse, SCORE_PATH};

/// One finite score per candidate, higher is better.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreVector(pub Vec<f64>);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScoreError {
    #[error(transparent)]
    Call(#[from] CallError),
    #[error("{got} scores for {expected} candidates")]
    LengthMismatch { expected: usize, got: usize },
    #[error("response for query {got}, expected {expected}")]
    QueryMismatch { expected: String, got: String },
    #[error("non-finite score at position {0}")]
    NonFinite(usize),
}

pub trait Scorer: Send + Sync {
    fn score(&self, prompt: &MatchPrompt) -> Result<ScoreVector, ScoreError>;

    /// Whether the backend consumes the profile grid image.
    fn needs_image(&self) -> bool {
        false
    }
}

/// Lowercase alphanumeric tokens.
pub fn tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Scores a candidate by how many profile aspect tokens its name and
/// description share. Used to check that the pipeline carries signal.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleScorer;

impl Scorer for OracleScorer {
    fn score(&self, prompt: &MatchPrompt) -> Result<ScoreVector, ScoreError> {
        let aspects: BTreeSet<String> = prompt.profile_aspects.iter().flat_map(|a| tokens(a)).collect();
        Ok(ScoreVector(
            prompt
                .candidate_texts
                .iter()
                .map(|t| tokens(t).intersection(&aspects).count() as f64)
                .collect(),
        ))
    }
}

/// I.i.d. uniform scores. The stream is keyed by the seed and the prompt, so
/// identical prompts always get identical scores.
#[derive(Debug, Clone, Copy)]
pub struct RandomScorer {
    pub seed: u64,
}

impl Scorer for RandomScorer {
    fn score(&self, prompt: &MatchPrompt) -> Result<ScoreVector, ScoreError> {
        let mut h = Sha256::new();
        h.update(self.seed.to_le_bytes());
        h.update(prompt.query_id.as_bytes());
        h.update([0]);
        h.update(prompt.text.as_bytes());
        let digest = h.finalize();
        let mut seed = [0u8; 32];
        seed.copy_from_slice(&digest[..32]);
        let mut rng = ChaCha8Rng::from_seed(seed);
        Ok(ScoreVector(
            (0..prompt.candidate_ids.len()).map(|_| rng.random::<f64>()).collect(),
        ))
    }
}

/// Scores through the JSON scorer protocol. The service returns one
/// first-token probability per candidate token.
pub struct RemoteScorer {
    transport: Box<dyn JsonTransport>,
    retries: u32,
}

impl RemoteScorer {
    pub fn new(transport: Box<dyn JsonTransport>, retries: u32) -> Self {
        Self { transport, retries }
    }

    pub fn http(endpoint: &str, timeout: Duration, retries: u32) -> Self {
        Self::new(Box::new(HttpTransport::new(endpoint, timeout)), retries)
    }

    pub fn request(prompt: &MatchPrompt) -> ScoreRequest {
        ScoreRequest {
            query_id: prompt.query_id.clone(),
            prompt_text: prompt.text.clone(),
            image_png_b64: prompt
                .grid_png
                .as_ref()
                .map(|b| base64::engine::general_purpose::STANDARD.encode(b))
                .unwrap_or_default(),
            candidate_tokens: prompt.candidate_tokens(),
        }
    }
}

impl Scorer for RemoteScorer {
    fn score(&self, prompt: &MatchPrompt) -> Result<ScoreVector, ScoreError> {
        let resp: ScoreResponse =
            call_with_retries(self.transport.as_ref(), SCORE_PATH, &Self::request(prompt), self.retries)?;
        if resp.query_id != prompt.query_id {
            return Err(ScoreError::QueryMismatch {
                expected: prompt.query_id.clone(),
                got: resp.query_id,
            });
        }
        if resp.scores.len() != prompt.candidate_ids.len() {
            return Err(ScoreError::LengthMismatch {
                expected: prompt.candidate_ids.len(),
                got: resp.scores.len(),
            });
        }
        if let Some(i) = resp.scores.iter().position(|s| !s.is_finite()) {
            return Err(ScoreError::NonFinite(i));
        }
        Ok(ScoreVector(resp.scores))
    }

    fn needs_image(&self) -> bool {
        true
    }
}
