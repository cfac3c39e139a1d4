//! The decoding loop: sample a token, turn it into mixing weights, mix the
//! embedding table and feed the result back as the next input.

mod replay;
mod trace;

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{MoiError, Result};
use crate::mix::{
    direct_mix_weights, normalized_entropy, one_hot_weights, posterior_mix_weights_with_entropy,
    Entropy, MixConfig, MixMode, MixingWeights, ProbabilityVector,
};
use crate::model::{DecoderState, Model};
use crate::rng::session_rng;
use crate::sampler::{apply_temperature, argmax, sample_categorical, top_p_truncate, SamplerConfig};

pub use replay::{replay_verify, ReplayFailure, ReplayReport, REPLAY_TOLERANCE};
pub use trace::{read_trace, write_trace};

/// Anything that maps a sequence of continuous inputs to next-token logits.
pub trait LanguageModel {
    type State;

    fn embeddings(&self) -> &EmbeddingTable;

    fn context(&self) -> usize;

    fn new_state(&self) -> Self::State;

    fn forward_step(&self, state: &mut Self::State, input: &[f32]) -> Result<Vec<f32>>;

    fn vocab(&self) -> usize {
        self.embeddings().vocab()
    }
}

impl LanguageModel for Model {
    type State = DecoderState;

    fn embeddings(&self) -> &EmbeddingTable {
        Model::embeddings(self)
    }

    fn context(&self) -> usize {
        self.config().context
    }

    fn new_state(&self) -> DecoderState {
        Model::new_state(self)
    }

    fn forward_step(&self, state: &mut DecoderState, input: &[f32]) -> Result<Vec<f32>> {
        Model::forward_step(self, state, input)
    }
}

/// Which distribution feeds the entropy, the prior and the Direct Mixture
/// weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PriorSource {
    /// The temperature-scaled, top-p truncated distribution tokens are drawn from.
    #[default]
    SampledDist,
    /// The full post-temperature softmax, before truncation.
    RawSoftmax,
}

impl std::str::FromStr for PriorSource {
    type Err = MoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sampled_dist" => Ok(PriorSource::SampledDist),
            "raw_softmax" => Ok(PriorSource::RawSoftmax),
            other => Err(MoiError::InvalidConfig(format!("unknown prior source `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub mix: MixConfig,
    pub sampler: SamplerConfig,
    pub max_tokens: usize,
    /// Emitted and recorded, then generation ends. Never fed back.
    pub stop_tokens: Vec<u32>,
    /// Structural tokens that receive one-hot feedback under passthrough.
    pub special_tokens: Vec<u32>,
    pub prior_source: PriorSource,
    pub special_passthrough: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            mix: MixConfig::default(),
            sampler: SamplerConfig::default(),
            max_tokens: 32,
            stop_tokens: Vec::new(),
            special_tokens: Vec::new(),
            prior_source: PriorSource::SampledDist,
            special_passthrough: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        self.mix.validate()?;
        self.sampler.validate()?;
        if self.max_tokens == 0 {
            return Err(MoiError::InvalidConfig("max_tokens must be ≥ 1".into()));
        }
        Ok(())
    }

    fn passes_through(&self, token: u32) -> bool {
        self.special_passthrough
            && (self.stop_tokens.contains(&token) || self.special_tokens.contains(&token))
    }

    /// The feedback weights for `token` given the prior-source distribution.
    pub fn feedback_weights(
        &self,
        prior: &ProbabilityVector,
        entropy: Entropy,
        token: u32,
    ) -> Result<MixingWeights> {
        if self.passes_through(token) {
            return one_hot_weights(token, prior.vocab());
        }
        match self.mix.mode {
            MixMode::Standard => one_hot_weights(token, prior.vocab()),
            MixMode::DirectMixture => Ok(direct_mix_weights(prior)),
            MixMode::Moi => posterior_mix_weights_with_entropy(prior, token, self.mix.beta, entropy),
        }
    }
}

/// Audit record of one decoding step. `weights` is aligned with `support`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub token: u32,
    #[serde(rename = "H")]
    pub entropy: f64,
    pub support: Vec<u32>,
    pub probs: Vec<f64>,
    pub weights: Vec<f64>,
    pub mode: MixMode,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    /// Generated tokens only (the prompt is not repeated).
    pub tokens: Vec<u32>,
    pub steps: Vec<StepRecord>,
    pub prefill_secs: f64,
    pub decode_secs: f64,
    pub prompt_tokens: usize,
}

impl GenerationResult {
    pub fn generated_tokens(&self) -> usize {
        self.tokens.len()
    }
}

fn check_prompt<M: LanguageModel>(model: &M, prompt: &[u32], max_tokens: usize) -> Result<()> {
    if prompt.is_empty() {
        return Err(MoiError::InvalidInput("prompt must contain at least one token".into()));
    }
    if let Some(&bad) = prompt.iter().find(|&&t| t as usize >= model.vocab()) {
        return Err(MoiError::Index {
            index: bad as usize,
            len: model.vocab(),
        });
    }
    let requested = prompt.len() + max_tokens;
    if requested > model.context() {
        return Err(MoiError::Capacity {
            capacity: model.context(),
            requested,
        });
    }
    Ok(())
}

fn prefill<M: LanguageModel>(model: &M, state: &mut M::State, prompt: &[u32]) -> Result<Vec<f32>> {
    let mut logits = Vec::new();
    for &t in prompt {
        logits = model.forward_step(state, model.embeddings().row(t)?)?;
    }
    Ok(logits)
}

pub fn generate<M: LanguageModel>(model: &M, prompt: &[u32], cfg: &GenConfig) -> Result<GenerationResult> {
    cfg.validate()?;
    check_prompt(model, prompt, cfg.max_tokens)?;
    let table = model.embeddings();
    let mut rng = session_rng(cfg.sampler.seed);
    let mut state = model.new_state();

    let start = Instant::now();
    let mut logits = prefill(model, &mut state, prompt)?;
    let prefill_secs = start.elapsed().as_secs_f64();

    let start = Instant::now();
    let mut tokens = Vec::with_capacity(cfg.max_tokens);
    let mut steps = Vec::with_capacity(cfg.max_tokens);
    for step in 0..cfg.max_tokens {
        let raw = apply_temperature(&logits, cfg.sampler.temperature)?;
        let truncated = top_p_truncate(&raw, cfg.sampler.top_p)?;
        let token = sample_categorical(&truncated, &mut rng);
        let prior = match cfg.prior_source {
            PriorSource::SampledDist => truncated.into_distribution(),
            PriorSource::RawSoftmax => raw,
        };
        let entropy = normalized_entropy(&prior)?;
        let weights = cfg.feedback_weights(&prior, entropy, token)?;

        tokens.push(token);
        let done = cfg.stop_tokens.contains(&token) || step + 1 == cfg.max_tokens;
        let next = if done { None } else { Some(table.mix(&weights)?) };
        steps.push(StepRecord {
            step,
            token,
            entropy: entropy.value(),
            weights: weights.aligned_to(prior.ids()),
            support: prior.ids().to_vec(),
            probs: prior.probs().to_vec(),
            mode: cfg.mix.mode,
        });
        match next {
            Some(input) => logits = model.forward_step(&mut state, input.as_slice())?,
            None => break,
        }
    }
    let decode_secs = start.elapsed().as_secs_f64();

    Ok(GenerationResult {
        tokens,
        steps,
        prefill_secs,
        decode_secs,
        prompt_tokens: prompt.len(),
    })
}

/// Argmax decoding with one-hot feedback. Stops after emitting a stop token.
pub fn greedy_decode<M: LanguageModel>(
    model: &M,
    prompt: &[u32],
    max_tokens: usize,
    stop_tokens: &[u32],
) -> Result<Vec<u32>> {
    check_prompt(model, prompt, max_tokens)?;
    let mut state = model.new_state();
    let mut logits = prefill(model, &mut state, prompt)?;
    let mut out = Vec::with_capacity(max_tokens);
    for step in 0..max_tokens {
        let token = argmax(&logits);
        out.push(token);
        if stop_tokens.contains(&token) || step + 1 == max_tokens {
            break;
        }
        logits = model.forward_step(&mut state, model.embeddings().row(token)?)?;
    }
    Ok(out)
}
