//! Scoring tasks for the hyperparameter grid.

use std::io::Write;
use std::path::PathBuf;
use std::process::{Command, Stdio};

use serde::{Deserialize, Serialize};

use crate::error::{MoiError, Result};
use crate::model::{load_weights, Model, ModelConfig};
use crate::pipeline::{generate, greedy_decode, GenConfig, LanguageModel};
use crate::rng::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    /// Fraction of prompts whose sampled continuation equals the greedy one.
    GreedyRecovery,
    /// Each continuation is scored by an external command.
    ExternalScorer,
}

/// Either a `TLM/1` file or a config to initialise a seeded random model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelSource {
    Path(PathBuf),
    Config(ModelConfig),
}

impl ModelSource {
    pub fn load(&self) -> Result<Model> {
        match self {
            ModelSource::Path(p) => load_weights(p),
            ModelSource::Config(c) => Model::init_random(c.clone()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub model: ModelSource,
    /// Prompts as byte strings; each byte is one token.
    pub prompts: Vec<String>,
    /// Generated tokens per prompt.
    pub budget: usize,
    /// Command line for [`TaskKind::ExternalScorer`]. It receives
    /// `{"prompt":[..],"tokens":[..]}` on stdin and prints a score in `[0, 1]`.
    #[serde(default)]
    pub scorer: Vec<String>,
}

impl TaskSpec {
    pub fn validate(&self) -> Result<()> {
        if self.prompts.is_empty() || self.prompts.iter().any(String::is_empty) {
            return Err(MoiError::InvalidConfig("task needs a nonempty set of nonempty prompts".into()));
        }
        if self.kind == TaskKind::ExternalScorer && self.scorer.is_empty() {
            return Err(MoiError::InvalidConfig("external_scorer task needs a `scorer` command".into()));
        }
        Ok(())
    }

    pub fn prompt_tokens(&self) -> Vec<Vec<u32>> {
        self.prompts.iter().map(|p| encode_bytes(p)).collect()
    }
}

pub fn encode_bytes(text: &str) -> Vec<u32> {
    text.bytes().map(u32::from).collect()
}

/// Session seed for prompt `index` of a trial seeded with `seed`.
pub(crate) fn prompt_seed(seed: u64, index: usize) -> u64 {
    derive_seed(seed, &[index as u64])
}

/// Mean exact-match indicator between sampled and greedy continuations of
/// `budget` tokens over `prompts`.
pub fn greedy_recovery_score<M: LanguageModel>(
    model: &M,
    cfg: &GenConfig,
    prompts: &[Vec<u32>],
    budget: usize,
) -> Result<f64> {
    let refs = greedy_references(model, prompts, budget, &cfg.stop_tokens)?;
    score_against_references(model, cfg, prompts, &refs, budget).map(|(s, _)| s)
}

pub(crate) fn greedy_references<M: LanguageModel>(
    model: &M,
    prompts: &[Vec<u32>],
    budget: usize,
    stop_tokens: &[u32],
) -> Result<Vec<Vec<u32>>> {
    if budget == 0 {
        return Err(MoiError::InvalidInput("empty comparison: budget of 0 generated tokens".into()));
    }
    if prompts.is_empty() {
        return Err(MoiError::InvalidInput("empty comparison: no prompts".into()));
    }
    prompts
        .iter()
        .map(|p| greedy_decode(model, p, budget, stop_tokens))
        .collect()
}

/// Returns the score and `(generated tokens, decode seconds)`.
pub(crate) fn score_against_references<M: LanguageModel>(
    model: &M,
    cfg: &GenConfig,
    prompts: &[Vec<u32>],
    refs: &[Vec<u32>],
    budget: usize,
) -> Result<(f64, (usize, f64))> {
    let mut hits = 0usize;
    let mut work = (0usize, 0f64);
    for (k, (prompt, reference)) in prompts.iter().zip(refs).enumerate() {
        let mut c = cfg.clone();
        c.max_tokens = budget;
        c.sampler.seed = prompt_seed(cfg.sampler.seed, k);
        let out = generate(model, prompt, &c)?;
        work.0 += out.generated_tokens();
        work.1 += out.decode_secs;
        hits += usize::from(&out.tokens == reference);
    }
    Ok((hits as f64 / prompts.len() as f64, work))
}

pub(crate) fn external_score<M: LanguageModel>(
    model: &M,
    cfg: &GenConfig,
    prompts: &[Vec<u32>],
    budget: usize,
    command: &[String],
) -> Result<(f64, (usize, f64))> {
    let mut total = 0.0;
    let mut work = (0usize, 0f64);
    for (k, prompt) in prompts.iter().enumerate() {
        let mut c = cfg.clone();
        c.max_tokens = budget;
        c.sampler.seed = prompt_seed(cfg.sampler.seed, k);
        let out = generate(model, prompt, &c)?;
        work.0 += out.generated_tokens();
        work.1 += out.decode_secs;
        total += run_scorer(command, prompt, &out.tokens)?;
    }
    Ok((total / prompts.len() as f64, work))
}

fn run_scorer(command: &[String], prompt: &[u32], tokens: &[u32]) -> Result<f64> {
    let fail = |m: String| MoiError::Measurement(format!("scorer `{}`: {m}", command.join(" ")));
    let mut child = Command::new(&command[0])
        .args(&command[1..])
        .stdin(Stdio::piped())
        .stdout(Stdio::piped())
        .spawn()
        .map_err(|e| fail(e.to_string()))?;
    let payload = serde_json::json!({ "prompt": prompt, "tokens": tokens });
    child
        .stdin
        .take()
        .expect("piped stdin")
        .write_all(payload.to_string().as_bytes())
        .map_err(|e| fail(e.to_string()))?;
    let out = child.wait_with_output().map_err(|e| fail(e.to_string()))?;
    if !out.status.success() {
        return Err(fail(format!("exited with {}", out.status)));
    }
    let text = String::from_utf8_lossy(&out.stdout);
    let score: f64 = text.trim().parse().map_err(|_| fail(format!("unparsable output `{}`", text.trim())))?;
    if !(0.0..=1.0).contains(&score) {
        return Err(fail(format!("score {score} outside [0, 1]")));
    }
    Ok(score)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::{MixConfig, MixMode};
    use crate::sampler::SamplerConfig;

    fn model_with_std(init_std: f32) -> Model {
        Model::init_random(ModelConfig {
            vocab: 256,
            dim: 16,
            heads: 2,
            layers: 1,
            context: 32,
            init_seed: 8,
            init_std,
        })
        .unwrap()
    }

    fn model() -> Model {
        model_with_std(0.02)
    }

    fn cfg(t: f64, top_p: f64, seed: u64) -> GenConfig {
        GenConfig {
            mix: MixConfig { mode: MixMode::Standard, beta: 1.0 },
            sampler: SamplerConfig::new(t, top_p, seed).unwrap(),
            ..GenConfig::default()
        }
    }

    #[test]
    fn near_zero_temperature_recovers_greedy() {
        // Logit gaps of order 1: T = 0.01 puts essentially all mass on the argmax.
        let m = model_with_std(1.0);
        let prompts = vec![encode_bytes("ab"), encode_bytes("hello"), encode_bytes("z")];
        for seed in 0..5 {
            assert_eq!(greedy_recovery_score(&m, &cfg(0.01, 1.0, seed), &prompts, 6).unwrap(), 1.0);
        }
    }

    #[test]
    fn zero_budget_is_an_error() {
        let m = model();
        let err = greedy_recovery_score(&m, &cfg(0.6, 0.95, 0), &[encode_bytes("ab")], 0).unwrap_err();
        assert!(err.to_string().contains("empty comparison"));
    }

    #[test]
    fn score_is_deterministic_and_bounded() {
        let m = model();
        let prompts = vec![encode_bytes("ab"), encode_bytes("cd")];
        let a = greedy_recovery_score(&m, &cfg(1.0, 0.95, 9), &prompts, 3).unwrap();
        let b = greedy_recovery_score(&m, &cfg(1.0, 0.95, 9), &prompts, 3).unwrap();
        assert_eq!(a, b);
        assert!((0.0..=1.0).contains(&a));
    }

    #[test]
    fn task_spec_json() {
        let json = r#"{"kind":"greedy_recovery","model":{"config":{"vocab":256,"dim":64,"heads":4,"layers":2,"context":256,"init_seed":42}},"prompts":["ab"],"budget":4}"#;
        let t: TaskSpec = serde_json::from_str(json).unwrap();
        assert_eq!(t.model, ModelSource::Config(ModelConfig::default()));
        assert!(t.validate().is_ok());
        let empty = TaskSpec { prompts: vec![], ..t };
        assert!(empty.validate().is_err());
    }
}
