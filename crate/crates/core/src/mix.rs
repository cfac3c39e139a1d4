//! Mixing-weight math: normalized entropy, the entropy-scaled Dirichlet
//! prior, the sampled-token pseudo-count and the posterior-mean weights,
//! together with the two baseline weight rules.
//!
//! All probability math is carried out in `f64`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{MoiError, Result};

/// Tolerance on `Σ p = 1` accepted when validating distributions.
pub const SUM_TOLERANCE: f64 = 1e-9;

/// Floating-point drift above which posterior weights get renormalized.
const RENORM_THRESHOLD: f64 = 1e-12;

/// A categorical distribution over a vocabulary of `vocab` tokens, stored
/// sparsely as `(id, prob)` entries. Ids not listed have probability zero.
///
/// Entry order is preserved as given (a truncated distribution keeps its
/// descending-probability order).
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityVector {
    vocab: usize,
    ids: Vec<u32>,
    probs: Vec<f64>,
}

impl ProbabilityVector {
    /// Dense distribution over ids `0..probs.len()`.
    pub fn from_dense(probs: Vec<f64>) -> Result<Self> {
        let vocab = probs.len();
        let ids = (0..vocab as u32).collect();
        Self::from_sparse(vocab, ids, probs)
    }

    pub fn from_sparse(vocab: usize, ids: Vec<u32>, probs: Vec<f64>) -> Result<Self> {
        if ids.len() != probs.len() {
            return Err(MoiError::InvalidInput(format!(
                "{} ids but {} probabilities",
                ids.len(),
                probs.len()
            )));
        }
        if ids.is_empty() {
            return Err(MoiError::InvalidInput("empty distribution".into()));
        }
        let mut seen = vec![false; vocab];
        for &id in &ids {
            let i = id as usize;
            if i >= vocab {
                return Err(MoiError::Index { index: i, len: vocab });
            }
            if std::mem::replace(&mut seen[i], true) {
                return Err(MoiError::InvalidInput(format!("duplicate token id {id}")));
            }
        }
        let mut total = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(MoiError::InvalidInput(format!("invalid probability {p}")));
            }
            total += p;
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(MoiError::InvalidInput(format!(
                "probabilities sum to {total}, expected 1"
            )));
        }
        Ok(Self { vocab, ids, probs })
    }

    /// Builds without validation. Callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(vocab: usize, ids: Vec<u32>, probs: Vec<f64>) -> Self {
        Self { vocab, ids, probs }
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.probs.iter().copied())
    }

    /// Probability of `id` (zero when absent).
    pub fn get(&self, id: u32) -> f64 {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map_or(0.0, |k| self.probs[k])
    }
}

/// Normalized entropy `H ∈ [0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Entropy(f64);

impl Entropy {
    pub fn new(h: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&h) {
            return Err(MoiError::Range(format!("entropy {h} outside [0, 1]")));
        }
        Ok(Self(h))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Shannon entropy of `p` divided by `ln V`, where `V` is the full
/// vocabulary size of `p` (not the size of its support). Uses `0 ln 0 = 0`
/// and clamps the result into `[0, 1]`.
pub fn normalized_entropy(p: &ProbabilityVector) -> Result<Entropy> {
    if p.vocab < 2 {
        return Err(MoiError::InvalidVocabulary(p.vocab));
    }
    let nats: f64 = p
        .probs
        .iter()
        .filter(|&&x| x > 0.0)
        .map(|&x| -x * libm::log(x))
        .sum();
    let h = nats / libm::log(p.vocab as f64);
    Ok(Entropy(h.clamp(0.0, 1.0)))
}

/// Dirichlet concentration `α = H · p`; its total mass equals `H`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConcentrationVector {
    pub ids: Vec<u32>,
    pub alpha: Vec<f64>,
}

impl ConcentrationVector {
    pub fn total(&self) -> f64 {
        self.alpha.iter().sum()
    }
}

pub fn dirichlet_prior(p: &ProbabilityVector, h: Entropy) -> ConcentrationVector {
    ConcentrationVector {
        ids: p.ids.clone(),
        alpha: p.probs.iter().map(|&x| h.0 * x).collect(),
    }
}

/// A single fractional observation of weight `β + 1 − H` on the sampled token.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PseudoCounts {
    pub token: u32,
    pub count: f64,
}

impl PseudoCounts {
    /// `N = Σ c_i`; with one nonzero entry this is just the count.
    pub fn total(&self) -> f64 {
        self.count
    }

    pub fn get(&self, id: u32) -> f64 {
        if id == self.token {
            self.count
        } else {
            0.0
        }
    }
}

pub fn pseudo_counts(sampled: u32, h: Entropy, beta: f64) -> Result<PseudoCounts> {
    check_beta(beta)?;
    Ok(PseudoCounts {
        token: sampled,
        count: beta + 1.0 - h.0,
    })
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta.is_finite() && beta > 0.0) {
        return Err(MoiError::InvalidConfig(format!(
            "beta must be a positive finite number, got {beta}"
        )));
    }
    Ok(())
}

/// Convex combination weights over distinct token ids, in construction
/// order. Mixing sums rows in this order.
#[derive(Debug, Clone, PartialEq)]
pub struct MixingWeights {
    ids: Vec<u32>,
    weights: Vec<f64>,
}

impl MixingWeights {
    /// Validates non-negativity, `Σ w = 1` and distinct ids.
    pub fn new(entries: Vec<(u32, f64)>) -> Result<Self> {
        if entries.is_empty() {
            return Err(MoiError::InvalidInput("empty mixing weights".into()));
        }
        let mut total = 0.0;
        for &(_, w) in &entries {
            if !w.is_finite() || w < 0.0 {
                return Err(MoiError::InvalidInput(format!("invalid weight {w}")));
            }
            total += w;
        }
        if (total - 1.0).abs() > SUM_TOLERANCE {
            return Err(MoiError::InvalidInput(format!(
                "weights sum to {total}, expected 1"
            )));
        }
        let mut sorted: Vec<u32> = entries.iter().map(|e| e.0).collect();
        sorted.sort_unstable();
        if sorted.windows(2).any(|w| w[0] == w[1]) {
            return Err(MoiError::InvalidInput("duplicate token id in weights".into()));
        }
        Ok(Self::from_entries(entries))
    }

    fn from_entries(entries: Vec<(u32, f64)>) -> Self {
        let (ids, weights) = entries.into_iter().unzip();
        Self { ids, weights }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (u32, f64)> + '_ {
        self.ids.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn get(&self, id: u32) -> f64 {
        self.ids
            .iter()
            .position(|&i| i == id)
            .map_or(0.0, |k| self.weights[k])
    }

    /// Weights of `ids`, in that order; absent ids get 0.
    pub fn aligned_to(&self, ids: &[u32]) -> Vec<f64> {
        if self.ids.starts_with(ids) {
            return self.weights[..ids.len()].to_vec();
        }
        ids.iter().map(|&id| self.get(id)).collect()
    }
}

/// Which weight rule turns a sampled token into the next input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixMode {
    /// One-hot feedback of the sampled token.
    Standard,
    /// The output distribution itself, no posterior.
    #[serde(alias = "direct")]
    DirectMixture,
    /// Posterior-mean mixture of inputs.
    Moi,
}

impl MixMode {
    pub const ALL: [MixMode; 3] = [MixMode::Standard, MixMode::DirectMixture, MixMode::Moi];

    pub fn as_str(self) -> &'static str {
        match self {
            MixMode::Standard => "standard",
            MixMode::DirectMixture => "direct_mixture",
            MixMode::Moi => "moi",
        }
    }
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MixMode {
    type Err = MoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "standard" => Ok(MixMode::Standard),
            "direct" | "direct_mixture" => Ok(MixMode::DirectMixture),
            "moi" => Ok(MixMode::Moi),
            other => Err(MoiError::InvalidConfig(format!("unknown mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MixConfig {
    pub mode: MixMode,
    pub beta: f64,
}

impl MixConfig {
    pub fn new(mode: MixMode, beta: f64) -> Result<Self> {
        check_beta(beta)?;
        Ok(Self { mode, beta })
    }

    pub fn validate(&self) -> Result<()> {
        check_beta(self.beta)
    }
}

impl Default for MixConfig {
    fn default() -> Self {
        Self {
            mode: MixMode::Moi,
            beta: 1.0,
        }
    }
}

/// Posterior-mean mixing weights
/// `w_i = (H p_i + (β + 1 − H) [i = sampled]) / (β + 1)`.
pub fn posterior_mix_weights(
    p: &ProbabilityVector,
    sampled: u32,
    beta: f64,
) -> Result<MixingWeights> {
    let h = normalized_entropy(p)?;
    posterior_mix_weights_with_entropy(p, sampled, beta, h)
}

/// Same as [`posterior_mix_weights`] with `H` supplied by the caller.
pub fn posterior_mix_weights_with_entropy(
    p: &ProbabilityVector,
    sampled: u32,
    beta: f64,
    h: Entropy,
) -> Result<MixingWeights> {
    check_beta(beta)?;
    if sampled as usize >= p.vocab {
        return Err(MoiError::Index {
            index: sampled as usize,
            len: p.vocab,
        });
    }
    let h = h.0;
    let denom = beta + 1.0;
    let count = beta + 1.0 - h;

    let mut ids = p.ids.clone();
    let mut weights: Vec<f64> = p.probs.iter().map(|&prob| h * prob / denom).collect();
    match ids.iter().position(|&id| id == sampled) {
        Some(k) => weights[k] = (h * p.probs[k] + count) / denom,
        None => {
            ids.push(sampled);
            weights.push(count / denom);
        }
    }

    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > RENORM_THRESHOLD {
        weights.iter_mut().for_each(|w| *w /= total);
    }
    Ok(MixingWeights { ids, weights })
}

/// Direct Mixture baseline: the weights are the distribution itself.
pub fn direct_mix_weights(p: &ProbabilityVector) -> MixingWeights {
    MixingWeights {
        ids: p.ids.clone(),
        weights: p.probs.clone(),
    }
}

/// Standard feedback: all mass on the sampled token.
pub fn one_hot_weights(sampled: u32, vocab: usize) -> Result<MixingWeights> {
    if sampled as usize >= vocab {
        return Err(MoiError::Index {
            index: sampled as usize,
            len: vocab,
        });
    }
    Ok(MixingWeights {
        ids: vec![sampled],
        weights: vec![1.0],
    })
}
