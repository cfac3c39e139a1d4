//! Temperature scaling, nucleus (top-p) truncation and seeded categorical
//! sampling. This is the plain sampler every mode shares; the mixing modes
//! only change what gets fed back, never how tokens are drawn.

use serde::{Deserialize, Serialize};

use crate::error::{MoiError, Result};
use crate::mix::ProbabilityVector;
use crate::rng::uniform_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub top_p: f64,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn new(temperature: f64, top_p: f64, seed: u64) -> Result<Self> {
        let cfg = Self {
            temperature,
            top_p,
            seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.temperature.is_finite() && self.temperature > 0.0) {
            return Err(MoiError::InvalidConfig(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        if !(self.top_p > 0.0 && self.top_p <= 1.0) {
            return Err(MoiError::InvalidConfig(format!(
                "top_p must lie in (0, 1], got {}",
                self.top_p
            )));
        }
        Ok(())
    }
}

impl Default for SamplerConfig {
    fn default() -> Self {
        Self {
            temperature: 0.6,
            top_p: 0.95,
            seed: 0,
        }
    }
}

/// The kept set of nucleus sampling, renormalized. Support is ordered by
/// descending probability with ties broken by ascending token id.
#[derive(Debug, Clone, PartialEq)]
pub struct TruncatedDistribution {
    dist: ProbabilityVector,
    /// Mass of the kept set before renormalization.
    kept_mass: f64,
}

impl TruncatedDistribution {
    pub fn support(&self) -> &[u32] {
        self.dist.ids()
    }

    pub fn probs(&self) -> &[f64] {
        self.dist.probs()
    }

    pub fn full_vocab(&self) -> usize {
        self.dist.vocab()
    }

    pub fn kept_mass(&self) -> f64 {
        self.kept_mass
    }

    pub fn distribution(&self) -> &ProbabilityVector {
        &self.dist
    }

    pub fn into_distribution(self) -> ProbabilityVector {
        self.dist
    }
}

/// `softmax(logits / T)` with max subtraction, in `f64`.
pub fn apply_temperature(logits: &[f32], temperature: f64) -> Result<ProbabilityVector> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(MoiError::InvalidConfig(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    if logits.is_empty() {
        return Err(MoiError::InvalidInput("empty logits".into()));
    }
    let mut max = f64::NEG_INFINITY;
    for (i, &l) in logits.iter().enumerate() {
        if !l.is_finite() {
            return Err(MoiError::InvalidInput(format!("non-finite logit {l} at index {i}")));
        }
        max = max.max(l as f64);
    }
    let mut probs: Vec<f64> = logits
        .iter()
        .map(|&l| libm::exp((l as f64 - max) / temperature))
        .collect();
    let total: f64 = probs.iter().sum();
    for p in &mut probs {
        *p /= total;
    }
    let ids = (0..logits.len() as u32).collect();
    Ok(ProbabilityVector::from_parts_unchecked(logits.len(), ids, probs))
}

/// Keeps the shortest descending-probability prefix whose cumulative mass
/// reaches `top_p` (inclusive), then renormalizes. Zero-probability tokens
/// are never kept.
pub fn top_p_truncate(p: &ProbabilityVector, top_p: f64) -> Result<TruncatedDistribution> {
    if !(top_p > 0.0 && top_p <= 1.0) {
        return Err(MoiError::InvalidConfig(format!(
            "top_p must lie in (0, 1], got {top_p}"
        )));
    }
    let mut order: Vec<(u32, f64)> = p.iter().filter(|e| e.1 > 0.0).collect();
    order.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let mut kept = 0;
    let mut mass = 0.0;
    for &(_, prob) in &order {
        mass += prob;
        kept += 1;
        if mass >= top_p {
            break;
        }
    }
    order.truncate(kept);

    let (ids, probs): (Vec<u32>, Vec<f64>) = order.into_iter().map(|(i, x)| (i, x / mass)).unzip();
    Ok(TruncatedDistribution {
        dist: ProbabilityVector::from_parts_unchecked(p.vocab(), ids, probs),
        kept_mass: mass,
    })
}

/// Inverse-CDF draw over the ordered support. Consumes exactly one `u64`
/// from `rng`: `u = (x >> 11) * 2^-53`, returning the first support token
/// whose running cumulative probability exceeds `u`.
pub fn sample_categorical<R: rand::RngCore + ?Sized>(d: &TruncatedDistribution, rng: &mut R) -> u32 {
    let u = uniform_f64(rng);
    let mut cum = 0.0;
    for (id, prob) in d.dist.iter() {
        cum += prob;
        if u < cum {
            return id;
        }
    }
    *d.support().last().expect("truncated support is never empty")
}

/// Argmax with ties resolved to the lowest id.
pub fn argmax(logits: &[f32]) -> u32 {
    let mut best = 0;
    for (i, &l) in logits.iter().enumerate() {
        if l > logits[best] {
            best = i;
        }
    }
    best as u32
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::session_rng;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn dense(p: &[f64]) -> ProbabilityVector {
        ProbabilityVector::from_dense(p.to_vec()).unwrap()
    }

    #[test]
    fn temperature_examples() {
        let p = apply_temperature(&[0.0, 0.0, 0.0], 0.3).unwrap();
        for &x in p.probs() {
            assert_abs_diff_eq!(x, 1.0 / 3.0, epsilon = 1e-15);
        }
        let p = apply_temperature(&[2.0, 1.0, 0.0], 1.0).unwrap();
        let z = 1.0 + (-1f64).exp() + (-2f64).exp();
        assert_abs_diff_eq!(p.probs()[0], 1.0 / z, epsilon = 1e-15);
        assert_abs_diff_eq!(p.probs()[2], (-2f64).exp() / z, epsilon = 1e-15);
        let p = apply_temperature(&[2.0, 1.0, 0.0], 0.01).unwrap();
        assert!(p.probs()[0] >= 0.999);
    }

    #[test]
    fn temperature_rejects_bad_input() {
        assert!(matches!(apply_temperature(&[0.0, f32::NAN], 1.0), Err(MoiError::InvalidInput(_))));
        assert!(matches!(apply_temperature(&[0.0, f32::INFINITY], 1.0), Err(MoiError::InvalidInput(_))));
        assert!(apply_temperature(&[0.0, 1.0], 0.0).is_err());
    }

    #[test]
    fn top_p_examples() {
        let p = dense(&[0.5, 0.3, 0.15, 0.05]);
        let t = top_p_truncate(&p, 0.8).unwrap();
        assert_eq!(t.support(), &[0, 1]);
        assert_abs_diff_eq!(t.probs()[0], 0.625, epsilon = 1e-15);
        assert_abs_diff_eq!(t.probs()[1], 0.375, epsilon = 1e-15);

        let t = top_p_truncate(&p, 1.0).unwrap();
        assert_eq!(t.support(), &[0, 1, 2, 3]);
        for (a, b) in t.probs().iter().zip(p.probs()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-15);
        }

        let t = top_p_truncate(&p, 0.4).unwrap();
        assert_eq!(t.support(), &[0]);
        assert_eq!(t.probs(), &[1.0]);
    }

    #[test]
    fn top_p_ties_break_by_id() {
        let p = dense(&[0.1, 0.3, 0.3, 0.3]);
        let t = top_p_truncate(&p, 0.5).unwrap();
        assert_eq!(t.support(), &[1, 2]);
        assert_eq!(t.full_vocab(), 4);
    }

    #[test]
    fn sampling_examples() {
        let single = top_p_truncate(&dense(&[0.9, 0.1]), 0.5).unwrap();
        for seed in 0..20 {
            assert_eq!(sample_categorical(&single, &mut session_rng(seed)), 0);
        }

        let d = top_p_truncate(&dense(&[0.5, 0.3, 0.15, 0.05]), 0.8).unwrap();
        let a = sample_categorical(&d, &mut session_rng(99));
        for _ in 0..5 {
            assert_eq!(sample_categorical(&d, &mut session_rng(99)), a);
        }

        let mut rng = session_rng(1234);
        let n = 100_000;
        let zeros = (0..n).filter(|_| sample_categorical(&d, &mut rng) == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.625).abs() <= 0.01, "freq {freq}");
    }

    #[test]
    fn sampling_consumes_one_word() {
        use rand::RngCore;
        let d = top_p_truncate(&dense(&[0.25; 4]), 1.0).unwrap();
        let mut a = session_rng(5);
        let mut b = session_rng(5);
        sample_categorical(&d, &mut a);
        b.next_u64();
        assert_eq!(a.next_u64(), b.next_u64());
    }

    proptest! {
        #[test]
        fn top_p_keeps_enough_mass(raw in prop::collection::vec(0.0f64..1.0, 2..64), top_p in 0.01f64..=1.0) {
            let s: f64 = raw.iter().sum();
            prop_assume!(s > 1e-6);
            let p = dense(&raw.iter().map(|x| x / s).collect::<Vec<_>>());
            let t = top_p_truncate(&p, top_p).unwrap();
            prop_assert!(!t.support().is_empty());
            prop_assert!(t.kept_mass() >= top_p || t.support().len() == p.probs().iter().filter(|&&x| x > 0.0).count());
            prop_assert!((t.probs().iter().sum::<f64>() - 1.0).abs() <= 1e-9);
            // Minimal: dropping the last kept token falls short of top_p.
            let last = p.get(*t.support().last().unwrap());
            prop_assert!(t.kept_mass() - last < top_p);
        }

        #[test]
        fn temperature_preserves_argmax(logits in prop::collection::vec(-20.0f32..20.0, 2..64), t in 0.01f64..10.0) {
            let p = apply_temperature(&logits, t).unwrap();
            let best = argmax(&logits) as usize;
            let pmax = p.probs().iter().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(p.probs()[best], pmax);
        }

        #[test]
        fn sampling_is_pure(logits in prop::collection::vec(-5.0f32..5.0, 2..32), t in 0.1f64..2.0, top_p in 0.1f64..=1.0, seed: u64) {
            let draw = || {
                let p = apply_temperature(&logits, t).unwrap();
                let d = top_p_truncate(&p, top_p).unwrap();
                sample_categorical(&d, &mut session_rng(seed))
            };
            prop_assert_eq!(draw(), draw());
        }
    }
}
