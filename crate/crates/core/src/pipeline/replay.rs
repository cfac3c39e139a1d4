//! Model-free verification of recorded traces: recompute the entropy and the
//! feedback weights of every step from its recorded distribution and sampled
//! token, and compare against what was recorded.

use serde::Serialize;

use super::{GenConfig, StepRecord};
use crate::error::{MoiError, Result};
use crate::mix::{normalized_entropy, ProbabilityVector};

pub const REPLAY_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayFailure {
    pub step: usize,
    pub field: &'static str,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplayReport {
    pub steps: usize,
    pub max_entropy_deviation: f64,
    pub max_weight_deviation: f64,
    pub tolerance: f64,
    pub failures: Vec<ReplayFailure>,
}

impl ReplayReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    pub fn failed_steps(&self) -> Vec<usize> {
        let mut s: Vec<usize> = self.failures.iter().map(|f| f.step).collect();
        s.dedup();
        s
    }
}

/// `β` implied by a MOI record, when the record determines it:
/// `w_y (β + 1) = H p_y + β + 1 − H` gives `β = (1 − H + H p_y − w_y) / (w_y − 1)`.
fn implied_beta(rec: &StepRecord) -> Option<f64> {
    let k = rec.support.iter().position(|&id| id == rec.token)?;
    let (p, w, h) = (rec.probs[k], rec.weights[k], rec.entropy);
    let slack = h * (1.0 - p);
    if slack < 1e-6 || w >= 1.0 {
        return None;
    }
    Some((1.0 - h + h * p - w) / (w - 1.0))
}

/// Detects a trace recorded with a different `β` than `cfg`: every
/// informative record (at least two) agrees on one `β` that differs from
/// the configured one.
fn check_beta(trace: &[StepRecord], cfg: &GenConfig) -> Result<()> {
    let implied: Vec<f64> = trace
        .iter()
        .filter(|r| !cfg.passes_through(r.token))
        .filter_map(implied_beta)
        .collect();
    if implied.len() < 2 {
        return Ok(());
    }
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-12);
    let first = implied[0];
    if implied.iter().all(|&b| rel(b, first) < 1e-6) && rel(first, cfg.mix.beta) > 1e-6 {
        return Err(MoiError::InvalidConfig(format!(
            "trace was recorded with beta ≈ {first:.6}, replay configured with {}",
            cfg.mix.beta
        )));
    }
    Ok(())
}

/// Recomputes `H` and the feedback weights for each record. `vocab` is the
/// full vocabulary size used as the entropy normalizer.
pub fn replay_verify(trace: &[StepRecord], cfg: &GenConfig, vocab: usize) -> Result<ReplayReport> {
    cfg.mix.validate()?;
    if let Some(rec) = trace.iter().find(|r| r.mode != cfg.mix.mode) {
        return Err(MoiError::InvalidConfig(format!(
            "step {} was recorded in mode {}, replay configured for {}",
            rec.step, rec.mode, cfg.mix.mode
        )));
    }
    if cfg.mix.mode == crate::mix::MixMode::Moi {
        check_beta(trace, cfg)?;
    }

    let mut report = ReplayReport {
        steps: trace.len(),
        max_entropy_deviation: 0.0,
        max_weight_deviation: 0.0,
        tolerance: REPLAY_TOLERANCE,
        failures: Vec::new(),
    };
    for rec in trace {
        let dist = match ProbabilityVector::from_sparse(vocab, rec.support.clone(), rec.probs.clone()) {
            Ok(d) => d,
            Err(_) => {
                let sum: f64 = rec.probs.iter().sum();
                report.failures.push(ReplayFailure {
                    step: rec.step,
                    field: "probs",
                    deviation: (sum - 1.0).abs().max(f64::MIN_POSITIVE),
                });
                continue;
            }
        };
        let h = normalized_entropy(&dist)?;
        let dh = (h.value() - rec.entropy).abs();
        report.max_entropy_deviation = report.max_entropy_deviation.max(dh);
        if dh > REPLAY_TOLERANCE || dh.is_nan() {
            report.failures.push(ReplayFailure { step: rec.step, field: "H", deviation: dh });
        }

        let w = cfg.feedback_weights(&dist, h, rec.token)?;
        let mut dw = rec
            .support
            .iter()
            .zip(&rec.weights)
            .map(|(&id, &x)| (w.get(id) - x).abs())
            .fold(0.0, f64::max);
        // Mass the recomputation puts outside the recorded support.
        for (id, x) in w.iter() {
            if !rec.support.contains(&id) {
                dw = dw.max(x);
            }
        }
        report.max_weight_deviation = report.max_weight_deviation.max(dw);
        if dw > REPLAY_TOLERANCE || dw.is_nan() {
            report.failures.push(ReplayFailure { step: rec.step, field: "weights", deviation: dw });
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mix::{MixConfig, MixMode};

    fn worked_record() -> StepRecord {
        StepRecord {
            step: 0,
            token: 0,
            entropy: 0.628_389_824_723_519_7,
            support: vec![0, 1, 2, 3],
            probs: vec![0.7, 0.2, 0.05, 0.05],
            weights: vec![
                0.905_741_526_291_472,
                0.062_838_982_472_351_97,
                0.015_709_745_618_087_993,
                0.015_709_745_618_087_993,
            ],
            mode: MixMode::Moi,
        }
    }

    fn moi(beta: f64) -> GenConfig {
        GenConfig {
            mix: MixConfig { mode: MixMode::Moi, beta },
            ..GenConfig::default()
        }
    }

    #[test]
    fn hand_written_worked_example_passes() {
        let r = replay_verify(&[worked_record()], &moi(1.0), 4).unwrap();
        assert!(r.passed(), "{r:?}");
        assert!(r.max_weight_deviation <= 1e-9);
    }

    #[test]
    fn perturbed_weight_fails_and_names_step() {
        let mut recs = vec![worked_record(), worked_record()];
        recs[1].step = 1;
        recs[1].weights[2] += 1e-3;
        let r = replay_verify(&recs, &moi(1.0), 4).unwrap();
        assert!(!r.passed());
        assert_eq!(r.failed_steps(), vec![1]);
    }

    #[test]
    fn mode_mismatch_is_config_error() {
        let cfg = GenConfig {
            mix: MixConfig { mode: MixMode::Standard, beta: 1.0 },
            ..GenConfig::default()
        };
        assert!(matches!(replay_verify(&[worked_record()], &cfg, 4), Err(MoiError::InvalidConfig(_))));
    }

    #[test]
    fn consistent_beta_mismatch_is_config_error() {
        let mut recs = vec![worked_record(), worked_record()];
        recs[1].step = 1;
        assert!(matches!(replay_verify(&recs, &moi(2.0), 4), Err(MoiError::InvalidConfig(_))));
    }

    #[test]
    fn wrong_vocab_shows_up_as_entropy_failure() {
        let r = replay_verify(&[worked_record()], &moi(1.0), 8).unwrap();
        assert!(r.failures.iter().any(|f| f.field == "H"));
    }
}
