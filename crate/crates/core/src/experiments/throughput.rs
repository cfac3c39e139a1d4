//! Prefill (input) and decode (output) throughput of a baseline and a
//! candidate configuration on the same model and prompts.

use std::fmt;

use serde::Serialize;

use crate::error::{MoiError, Result};
use crate::pipeline::{generate, GenConfig, GenerationResult, LanguageModel};

pub const DEFAULT_RUNS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateSummary {
    pub input_tokens_per_s: f64,
    pub output_tokens_per_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThroughputReport {
    pub baseline_label: String,
    pub candidate_label: String,
    pub baseline: RateSummary,
    pub candidate: RateSummary,
    /// `(baseline − candidate) / baseline` on decode speed, in percent.
    pub output_overhead_pct: f64,
    pub input_overhead_pct: f64,
    pub runs: usize,
}

impl fmt::Display for ThroughputReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{:<14} {:>14} {:>14}", "Method", "Input (tok/s)", "Output (tok/s)")?;
        writeln!(
            f,
            "{:<14} {:>14.2} {:>14.2}",
            self.baseline_label, self.baseline.input_tokens_per_s, self.baseline.output_tokens_per_s
        )?;
        writeln!(
            f,
            "{:<14} {:>14.2} {:>14.2}",
            self.candidate_label, self.candidate.input_tokens_per_s, self.candidate.output_tokens_per_s
        )?;
        write!(
            f,
            "{:<14} {:>13.2}% {:>13.2}%",
            "Overhead", self.input_overhead_pct, self.output_overhead_pct
        )
    }
}

#[derive(Default, Clone, Copy)]
struct Totals {
    prompt_tokens: usize,
    prefill_secs: f64,
    generated: usize,
    decode_secs: f64,
}

impl Totals {
    fn add(&mut self, out: &GenerationResult) {
        self.prompt_tokens += out.prompt_tokens;
        self.prefill_secs += out.prefill_secs;
        self.generated += out.generated_tokens();
        self.decode_secs += out.decode_secs;
    }

    fn rates(&self) -> Result<(f64, f64)> {
        if self.prompt_tokens == 0 || self.generated == 0 || self.prefill_secs <= 0.0 || self.decode_secs <= 0.0 {
            return Err(MoiError::Measurement("no tokens processed in a timed run".into()));
        }
        Ok((
            self.prompt_tokens as f64 / self.prefill_secs,
            self.generated as f64 / self.decode_secs,
        ))
    }
}

/// One run: every prompt under both configurations, interleaved per prompt
/// with the order flipping on each prompt and on odd runs.
fn run_pair<M: LanguageModel>(
    model: &M,
    cfgs: [&GenConfig; 2],
    prompts: &[Vec<u32>],
    run: usize,
) -> Result<[Totals; 2]> {
    let mut totals = [Totals::default(); 2];
    for (k, p) in prompts.iter().enumerate() {
        let order = if (k + run).is_multiple_of(2) { [0, 1] } else { [1, 0] };
        for which in order {
            totals[which].add(&generate(model, p, cfgs[which])?);
        }
    }
    Ok(totals)
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Times `runs` generations of `budget` tokens per prompt for each
/// configuration after one untimed warm-up run. Rates are the mean of
/// per-run rates.
pub fn throughput_bench<M: LanguageModel>(
    model: &M,
    baseline: &GenConfig,
    candidate: &GenConfig,
    prompts: &[Vec<u32>],
    budget: usize,
    runs: usize,
) -> Result<ThroughputReport> {
    if budget == 0 {
        return Err(MoiError::InvalidInput("throughput budget must be ≥ 1".into()));
    }
    if runs == 0 || prompts.is_empty() {
        return Err(MoiError::Measurement("zero runs or prompts: nothing to measure".into()));
    }
    let base = GenConfig { max_tokens: budget, ..baseline.clone() };
    let cand = GenConfig { max_tokens: budget, ..candidate.clone() };

    run_pair(model, [&base, &cand], prompts, 0)?;

    let mut rates: [Vec<(f64, f64)>; 2] = [Vec::with_capacity(runs), Vec::with_capacity(runs)];
    for r in 0..runs {
        let totals = run_pair(model, [&base, &cand], prompts, r)?;
        for (which, t) in totals.iter().enumerate() {
            rates[which].push(t.rates()?);
        }
    }
    let summary = |v: &[(f64, f64)]| RateSummary {
        input_tokens_per_s: mean(&v.iter().map(|x| x.0).collect::<Vec<_>>()),
        output_tokens_per_s: mean(&v.iter().map(|x| x.1).collect::<Vec<_>>()),
    };
    let (b, c) = (summary(&rates[0]), summary(&rates[1]));
    let overhead = |base: f64, cand: f64| (base - cand) / base * 100.0;
    Ok(ThroughputReport {
        baseline_label: baseline.mix.mode.to_string(),
        candidate_label: candidate.mix.mode.to_string(),
        output_overhead_pct: overhead(b.output_tokens_per_s, c.output_tokens_per_s),
        input_overhead_pct: overhead(b.input_tokens_per_s, c.input_tokens_per_s),
        baseline: b,
        candidate: c,
        runs,
    })
}
