//! Best-of-N random search over a single hyperparameter.
//!
//! For each replicate, N distinct values of the target hyperparameter are
//! drawn uniformly without replacement (the other two stay at their
//! defaults); the gain is the best score among the N minus the score of the
//! first draw. Each replicate draws one ordered sequence of `max_n` values
//! and evaluates every prefix, so each curve is non-decreasing in N.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::results::ResultsTable;
use crate::error::{MoiError, Result};
use crate::mix::MixMode;
use crate::par::Execution;
use crate::rng::{derive_seed, session_rng};

/// Upper bound on ordered tuples visited by [`Replicates::Enumerate`].
const MAX_ENUMERATION: usize = 5_000_000;

const VALUE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Hyperparameter {
    Beta,
    TopP,
    Temperature,
}

impl FromStr for Hyperparameter {
    type Err = MoiError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "beta" => Ok(Hyperparameter::Beta),
            "top_p" | "top-p" => Ok(Hyperparameter::TopP),
            "temperature" | "t" => Ok(Hyperparameter::Temperature),
            other => Err(MoiError::InvalidConfig(format!("unknown hyperparameter `{other}`"))),
        }
    }
}

impl fmt::Display for Hyperparameter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hyperparameter::Beta => "beta",
            Hyperparameter::TopP => "top_p",
            Hyperparameter::Temperature => "temperature",
        })
    }
}

/// Values held fixed for the two non-target hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Defaults {
    pub beta: f64,
    pub top_p: f64,
    pub temperature: f64,
}

impl Default for Defaults {
    /// The universal setting `T = 0.6`, `top-p = 0.95`, `β = 1`.
    fn default() -> Self {
        Self {
            beta: 1.0,
            top_p: 0.95,
            temperature: 0.6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Replicates {
    MonteCarlo(usize),
    /// Every ordered sequence of `max_n` distinct values, each once.
    Enumerate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BestOfNSpec {
    pub param: Hyperparameter,
    /// Rows of other modes are ignored. Required when the table mixes modes.
    pub mode: Option<MixMode>,
    pub defaults: Defaults,
    pub max_n: usize,
    pub replicates: Replicates,
    pub seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GainPoint {
    pub n: usize,
    pub expected_gain: f64,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= VALUE_TOLERANCE
}

/// Mean score per distinct value of the target hyperparameter, with the
/// other two at their defaults. Sorted by value; failed trials are skipped.
pub fn param_scores(results: &ResultsTable, spec: &BestOfNSpec) -> Result<Vec<(f64, f64)>> {
    let mode = match spec.mode {
        Some(m) => m,
        None => {
            let first = results
                .rows
                .first()
                .ok_or_else(|| MoiError::InvalidInput("empty results table".into()))?
                .mode;
            if results.rows.iter().any(|r| r.mode != first) {
                return Err(MoiError::InvalidConfig(
                    "results contain several modes; select one".into(),
                ));
            }
            first
        }
    };
    let d = spec.defaults;
    let mut cells: Vec<(f64, f64, usize)> = Vec::new();
    for row in results.rows.iter().filter(|r| r.mode == mode) {
        let Some(score) = row.score else { continue };
        let (value, others) = match spec.param {
            Hyperparameter::Beta => (row.beta, close(row.top_p, d.top_p) && close(row.temperature, d.temperature)),
            Hyperparameter::TopP => (row.top_p, close(row.beta, d.beta) && close(row.temperature, d.temperature)),
            Hyperparameter::Temperature => (row.temperature, close(row.beta, d.beta) && close(row.top_p, d.top_p)),
        };
        if !others {
            continue;
        }
        match cells.iter_mut().find(|c| close(c.0, value)) {
            Some(c) => {
                c.1 += score;
                c.2 += 1;
            }
            None => cells.push((value, score, 1)),
        }
    }
    let mut out: Vec<(f64, f64)> = cells.into_iter().map(|(v, s, n)| (v, s / n as f64)).collect();
    out.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(out)
}

/// Gain of the best of each prefix over the first element.
fn prefix_gains(scores: &[f64], order: &[usize]) -> Vec<f64> {
    let first = scores[order[0]];
    let mut best = first;
    order
        .iter()
        .map(|&i| {
            best = best.max(scores[i]);
            best - first
        })
        .collect()
}

fn ordered_tuples(k: usize, len: usize) -> Vec<Vec<usize>> {
    fn rec(k: usize, len: usize, cur: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if cur.len() == len {
            out.push(cur.clone());
            return;
        }
        for i in 0..k {
            if !used[i] {
                used[i] = true;
                cur.push(i);
                rec(k, len, cur, used, out);
                cur.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(k, len, &mut Vec::with_capacity(len), &mut vec![false; k], &mut out);
    out
}

/// Expected best-of-N gain for `N = 1..=max_n`.
pub fn best_of_n_gain(results: &ResultsTable, spec: &BestOfNSpec, exec: Execution) -> Result<Vec<GainPoint>> {
    let cells = param_scores(results, spec)?;
    let scores: Vec<f64> = cells.iter().map(|c| c.1).collect();
    let k = scores.len();
    if spec.max_n == 0 {
        return Err(MoiError::Range("max_n must be ≥ 1".into()));
    }
    if spec.max_n > k {
        return Err(MoiError::Range(format!(
            "N = {} exceeds the {k} distinct {} values available",
            spec.max_n, spec.param
        )));
    }

    let per_replicate: Vec<Vec<f64>> = match spec.replicates {
        Replicates::MonteCarlo(0) => return Err(MoiError::Range("replicates must be ≥ 1".into())),
        Replicates::MonteCarlo(r) => {
            let ids: Vec<usize> = (0..r).collect();
            exec.map(&ids, |&rep| {
                let mut rng = session_rng(derive_seed(spec.seed, &[rep as u64]));
                let mut order: Vec<usize> = (0..k).collect();
                let (drawn, _) = order.partial_shuffle(&mut rng, spec.max_n);
                prefix_gains(&scores, drawn)
            })
        }
        Replicates::Enumerate => {
            let count = (k - spec.max_n + 1..=k).try_fold(1usize, |acc, x| acc.checked_mul(x));
            if count.is_none_or(|c| c > MAX_ENUMERATION) {
                return Err(MoiError::Range(format!(
                    "full enumeration of {k} values taken {} at a time is too large; use Monte Carlo replicates",
                    spec.max_n
                )));
            }
            let tuples = ordered_tuples(k, spec.max_n);
            exec.map(&tuples, |t| prefix_gains(&scores, t))
        }
    };

    let mut sums = vec![0f64; spec.max_n];
    for gains in &per_replicate {
        for (s, g) in sums.iter_mut().zip(gains) {
            *s += g;
        }
    }
    let count = per_replicate.len() as f64;
    Ok(sums
        .into_iter()
        .enumerate()
        .map(|(i, s)| GainPoint {
            n: i + 1,
            expected_gain: s / count,
        })
        .collect())
}

pub fn gain_curve_csv(curve: &[GainPoint]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["n", "expected_gain"]).expect("in-memory write");
    for p in curve {
        w.write_record([p.n.to_string(), p.expected_gain.to_string()])
            .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("csv output is utf-8")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::results::ResultRow;

    fn table(values: &[(f64, f64)]) -> ResultsTable {
        ResultsTable {
            rows: values
                .iter()
                .map(|&(beta, score)| ResultRow {
                    mode: MixMode::Moi,
                    beta,
                    top_p: 0.95,
                    temperature: 0.6,
                    seed: 0,
                    score: Some(score),
                    tokens_per_s: None,
                })
                .collect(),
        }
    }

    fn spec(max_n: usize, replicates: Replicates) -> BestOfNSpec {
        BestOfNSpec {
            param: Hyperparameter::Beta,
            mode: None,
            defaults: Defaults::default(),
            max_n,
            replicates,
            seed: 1,
        }
    }

    /// Brute force over all orderings of the full value set.
    fn oracle(scores: &[f64], n: usize) -> f64 {
        let perms = ordered_tuples(scores.len(), scores.len());
        let total: f64 = perms
            .iter()
            .map(|p| p[..n].iter().map(|&i| scores[i]).fold(f64::MIN, f64::max) - scores[p[0]])
            .sum();
        total / perms.len() as f64
    }

    #[test]
    fn three_value_table() {
        let t = table(&[(0.5, 0.2), (1.0, 0.5), (2.0, 0.8)]);
        let curve = best_of_n_gain(&t, &spec(3, Replicates::Enumerate), Execution::Sequential).unwrap();
        assert_eq!(curve[0].expected_gain, 0.0);
        assert!((curve[2].expected_gain - 0.3).abs() <= 1e-12);
        assert!((curve[1].expected_gain - oracle(&[0.2, 0.5, 0.8], 2)).abs() <= 1e-12);
    }

    #[test]
    fn monte_carlo_converges_and_is_monotone() {
        let t = table(&[(0.25, 0.1), (0.5, 0.4), (1.0, 0.35), (2.0, 0.9), (4.0, 0.2), (8.0, 0.6)]);
        let scores = [0.1, 0.4, 0.35, 0.9, 0.2, 0.6];
        let curve = best_of_n_gain(&t, &spec(6, Replicates::MonteCarlo(20_000)), Execution::Parallel).unwrap();
        assert_eq!(curve[0].expected_gain, 0.0);
        for w in curve.windows(2) {
            assert!(w[1].expected_gain >= w[0].expected_gain);
        }
        for p in &curve {
            assert!((p.expected_gain - oracle(&scores, p.n)).abs() < 0.01, "{p:?}");
        }
    }

    #[test]
    fn execution_strategies_agree() {
        let t = table(&[(0.25, 0.1), (0.5, 0.4), (1.0, 0.35), (2.0, 0.9)]);
        let s = spec(4, Replicates::MonteCarlo(256));
        let a = best_of_n_gain(&t, &s, Execution::Sequential).unwrap();
        let b = best_of_n_gain(&t, &s, Execution::Parallel).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn too_many_draws_is_a_range_error() {
        let t = table(&[(0.5, 0.2), (1.0, 0.5)]);
        assert!(matches!(
            best_of_n_gain(&t, &spec(3, Replicates::Enumerate), Execution::Sequential),
            Err(MoiError::Range(_))
        ));
    }

    #[test]
    fn scores_average_over_seeds_and_filter_defaults() {
        let mut t = table(&[(1.0, 0.2), (1.0, 0.4), (2.0, 1.0)]);
        t.rows[2].temperature = 0.8;
        let cells = param_scores(&t, &spec(1, Replicates::Enumerate)).unwrap();
        assert_eq!(cells.len(), 1);
        assert!((cells[0].1 - 0.3).abs() < 1e-15);
    }

    #[test]
    fn curve_csv() {
        let curve = [GainPoint { n: 1, expected_gain: 0.0 }, GainPoint { n: 2, expected_gain: 0.25 }];
        assert_eq!(gain_curve_csv(&curve), "n,expected_gain\n1,0\n2,0.25\n");
    }
}
