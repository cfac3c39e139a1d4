//! Cartesian hyperparameter grid over `(mode, β, top-p, T)` × seeds.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::results::{IncrementalWriter, ResultRow, ResultsTable};
use super::task::{external_score, greedy_references, score_against_references, TaskKind, TaskSpec};
use crate::error::{MoiError, Result};
use crate::mix::{MixConfig, MixMode};
use crate::par::Execution;
use crate::pipeline::{GenConfig, LanguageModel, PriorSource};
use crate::rng::derive_seed;
use crate::sampler::SamplerConfig;

pub fn default_betas() -> Vec<f64> {
    vec![0.25, 0.5, 1.0, 2.0, 4.0, 8.0]
}

pub fn default_top_ps() -> Vec<f64> {
    vec![0.4, 0.6, 0.8, 0.95]
}

pub fn default_temperatures() -> Vec<f64> {
    vec![0.6, 0.8, 1.0]
}

pub fn default_modes() -> Vec<MixMode> {
    MixMode::ALL.to_vec()
}

pub fn default_seeds() -> Vec<u64> {
    (0..5).collect()
}

fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    #[serde(default = "default_betas")]
    pub betas: Vec<f64>,
    #[serde(default = "default_top_ps")]
    pub top_ps: Vec<f64>,
    #[serde(default = "default_temperatures")]
    pub temperatures: Vec<f64>,
    #[serde(default = "default_modes")]
    pub modes: Vec<MixMode>,
    /// Base seeds, one per replicate.
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    pub task: TaskSpec,
    #[serde(default)]
    pub stop_tokens: Vec<u32>,
    #[serde(default)]
    pub prior_source: PriorSource,
    #[serde(default = "default_true")]
    pub special_passthrough: bool,
    /// Fill the `tokens_per_s` column. Wall-clock values make the table
    /// non-reproducible, so this is off by default.
    #[serde(default)]
    pub measure_throughput: bool,
}

impl GridSpec {
    pub fn with_task(task: TaskSpec) -> Self {
        Self {
            betas: default_betas(),
            top_ps: default_top_ps(),
            temperatures: default_temperatures(),
            modes: default_modes(),
            seeds: default_seeds(),
            task,
            stop_tokens: Vec::new(),
            prior_source: PriorSource::default(),
            special_passthrough: true,
            measure_throughput: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let empty = [
            ("betas", self.betas.is_empty()),
            ("top_ps", self.top_ps.is_empty()),
            ("temperatures", self.temperatures.is_empty()),
            ("modes", self.modes.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((name, _)) = empty.iter().find(|e| e.1) {
            return Err(MoiError::InvalidConfig(format!("grid list `{name}` is empty")));
        }
        for &b in &self.betas {
            MixConfig::new(MixMode::Moi, b)?;
        }
        for &p in &self.top_ps {
            for &t in &self.temperatures {
                SamplerConfig::new(t, p, 0)?;
            }
        }
        self.task.validate()
    }

    /// Number of `(β, top-p, T)` combinations.
    pub fn configs_per_mode(&self) -> usize {
        self.betas.len() * self.top_ps.len() * self.temperatures.len()
    }

    pub fn trial_count(&self) -> usize {
        self.modes.len() * self.configs_per_mode() * self.seeds.len()
    }

    pub fn from_json_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| MoiError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| {
            MoiError::parse(format!("{}:{}", path.display(), e.line()), e.to_string())
        })
    }
}

#[derive(Debug, Clone)]
struct Trial {
    mode: MixMode,
    config_index: usize,
    replicate: usize,
    beta: f64,
    top_p: f64,
    temperature: f64,
}

/// Trials in canonical row order: mode, β, top-p, T, seed.
fn trials(spec: &GridSpec) -> Vec<Trial> {
    let mut out = Vec::with_capacity(spec.trial_count());
    for &mode in &spec.modes {
        let mut config_index = 0;
        for &beta in &spec.betas {
            for &top_p in &spec.top_ps {
                for &temperature in &spec.temperatures {
                    for replicate in 0..spec.seeds.len() {
                        out.push(Trial { mode, config_index, replicate, beta, top_p, temperature });
                    }
                    config_index += 1;
                }
            }
        }
    }
    out
}

/// Session seed of a trial. Independent of the mode: all modes of one
/// configuration and replicate share a random stream.
pub fn trial_seed(base: u64, config_index: usize, replicate: usize) -> u64 {
    derive_seed(base, &[config_index as u64, replicate as u64])
}

/// Runs every trial of `spec`. With `out`, rows are appended to
/// `<out>.partial` as trials finish and the canonically ordered table is
/// renamed to `out` at the end.
pub fn run_grid(spec: &GridSpec, exec: Execution, out: Option<&Path>) -> Result<ResultsTable> {
    spec.validate()?;
    let model = spec.task.model.load()?;
    run_grid_with_model(spec, &model, exec, out)
}

pub fn run_grid_with_model<M>(spec: &GridSpec, model: &M, exec: Execution, out: Option<&Path>) -> Result<ResultsTable>
where
    M: LanguageModel + Sync,
{
    spec.validate()?;
    let prompts = spec.task.prompt_tokens();
    let budget = spec.task.budget;
    let refs = match spec.task.kind {
        TaskKind::GreedyRecovery => Some(greedy_references(model, &prompts, budget, &spec.stop_tokens)?),
        TaskKind::ExternalScorer => None,
    };
    let writer = out.map(IncrementalWriter::create).transpose()?.map(Mutex::new);

    let trials = trials(spec);
    let rows = exec.map(&trials, |t| {
        let seed = spec.seeds[t.replicate];
        let cfg = GenConfig {
            mix: MixConfig { mode: t.mode, beta: t.beta },
            sampler: SamplerConfig {
                temperature: t.temperature,
                top_p: t.top_p,
                seed: trial_seed(seed, t.config_index, t.replicate),
            },
            max_tokens: budget,
            stop_tokens: spec.stop_tokens.clone(),
            special_tokens: Vec::new(),
            prior_source: spec.prior_source,
            special_passthrough: spec.special_passthrough,
        };
        let outcome = match &refs {
            Some(refs) => score_against_references(model, &cfg, &prompts, refs, budget),
            None => external_score(model, &cfg, &prompts, budget, &spec.task.scorer),
        };
        let (score, tokens_per_s) = match outcome {
            Ok((s, (tokens, secs))) => {
                let tps = (spec.measure_throughput && secs > 0.0).then(|| tokens as f64 / secs);
                (Some(s), tps)
            }
            Err(e) => {
                log::warn!(
                    "trial mode={} beta={} top_p={} T={} seed={} failed: {e}",
                    t.mode, t.beta, t.top_p, t.temperature, seed
                );
                (None, None)
            }
        };
        let row = ResultRow {
            mode: t.mode,
            beta: t.beta,
            top_p: t.top_p,
            temperature: t.temperature,
            seed,
            score,
            tokens_per_s,
        };
        let appended = writer
            .as_ref()
            .map_or(Ok(()), |w| w.lock().expect("writer lock").append(&row));
        appended.map(|_| row)
    });

    let table = ResultsTable {
        rows: rows.into_iter().collect::<Result<_>>()?,
    };
    if let Some(w) = writer {
        w.into_inner().expect("writer lock").finish(&table)?;
    }
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::experiments::task::ModelSource;
    use crate::model::ModelConfig;

    fn task() -> TaskSpec {
        TaskSpec {
            kind: TaskKind::GreedyRecovery,
            model: ModelSource::Config(ModelConfig {
                vocab: 256,
                dim: 16,
                heads: 2,
                layers: 1,
                context: 16,
                init_seed: 1,
                init_std: 0.1,
            }),
            prompts: vec!["ab".into(), "xy".into()],
            budget: 3,
            scorer: vec![],
        }
    }

    #[test]
    fn single_config_single_seed_gives_one_row() {
        let spec = GridSpec {
            betas: vec![1.0],
            top_ps: vec![0.95],
            temperatures: vec![0.6],
            modes: vec![MixMode::Moi],
            seeds: vec![7],
            ..GridSpec::with_task(task())
        };
        let t = run_grid(&spec, Execution::Sequential, None).unwrap();
        assert_eq!(t.rows.len(), 1);
        assert_eq!(t.rows[0].seed, 7);
    }

    #[test]
    fn default_grid_size() {
        let spec = GridSpec::with_task(task());
        assert_eq!(spec.configs_per_mode() * spec.seeds.len(), 360);
        assert_eq!(spec.trial_count(), 3 * 360);
    }

    #[test]
    fn parallel_and_sequential_agree() {
        let spec = GridSpec {
            betas: vec![0.5, 4.0],
            top_ps: vec![0.8, 0.95],
            temperatures: vec![1.0],
            seeds: vec![0, 1],
            ..GridSpec::with_task(task())
        };
        let a = run_grid(&spec, Execution::Sequential, None).unwrap();
        let b = run_grid(&spec, Execution::Parallel, None).unwrap();
        assert_eq!(a.to_csv_string(), b.to_csv_string());
    }

    #[test]
    fn empty_lists_are_rejected() {
        let spec = GridSpec { seeds: vec![], ..GridSpec::with_task(task()) };
        assert!(matches!(spec.validate(), Err(MoiError::InvalidConfig(_))));
    }

    #[test]
    fn failing_trials_are_marked_and_grid_continues() {
        // Unreachable scorer: every trial fails.
        let mut t = task();
        t.kind = TaskKind::ExternalScorer;
        t.scorer = vec!["/nonexistent/scorer".into()];
        let spec = GridSpec {
            betas: vec![1.0],
            top_ps: vec![0.95],
            temperatures: vec![0.6, 1.0],
            modes: vec![MixMode::Standard],
            seeds: vec![0],
            ..GridSpec::with_task(t)
        };
        let table = run_grid(&spec, Execution::Sequential, None).unwrap();
        assert_eq!(table.rows.len(), 2);
        assert!(table.rows.iter().all(|r| r.score.is_none()));
        assert!(table.to_csv_string().contains(",error,"));
    }

    #[test]
    fn grid_json_fills_in_default_lists() {
        let json = r#"{"task":{"kind":"greedy_recovery","model":{"path":"m.tlm"},"prompts":["a"],"budget":2}}"#;
        let spec: GridSpec = serde_json::from_str(json).unwrap();
        assert_eq!(spec.betas, default_betas());
        assert_eq!(spec.top_ps, vec![0.4, 0.6, 0.8, 0.95]);
        assert_eq!(spec.temperatures, vec![0.6, 0.8, 1.0]);
        assert_eq!(spec.seeds.len(), 5);
        assert!(spec.special_passthrough);
        assert!(!spec.measure_throughput);
    }
}
