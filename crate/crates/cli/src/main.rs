//! `moi`: command-line front end for mixture-of-inputs decoding.
//!
//! Exit status is 0 on success, 1 on runtime failure and 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::builder::NonEmptyStringValueParser;
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use moi_core::blend::{blend_prompts, read_prompt_pool};
use moi_core::experiments::{
    best_of_n_gain, encode_bytes, gain_curve_csv, param_scores, run_grid, throughput_bench,
    BestOfNSpec, Defaults, GridSpec, Hyperparameter, Replicates, ResultsTable, DEFAULT_RUNS,
};
use moi_core::mix::{MixConfig, MixMode};
use moi_core::model::{load_weights, save_weights, Model, ModelConfig};
use moi_core::pipeline::{generate, read_trace, replay_verify, write_trace, GenConfig, PriorSource};
use moi_core::sampler::SamplerConfig;
use moi_core::Execution;

const SEED_ENV: &str = "MOI_SEED";

#[derive(Parser)]
#[command(name = "moi", version, about = "Mixture-of-inputs decoding on a toy transformer")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random model in TLM/1 format
    InitModel(InitModelArgs),
    /// Generate a continuation and print the token ids
    Generate(GenerateArgs),
    /// Check a recorded trace against the weight rule
    Replay(ReplayArgs),
    /// Run a hyperparameter grid from a JSON spec
    Grid(GridArgs),
    /// Best-of-N random search curve from a results table
    Bestofn(BestOfNArgs),
    /// Prefill and decode throughput of standard vs another mode
    Bench(BenchArgs),
    /// Resample prompt embeddings to a common length and average them
    Blend(BlendArgs),
}

#[derive(Args)]
struct InitModelArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 256)]
    vocab: usize,
    #[arg(long, default_value_t = 64)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    layers: usize,
    #[arg(long, default_value_t = 256)]
    context: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    #[arg(long, default_value_t = 0.02)]
    init_std: f32,
}

#[derive(Args)]
struct MixArgs {
    /// standard, direct or moi
    #[arg(long, default_value = "moi", value_parser = parse_mode)]
    mode: MixMode,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    beta: f64,
    /// sampled_dist or raw_softmax
    #[arg(long, default_value = "sampled_dist", value_parser = parse_prior)]
    prior_source: PriorSource,
    /// Mix stop and special tokens like any other token
    #[arg(long)]
    no_special_passthrough: bool,
    /// Stop token id (repeatable)
    #[arg(long = "stop")]
    stop_tokens: Vec<u32>,
    /// Special token id that bypasses mixing (repeatable)
    #[arg(long = "special")]
    special_tokens: Vec<u32>,
}

#[derive(Args)]
struct SamplingArgs {
    #[arg(long, default_value_t = 0.6, value_parser = parse_positive)]
    temperature: f64,
    #[arg(long, default_value_t = 0.95, value_parser = parse_top_p)]
    top_p: f64,
    /// Overridden by MOI_SEED when set
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    model: PathBuf,
    /// Prompt as a byte string, one token per byte
    #[arg(long, value_parser = NonEmptyStringValueParser::new())]
    prompt: String,
    #[command(flatten)]
    mix: MixArgs,
    #[command(flatten)]
    sampling: SamplingArgs,
    #[arg(long, default_value_t = 32)]
    max_tokens: usize,
    /// Write the per-step JSONL trace here
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = clap::ArgGroup::new("vocab_source").required(true).args(["model", "vocab"]))]
struct ReplayArgs {
    #[arg(long)]
    trace: PathBuf,
    /// Model the trace was produced with (for its vocabulary size)
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    vocab: Option<usize>,
    #[command(flatten)]
    mix: MixArgs,
}

#[derive(Args)]
struct GridArgs {
    /// GridSpec JSON
    #[arg(long)]
    spec: PathBuf,
    /// Results CSV
    #[arg(long)]
    out: PathBuf,
    /// Worker threads; 1 runs sequentially
    #[arg(long)]
    jobs: Option<usize>,
    /// Exit 1 if any trial failed
    #[arg(long)]
    strict: bool,
}

#[derive(Args)]
struct BestOfNArgs {
    /// Results CSV
    #[arg(long)]
    results: PathBuf,
    /// beta, top_p or temperature
    #[arg(long, value_parser = parse_param)]
    param: Hyperparameter,
    /// Only rows of this mode
    #[arg(long, value_parser = parse_mode)]
    mode: Option<MixMode>,
    /// Largest N (default: number of distinct values)
    #[arg(long)]
    max_n: Option<usize>,
    #[arg(long, default_value_t = 256, conflicts_with = "enumerate")]
    replicates: usize,
    /// Average over every ordering instead of sampling
    #[arg(long)]
    enumerate: bool,
    /// Overridden by MOI_SEED when set
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1.0)]
    default_beta: f64,
    #[arg(long, default_value_t = 0.95)]
    default_top_p: f64,
    #[arg(long, default_value_t = 0.6)]
    default_temperature: f64,
    /// Curve CSV (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    model: PathBuf,
    /// Prompt byte string (repeatable)
    #[arg(long = "prompt", required = true, value_parser = NonEmptyStringValueParser::new())]
    prompts: Vec<String>,
    /// Mode compared against standard
    #[arg(long, default_value = "moi", value_parser = parse_mode)]
    mode: MixMode,
    #[arg(long, default_value_t = 1.0, value_parser = parse_positive)]
    beta: f64,
    #[command(flatten)]
    sampling: SamplingArgs,
    /// Generated tokens per prompt
    #[arg(long, default_value_t = 128)]
    budget: usize,
    #[arg(long, default_value_t = DEFAULT_RUNS)]
    runs: usize,
    /// JSON report
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BlendArgs {
    /// JSON array of {"dim": d, "rows": [[...], ...]}
    #[arg(long)]
    prompts: PathBuf,
    /// Output rows (default: longest prompt)
    #[arg(long)]
    length: Option<usize>,
    /// Blended matrix JSON (default: stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_mode(s: &str) -> Result<MixMode, String> {
    s.parse().map_err(|e: moi_core::MoiError| e.to_string())
}

fn parse_prior(s: &str) -> Result<PriorSource, String> {
    s.parse().map_err(|e: moi_core::MoiError| e.to_string())
}

fn parse_param(s: &str) -> Result<Hyperparameter, String> {
    s.parse().map_err(|e: moi_core::MoiError| e.to_string())
}

fn parse_positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x.is_finite() && x > 0.0 => Ok(x),
        _ => Err(format!("`{s}` is not a positive finite number")),
    }
}

fn parse_top_p(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x <= 1.0 => Ok(x),
        _ => Err(format!("`{s}` is not in (0, 1]")),
    }
}

fn usage_error(message: String) -> ! {
    Cli::command().error(ErrorKind::ValueValidation, message).exit()
}

/// `--seed`, unless MOI_SEED is set.
fn effective_seed(flag: u64) -> u64 {
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .unwrap_or_else(|_| usage_error(format!("{SEED_ENV}={v:?} is not an unsigned integer"))),
        Err(_) => flag,
    }
}

impl MixArgs {
    fn gen_config(&self, sampler: SamplerConfig, max_tokens: usize) -> Result<GenConfig> {
        let cfg = GenConfig {
            mix: MixConfig::new(self.mode, self.beta)?,
            sampler,
            max_tokens,
            stop_tokens: self.stop_tokens.clone(),
            special_tokens: self.special_tokens.clone(),
            prior_source: self.prior_source,
            special_passthrough: !self.no_special_passthrough,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

impl SamplingArgs {
    fn config(&self) -> Result<SamplerConfig> {
        Ok(SamplerConfig::new(self.temperature, self.top_p, effective_seed(self.seed))?)
    }
}

fn write_output(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).with_context(|| format!("writing {}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn init_model(args: InitModelArgs) -> Result<()> {
    let model = Model::init_random(ModelConfig {
        vocab: args.vocab,
        dim: args.dim,
        heads: args.heads,
        layers: args.layers,
        context: args.context,
        init_seed: args.seed,
        init_std: args.init_std,
    })?;
    save_weights(&model, &args.out)?;
    eprintln!("wrote {} (checksum {:016x})", args.out.display(), model.checksum());
    Ok(())
}

fn cmd_generate(args: GenerateArgs) -> Result<()> {
    let model = load_weights(&args.model)?;
    let cfg = args.mix.gen_config(args.sampling.config()?, args.max_tokens)?;
    let out = generate(&model, &encode_bytes(&args.prompt), &cfg)?;
    if let Some(path) = &args.trace {
        write_trace(&out.steps, path)?;
    }
    let ids: Vec<String> = out.tokens.iter().map(u32::to_string).collect();
    println!("{}", ids.join(" "));
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<ExitCode> {
    let vocab = match (&args.model, args.vocab) {
        (Some(path), _) => load_weights(path)?.config().vocab,
        (None, Some(v)) => v,
        (None, None) => unreachable!("clap requires one of --model/--vocab"),
    };
    let trace = read_trace(&args.trace)?;
    let cfg = args.mix.gen_config(SamplerConfig::default(), 1)?;
    let report = replay_verify(&trace, &cfg, vocab)?;
    println!("{}", serde_json::to_string_pretty(&report)?);
    if report.passed() {
        return Ok(ExitCode::SUCCESS);
    }
    eprintln!("replay failed at steps {:?}", report.failed_steps());
    Ok(ExitCode::FAILURE)
}

fn execution(jobs: Option<usize>) -> Execution {
    match jobs {
        Some(1) => Execution::Sequential,
        _ if cfg!(feature = "parallel") => Execution::Parallel,
        _ => Execution::Sequential,
    }
}

fn cmd_grid(args: GridArgs) -> Result<ExitCode> {
    if args.jobs == Some(0) {
        usage_error("--jobs must be at least 1".into());
    }
    let spec = GridSpec::from_json_file(&args.spec)?;
    let exec = execution(args.jobs);
    let run = || run_grid(&spec, exec, Some(&args.out));
    let table = match args.jobs {
        #[cfg(feature = "parallel")]
        Some(n) if n > 1 => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .context("building worker pool")?
            .install(run)?,
        _ => run()?,
    };
    let failed = table.rows.iter().filter(|r| r.score.is_none()).count();
    eprintln!("{} trials written to {}, {failed} failed", table.rows.len(), args.out.display());
    if args.strict && failed > 0 {
        eprintln!("error: {failed} trials failed (--strict)");
        return Ok(ExitCode::FAILURE);
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_bestofn(args: BestOfNArgs) -> Result<()> {
    let results = ResultsTable::read_csv(&args.results)?;
    let defaults = Defaults {
        beta: args.default_beta,
        top_p: args.default_top_p,
        temperature: args.default_temperature,
    };
    let mut spec = BestOfNSpec {
        param: args.param,
        mode: args.mode,
        defaults,
        max_n: args.max_n.unwrap_or(1),
        replicates: if args.enumerate {
            Replicates::Enumerate
        } else {
            Replicates::MonteCarlo(args.replicates)
        },
        seed: effective_seed(args.seed),
    };
    if args.max_n.is_none() {
        spec.max_n = param_scores(&results, &spec)?.len();
    }
    let curve = best_of_n_gain(&results, &spec, Execution::Sequential)?;
    write_output(args.out.as_deref(), &gain_curve_csv(&curve))
}

fn cmd_bench(args: BenchArgs) -> Result<()> {
    let model = load_weights(&args.model)?;
    let sampler = args.sampling.config()?;
    let cfg = |mode| -> Result<GenConfig> {
        Ok(GenConfig {
            mix: MixConfig::new(mode, args.beta)?,
            sampler,
            max_tokens: args.budget,
            ..GenConfig::default()
        })
    };
    let prompts: Vec<Vec<u32>> = args.prompts.iter().map(|p| encode_bytes(p)).collect();
    let report = throughput_bench(&model, &cfg(MixMode::Standard)?, &cfg(args.mode)?, &prompts, args.budget, args.runs)?;
    println!("{report}");
    if let Some(path) = &args.out {
        std::fs::write(path, serde_json::to_string_pretty(&report)?)
            .with_context(|| format!("writing {}", path.display()))?;
    }
    Ok(())
}

fn cmd_blend(args: BlendArgs) -> Result<()> {
    let pool = read_prompt_pool(&args.prompts)?;
    let blended = blend_prompts(&pool, args.length)?;
    let mut text = serde_json::to_string(&blended)?;
    text.push('\n');
    write_output(args.out.as_deref(), &text)
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::InitModel(a) => init_model(a)?,
        Command::Generate(a) => cmd_generate(a)?,
        Command::Replay(a) => return cmd_replay(a),
        Command::Grid(a) => return cmd_grid(a),
        Command::Bestofn(a) => cmd_bestofn(a)?,
        Command::Bench(a) => cmd_bench(a)?,
        Command::Blend(a) => cmd_blend(a)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
