//! Command line: `generate`, `fit`, `eval`, `sample`, `render`, `fit-mog`,
//! `compare`.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ifsem_core::data::{generate, Source};
use ifsem_core::em::{MStepSchedule, TrainConfig};
use ifsem_core::model::DEFAULT_BURN_IN;
use ifsem_core::mog::{fit_mog, CovarianceMode};
use ifsem_core::render::render_scatter;
use ifsem_core::Points;

use crate::csv::{load_csv, write_csv};
use crate::formats::{load_any_model, load_model, save_history, save_model, save_mog, save_ppm, write_metrics};
use crate::pipeline::{compare, fit_points, seeded_rng, split_points, CompareOptions, FitOptions, DEFAULT_HOLDOUT};

/// Invalid flag combination detected after parsing; exits with code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

#[derive(Debug, Parser)]
#[command(name = "ifsem", version, about = "Fit fractal IFS probability models to point clouds by EM")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic dataset as CSV.
    Generate(GenerateArgs),
    /// Fit an IFS model; writes the model JSON and a JSON-lines history.
    Fit(FitArgs),
    /// Print the mean log-likelihood of a model on a dataset.
    Eval(EvalArgs),
    /// Draw points from a model.
    Sample(SampleArgs),
    /// Render a 2D scatter plot as binary PPM.
    Render(RenderArgs),
    /// Fit a mixture-of-Gaussians baseline.
    FitMog(FitMogArgs),
    /// Compare the IFS model against spherical and full mixtures.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long, value_parser = clap::value_parser!(Source))]
    pub source: Source,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Model JSON for `--source from-ifs`.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    #[arg(long, default_value_t = 300)]
    pub iters: usize,
    #[arg(long, default_value_t = 500)]
    pub minibatch: usize,
    /// Pre-selection candidates; `--pool 1 --pre-iters 0` starts from one random model.
    #[arg(long, default_value_t = 10)]
    pub pool: usize,
    #[arg(long, default_value_t = 100)]
    pub pre_iters: usize,
    #[arg(long, default_value_t = 3)]
    pub pre_depth: usize,
    #[arg(long, default_value_t = 500)]
    pub pre_minibatch: usize,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Model JSON output.
    #[arg(long)]
    pub out: PathBuf,
    /// History output; defaults to the model path with extension `history.jsonl`.
    #[arg(long)]
    pub history: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub restarts: usize,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: f64,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    /// Record wall-clock seconds in the history (makes it non-reproducible).
    #[arg(long)]
    pub timing: bool,
    #[arg(long, default_value = "sequential", value_parser = parse_schedule)]
    pub schedule: MStepSchedule,
    /// Convergence threshold on the deepest depth weight.
    #[arg(long, default_value_t = 0.95)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// IFS or mixture model JSON.
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, default_value_t = 10_000)]
    pub n: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Chaos game on the attractor instead of the finite-depth model.
    #[arg(long)]
    pub attractor: bool,
    #[arg(long, default_value_t = DEFAULT_BURN_IN)]
    pub burn_in: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct RenderArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Overlay the frames of a 2D IFS model.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub resolution: usize,
    /// Coordinate pair to plot for data with more than two columns.
    #[arg(long, value_delimiter = ',', num_args = 2, default_values_t = [0, 1])]
    pub axes: Vec<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct FitMogArgs {
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value = "spherical", value_parser = clap::value_parser!(CovarianceMode))]
    pub mode: CovarianceMode,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: f64,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Metrics JSON output; printed to stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub repeats: usize,
    #[arg(long, default_value_t = 4)]
    pub k: usize,
    #[arg(long, default_value_t = 5)]
    pub depth: usize,
    #[arg(long, default_value_t = 100)]
    pub iters: usize,
    #[arg(long, default_value_t = 10_000)]
    pub minibatch: usize,
    #[arg(long, default_value_t = 10)]
    pub pool: usize,
    #[arg(long, default_value_t = 100)]
    pub pre_iters: usize,
    #[arg(long, default_value_t = 3)]
    pub pre_depth: usize,
    #[arg(long, default_value_t = 500)]
    pub pre_minibatch: usize,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT)]
    pub holdout: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
}

fn parse_schedule(s: &str) -> Result<MStepSchedule, String> {
    match s {
        "sequential" => Ok(MStepSchedule::Sequential),
        "simultaneous" => Ok(MStepSchedule::Simultaneous),
        other => Err(format!("unknown schedule '{other}' (expected sequential or simultaneous)")),
    }
}

fn check_input(path: &Path) -> Result<()> {
    if !path.is_file() {
        anyhow::bail!("input file {} does not exist", path.display());
    }
    Ok(())
}

fn check_output(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() && !dir.is_dir() => {
            Err(anyhow::anyhow!("output directory {} does not exist", dir.display()))
        }
        _ => Ok(()),
    }
}

fn check_holdout(h: f64) -> Result<()> {
    if !(0.0..1.0).contains(&h) {
        return Err(usage(format!("--holdout must lie in [0, 1), got {h}")));
    }
    Ok(())
}

fn history_path(args: &FitArgs) -> PathBuf {
    args.history.clone().unwrap_or_else(|| args.out.with_extension("history.jsonl"))
}

fn cmd_generate(args: &GenerateArgs, out: &mut dyn Write) -> Result<()> {
    check_output(&args.out)?;
    let model = match (args.source, &args.model) {
        (Source::FromIfs, Some(p)) => {
            check_input(p)?;
            Some(load_model(p)?)
        }
        (Source::FromIfs, None) => return Err(usage("--source from-ifs needs --model")),
        _ => None,
    };
    let mut rng = seeded_rng(args.seed, 0);
    let data = generate(args.source, args.n, &mut rng, model.as_ref())?;
    write_csv(&args.out, &data.points)?;
    writeln!(out, "wrote {} rows to {}", data.points.len(), args.out.display())?;
    Ok(())
}

fn train_config(t: &TrainArgs, seed: u64, restarts: usize) -> TrainConfig {
    TrainConfig {
        k: t.k,
        depth: t.depth,
        iterations: t.iters,
        minibatch: t.minibatch,
        pool_size: t.pool,
        pre_iterations: t.pre_iters,
        pre_depth: t.pre_depth,
        pre_minibatch: t.pre_minibatch,
        seed,
        restarts,
        ..TrainConfig::default()
    }
}

fn cmd_fit(args: &FitArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.data)?;
    check_output(&args.out)?;
    let history = history_path(args);
    check_output(&history)?;
    check_holdout(args.holdout)?;
    let config = TrainConfig {
        schedule: args.schedule,
        convergence_threshold: args.threshold,
        ..train_config(&args.train, args.seed, args.restarts)
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_csv(&args.data)?;
    let opts = FitOptions {
        config,
        holdout: args.holdout,
        normalize: !args.no_normalize,
        workers: args.workers,
        timing: args.timing,
    };
    let outcome = fit_points(&data.points, &opts).context("training failed")?;
    save_model(&args.out, &outcome.model)?;
    save_history(&history, &outcome.history)?;
    let model = &outcome.model;
    let label = if outcome.held_out { "held-out" } else { "training" };
    writeln!(
        out,
        "converged: {} (v_{} = {:.4}, threshold {})",
        if outcome.converged { "yes" } else { "no" },
        model.depth(),
        model.depth_weights()[model.depth()],
        args.threshold
    )?;
    writeln!(out, "{label} mean log-likelihood: {:.6} (restart {})", outcome.score(), outcome.best)?;
    writeln!(out, "wrote {} and {}", args.out.display(), history.display())?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.model)?;
    check_input(&args.data)?;
    let model = load_any_model(&args.model)?;
    let data = load_csv(&args.data)?;
    if model.dim() != data.points.dim() {
        anyhow::bail!("model has dimension {} but data has {} columns", model.dim(), data.points.dim());
    }
    let ll = model.mean_log_likelihood(&data.points)?;
    writeln!(out, "{}", serde_json::json!({ "mean_ll": ll, "n": data.points.len() }))?;
    Ok(())
}

fn cmd_sample(args: &SampleArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.model)?;
    check_output(&args.out)?;
    let model = load_model(&args.model)?;
    let mut rng = seeded_rng(args.seed, 0);
    let points = if args.attractor {
        model.sample_attractor(args.n, args.burn_in, &mut rng)
    } else {
        model.sample(args.n, &mut rng)
    };
    write_csv(&args.out, &points)?;
    writeln!(out, "wrote {} rows to {}", points.len(), args.out.display())?;
    Ok(())
}

fn project(points: &Points, axes: &[usize]) -> Result<Points> {
    if let Some(a) = axes.iter().find(|a| **a >= points.dim()) {
        return Err(usage(format!("axis {a} out of range for {} columns", points.dim())));
    }
    let mut p = Points::with_capacity(2, points.len());
    for row in points.rows() {
        p.push(&[row[axes[0]], row[axes[1]]])?;
    }
    Ok(p)
}

fn cmd_render(args: &RenderArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.data)?;
    check_output(&args.out)?;
    if args.resolution == 0 {
        return Err(usage("--resolution must be at least 1"));
    }
    let model = match &args.model {
        Some(p) => {
            check_input(p)?;
            Some(load_model(p)?)
        }
        None => None,
    };
    let data = load_csv(&args.data)?;
    let points = if data.points.dim() == 2 && args.axes == [0, 1] {
        data.points
    } else {
        if model.is_some() {
            return Err(usage("model frames can only be drawn over 2D data"));
        }
        project(&data.points, &args.axes)?
    };
    if let Some(m) = &model {
        if m.dim() != 2 {
            anyhow::bail!("model has dimension {}, frames need 2", m.dim());
        }
    }
    let image = render_scatter(&points, args.resolution, model.as_ref())?;
    save_ppm(&args.out, &image)?;
    writeln!(out, "wrote {}x{} image to {}", image.width(), image.height(), args.out.display())?;
    Ok(())
}

fn cmd_fit_mog(args: &FitMogArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.data)?;
    check_output(&args.out)?;
    check_holdout(args.holdout)?;
    let data = load_csv(&args.data)?;
    let (train, test) = split_points(&data.points, args.holdout, args.seed)?;
    let mut rng = seeded_rng(args.seed, 1);
    let model = fit_mog(&train, args.k, args.mode, args.iters, &mut rng).context("mixture fit failed")?;
    save_mog(&args.out, &model)?;
    let train_ll = model.mean_log_likelihood(&train)?;
    let test_ll = if test.is_empty() { None } else { Some(model.mean_log_likelihood(&test)?) };
    writeln!(out, "{}", serde_json::json!({ "train_mean_ll": train_ll, "test_mean_ll": test_ll }))?;
    Ok(())
}

fn cmd_compare(args: &CompareArgs, out: &mut dyn Write) -> Result<()> {
    check_input(&args.data)?;
    if let Some(p) = &args.out {
        check_output(p)?;
    }
    check_holdout(args.holdout)?;
    let config = TrainConfig {
        k: args.k,
        depth: args.depth,
        iterations: args.iters,
        minibatch: args.minibatch,
        pool_size: args.pool,
        pre_iterations: args.pre_iters,
        pre_depth: args.pre_depth,
        pre_minibatch: args.pre_minibatch,
        seed: args.seed,
        ..TrainConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let data = load_csv(&args.data)?;
    let opts = CompareOptions {
        repeats: args.repeats,
        config,
        holdout: args.holdout,
        normalize: !args.no_normalize,
        workers: args.workers,
    };
    let metrics = compare(&data.points, &opts).context("comparison failed")?;
    let doc = write_metrics(&metrics);
    match &args.out {
        Some(p) => {
            fs::write(p, &doc).with_context(|| format!("writing {}", p.display()))?;
            writeln!(out, "wrote {}", p.display())?;
        }
        None => out.write_all(doc.as_bytes())?,
    }
    Ok(())
}

/// Runs a parsed command, writing user-facing output to `out`.
pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, out),
        Command::Fit(a) => cmd_fit(a, out),
        Command::Eval(a) => cmd_eval(a, out),
        Command::Sample(a) => cmd_sample(a, out),
        Command::Render(a) => cmd_render(a, out),
        Command::FitMog(a) => cmd_fit_mog(a, out),
        Command::Compare(a) => cmd_compare(a, out),
    }
}

fn init_logging() {
    let env = env_logger::Env::new().filter_or("IFSEM_LOG", "warn");
    let _ = env_logger::Builder::from_env(env).format_timestamp(None).try_init();
}

/// Entry point: 0 on success, 1 on runtime or data errors, 2 on usage errors.
pub fn main() -> ExitCode {
    init_logging();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let stdout = std::io::stdout();
    match run(&cli, &mut stdout.lock()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if e.downcast_ref::<UsageError>().is_some() { 2 } else { 1 })
        }
    }
}
