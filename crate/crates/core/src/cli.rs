//! Command-line front end. [`run`] parses arguments, dispatches, and maps
//! errors to stable exit codes.

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::io;
use crate::layer::{self, ProjectOptions};
use crate::projection::{self, Algorithm, DEFAULT_PIVOT_SEED};
use crate::sizes::{self, SaliencyStack, DEFAULT_TAU};
use crate::toy::{self, SizeSource, Split, TrainConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_INPUT: i32 = 2;
pub const EXIT_CONSTRAINT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::InfeasibleConstraint { .. } | Error::NegativeConstraint | Error::MissingClass(_) => EXIT_CONSTRAINT,
        Error::Diverged(_) => EXIT_DIVERGED,
        _ => EXIT_INPUT,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "cspn",
    version,
    about = "Size-constrained simplex projection of segmentation heat maps"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Project each constrained channel of a map file onto its size constraint.
    Project(ProjectArgs),
    /// Derive size constraints from a class-specific saliency map file.
    EstimateSizes(EstimateArgs),
    /// Train the toy model with and without the projection loss.
    TrainDemo(TrainArgs),
    /// Evaluate a saved toy model on a generated validation split.
    Evaluate(EvaluateArgs),
    /// Time the sort-based and linear projections.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum AlgorithmArg {
    Sort,
    Linear,
}

impl From<AlgorithmArg> for Algorithm {
    fn from(a: AlgorithmArg) -> Self {
        match a {
            AlgorithmArg::Sort => Algorithm::Sort,
            AlgorithmArg::Linear => Algorithm::Linear,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SizeSourceArg {
    Oracle,
    Saliency,
}

impl From<SizeSourceArg> for SizeSource {
    fn from(s: SizeSourceArg) -> Self {
        match s {
            SizeSourceArg::Oracle => SizeSource::Oracle,
            SizeSourceArg::Saliency => SizeSource::Saliency,
        }
    }
}

#[derive(Debug, Args)]
pub struct ProjectArgs {
    /// Input CSPN-MAP file.
    #[arg(long)]
    pub input: PathBuf,
    /// JSON constraints file.
    #[arg(long)]
    pub constraints: PathBuf,
    /// Output directory; receives projected.map, mask.pgm and summary.json.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, value_enum, default_value = "linear")]
    pub algorithm: AlgorithmArg,
    /// Pivot seed for the linear algorithm.
    #[arg(long, env = "CSPN_SEED", default_value_t = DEFAULT_PIVOT_SEED)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    /// Saliency CSPN-MAP file; channels are foreground classes.
    #[arg(long)]
    pub input: PathBuf,
    /// Output JSON constraints file.
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long, default_value_t = DEFAULT_TAU)]
    pub tau: f64,
    /// Also emit zero constraints for foreground classes `1..num_classes`
    /// missing from the map.
    #[arg(long)]
    pub num_classes: Option<usize>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Metrics output (JSON lines). Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Save the projection arm's final model here.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long, env = "CSPN_SEED")]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long, value_enum)]
    pub size_source: Option<SizeSourceArg>,
    #[arg(long)]
    pub tau: Option<f64>,
    #[arg(long)]
    pub soft_target: bool,
    #[arg(long)]
    pub loss_sum: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// JSON config describing the scenes; defaults otherwise.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, env = "CSPN_SEED")]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    /// Comma-separated vector lengths.
    #[arg(long, value_delimiter = ',', default_values_t = [1_000usize, 10_000, 100_000, 1_000_000])]
    pub n: Vec<usize>,
    #[arg(long, default_value_t = 11)]
    pub trials: usize,
    #[arg(long, env = "CSPN_SEED", default_value_t = 42)]
    pub seed: u64,
    /// CSV output. Defaults to stdout.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code.
/// Messages go to `out` and `err`.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { EXIT_OK };
            let _ = if code == EXIT_OK {
                write!(out, "{}", e.render())
            } else {
                write!(err, "{}", e.render())
            };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            exit_code(&e)
        }
    }
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Project(a) => cmd_project(&a, out),
        Command::EstimateSizes(a) => cmd_estimate_sizes(&a, out),
        Command::TrainDemo(a) => cmd_train_demo(&a, out),
        Command::Evaluate(a) => cmd_evaluate(&a, out),
        Command::Bench(a) => cmd_bench(&a, out),
    }
}

#[derive(Debug, Serialize)]
struct ChannelSummary {
    class: u8,
    size: f64,
    sum_before: f64,
    sum_after: f64,
    theta: f64,
    rho: usize,
}

#[derive(Debug, Serialize)]
struct ProjectSummary {
    algorithm: &'static str,
    channels: usize,
    height: usize,
    width: usize,
    projected: Vec<ChannelSummary>,
}

pub fn cmd_project(args: &ProjectArgs, out: &mut dyn Write) -> Result<()> {
    let stack = io::load_map(&args.input)?;
    let constraints = io::load_constraints(&args.constraints)?;
    let opts = ProjectOptions {
        algorithm: args.algorithm.into(),
        pivot_seed: args.seed,
        ..Default::default()
    };
    let (projected, report) = layer::project_heatmaps_with(&stack, &constraints, &opts)?;
    let mask = layer::argmax_target(&projected);

    std::fs::create_dir_all(&args.output)?;
    io::save_map(args.output.join("projected.map"), &projected)?;
    io::save_pgm(args.output.join("mask.pgm"), &mask)?;
    let summary = ProjectSummary {
        algorithm: match args.algorithm {
            AlgorithmArg::Sort => "sort",
            AlgorithmArg::Linear => "linear",
        },
        channels: stack.channels(),
        height: stack.height(),
        width: stack.width(),
        projected: report
            .into_iter()
            .map(|r| ChannelSummary {
                class: r.class,
                size: r.size,
                sum_before: r.sum_before,
                sum_after: r.sum_after,
                theta: r.theta,
                rho: r.support_size,
            })
            .collect(),
    };
    let mut text = serde_json::to_string_pretty(&summary)?;
    text.push('\n');
    std::fs::write(args.output.join("summary.json"), text)?;
    writeln!(
        out,
        "projected {} channel(s) into {}",
        summary.projected.len(),
        args.output.display()
    )?;
    Ok(())
}

pub fn cmd_estimate_sizes(args: &EstimateArgs, out: &mut dyn Write) -> Result<()> {
    let saliency = SaliencyStack::from_stack(io::load_map(&args.input)?)?;
    let constraints = match args.num_classes {
        Some(c) => sizes::estimate_sizes_for(&saliency, args.tau, c)?,
        None => sizes::estimate_sizes(&saliency, args.tau, saliency.height() * saliency.width())?,
    };
    io::save_constraints(&args.output, &constraints)?;
    writeln!(
        out,
        "wrote {} constraint(s) to {}",
        constraints.len(),
        args.output.display()
    )?;
    Ok(())
}

fn load_config(path: Option<&Path>) -> Result<TrainConfig> {
    match path {
        Some(p) => serde_json::from_str(&std::fs::read_to_string(p)?).map_err(Error::from),
        None => Ok(TrainConfig::default()),
    }
}

#[derive(Debug, Serialize)]
struct MetricsRecord<'a> {
    arm: &'a str,
    epoch: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    mean_loss: Option<f64>,
    val_miou: f64,
    val_iou: &'a [Option<f64>],
}

pub fn cmd_train_demo(args: &TrainArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    if let Some(e) = args.epochs {
        config.epochs = e;
    }
    if let Some(lr) = args.lr {
        config.learning_rate = lr;
    }
    if let Some(s) = args.size_source {
        config.size_source = s.into();
    }
    if let Some(t) = args.tau {
        config.tau = t;
    }
    config.soft_target |= args.soft_target;
    config.loss_sum |= args.loss_sum;
    config.projection_loss = true;
    config.seed_loss = true;
    config.validate()?;

    let baseline = TrainConfig {
        projection_loss: false,
        ..config.clone()
    };
    let mut sink: Box<dyn Write + '_> = match &args.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(&mut *out),
    };
    let mut finals = Vec::new();
    let mut projection_model = None;
    for (arm, cfg) in [("baseline", &baseline), ("projection", &config)] {
        let outcome = toy::train(cfg)?;
        io::write_json_line(
            &mut sink,
            &MetricsRecord {
                arm,
                epoch: 0,
                mean_loss: None,
                val_miou: outcome.initial.mean,
                val_iou: &outcome.initial.per_class,
            },
        )?;
        for m in &outcome.history {
            io::write_json_line(
                &mut sink,
                &MetricsRecord {
                    arm,
                    epoch: m.epoch,
                    mean_loss: Some(m.mean_loss),
                    val_miou: m.val_miou,
                    val_iou: &m.val_iou,
                },
            )?;
        }
        let last = outcome.history.last().map_or(outcome.initial.mean, |m| m.val_miou);
        finals.push(last);
        projection_model = Some(outcome.model);
    }
    sink.flush()?;
    drop(sink);
    if let (Some(path), Some(model)) = (&args.checkpoint, &projection_model) {
        io::save_checkpoint(path, model)?;
    }
    writeln!(
        out,
        "final val mIoU: baseline {:.4}, projection {:.4}, difference {:+.4}",
        finals[0],
        finals[1],
        finals[1] - finals[0]
    )?;
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let mut config = load_config(args.config.as_deref())?;
    if let Some(s) = args.seed {
        config.seed = s;
    }
    let model = io::load_checkpoint(&args.checkpoint)?;
    if model.classes() != config.num_classes {
        return Err(Error::Config(format!(
            "checkpoint predicts {} classes, config has {}",
            model.classes(),
            config.num_classes
        )));
    }
    config.validate()?;
    let val = toy::generate_scenes(&config, Split::Val, Default::default())?;
    let eval = toy::evaluate_miou(&model, &val)?;
    io::write_json_line(&mut *out, &eval)?;
    Ok(())
}

/// Median of `trials` timings of `f`, in nanoseconds.
fn median_ns(trials: usize, mut f: impl FnMut()) -> u128 {
    let mut times: Vec<u128> = (0..trials)
        .map(|_| {
            let t = Instant::now();
            f();
            t.elapsed().as_nanos()
        })
        .collect();
    times.sort_unstable();
    times[times.len() / 2]
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub n: usize,
    pub algorithm: &'static str,
    pub median_ns: u128,
}

/// Time both algorithms on one random instance per length. Fails with
/// [`Error::Diverged`] if they disagree beyond `1e-9`.
pub fn bench_projection(lengths: &[usize], trials: usize, seed: u64) -> Result<Vec<BenchRow>> {
    if trials == 0 || lengths.contains(&0) {
        return Err(Error::Config("trials and lengths must be positive".into()));
    }
    let lengths = lengths.to_vec();
    // timings run on a dedicated thread
    std::thread::spawn(move || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut rows = Vec::new();
        for n in lengths {
            let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let size = rng.random_range(0.0..n as f64);
            let sort = projection::project_simplex_sort(&values, size)?;
            let linear = projection::project_simplex_linear(&values, size)?;
            let diff = sort
                .projected
                .iter()
                .zip(&linear.projected)
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f64::max);
            if diff > 1e-9 {
                return Err(Error::Diverged(format!("algorithms disagree by {diff:e} at n = {n}")));
            }
            let t_sort = median_ns(trials, || {
                std::hint::black_box(projection::project_simplex_sort(&values, size).ok());
            });
            let t_linear = median_ns(trials, || {
                std::hint::black_box(projection::project_simplex_linear(&values, size).ok());
            });
            rows.push(BenchRow {
                n,
                algorithm: "sort",
                median_ns: t_sort,
            });
            rows.push(BenchRow {
                n,
                algorithm: "linear",
                median_ns: t_linear,
            });
        }
        Ok(rows)
    })
    .join()
    .map_err(|_| Error::Config("benchmark thread panicked".into()))?
}

pub fn cmd_bench(args: &BenchArgs, out: &mut dyn Write) -> Result<()> {
    let rows = bench_projection(&args.n, args.trials, args.seed)?;
    let mut csv = String::from("n,algorithm,median_ns\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{}\n", r.n, r.algorithm, r.median_ns));
    }
    match &args.output {
        Some(p) => std::fs::write(p, csv)?,
        None => out.write_all(csv.as_bytes())?,
    }
    Ok(())
}
