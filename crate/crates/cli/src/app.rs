use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{error::ErrorKind, Args, Parser, Subcommand};
use pfb_core::harness::ablation::run_grid;
use pfb_core::{
    load_checkpoint, save_checkpoint, BandwidthRule, BatchMetrics, CentroidUpdateMode, MetricsWriter, PfbError,
    RetentionSummary, RunConfig, Trainer,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_INTERNAL: u8 = 1;
pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_IO: u8 = 3;
pub const EXIT_NUMERIC: u8 = 4;
pub const EXIT_UNKNOWN_FLAG: u8 = 5;
pub const EXIT_INVALID_VALUE: u8 = 6;

const AFTER_HELP: &str = "\
Config files are flat JSON objects whose keys mirror the override flags in
snake_case (prune_ratio, batch_size, centroids, dim, seed, epochs,
bandwidth_rule, centroid_update_mode, weight_ablation, ...). Missing keys take
the defaults: prune_ratio 0.3, batch_size 64, centroids 64, dim 8,
random_bound 0.01, ema_beta 0.01, bandwidth_rule silverman,
centroid_update_mode normalized, epochs 20, start_prune_epoch 1,
stop_prune_epoch 18, learning_rate 0.05, seed 0, input_dim 8, feature_dim 16,
hidden_dim 16, class_count 4, train_samples 4096, test_samples 1024.

Exit codes: 0 success, 1 internal error, 2 usage or config error, 3 I/O or
checkpoint error, 4 numeric abort, 5 unknown flag, 6 invalid flag value.
PFB_THREADS caps the worker count (0 = automatic).";

#[derive(Debug, Parser)]
#[command(name = "pfb", version, about = "Partial forward blocking experiments", after_help = AFTER_HELP)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train from scratch.
    Run(RunArgs),
    /// Continue a run from a checkpoint.
    Resume(ResumeArgs),
    /// Print the state stored in a checkpoint.
    InspectCheckpoint(InspectArgs),
    /// Run the bandwidth rule x weight grid, one CSV per cell.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct Overrides {
    /// Structured config file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_parser = parse_ratio)]
    pub prune_ratio: Option<f64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub batch_size: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub centroids: Option<u64>,
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub dim: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub bandwidth_rule: Option<BandwidthRule>,
    #[arg(long)]
    pub centroid_update_mode: Option<CentroidUpdateMode>,
    /// Replace every balancing weight with 1.
    #[arg(long)]
    pub no_weight: bool,
}

#[derive(Debug, Args)]
pub struct RunArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Metrics CSV path.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    /// Checkpoint written at the end of every epoch.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Stop after this many epochs in total, leaving the run resumable.
    #[arg(long)]
    pub halt_after_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ResumeArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Metrics CSV to continue; rows at or past the checkpoint are replaced.
    #[arg(long, default_value = "metrics.csv")]
    pub out: PathBuf,
    #[arg(long)]
    pub halt_after_epoch: Option<usize>,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    /// Checkpoint file.
    pub path: PathBuf,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub overrides: Overrides,
    /// Base CSV path; each cell writes `<stem>_<rule>_<weight|noweight>.csv` beside it.
    #[arg(long, default_value = "ablate.csv")]
    pub out: PathBuf,
}

fn parse_ratio(s: &str) -> Result<f64, String> {
    let p: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..1.0).contains(&p) {
        Ok(p)
    } else {
        Err(format!("prune ratio {p} outside [0, 1)"))
    }
}

/// Failure with its exit code and one-line diagnostic.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

impl Failure {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self { code, message: message.into() }
    }
}

impl From<PfbError> for Failure {
    fn from(e: PfbError) -> Self {
        let code = match &e {
            PfbError::InvalidConfig(_) => EXIT_CONFIG,
            PfbError::Io(_)
            | PfbError::VersionMismatch { .. }
            | PfbError::CorruptCheckpoint(_)
            | PfbError::SchemaViolation(_) => EXIT_IO,
            PfbError::NonFiniteLoss { .. } => EXIT_NUMERIC,
            _ => EXIT_INTERNAL,
        };
        Self::new(code, e.to_string())
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Self::new(EXIT_IO, e.to_string())
    }
}

/// Parses argv, mapping clap errors onto the documented exit codes.
pub fn parse_args(argv: &[String]) -> Result<Cli, Failure> {
    Cli::try_parse_from(argv).map_err(|e| {
        let code = match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => EXIT_OK,
            ErrorKind::UnknownArgument | ErrorKind::InvalidSubcommand => EXIT_UNKNOWN_FLAG,
            ErrorKind::InvalidValue | ErrorKind::ValueValidation | ErrorKind::InvalidUtf8 => EXIT_INVALID_VALUE,
            _ => EXIT_CONFIG,
        };
        let message = if code == EXIT_OK {
            e.to_string()
        } else {
            e.to_string().lines().next().unwrap_or("invalid arguments").to_string()
        };
        Failure::new(code, message)
    })
}

/// Builds the effective config: file values, then flag overrides.
pub fn resolve_config(o: &Overrides) -> Result<RunConfig, Failure> {
    let path = o
        .config
        .as_ref()
        .ok_or_else(|| Failure::new(EXIT_CONFIG, "error: missing --config <path>"))?;
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::new(EXIT_IO, format!("error: cannot read config {}: {e}", path.display())))?;
    let mut c: RunConfig = serde_json::from_str(&text)
        .map_err(|e| Failure::new(EXIT_CONFIG, format!("error: invalid config {}: {e}", path.display())))?;
    if let Some(v) = o.prune_ratio {
        c.prune_ratio = v;
    }
    if let Some(v) = o.batch_size {
        c.batch_size = v as usize;
    }
    if let Some(v) = o.centroids {
        c.centroids = v as usize;
    }
    if let Some(v) = o.dim {
        c.dim = v as usize;
    }
    if let Some(v) = o.seed {
        c.seed = v;
    }
    if let Some(v) = o.epochs {
        c.epochs = v;
        c.stop_prune_epoch = c.stop_prune_epoch.min(v);
        c.start_prune_epoch = c.start_prune_epoch.min(c.stop_prune_epoch);
    }
    if let Some(v) = o.bandwidth_rule {
        c.bandwidth_rule = v;
    }
    if let Some(v) = o.centroid_update_mode {
        c.centroid_update_mode = v;
    }
    if o.no_weight {
        c.weight_ablation = true;
    }
    c.validate().map_err(|e| Failure::new(EXIT_CONFIG, format!("error: {e}")))?;
    Ok(c)
}

fn configure_threads() -> Result<(), Failure> {
    let Ok(raw) = std::env::var("PFB_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .map_err(|_| Failure::new(EXIT_CONFIG, format!("error: PFB_THREADS must be a non-negative integer, got `{raw}`")))?;
    // A pool may already exist when called twice in one process.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

struct Summary {
    final_loss: f64,
    saved_flops: u64,
    total_flops: u64,
    retention: RetentionSummary,
}

impl Summary {
    fn from_history(history: &[BatchMetrics]) -> Self {
        Self {
            final_loss: history.last().map_or(f64::NAN, |m| m.mean_loss),
            saved_flops: history.iter().map(|m| m.flops.saved).sum(),
            total_flops: history.iter().map(|m| m.flops.total()).sum(),
            retention: RetentionSummary::over_pruning(history),
        }
    }

    fn line(&self, accuracy: Option<f64>) -> String {
        let rates: Vec<String> = self.retention.rates().iter().map(|r| format!("{r:.4}")).collect();
        let mut s = format!(
            "final_loss={:.6} saved_flops={} total_flops={} retention=[{}]",
            self.final_loss,
            self.saved_flops,
            self.total_flops,
            rates.join(",")
        );
        if let Some(a) = accuracy {
            s += &format!(" test_accuracy={a:.4}");
        }
        s
    }
}

/// Steps the trainer, streaming rows and checkpointing at epoch ends.
fn drive(
    trainer: &mut Trainer,
    writer: &mut MetricsWriter<BufWriter<File>>,
    checkpoint: Option<&Path>,
    halt_after_epoch: Option<usize>,
) -> Result<Vec<BatchMetrics>, Failure> {
    let ipe = trainer.iterations_per_epoch();
    let limit = halt_after_epoch.map_or(u64::MAX, |e| e as u64 * ipe);
    let mut history = Vec::new();
    while !trainer.is_finished() && trainer.iteration() < limit {
        let m = trainer.step()?;
        writer.write_row(&m)?;
        history.push(m);
        if trainer.iteration().is_multiple_of(ipe) {
            writer.flush()?;
            if let Some(path) = checkpoint {
                save_checkpoint(trainer.net(), trainer.ade(), trainer.config(), trainer.iteration(), path)?;
            }
        }
    }
    writer.flush()?;
    Ok(history)
}

fn open_csv(path: &Path) -> Result<BufWriter<File>, Failure> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Failure::new(EXIT_IO, format!("error: cannot create {}: {e}", path.display())))
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let config = resolve_config(&args.overrides)?;
    let mut trainer = Trainer::new(config)?;
    let components = trainer.train_set().component_count;
    let mut writer = MetricsWriter::new(open_csv(&args.out)?, components);
    writer.write_header()?;
    let history = drive(&mut trainer, &mut writer, args.checkpoint.as_deref(), args.halt_after_epoch)?;
    report(&trainer, &history)
}

fn report(trainer: &Trainer, history: &[BatchMetrics]) -> Result<(), Failure> {
    let summary = Summary::from_history(history);
    let accuracy = if trainer.is_finished() { Some(trainer.test_accuracy()?) } else { None };
    let mut line = summary.line(accuracy);
    if !trainer.is_finished() {
        line += &format!(" halted_at_iteration={}", trainer.iteration());
    }
    println!("{line}");
    Ok(())
}

/// Keeps the header and every row before `iteration`.
fn truncate_csv(path: &Path, iteration: u64) -> Result<bool, Failure> {
    let Ok(text) = fs::read_to_string(path) else {
        return Ok(false);
    };
    let mut lines = text.lines();
    let Some(header) = lines.next() else {
        return Ok(false);
    };
    let mut kept = String::from(header);
    kept.push('\n');
    for line in lines {
        let iter: Option<u64> = line.split(',').next().and_then(|v| v.parse().ok());
        match iter {
            Some(i) if i < iteration => {
                kept.push_str(line);
                kept.push('\n');
            }
            _ => break,
        }
    }
    fs::write(path, kept)?;
    Ok(true)
}

fn cmd_resume(args: &ResumeArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&args.checkpoint)?;
    let iteration = ck.iteration;
    let mut trainer = Trainer::from_state(ck.config, ck.net, ck.ade, iteration)?;
    let components = trainer.train_set().component_count;
    let existing = truncate_csv(&args.out, iteration)?;
    let file = if existing {
        OpenOptions::new().append(true).open(&args.out).map(BufWriter::new)?
    } else {
        open_csv(&args.out)?
    };
    let mut writer = MetricsWriter::new(file, components);
    if !existing {
        writer.write_header()?;
    }
    let history = drive(&mut trainer, &mut writer, Some(&args.checkpoint), args.halt_after_epoch)?;
    report(&trainer, &history)
}

fn cmd_inspect(args: &InspectArgs) -> Result<(), Failure> {
    let ck = load_checkpoint(&args.path)?;
    println!(
        "schema={} iteration={} centroids={} initialized={} weight_sum={} assigned_total={}",
        ck.schema,
        ck.iteration,
        ck.ade.centroids().len(),
        ck.ade.is_initialized(),
        ck.ade.weight_sum(),
        ck.ade.assigned_total()
    );
    Ok(())
}

fn cell_path(base: &Path, label: &str) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("ablate");
    base.with_file_name(format!("{stem}_{label}.csv"))
}

fn cmd_ablate(args: &AblateArgs) -> Result<(), Failure> {
    let config = resolve_config(&args.overrides)?;
    for cell in run_grid(&config)? {
        let path = cell_path(&args.out, &cell.label());
        let history = &cell.outcome.history;
        let components = history.first().map_or(0, |m| m.comp_retained.len());
        let mut writer = MetricsWriter::new(open_csv(&path)?, components);
        writer.write_header()?;
        for m in history {
            writer.write_row(m)?;
        }
        writer.flush()?;
        let s = cell.summary();
        println!(
            "cell={} test_accuracy={:.4} final_loss={:.6} saved_flops={} oracle_max_rel_err={:.3e} csv={}",
            cell.label(),
            s.test_accuracy,
            s.final_loss,
            s.saved_flops,
            s.oracle_max_relative_error,
            path.display()
        );
    }
    Ok(())
}

pub fn run_command(cli: &Cli) -> Result<(), Failure> {
    configure_threads()?;
    match &cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Resume(a) => cmd_resume(a),
        Command::InspectCheckpoint(a) => cmd_inspect(a),
        Command::Ablate(a) => cmd_ablate(a),
    }
}

pub fn main_with_args(argv: &[String]) -> u8 {
    let result = parse_args(argv).and_then(|cli| run_command(&cli));
    match result {
        Ok(()) => EXIT_OK,
        Err(f) if f.code == EXIT_OK => {
            print!("{}", f.message);
            EXIT_OK
        }
        Err(f) => {
            let line = f.message.lines().next().unwrap_or("error");
            let line = if line.starts_with("error") { line.to_string() } else { format!("error: {line}") };
            eprintln!("{line}");
            let _ = std::io::stderr().flush();
            f.code
        }
    }
}
