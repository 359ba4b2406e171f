//! `simec`: walks, pullback metrics, invariance audits and grid oracles for
//! models in the simec text format.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success, including walks stopped by a guard |
//! | 2 | bad flags or flag values, unsupported requests |
//! | 3 | unreadable or malformed model, dataset or walk file |
//! | 4 | numeric failure (kink at the start point, non-finite values, empty subspace) |
//! | 5 | invariance violation found by `verify` |
//!
//! Failures print one line `error[<kind>]: <reason>` to stderr.

mod args;
mod commands;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use simec_core::walk::WalkMode;
use simec_core::ErrorKind;

use crate::args::{TableOptions, UsageError};
use crate::commands::Violation;

#[derive(Parser)]
#[command(name = "simec", version, about = "Explore input-space equivalence classes of neural networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a SiMEC/SiMExp random walk and write CSV, binary record and manifest.
    Walk(WalkArgs),
    /// Print the pullback metric, its spectrum and the activation signature at a point.
    Pullback(PullbackArgs),
    /// Recompute a recorded walk's outputs and check they stay within tolerance.
    Verify(VerifyArgs),
    /// Brute-force a level set on a grid (input dimension at most 4).
    Oracle(OracleArgs),
    /// Write one of the built-in example models (or the sample digit as CSV).
    Example(ExampleArgs),
}

#[derive(Args)]
struct TableArgs {
    /// CSV columns, in input order, for `csv:` points. Default: every column.
    #[arg(long, value_delimiter = ',')]
    columns: Option<Vec<String>>,
    /// Rescale CSV columns to [0, 1] by the table's own range.
    #[arg(long)]
    minmax: bool,
}

impl TableArgs {
    fn options(&self) -> TableOptions {
        TableOptions {
            columns: self.columns.clone(),
            minmax: self.minmax,
        }
    }
}

#[derive(Args)]
struct WalkArgs {
    #[arg(long)]
    model: PathBuf,
    /// Start point: `x0,x1,...`, `csv:<path>:<row>` or `idx:<path>:<index>`.
    /// Repeat for independent multi-start walks.
    #[arg(long = "start", required = true, allow_hyphen_values = true)]
    starts: Vec<String>,
    /// simec, simexp, simec_1d_leaky or simec_guarded.
    #[arg(long)]
    mode: WalkMode,
    #[arg(long)]
    steps: usize,
    #[arg(long)]
    delta: f64,
    /// Null-eigenvalue threshold.
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    /// Read --eps relative to the largest eigenvalue.
    #[arg(long)]
    relative_eps: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Metric-jump threshold for simec_guarded. Default: 2·L·δ.
    #[arg(long)]
    tau: Option<f64>,
    /// Stop when one step's energy increment exceeds this.
    #[arg(long)]
    energy_budget: Option<f64>,
    /// Reference direction for simec_1d_leaky.
    #[arg(long, allow_hyphen_values = true)]
    direction: Option<String>,
    /// `identity` or `diag:<w0,w1,...>`.
    #[arg(long, default_value = "identity")]
    metric: String,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, env = "SIMEC_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    /// File stem for outputs; multi-start walks append `-<i>`.
    #[arg(long, default_value = "walk")]
    name: String,
    /// Worker threads for multi-start walks.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Args)]
struct PullbackArgs {
    #[arg(long)]
    model: PathBuf,
    /// `x0,x1,...`, `csv:<path>:<row>` or `idx:<path>:<index>`.
    #[arg(long, allow_hyphen_values = true)]
    point: String,
    #[arg(long, default_value = "identity")]
    metric: String,
    #[arg(long, default_value_t = 1e-8)]
    eps: f64,
    #[arg(long)]
    relative_eps: bool,
    #[command(flatten)]
    table: TableArgs,
    /// Print JSON instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    /// Binary walk record written by `walk`.
    #[arg(long)]
    walk: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    tol: f64,
}

#[derive(Args)]
struct OracleArgs {
    #[arg(long)]
    model: PathBuf,
    /// `lo:hi,lo:hi,...`, one interval per input coordinate.
    #[arg(long = "box", allow_hyphen_values = true)]
    bounds: String,
    /// Nodes per axis.
    #[arg(long)]
    resolution: usize,
    /// Input point whose output defines the level set.
    #[arg(long, allow_hyphen_values = true)]
    reference: String,
    /// Sup-norm output tolerance for membership.
    #[arg(long, default_value_t = 1e-2)]
    tol: f64,
    /// Walk record whose snapped points are checked against the set.
    #[arg(long)]
    walk: Option<PathBuf>,
    #[command(flatten)]
    table: TableArgs,
    #[arg(long, env = "SIMEC_OUT_DIR", default_value = ".")]
    out_dir: PathBuf,
    #[arg(long, default_value = "oracle")]
    name: String,
}

#[derive(Clone, Copy, ValueEnum)]
enum ExampleName {
    ReluLine,
    ReluPlane,
    ReluOctant,
    LeakyLine,
    LeakySum,
    LeakyPair,
    Identity,
    Residual,
    Lstm,
    ImageNet,
    DigitFour,
}

#[derive(Args)]
struct ExampleArgs {
    name: ExampleName,
    /// Output file; stdout when absent.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Input dimension for identity, residual and lstm.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    /// Weight seed for residual, lstm and image-net.
    #[arg(long, default_value_t = 2)]
    seed: u64,
}

/// Exit code and stderr tag for a failure, from the first recognized cause.
fn classify(err: &anyhow::Error) -> (u8, &'static str) {
    for cause in err.chain() {
        if cause.is::<UsageError>() {
            return (2, "usage");
        }
        if cause.is::<Violation>() {
            return (5, "invariance");
        }
        if let Some(e) = cause.downcast_ref::<simec_core::Error>() {
            return match e.kind() {
                ErrorKind::Usage => (2, "usage"),
                ErrorKind::Data => (3, "data"),
                ErrorKind::Numeric => (4, "numeric"),
            };
        }
        if cause.is::<std::io::Error>() {
            return (3, "data");
        }
    }
    (1, "internal")
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.render().to_string();
            eprint!("error[usage]: {}", text.strip_prefix("error: ").unwrap_or(&text));
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Walk(a) => commands::walk(a),
        Command::Pullback(a) => commands::pullback(a),
        Command::Verify(a) => commands::verify(a),
        Command::Oracle(a) => commands::oracle(a),
        Command::Example(a) => commands::example(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let (code, tag) = classify(&e);
            let reason = format!("{e:#}").replace('\n', " ");
            eprintln!("error[{tag}]: {reason}");
            ExitCode::from(code)
        }
    }
}
