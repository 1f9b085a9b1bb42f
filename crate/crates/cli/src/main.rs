//! `netloc` command-line entry point.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, CommandFactory, FromArgMatches, Parser, Subcommand, ValueEnum};

use crate::error::CliError;

#[derive(Parser, Debug)]
#[command(name = "netloc", version, about = "GNN cooperative localization: scenarios, training, experiments and analyses")]
pub struct Cli {
    /// Root directory for experiment outputs.
    #[arg(long, env = "NETLOC_RESULTS", default_value = "results", global = true)]
    pub results: PathBuf,
    #[command(subcommand)]
    pub cmd: Cmd,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ConfigArgs {
    /// TOML file with configuration keys.
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Override one key; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    /// Global seed (same as --set seed=...).
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug, Clone)]
pub struct JobArgs {
    /// Worker threads for independent cells.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Subcommand, Debug)]
pub enum Cmd {
    /// Generate a deployment with noisy measurements.
    Generate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        anchors: Option<usize>,
        #[arg(long, num_args = 2, value_names = ["W", "H"])]
        area: Option<Vec<f64>>,
        #[arg(long)]
        sigma2: Option<f64>,
        #[arg(long)]
        pb: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on a scenario file.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// mlp, gcn, agnn1 or agnn2.
        #[arg(long)]
        model: String,
        #[arg(long = "in", value_name = "SCENARIO")]
        input: PathBuf,
        /// Output directory [default: <results>/train/<model>].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a scenario file.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in", value_name = "SCENARIO")]
        input: PathBuf,
        /// Output directory [default: <results>/eval].
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare model kinds across the five reference noise conditions.
    NoiseTable {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        jobs: JobArgs,
        /// Comma-separated model kinds [default: all].
        #[arg(long, value_delimiter = ',')]
        models: Vec<String>,
    },
    /// GCN RMSE against the hard threshold.
    SweepThreshold {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        jobs: JobArgs,
        /// Comma-separated thresholds [default: 0.2 to 4.0 step 0.2].
        #[arg(long, value_delimiter = ',')]
        thresholds: Vec<f64>,
        /// Noise conditions as SIGMA2:PB; repeatable [default: config sigma2/p_b].
        #[arg(long)]
        noise: Vec<String>,
    },
    /// GCN and MLP RMSE against the anchor count.
    SweepAnchors {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[command(flatten)]
        jobs: JobArgs,
        /// Comma-separated anchor counts [default: 20 to 160 step 20].
        #[arg(long = "grid", value_delimiter = ',')]
        grid: Vec<usize>,
        /// Noise conditions as SIGMA2:PB; repeatable [default: 0.1:0.1 and 0.1:0.3].
        #[arg(long)]
        noise: Vec<String>,
    },
    /// Graph spectrum of the measurement noise before and after filtering.
    Spectral {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long = "in", value_name = "SCENARIO")]
        input: PathBuf,
        /// Aggregation rounds.
        #[arg(long, default_value_t = 2)]
        k: u32,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the executable theorem checks.
    VerifyTheorems {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runtime scaling benchmarks.
    Bench {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_enum)]
        kind: BenchKind,
        /// Node counts (alm1, training) or thresholds (gcn, mgal).
        #[arg(long, value_delimiter = ',')]
        sizes: Vec<f64>,
        #[arg(long, default_value_t = 5)]
        reps: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Export learned thresholds, attention rows or a recorded cell.
    Export {
        #[command(subcommand)]
        what: ExportCmd,
    },
}

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq)]
pub enum BenchKind {
    Alm1,
    Gcn,
    Mgal,
    Training,
}

#[derive(Subcommand, Debug)]
pub enum ExportCmd {
    /// Histogram of the thresholds of a trained agnn1 checkpoint.
    Thresholds {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 30)]
        bins: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fine-set weights and thresholds of a trained agnn2 checkpoint.
    Heatmap {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long = "in", value_name = "SCENARIO")]
        input: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "10,20")]
        nodes: Vec<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run one experiment cell from its metadata and write its history.
    Cell {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        metadata: PathBuf,
        #[arg(long)]
        model: String,
        /// Condition directory name, e.g. n500_nl50_s0.1_pb0.1_th1.2.
        #[arg(long)]
        condition: String,
        #[arg(long = "cell-seed")]
        cell_seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn command() -> clap::Command {
    let keys = config::keys_help();
    fn add(cmd: clap::Command, keys: &str) -> clap::Command {
        let cmd = cmd.mut_subcommands(|s| add(s, keys));
        if cmd.get_arguments().any(|a| a.get_id() == "config") {
            cmd.after_help(keys.to_string())
        } else {
            cmd
        }
    }
    add(Cli::command(), &keys)
}

fn main() -> ExitCode {
    let matches = match command().try_get_matches() {
        Ok(m) => m,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let rendered = e.render().to_string();
            let first = rendered.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            for line in rendered.lines().skip(1).filter(|l| !l.trim().is_empty()) {
                eprintln!("  {line}");
            }
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("error[usage]: {e}");
            return ExitCode::from(2);
        }
    };
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e: CliError = e;
            eprintln!("{e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
