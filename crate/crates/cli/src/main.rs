//! `fpgm`: JSON on stdout, prose on stderr.
//!
//! Exit codes: 0 on success, 1 for a domain error (the error name is printed
//! first on stderr), 2 for a usage error.

mod commands;
mod fixtures;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fpgm_core::analysis::{DEFAULT_DEVIATION_THRESHOLD, DEFAULT_GRID_POINTS, DEFAULT_MINIMUM_THRESHOLD};
use fpgm_core::criteria::{Criterion, DistanceKind, NormKind};

#[derive(Parser)]
#[command(name = "fpgm", version, about = "Filter pruning via geometric median")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
pub enum NormArg {
    L1,
    L2,
}

impl From<NormArg> for NormKind {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::L1 => NormKind::L1,
            NormArg::L2 => NormKind::L2,
        }
    }
}

/// `l1`/`l2` are the norm criteria.
#[derive(Clone, Copy, ValueEnum)]
pub enum CriterionArg {
    L1,
    L2,
    Gm,
    Mix,
}

impl From<CriterionArg> for Criterion {
    fn from(c: CriterionArg) -> Self {
        match c {
            CriterionArg::L1 => Criterion::NormL1,
            CriterionArg::L2 => Criterion::NormL2,
            CriterionArg::Gm => Criterion::Gm,
            CriterionArg::Mix => Criterion::Mix,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
pub enum DistanceArg {
    L1,
    L2,
    Cosine,
}

impl From<DistanceArg> for DistanceKind {
    fn from(d: DistanceArg) -> Self {
        match d {
            DistanceArg::L1 => DistanceKind::L1,
            DistanceArg::L2 => DistanceKind::L2,
            DistanceArg::Cosine => DistanceKind::Cosine,
        }
    }
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TrainerArg {
    /// Weights are only changed by pruning.
    None,
    /// SGD on the synthetic stripe task; needs a toy-shaped bundle.
    Toy,
}

#[derive(Subcommand)]
enum Command {
    /// Per-layer norm statistics and the two norm-criterion requirement checks.
    Analyze {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "l2")]
        norm: NormArg,
        #[arg(long, default_value_t = DEFAULT_DEVIATION_THRESHOLD)]
        deviation_threshold: f64,
        #[arg(long, default_value_t = DEFAULT_MINIMUM_THRESHOLD)]
        minimum_threshold: f64,
        /// Write `layer,x,density` rows of each layer's norm density.
        #[arg(long)]
        kde_csv: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_GRID_POINTS)]
        grid_points: usize,
    },
    /// Pick the filters of one layer that a criterion would prune.
    Select {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        layer: String,
        #[arg(long, value_enum, default_value = "gm")]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value = "l2")]
        distance: DistanceArg,
        #[arg(long)]
        count: usize,
        #[arg(long, default_value_t = 0.75)]
        mix_norm_fraction: f64,
    },
    /// Run the soft-pruning schedule and write the zeroized bundle.
    Prune {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.4)]
        rate: f64,
        #[arg(long, default_value_t = 1)]
        interval: usize,
        #[arg(long, value_enum, default_value = "gm")]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value = "l2")]
        distance: DistanceArg,
        #[arg(long, default_value_t = 0.75)]
        mix_norm_fraction: f64,
        #[arg(long, default_value_t = 1)]
        epochs: usize,
        /// Seed of the toy trainer's data and shuffling.
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, value_enum, default_value = "none")]
        trainer: TrainerArg,
        #[arg(long, default_value_t = fpgm_core::toytrain::DEFAULT_LR)]
        lr: f64,
        /// Also prune dense layers.
        #[arg(long)]
        prune_dense: bool,
        /// Graph of the bundle; adds a FLOPs report at the same rate.
        #[arg(long)]
        graph: Option<PathBuf>,
    },
    /// Drop masked filters and the matching input channels of the next layer.
    Compact {
        #[arg(long = "in")]
        input: PathBuf,
        /// Mask JSON, either as written by `prune` or a bare mask state.
        #[arg(long)]
        masks: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Baseline and pruned multiply-accumulate counts of a graph.
    Flops {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        rate: f64,
    },
    /// Train the toy CNN on synthetic stripes under the pruning schedule.
    TrainToy {
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value_t = 30)]
        epochs: usize,
        #[arg(long, default_value_t = fpgm_core::toytrain::DEFAULT_LR)]
        lr: f64,
        #[arg(long, default_value_t = 0.25)]
        rate: f64,
        #[arg(long, value_enum, default_value = "gm")]
        criterion: CriterionArg,
        #[arg(long, value_enum, default_value = "l2")]
        distance: DistanceArg,
        #[arg(long, default_value_t = 1)]
        interval: usize,
        #[arg(long, default_value_t = 0.75)]
        mix_norm_fraction: f64,
        #[arg(long, default_value_t = 512)]
        n_train: usize,
        #[arg(long, default_value_t = 256)]
        n_eval: usize,
        /// Report JSON path; printed to stdout when omitted.
        #[arg(long)]
        out_report: Option<PathBuf>,
        #[arg(long)]
        out_model: Option<PathBuf>,
    },
    /// Write the seeded test bundles and graph descriptions.
    GenFixture {
        #[arg(long, default_value = "fixtures")]
        out_dir: PathBuf,
    },
}

/// A domain failure with its stable name.
#[derive(Debug)]
pub struct CliError {
    pub name: &'static str,
    pub message: String,
}

impl CliError {
    pub fn new(name: &'static str, message: impl Into<String>) -> Self {
        Self {
            name,
            message: message.into(),
        }
    }
}

macro_rules! named_error {
    ($($t:ty),*) => {$(
        impl From<$t> for CliError {
            fn from(e: $t) -> Self {
                // Display strings already start with the name.
                let text = e.to_string();
                let message = text
                    .strip_prefix(e.name())
                    .map(|s| s.trim_start_matches(':').trim().to_string())
                    .unwrap_or(text);
                Self::new(e.name(), message)
            }
        }
    )*};
}

named_error!(
    fpgm_core::model_io::BundleError,
    fpgm_core::criteria::CriteriaError,
    fpgm_core::flops::FlopsError,
    fpgm_core::pruner::PruneError,
    fpgm_core::toytrain::TrainError,
    fpgm_core::analysis::AnalysisError
);

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::new("IoFailure", e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Analyze {
            input,
            norm,
            deviation_threshold,
            minimum_threshold,
            kde_csv,
            grid_points,
        } => commands::analyze(
            &input,
            norm.into(),
            deviation_threshold,
            minimum_threshold,
            kde_csv.as_deref(),
            grid_points,
        ),
        Command::Select {
            input,
            layer,
            criterion,
            distance,
            count,
            mix_norm_fraction,
        } => commands::select(
            &input,
            &layer,
            criterion.into(),
            distance.into(),
            count,
            mix_norm_fraction,
        ),
        Command::Prune {
            input,
            out,
            rate,
            interval,
            criterion,
            distance,
            mix_norm_fraction,
            epochs,
            seed,
            trainer,
            lr,
            prune_dense,
            graph,
        } => {
            let cfg = fpgm_core::pruner::PruneConfig {
                rate,
                interval,
                criterion: criterion.into(),
                distance: distance.into(),
                mix_norm_fraction,
                epoch_max: epochs,
                prune_dense,
                ..Default::default()
            };
            commands::prune(&input, &out, &cfg, trainer, seed, lr, graph.as_deref())
        }
        Command::Compact {
            input,
            masks,
            graph,
            out,
        } => commands::compact(&input, &masks, &graph, &out),
        Command::Flops { graph, rate } => commands::flops(&graph, rate),
        Command::TrainToy {
            seed,
            epochs,
            lr,
            rate,
            criterion,
            distance,
            interval,
            mix_norm_fraction,
            n_train,
            n_eval,
            out_report,
            out_model,
        } => {
            let run = fpgm_core::toytrain::ToyRunConfig {
                seed,
                epochs,
                lr,
                n_train,
                n_eval,
            };
            let prune = fpgm_core::pruner::PruneConfig {
                rate,
                interval,
                criterion: criterion.into(),
                distance: distance.into(),
                mix_norm_fraction,
                epoch_max: epochs,
                ..Default::default()
            };
            commands::train_toy(&run, &prune, out_report.as_deref(), out_model.as_deref())
        }
        Command::GenFixture { out_dir } => fixtures::generate(&out_dir),
    };
    match result {
        Ok(json) => {
            println!("{json}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {}: {}", e.name, e.message);
            ExitCode::from(1)
        }
    }
}
