use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use irm_ite_core::harness::{
    prepare_rep, run_all, sweep_accuracy, sweep_dimension, write_results_csv, ExperimentConfig,
    ResultRecord,
};
use irm_ite_core::plot::{plot_file, PlotKind};
use irm_ite_core::{Error, Result};

#[derive(Parser)]
#[command(
    name = "irm-ite",
    version,
    about = "IRM-based treatment effect estimation benchmark"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON, ExperimentConfig field names).
    #[arg(long)]
    config: PathBuf,
    /// Overrides `root_seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides `reps`.
    #[arg(long)]
    reps: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Write the train set (and optionally the test set) of one repetition as CSV.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Repetition whose data to emit.
        #[arg(long, default_value_t = 0)]
        rep: usize,
        #[arg(long)]
        test_out: Option<PathBuf>,
    },
    /// Every repetition of the configured scheme.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep mean separation and record measured group accuracy.
    SweepAccuracy {
        #[command(flatten)]
        common: Common,
    },
    /// Sweep the feature dimension.
    SweepDimension {
        #[command(flatten)]
        common: Common,
    },
    /// Render a results CSV as an SVG line chart.
    Plot {
        /// Results CSV.
        input: PathBuf,
        /// `accuracy` or `dimension`.
        #[arg(long)]
        kind: PlotKind,
        #[arg(long)]
        out: PathBuf,
    },
}

fn load_config(c: &Common) -> Result<ExperimentConfig> {
    let text = std::fs::read_to_string(&c.config)
        .map_err(|e| Error::Config(format!("cannot read {}: {e}", c.config.display())))?;
    let mut cfg = ExperimentConfig::from_json(&text)?;
    if let Some(seed) = c.seed {
        cfg.root_seed = seed;
    }
    if let Some(reps) = c.reps {
        cfg.reps = reps;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_results(records: &[ResultRecord], out: &Path) -> Result<ExitCode> {
    write_results_csv(records, std::fs::File::create(out)?)?;
    let failed = records.iter().filter(|r| r.failed()).count();
    if failed > 0 {
        eprintln!(
            "{failed} of {} rows failed; see the error column",
            records.len()
        );
        return Ok(ExitCode::from(2));
    }
    Ok(ExitCode::SUCCESS)
}

fn execute(cmd: Command) -> Result<ExitCode> {
    match cmd {
        Command::Generate {
            common,
            rep,
            test_out,
        } => {
            let cfg = load_config(&common)?;
            let data = prepare_rep(&cfg, &cfg.spec, rep)?;
            data.generated
                .train
                .write_csv(std::fs::File::create(&common.out)?)?;
            if let Some(path) = test_out {
                data.generated
                    .test
                    .write_csv(std::fs::File::create(path)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run { common } => {
            let cfg = load_config(&common)?;
            write_results(&run_all(&cfg)?, &common.out)
        }
        Command::SweepAccuracy { common } => {
            let cfg = load_config(&common)?;
            write_results(
                &sweep_accuracy(&cfg, &cfg.default_separations())?,
                &common.out,
            )
        }
        Command::SweepDimension { common } => {
            let cfg = load_config(&common)?;
            write_results(&sweep_dimension(&cfg, &cfg.default_dims())?, &common.out)
        }
        Command::Plot { input, kind, out } => {
            plot_file(&input, kind, &out)?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
