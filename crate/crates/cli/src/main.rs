use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqmem::diagnostics::{Normalization, Objective, ObjectiveMetric};
use seqmem::report::{self, Overrides, ReportBundle};
use seqmem::Error;

/// Run task streams through memory policies and report online, hold-out,
/// transfer, forgetting and efficiency diagnostics.
#[derive(Debug, Parser)]
#[command(name = "seqmem", version, after_help = "Remote backends read their API key from SEQMEM_API_KEY.\n\
Exit codes: 0 success, 1 I/O failure, 2 configuration or input error, 3 gateway failure, 4 invariant violation.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the full protocol and write a report bundle.
    Run(RunArgs),
    /// Continue an interrupted run from its resume token.
    Resume(RunArgs),
    /// Recompute diagnostics from an existing run log without model calls.
    Metrics(MetricsArgs),
    /// Rank finished runs on the same dataset and list the Pareto survivors.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Output directory, replacing `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "N")]
    seed: Option<u64>,
    /// Number of evenly spaced checkpoints.
    #[arg(long, value_name = "N")]
    checkpoints: Option<usize>,
    /// Comma-separated horizons, e.g. 1,2,5.
    #[arg(long, value_name = "CSV", value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
    /// Earlier tasks re-evaluated per checkpoint.
    #[arg(long, value_name = "N")]
    replay_budget: Option<usize>,
}

impl RunArgs {
    fn overrides(&self) -> Overrides {
        Overrides {
            out: self.out.clone(),
            seed: self.seed,
            checkpoints: self.checkpoints,
            horizons: self.horizons.clone(),
            replay_budget: self.replay_budget,
        }
    }
}

#[derive(Debug, Args)]
struct MetricsArgs {
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Run directory, replacing `output_dir`.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_name = "CSV", value_delimiter = ',')]
    horizons: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum NormArg {
    MinMax,
    Rank,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ObjectiveArg {
    OnlineAcc,
    HoldoutAcc,
    TokensTotal,
    Runtime,
}

#[derive(Debug, Args)]
struct CompareArgs {
    /// Run directories holding report.json.
    #[arg(required = true, num_args = 2.., value_name = "RUN_DIR")]
    runs: Vec<PathBuf>,
    /// Where to write comparison.{csv,txt,json}.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "min-max")]
    normalization: NormArg,
    /// Pareto objectives; accuracies are maximized and costs minimized.
    #[arg(long, value_enum, value_delimiter = ',')]
    objectives: Option<Vec<ObjectiveArg>>,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config(_) | Error::Validation(_) | Error::Argument(_) | Error::Parse { .. } | Error::EmptyHorizon { .. } => 2,
        Error::Gateway { .. } => 3,
        Error::Invariant(_) | Error::Snapshot { .. } => 4,
        Error::Io { .. } | Error::Json(_) | Error::Csv(_) => 1,
    }
}

fn report_done(bundle: &ReportBundle) -> seqmem::Result<()> {
    let text = std::fs::read_to_string(&bundle.summary)
        .map_err(|e| Error::io(format!("reading {}", bundle.summary.display()), e))?;
    print!("{text}");
    println!("\nwrote {}", bundle.dir.display());
    Ok(())
}

fn run(cli: Cli) -> seqmem::Result<()> {
    match cli.command {
        Command::Run(args) => {
            let cfg = report::parse_config_with(&args.config, &args.overrides())?;
            report_done(&report::cmd_run(&cfg)?)
        }
        Command::Resume(args) => {
            let cfg = report::parse_config_with(&args.config, &args.overrides())?;
            report_done(&report::cmd_resume(&cfg)?)
        }
        Command::Metrics(args) => {
            let overrides = Overrides {
                out: args.out,
                horizons: args.horizons,
                ..Overrides::default()
            };
            let cfg = report::parse_config_with(&args.config, &overrides)?;
            report_done(&report::cmd_metrics(&cfg)?)
        }
        Command::Compare(args) => {
            let normalization = match args.normalization {
                NormArg::MinMax => Normalization::MinMax,
                NormArg::Rank => Normalization::Rank,
            };
            let objectives: Option<Vec<Objective>> = args.objectives.map(|os| {
                os.into_iter()
                    .map(|o| {
                        Objective::natural(match o {
                            ObjectiveArg::OnlineAcc => ObjectiveMetric::OnlineAcc,
                            ObjectiveArg::HoldoutAcc => ObjectiveMetric::HoldoutAcc,
                            ObjectiveArg::TokensTotal => ObjectiveMetric::TokensTotal,
                            ObjectiveArg::Runtime => ObjectiveMetric::Runtime,
                        })
                    })
                    .collect()
            });
            let cmp = report::cmd_compare(&args.runs, args.out.as_deref(), normalization, objectives.as_deref())?;
            print!("{}", cmp.text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
