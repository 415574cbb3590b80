//! `mcglm`: fit multivariate covariance GLMs from CSV data and run Wald-based
//! tests, ANOVA/MANOVA tables, multiple comparisons and power studies.

mod commands;
mod config;
mod data;
mod error;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcglm::anova::AnovaType;
use mcglm::multcomp::BonferroniCount;

use crate::commands::MultcompArgs;
use crate::error::{CliError, CliResult};

/// Seed used by `simulate` when `--seed` is not given.
pub const DEFAULT_SEED: u64 = 20_240_917;

#[derive(Parser)]
#[command(name = "mcglm", version, about = "Multivariate covariance GLMs: fitting and Wald-based tests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ModelArgs {
    /// JSON model configuration.
    #[arg(long)]
    config: PathBuf,
    /// CSV data with a header row; empty cells and "NA" are missing.
    #[arg(long)]
    data: PathBuf,
    /// Machine-readable copy of the results (.json for JSON, otherwise CSV).
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum TypeArg {
    #[value(name = "1")]
    One,
    #[value(name = "2")]
    Two,
    #[value(name = "3")]
    Three,
}

impl From<TypeArg> for AnovaType {
    fn from(t: TypeArg) -> Self {
        match t {
            TypeArg::One => AnovaType::I,
            TypeArg::Two => AnovaType::II,
            TypeArg::Three => AnovaType::III,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CountArg {
    /// m = number of tested contrasts.
    Selected,
    /// m = number of all pairwise contrasts of the cells.
    AllPairs,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and print estimates, standard errors and confidence intervals.
    Fit {
        #[command(flatten)]
        model: ModelArgs,
        /// CSV file for fitted values and Pearson residuals.
        #[arg(long)]
        residuals: Option<PathBuf>,
        /// Confidence level of the intervals.
        #[arg(long, default_value_t = 0.95)]
        level: f64,
    },
    /// Test a linear hypothesis L θ = c given in a JSON file.
    Wald {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        hypothesis: PathBuf,
    },
    /// Per-response analysis of variance.
    Anova {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "type", value_enum, default_value = "2")]
        kind: TypeArg,
        /// Only this response.
        #[arg(long)]
        response: Option<String>,
        /// Test the dispersion parameters instead of the regression terms.
        #[arg(long)]
        dispersion: bool,
    },
    /// Joint analysis of variance across responses.
    Manova {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long = "type", value_enum, default_value = "2")]
        kind: TypeArg,
        #[arg(long)]
        dispersion: bool,
    },
    /// Pairwise comparisons between cells of one or more factors.
    Multcomp {
        #[command(flatten)]
        model: ModelArgs,
        /// Factors defining the cells, comma separated.
        #[arg(long, value_delimiter = ',', required = true)]
        factors: Vec<String>,
        /// Only compare cells sharing the level of this factor.
        #[arg(long)]
        within: Option<String>,
        /// Contrast labels to test, such as "T0-T1", comma separated.
        #[arg(long, value_delimiter = ',')]
        contrasts: Vec<String>,
        /// Compare within one response instead of jointly.
        #[arg(long)]
        response: Option<String>,
        #[arg(long, value_enum, default_value = "selected")]
        bonferroni: CountArg,
    },
    /// Run a rejection-rate study over a fixed hypothesis grid.
    Simulate {
        /// JSON study description.
        #[arg(long)]
        study: PathBuf,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// CSV (or .json) file for the rejection-rate curve.
        #[arg(long)]
        output: PathBuf,
    },
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::Fit { model, residuals, level } => {
            commands::cmd_fit(&model.config, &model.data, model.output.as_deref(), residuals.as_deref(), level)
        }
        Command::Wald { model, hypothesis } => {
            commands::cmd_wald(&model.config, &model.data, &hypothesis, model.output.as_deref())
        }
        Command::Anova { model, kind, response, dispersion } => commands::cmd_anova(
            &model.config,
            &model.data,
            kind.into(),
            response.as_deref(),
            dispersion,
            model.output.as_deref(),
        ),
        Command::Manova { model, kind, dispersion } => {
            commands::cmd_manova(&model.config, &model.data, kind.into(), dispersion, model.output.as_deref())
        }
        Command::Multcomp { model, factors, within, contrasts, response, bonferroni } => {
            let args = MultcompArgs {
                factors: &factors,
                within: within.as_deref(),
                contrasts: &contrasts,
                response: response.as_deref(),
                count: match bonferroni {
                    CountArg::Selected => BonferroniCount::Selected,
                    CountArg::AllPairs => BonferroniCount::AllPairs,
                },
            };
            commands::cmd_multcomp(&model.config, &model.data, &args, model.output.as_deref())
        }
        Command::Simulate { study, seed, output } => commands::cmd_simulate(&study, seed, &output),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {}", e.class(), single_line(&e));
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn single_line(e: &CliError) -> String {
    e.to_string().replace('\n', " ")
}
