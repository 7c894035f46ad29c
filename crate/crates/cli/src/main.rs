//! `agentcare`: generate cohorts, run simulations, compare runs and explain
//! individual decisions.
//!
//! Exit codes: 0 success, 2 configuration, 3 runtime, 4 provenance mismatch.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use agentcare::scenario::Preset;

pub use error::CliError;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "AGENTCARE_OUT_DIR";

#[derive(Parser, Debug)]
#[command(name = "agentcare", version, about = "Assistive multi-agent simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a cohort and write cohort.json.
    Generate(RunArgs),
    /// Run the closed-loop simulation and write trace, features and report.
    Simulate(SimulateArgs),
    /// Run adaptive against a baseline, or compare two saved reports.
    Compare(CompareArgs),
    /// Print one decision's explanation from a trace.
    ExplainTrace(ExplainArgs),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PresetArg {
    None,
    SensoryAccess,
    MotorCognitive,
    Neurodivergent,
    MultiDisability,
}

impl From<PresetArg> for Preset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::None => Preset::None,
            PresetArg::SensoryAccess => Preset::SensoryAccess,
            PresetArg::MotorCognitive => Preset::MotorCognitive,
            PresetArg::Neurodivergent => Preset::Neurodivergent,
            PresetArg::MultiDisability => Preset::MultiDisability,
        }
    }
}

/// Flags shared by every command that builds a scenario. Each overrides the
/// matching config-file key.
#[derive(Args, Debug, Clone, Default)]
pub struct RunArgs {
    /// TOML scenario config.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory; defaults to the config's `output_dir`, then
    /// $AGENTCARE_OUT_DIR, then `agentcare-out`.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    users: Option<u32>,
    #[arg(long)]
    days: Option<u32>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<PresetArg>,
    #[arg(long)]
    static_reminders: bool,
    #[arg(long)]
    random_planner: bool,
    #[arg(long)]
    naive_monitor: bool,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Use this cohort file instead of generating one.
    #[arg(long)]
    cohort: Option<PathBuf>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    guideline: Option<PathBuf>,
    /// Worker threads for per-user simulation; output does not depend on it.
    #[arg(long, default_value_t = 1)]
    parallel_users: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum BaselineArg {
    StaticReminders,
    RandomPlanner,
    NaiveMonitor,
}

#[derive(Args, Debug)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    /// Baseline components to switch on for the comparison run.
    #[arg(long = "against", value_enum, default_values_t = vec![BaselineArg::StaticReminders])]
    against: Vec<BaselineArg>,
    #[arg(long)]
    catalog: Option<PathBuf>,
    #[arg(long)]
    guideline: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    parallel_users: usize,
    /// Compare two saved report.json files instead of running anything.
    #[arg(long, requires = "variant_report")]
    baseline_report: Option<PathBuf>,
    #[arg(long, requires = "baseline_report")]
    variant_report: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExplainArgs {
    /// Decision to print; omit to summarize every decision in the trace.
    decision_id: Option<u64>,
    #[arg(long)]
    trace: PathBuf,
    /// Needed when several users have a decision with this id.
    #[arg(long)]
    user: Option<u32>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(&a),
        Command::Simulate(a) => commands::simulate(&a),
        Command::Compare(a) => commands::compare(&a),
        Command::ExplainTrace(a) => commands::explain_trace(&a),
    };
    match result {
        Ok(stdout) => {
            print!("{stdout}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("agentcare: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
