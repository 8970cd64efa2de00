use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use log::error;
use mgmpc::oracle::{self, LocalOptions};
use mgmpc::scenario::{EffModeName, Scenario};
use mgmpc::sim::{self, RunOptions, SimError};

#[derive(Parser)]
#[command(
    name = "mgmpc",
    version,
    about = "Receding-horizon battery dispatch for islanded AC microgrids"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the controller against the simulated microgrid.
    Run {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EffModeName>,
        /// Also solve the non-convex problem offline and write gap.csv.
        #[arg(long)]
        oracle: bool,
        /// Write every per-step QCQP to <output>/problems.
        #[arg(long)]
        dump_problems: bool,
    },
    /// Run the controller, then the offline non-convex reference, and report
    /// the loss gap.
    Gap {
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EffModeName>,
    },
}

fn parse_mode(s: &str) -> Result<EffModeName, String> {
    s.parse()
}

enum Failure {
    Config(String),
    Runtime(String),
}

fn classify(e: SimError) -> Failure {
    match e {
        SimError::Scenario(e) => Failure::Config(e.to_string()),
        e => Failure::Runtime(e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            scenario,
            output,
            steps,
            seed,
            mode,
            oracle,
            dump_problems,
        } => {
            let sc = Scenario::load(&scenario).map_err(|e| Failure::Config(e.to_string()))?;
            let opts = RunOptions {
                steps,
                seed,
                mode,
                dump_dir: dump_problems.then(|| output.join("problems")),
            };
            let result = sim::run(&sc, &opts).map_err(classify)?;
            sim::write_outputs(&output, &result).map_err(classify)?;
            if oracle || sc.file.oracle {
                write_gap(&sc, &result, &output, mode)?;
            }
            println!(
                "{} steps, average loss {:.3} kW, SoC {:.4}..{:.4}",
                result.summary.steps, result.summary.average_loss_kw, result.summary.min_soc, result.summary.max_soc
            );
            Ok(())
        }
        Command::Gap {
            scenario,
            output,
            steps,
            seed,
            mode,
        } => {
            let sc = Scenario::load(&scenario).map_err(|e| Failure::Config(e.to_string()))?;
            let opts = RunOptions {
                steps,
                seed,
                mode,
                dump_dir: None,
            };
            let result = sim::run(&sc, &opts).map_err(classify)?;
            sim::write_outputs(&output, &result).map_err(classify)?;
            write_gap(&sc, &result, &output, mode)
        }
    }
}

fn write_gap(sc: &Scenario, result: &sim::RunResult, output: &Path, mode: Option<EffModeName>) -> Result<(), Failure> {
    let eff = sc
        .efficiency_mode(mode.unwrap_or(sc.file.mode))
        .map_err(|e| Failure::Config(e.to_string()))?;
    let settings = &sc.file.oracle_cfg;
    let opts = LocalOptions {
        max_iter: settings.max_iter,
        step_tol: settings.step_tol,
        ..LocalOptions::default()
    };
    let report = oracle::run_gap(sc, result, eff, &opts).map_err(classify)?;
    sim::write_file(&output.join("gap.csv"), &oracle::gap_csv(&report)).map_err(classify)?;
    sim::write_file(&output.join("gap_summary.csv"), &oracle::gap_summary_csv(&report)).map_err(classify)?;
    println!(
        "gap {:.2}% (convex {:.3} kW, reference {:.3} kW), speedup {:.0}x",
        100.0 * report.gap,
        report.loss_convex_kw,
        report.loss_nonconvex_kw,
        report.speedup()
    );
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            // Help and version go to stdout with success; bad flags are
            // configuration errors.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            error!("configuration error: {m}");
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            error!("runtime failure: {m}");
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}
