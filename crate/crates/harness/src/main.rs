use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use padsim_core::digest::DigestComparison;
use padsim_harness::{compare_runs, cost_of_run, describe, run_scenario, Scenario};

#[derive(Parser)]
#[command(name = "padsim", version, about = "Parallel and distributed simulation runner")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file (or a previous run's manifest) and write its artifacts.
    Run {
        scenario: PathBuf,
        /// Override one scenario key, e.g. `--set sync.protocol=cmb`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Output directory; defaults to the scenario's `out` key or runs/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compare the trajectory digests of two runs.
    Compare { run_a: PathBuf, run_b: PathBuf },
    /// Price a finished run.
    Cost {
        run: PathBuf,
        /// `<node>=<price per hour>`; `*=<price>` covers every node.
        #[arg(long = "rate", value_name = "NODE=PRICE", required = true)]
        rate: Vec<String>,
        /// Bill exact fractions of an hour instead of whole started hours.
        #[arg(long)]
        no_hour_rounding: bool,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match cli.cmd {
        Cmd::Run { scenario, set, out } => {
            let s = match Scenario::load(&scenario, &set) {
                Ok(s) => s,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(2);
                }
            };
            let stem = scenario.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "run".into());
            let dir = out.or_else(|| s.out.clone()).unwrap_or_else(|| PathBuf::from("runs").join(stem));
            match run_scenario(&s, &dir) {
                Ok(ex) => {
                    let lcr: Vec<f64> = ex.outcome.rows.iter().filter_map(|r| r.lcr()).collect();
                    let mean = if lcr.is_empty() { f64::NAN } else { lcr.iter().sum::<f64>() / lcr.len() as f64 };
                    println!(
                        "{} steps, {} protocol, mean LCR {:.2}%, {:.2} s, artifacts in {}",
                        s.horizon,
                        s.protocol,
                        mean,
                        ex.outcome.wall_s,
                        dir.display()
                    );
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("error: {e}");
                    eprintln!("partial artifacts in {}", dir.display());
                    ExitCode::FAILURE
                }
            }
        }
        Cmd::Compare { run_a, run_b } => match compare_runs(&run_a, &run_b) {
            Ok(c) => {
                println!("{}", describe(&c));
                if c == DigestComparison::Equal {
                    ExitCode::SUCCESS
                } else {
                    ExitCode::FAILURE
                }
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
        Cmd::Cost { run, rate, no_hour_rounding } => match cost_of_run(&run, &rate, !no_hour_rounding) {
            Ok(r) => {
                println!("{}", serde_json::to_string_pretty(&r).expect("report serializes"));
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e}");
                ExitCode::from(2)
            }
        },
    }
}
