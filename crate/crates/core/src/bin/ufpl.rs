use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ufpl::eval::{all_pass, check_bounds, exact_trace_with, EvalTrace};
use ufpl::experiment::{run_experiment, ExperimentConfig};
use ufpl::finance::generate_path;
use ufpl::{Error, GainSequence, RateKind, RateSchedule};

const EXIT_OTHER: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_VIOLATION: u8 = 3;

#[derive(Parser)]
#[command(name = "ufpl", version, about = "Follow-the-perturbed-leader experiments with exact bound checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run {
        config: PathBuf,
        /// Override the output root (also read from UFPL_OUTPUT_ROOT).
        #[arg(long, env = "UFPL_OUTPUT_ROOT")]
        output_root: Option<PathBuf>,
    },
    /// Re-verify the bounds on an existing trace.
    Check {
        trace: PathBuf,
        /// Gains CSV the trace was computed from.
        #[arg(long)]
        gains: PathBuf,
        #[arg(long)]
        mu: f64,
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long, default_value = "adaptive-max")]
        rate: RateKind,
        /// Print the checks as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Generate a fractional Brownian price path as CSV.
    Fbm {
        #[arg(long)]
        hurst: f64,
        #[arg(long)]
        steps: usize,
        #[arg(long, default_value_t = 1.0)]
        sigma: f64,
        #[arg(long, default_value_t = 100.0)]
        s0: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                Error::Config { .. } | Error::InvalidParameter { .. } => EXIT_CONFIG,
                _ => EXIT_OTHER,
            })
        }
    }
}

fn dispatch(command: Command) -> ufpl::Result<u8> {
    match command {
        Command::Run { config, output_root } => {
            if let Some(root) = output_root {
                std::env::set_var(ufpl::experiment::OUTPUT_ROOT_ENV, root);
            }
            let config = ExperimentConfig::load(&config)?;
            let summary = run_experiment(&config)?;
            for inst in &summary.instances {
                let status = if inst.pass { "pass" } else { "FAIL" };
                print!("{status} {} ({} steps, {})", inst.name, inst.steps, inst.mode);
                if !inst.failed.is_empty() {
                    print!(" violated: {}", inst.failed.join(", "));
                }
                if let Some(a) = &inst.adversary {
                    print!(
                        " adversary {}: checkpoints {}",
                        a.name,
                        if a.satisfied { "satisfied" } else { "not all satisfied" }
                    );
                    if a.search_failures > 0 {
                        print!(", search failed");
                    }
                }
                println!();
            }
            println!("output: {}", config.output_dir().display());
            Ok(if summary.pass { 0 } else { EXIT_VIOLATION })
        }
        Command::Check {
            trace,
            gains,
            mu,
            delta,
            rate,
            json,
        } => {
            let schedule = RateSchedule::new(rate, mu)?;
            let gains = GainSequence::read_csv(File::open(&gains)?, None)?;
            let trace = EvalTrace::read_csv(File::open(&trace)?, gains.mode(), mu, rate)?;
            let recomputed = exact_trace_with(&gains, schedule)?;
            let consistent = trace.len() == recomputed.len()
                && trace.steps.iter().zip(&recomputed.steps).all(|(a, b)| {
                    (a.l - b.l).abs() <= 1e-9 * b.l.abs().max(1.0)
                        && (a.r - b.r).abs() <= 1e-9 * b.r.abs().max(1.0)
                });
            let checks = check_bounds(&trace, &gains, delta)?;
            if json {
                println!("{}", serde_json::to_string_pretty(&checks)?);
            } else {
                for c in &checks {
                    let status = match (c.applicable, c.ok) {
                        (false, _) => "n/a ",
                        (true, true) => "ok  ",
                        (true, false) => "FAIL",
                    };
                    print!("{status} {:<16} T={:<6} lhs={} rhs={}", c.name.as_str(), c.at, c.lhs, c.rhs);
                    if let Some(note) = &c.note {
                        print!(" ({note})");
                    }
                    println!();
                }
                if !consistent {
                    println!("FAIL trace does not match the exact recomputation from the gains");
                }
            }
            Ok(if consistent && all_pass(&checks) { 0 } else { EXIT_VIOLATION })
        }
        Command::Fbm {
            hurst,
            steps,
            sigma,
            s0,
            seed,
            out,
        } => {
            let path = generate_path(steps, hurst, sigma, s0, seed)?;
            match out {
                Some(p) => path.write_csv(BufWriter::new(File::create(p)?))?,
                None => {
                    let stdout = io::stdout();
                    let mut lock = stdout.lock();
                    path.write_csv(&mut lock)?;
                    lock.flush()?;
                }
            }
            Ok(0)
        }
    }
}
