use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};

use l1adapt::emit::emit;
use l1adapt::experiment::{compute_j, run, run_batch, study_config, ExperimentConfig, RunOutput, StudyController, StudyDisturbance};
use l1adapt::plant::{read_sequence, PlantParams};
use l1adapt::poly::{controller_norm, NormOptions};

#[derive(Parser)]
#[command(name = "l1adapt", version, about = "Adaptive optimal control simulations")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the simulation-study preset over a range of seeds.
    ReplicateS7 {
        #[arg(long, value_enum, default_value = "adaptive")]
        controller: ControllerArg,
        #[arg(long, value_enum, default_value = "random")]
        disturbance: DisturbanceArg,
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        #[arg(long, default_value_t = 1)]
        first_seed: u64,
        /// Write per-seed traces under this directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print ‖G‖ and J for coefficient files (one value per line or CSV).
    Norm {
        #[arg(long)]
        a: PathBuf,
        #[arg(long)]
        b: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        delta_w: f64,
        #[arg(long, default_value_t = 0.2)]
        delta_y: f64,
        #[arg(long, default_value_t = 0.02)]
        delta_u: f64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ControllerArg {
    Adaptive,
    Rls,
}

#[derive(Clone, Copy, ValueEnum)]
enum DisturbanceArg {
    Random,
    Trig,
}

fn main() -> ExitCode {
    match real_main() {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn real_main() -> Result<i32> {
    match Cli::parse().command {
        Command::Run { config, seed, out } => {
            let text = fs::read_to_string(&config).with_context(|| format!("reading {}", config.display()))?;
            let mut cfg: ExperimentConfig =
                serde_json::from_str(&text).with_context(|| format!("parsing {}", config.display()))?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            let result = run(&cfg)?;
            emit(&result, &out)?;
            println!("{}", serde_json::to_string_pretty(&result.summary)?);
            Ok(result.exit_code())
        }
        Command::ReplicateS7 {
            controller,
            disturbance,
            seeds,
            first_seed,
            out,
        } => {
            let controller = match controller {
                ControllerArg::Adaptive => StudyController::AdaptiveOptimal,
                ControllerArg::Rls => StudyController::RlsBaseline,
            };
            let disturbance = match disturbance {
                DisturbanceArg::Random => StudyDisturbance::Random,
                DisturbanceArg::Trig => StudyDisturbance::DeterministicTrig,
            };
            let configs: Vec<_> = (first_seed..first_seed + seeds)
                .map(|s| study_config(disturbance, controller, s))
                .collect();
            let results: Vec<RunOutput> = run_batch(&configs).into_iter().collect::<Result<_, _>>()?;
            if let Some(dir) = out {
                for r in &results {
                    emit(r, &dir.join(format!("seed-{}", r.config.seed)))?;
                }
            }
            let summaries: Vec<_> = results.iter().map(|r| &r.summary).collect();
            println!("{}", serde_json::to_string_pretty(&summaries)?);
            Ok(results.iter().map(RunOutput::exit_code).max().unwrap_or(0))
        }
        Command::Norm {
            a,
            b,
            delta_w,
            delta_y,
            delta_u,
        } => {
            let params = PlantParams {
                a: read_coefficients(&a)?,
                b: read_coefficients(&b)?,
                delta_w,
                delta_y,
                delta_u,
                mu: 1,
            };
            let norm = controller_norm(&params.xi(), params.n(), &NormOptions::default())?;
            println!("norm {}", norm.l1_norm);
            println!("tail_bound {}", norm.tail_bound);
            match compute_j(&params, &norm) {
                Ok(j) => println!("J {j}"),
                Err(e) => println!("J unavailable: {e}"),
            }
            Ok(0)
        }
    }
}

/// Coefficients as comma/whitespace separated numbers, or column `v` of a
/// headed CSV.
fn read_coefficients(path: &Path) -> Result<Vec<f64>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let parsed: Result<Vec<f64>, _> = text
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(str::parse)
        .collect();
    match parsed {
        Ok(v) if !v.is_empty() => Ok(v),
        Ok(_) => bail!("{}: no coefficients", path.display()),
        Err(_) => Ok(read_sequence(path)?),
    }
}
