//! `cbf` — train, roll out and evaluate barrier safety filters on the
//! differential-drive scenarios described by a config file.

use std::fs;
use std::io::Write;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use cbf_core::dynamics::RobotState;
use cbf_core::experiments::{
    demo_counterexamples, load_models, run_eval, run_rollout, run_train, FilterMode,
};
use cbf_core::scenario::load_scenario;

#[derive(Parser)]
#[command(name = "cbf", about = "barrier safety filters with learned model-mismatch correction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train per-barrier estimators for a scenario and write a checkpoint.
    Train {
        /// Scenario config file.
        config: PathBuf,
        /// Checkpoint output path; a `<stem>.loss.csv` lands next to it.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Run one rollout and write its trajectory CSV.
    Rollout {
        config: PathBuf,
        /// Checkpoint with trained estimators; omit for the nominal filter.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Initial state as `x,y,theta`.
        #[arg(long)]
        init: String,
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Sample initial states and report the safe and goal rates.
    Eval {
        config: PathBuf,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Number of rollouts.
        #[arg(short, default_value_t = 50)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the machine-readable report here (table goes to stdout).
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Built-in demonstrations.
    Demo {
        /// Which demo to run; `counterexamples` shows the class-K
        /// Lipschitz-versus-not invariance comparison.
        name: String,
    },
}

fn parse_init(text: &str) -> Result<RobotState> {
    let parts: Vec<&str> = text.split(',').collect();
    if parts.len() != 3 {
        bail!("--init expects `x,y,theta`, got `{text}`");
    }
    let mut v = [0.0; 3];
    for (slot, part) in v.iter_mut().zip(&parts) {
        *slot = part
            .trim()
            .parse()
            .with_context(|| format!("bad number `{part}` in --init"))?;
    }
    Ok(RobotState::new(v[0], v[1], v[2]))
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Train { config, out } => {
            let scenario = load_scenario(&config)?;
            let run = run_train(&scenario, &out)?;
            println!(
                "trained {} model(s) over {} trajectories ({} infeasible, {} degenerate filter steps)",
                run.models.len(),
                scenario.train.trajectories,
                run.infeasible_steps,
                run.degenerate_steps,
            );
            if let Some((_, _, loss)) = run.losses.last() {
                println!("final batch loss {loss:.6e}");
            }
            println!("checkpoint written to {}", out.display());
        }
        Command::Rollout {
            config,
            model,
            init,
            out,
        } => {
            let scenario = load_scenario(&config)?;
            let initial = parse_init(&init)?;
            let models = match &model {
                Some(path) => Some(load_models(&scenario, path)?),
                None => None,
            };
            let mode = match &models {
                Some(m) => FilterMode::Learned(m),
                None => FilterMode::Nominal,
            };
            let log = run_rollout(&scenario, mode, initial, &out)?;
            println!(
                "rollout ended after {} steps: {} (min h = {:.5})",
                log.rows.len() - 1,
                log.reason.as_str(),
                log.min_h()
            );
        }
        Command::Eval {
            config,
            model,
            n,
            seed,
            out,
        } => {
            let scenario = load_scenario(&config)?;
            let models = match &model {
                Some(path) => Some(load_models(&scenario, path)?),
                None => None,
            };
            let mode = match &models {
                Some(m) => FilterMode::Learned(m),
                None => FilterMode::Nominal,
            };
            let report = run_eval(&scenario, mode, n, seed);
            print!("{}", report.render_table());
            if let Some(path) = out {
                fs::write(&path, report.render_kv())
                    .with_context(|| format!("writing {}", path.display()))?;
                println!("report written to {}", path.display());
            }
        }
        Command::Demo { name } => match name.as_str() {
            "counterexamples" => {
                let mut stdout = std::io::stdout().lock();
                demo_counterexamples(&mut stdout)?;
                stdout.flush()?;
            }
            other => bail!("unknown demo `{other}`; available: counterexamples"),
        },
    }
    Ok(())
}
