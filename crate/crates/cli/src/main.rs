use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use signal_lab::agents::FixedTimeAgent;
use signal_lab::harness::{
    derive_seed, evaluate_checkpoint, exit, gradcheck, tune_fixed, EvalReport, RunConfig, Session, Stream,
    FIXED_HALF_PERIODS,
};
use signal_lab::observation::Renderer;
use signal_lab::sim::IntersectionState;
use signal_lab::Error;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser, Debug)]
#[command(name = "signal-lab", version, about = "Train and evaluate traffic-signal controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Configuration file (flat TOML).
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Master seed, overriding the config file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short, default_value = "out")]
    out: PathBuf,
    /// Override any config key, e.g. `--set learning_rate=1e-4`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train the configured agent, writing metrics and checkpoints to --out.
    Train(Common),
    /// Greedy evaluation of a checkpoint (or of the fixed-time plan).
    Eval {
        #[command(flatten)]
        common: Common,
        /// Checkpoint to load; required unless the agent is `fixed`
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Number of evaluation episodes (defaults to `eval_episodes`).
        #[arg(long)]
        episodes: Option<u32>,
    },
    /// Tune and evaluate the fixed-time plan.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        episodes: u32,
    },
    /// Write rendered frames of a fixed-time episode as PGM images.
    DumpFrames {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 20)]
        steps: u32,
    },
    /// Run every finite-difference gradient suite.
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn load_config(common: &Common) -> Result<RunConfig, Error> {
    let mut overrides = Vec::new();
    for item in &common.set {
        let (k, v) = item
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("override `{item}` is not KEY=VALUE")))?;
        overrides.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = common.seed {
        overrides.push(("seed".into(), seed.to_string()));
    }
    RunConfig::load(common.config.as_deref(), &overrides)
}

fn print_report(label: &str, report: &EvalReport) {
    let r = &report.record;
    println!(
        "{label}: {} episodes  reward {:.2} (sd {:.2})  delay/vehicle {:.3} (sd {:.3})  queue {:.3} (sd {:.3})",
        r.episodes, r.avg_reward, r.std_reward, r.avg_cum_delay, r.std_cum_delay, r.avg_queue, r.std_queue
    );
}

fn dump_frames(config: &RunConfig, out: &Path, steps: u32) -> Result<(), Error> {
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let renderer = Renderer::new(config.render(), config.lane_length_cells)?;
    let plan = FixedTimeAgent::new(config.fixed_half_period)?;
    let mut state = IntersectionState::new(derive_seed(config.seed, Stream::EvalEpisode, 0), &config.sim())?;
    for step in 0..steps {
        if step > 0 {
            state.apply_action(plan.action(step as u64 - 1), config.green_duration_ticks)?;
        }
        renderer
            .render(&state)?
            .write_pgm(&out.join(format!("frame_{step:04}.pgm")))?;
    }
    println!("wrote {steps} frames to {}", out.display());
    Ok(())
}

enum Failure {
    Config(Error),
    Runtime(Error),
    Check,
}

fn run(cli: Cli) -> Result<(), Failure> {
    let cfg = |c: &Common| load_config(c).map_err(Failure::Config);
    match cli.command {
        Command::Train(common) => {
            let config = cfg(&common)?;
            let mut session = Session::new(config).map_err(Failure::Config)?;
            let (records, outputs) = session.train(Some(&common.out)).map_err(Failure::Runtime)?;
            if let Some(last) = records.last() {
                println!(
                    "trained {} episodes; final eval reward {:.2} delay/vehicle {:.3} queue {:.3}",
                    session.episodes_trained(),
                    last.avg_reward,
                    last.avg_cum_delay,
                    last.avg_queue
                );
            }
            if let Some(o) = outputs {
                println!("metrics: {}", o.metrics.display());
            }
        }
        Command::Eval {
            common,
            checkpoint,
            episodes,
        } => {
            let mut config = cfg(&common)?;
            if let Some(n) = episodes {
                config.eval_episodes = n;
            }
            let report = evaluate_checkpoint(&config, checkpoint.as_deref()).map_err(|e| match e {
                Error::InvalidConfig(_) => Failure::Config(e),
                e => Failure::Runtime(e),
            })?;
            print_report("eval", &report);
        }
        Command::Baseline { common, episodes } => {
            let config = cfg(&common)?;
            let tuning = tune_fixed(&config, &FIXED_HALF_PERIODS, episodes, episodes).map_err(Failure::Runtime)?;
            for (half, delay) in &tuning.candidates {
                println!("half period {half:>3}: tuning delay/vehicle {delay:.3}");
            }
            print_report(&format!("fixed (half period {})", tuning.best_half_period), &tuning.report);
        }
        Command::DumpFrames { common, steps } => {
            let config = cfg(&common)?;
            dump_frames(&config, &common.out, steps).map_err(Failure::Runtime)?;
        }
        Command::GradCheck { seed } => {
            let results = gradcheck::run_all(seed).map_err(Failure::Runtime)?;
            for r in &results {
                println!("{r}");
            }
            if !results.iter().all(|r| r.passed()) {
                return Err(Failure::Check);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::USAGE as u8 } else { exit::SUCCESS as u8 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::SUCCESS as u8),
        Err(Failure::Config(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::CONFIG as u8)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(exit::RUNTIME as u8)
        }
        Err(Failure::Check) => {
            eprintln!("error: gradient check failed");
            ExitCode::from(exit::RUNTIME as u8)
        }
    }
}
