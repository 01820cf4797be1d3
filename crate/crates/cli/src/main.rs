//! `gmreach` command-line front end.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "gmreach",
    version,
    about = "Learn pilot behavior models and propagate state mixtures"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
pub struct PlantArg {
    /// Plant parameters JSON (defaults to the built-in multi-rotor).
    #[arg(long)]
    pub plant: Option<PathBuf>,
}

#[derive(Args, Clone)]
pub struct PredictionArgs {
    /// Behavior model JSON.
    #[arg(long)]
    pub model: PathBuf,
    /// Initial belief mixture JSON (defaults to the built-in scenario belief).
    #[arg(long)]
    pub init: Option<PathBuf>,
    /// Prediction horizon in seconds, rounded down to whole steps.
    #[arg(long, default_value_t = 4.0)]
    pub horizon: f64,
    #[arg(long, default_value_t = 16, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_components: u64,
    #[command(flatten)]
    pub plant: PlantArg,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Behavior,
    Uniform,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Output {
    Beliefs,
    Grid,
    Risk,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic trials with the scripted pilot.
    Generate {
        #[arg(long, default_value_t = 121, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output directory for trial_NNN.csv/.json pairs.
        #[arg(long)]
        out: PathBuf,
        /// World geometry JSON.
        #[arg(long)]
        world: Option<PathBuf>,
        /// Ground-truth behavior model JSON (defaults to the built-in pilot).
        #[arg(long)]
        pilot: Option<PathBuf>,
        #[command(flatten)]
        plant: PlantArg,
    },
    /// Fit a behavior model to post-spawn windows of landed trials.
    Train {
        #[arg(long)]
        trials: PathBuf,
        /// Window length after the spawn, seconds.
        #[arg(long, default_value_t = 4.5)]
        window: f64,
        #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u64).range(1..))]
        components: u64,
        #[arg(long)]
        out: PathBuf,
        /// Hold out the last k usable trials for validation.
        #[arg(long, default_value_t = 0)]
        holdout: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 500)]
        max_iterations: usize,
        #[arg(long, default_value_t = 1e-6)]
        tolerance: f64,
    },
    /// Propagate a belief through the plant under a behavior model.
    Predict {
        #[command(flatten)]
        args: PredictionArgs,
        /// Report instants in seconds, e.g. `1.5,3,4` (defaults to the horizon).
        #[arg(long, value_delimiter = ',')]
        at: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "beliefs,grid")]
        outputs: Vec<Output>,
        /// Danger zone `xmin,xmax,ymin,ymax` for the risk output.
        #[arg(long)]
        zone: Option<String>,
        /// Grid points per axis.
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
        /// Write every merge of every step to this JSON file.
        #[arg(long)]
        trace_reduction: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Check a prediction against Monte-Carlo simulation.
    Compare {
        #[command(flatten)]
        args: PredictionArgs,
        #[arg(long, default_value_t = 5000, value_parser = clap::value_parser!(u64).range(1..))]
        samples: u64,
        #[arg(long, value_enum, default_value_t = Mode::Behavior)]
        mode: Mode,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Clamp behavior-model inputs to the actuator bounds.
        #[arg(long)]
        saturate: bool,
        #[arg(long, default_value_t = 101)]
        grid_points: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Danger-zone probability over the prediction horizon.
    Risk {
        #[command(flatten)]
        args: PredictionArgs,
        /// `xmin,xmax,ymin,ymax` (defaults to the built-in zone).
        #[arg(long)]
        zone: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the live piloting service.
    Serve {
        /// Listen port (env PORT, default 8080).
        #[arg(long, env = "PORT", default_value_t = 8080)]
        port: u16,
        /// Where finished flights are written (env TRIALS_DIR).
        #[arg(long, env = "TRIALS_DIR", default_value = "trials")]
        trials_dir: PathBuf,
        /// Behavior model for live overlays (defaults to the built-in pilot).
        #[arg(long)]
        model: Option<PathBuf>,
        /// Disable prediction overlays.
        #[arg(long)]
        no_overlay: bool,
        #[arg(long)]
        world: Option<PathBuf>,
        #[command(flatten)]
        plant: PlantArg,
    },
    /// Conditional input mean and spread as a function of time.
    RegressionCurve {
        #[arg(long)]
        model: PathBuf,
        #[arg(long, default_value_t = 0.0)]
        t0: f64,
        #[arg(long, default_value_t = 4.5)]
        t1: f64,
        #[arg(long, default_value_t = 0.04)]
        dt: f64,
        #[arg(long)]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate {
            n,
            seed,
            out,
            world,
            pilot,
            plant,
        } => commands::generate(
            n as usize,
            seed,
            &out,
            world.as_deref(),
            pilot.as_deref(),
            &plant,
        ),
        Command::Train {
            trials,
            window,
            components,
            out,
            holdout,
            seed,
            max_iterations,
            tolerance,
        } => commands::train(&commands::TrainArgs {
            trials,
            window,
            components: components as usize,
            out,
            holdout,
            seed,
            max_iterations,
            tolerance,
        }),
        Command::Predict {
            args,
            at,
            outputs,
            zone,
            grid_points,
            trace_reduction,
            out,
        } => commands::predict(
            &args,
            &at,
            &outputs,
            zone.as_deref(),
            grid_points,
            trace_reduction.as_deref(),
            &out,
        ),
        Command::Compare {
            args,
            samples,
            mode,
            seed,
            saturate,
            grid_points,
            out,
        } => commands::compare(
            &args,
            samples as usize,
            mode,
            seed,
            saturate,
            grid_points,
            &out,
        ),
        Command::Risk { args, zone, out } => commands::risk(&args, zone.as_deref(), &out),
        Command::Serve {
            port,
            trials_dir,
            model,
            no_overlay,
            world,
            plant,
        } => commands::serve(
            port,
            trials_dir,
            model.as_deref(),
            no_overlay,
            world.as_deref(),
            &plant,
        ),
        Command::RegressionCurve {
            model,
            t0,
            t1,
            dt,
            out,
        } => commands::regression_curve(&model, t0, t1, dt, &out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(commands::exit_code(&err))
        }
    }
}
