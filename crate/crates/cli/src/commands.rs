use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use gmreach::hull::polygon_area;
use gmreach::mixture::{fit_em, EmConfig};
use gmreach::oracle::{self, InputMode, McConfig};
use gmreach::propagate::{density_grid, predict as run_predict, BeliefTrajectory};
use gmreach::regression::curve_to_csv;
use gmreach::risk::{collision_probability, profile_to_csv, risk_profile};
use gmreach::scenario::{self, SyntheticPilot, WorldConfig};
use gmreach::trajio::{extract_window, list_trials, training_points, trial_path, Trajectory};
use gmreach::{
    BehaviorModel, Belief, DangerZone, ErrorKind, PlantModel, PlantParams, PredictConfig,
};
use serde::Serialize;

use crate::{Mode, Output, PlantArg, PredictionArgs};

/// Failures detected by the CLI itself rather than the library.
#[derive(Debug, thiserror::Error)]
pub enum Failure {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
}

pub fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(f) = cause.downcast_ref::<Failure>() {
            return match f {
                Failure::Usage(_) => 2,
                Failure::Data(_) => 3,
            };
        }
        if let Some(e) = cause.downcast_ref::<gmreach::Error>() {
            return match e.kind() {
                ErrorKind::Usage => 2,
                ErrorKind::Data => 3,
                ErrorKind::Numeric => 4,
            };
        }
    }
    3
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    Failure::Usage(msg.into()).into()
}

fn load_plant(arg: &PlantArg) -> Result<PlantModel> {
    let params = match &arg.plant {
        Some(path) => PlantParams::load(path)?,
        None => PlantParams::default(),
    };
    Ok(PlantModel::new(params)?)
}

fn load_world(path: Option<&Path>) -> Result<WorldConfig> {
    Ok(match path {
        Some(p) => WorldConfig::load(p)?,
        None => WorldConfig::default(),
    })
}

fn load_init(path: Option<&Path>) -> Result<Belief> {
    Ok(match path {
        Some(p) => Belief::load(p)?,
        None => scenario::default_initial_belief(&WorldConfig::default()),
    })
}

fn parse_zone(zone: Option<&str>) -> Result<DangerZone> {
    Ok(match zone {
        Some(z) => z.parse()?,
        None => scenario::default_danger_zone(),
    })
}

/// Whole steps in `horizon` seconds, rounding down with a warning.
fn horizon_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon >= 0.0) || !horizon.is_finite() {
        return Err(usage(format!(
            "horizon must be a non-negative number of seconds, got {horizon}"
        )));
    }
    let steps = (horizon / dt + 1e-9).floor() as usize;
    if (steps as f64 * dt - horizon).abs() > 1e-9 {
        log::warn!("horizon {horizon} s is not a multiple of dt = {dt} s; using {steps} steps");
    }
    Ok(steps)
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)
            .with_context(|| format!("creating {}", parent.display()))?;
    }
    std::fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

pub fn generate(
    n: usize,
    seed: u64,
    out: &Path,
    world: Option<&Path>,
    pilot: Option<&Path>,
    plant: &PlantArg,
) -> Result<()> {
    let pm = load_plant(plant)?;
    let world = load_world(world)?;
    let behavior = match pilot {
        Some(p) => BehaviorModel::load(p)?,
        None => scenario::default_pilot_behavior(),
    };
    let pilot = SyntheticPilot::new(behavior, &pm, seed)?;
    let trials = scenario::generate_synthetic_trials(&pilot, &pm, &world, n, seed)?;
    ensure_dir(out)?;
    let mut landed = 0;
    for (i, traj) in trials.iter().enumerate() {
        traj.save(&trial_path(out, i))?;
        landed += usize::from(traj.outcome == gmreach::Outcome::Landed);
    }
    println!("wrote {n} trials to {} ({landed} landed)", out.display());
    Ok(())
}

pub struct TrainArgs {
    pub trials: PathBuf,
    pub window: f64,
    pub components: usize,
    pub out: PathBuf,
    pub holdout: usize,
    pub seed: u64,
    pub max_iterations: usize,
    pub tolerance: f64,
}

pub fn train(args: &TrainArgs) -> Result<()> {
    if !(args.window >= 0.0) || !args.window.is_finite() {
        return Err(usage(format!(
            "window must be non-negative, got {}",
            args.window
        )));
    }
    let paths = list_trials(&args.trials)?;
    let mut windows = Vec::new();
    for path in &paths {
        let name = path
            .file_name()
            .map_or_else(String::new, |n| n.to_string_lossy().into_owned());
        match Trajectory::load(path).and_then(|t| extract_window(&t, args.window)) {
            Ok(w) => {
                println!("{name}: included, {} rows", w.rows.len());
                windows.push(w);
            }
            Err(e) => println!("{name}: excluded, {e}"),
        }
    }
    if windows.is_empty() {
        return Err(Failure::Data(format!("no usable trials in {}", args.trials.display())).into());
    }
    if args.holdout >= windows.len() {
        return Err(usage(format!(
            "holdout {} leaves no training trials ({} usable)",
            args.holdout,
            windows.len()
        )));
    }
    let validation = windows.split_off(windows.len() - args.holdout);
    let points = training_points(&windows);
    println!(
        "training on {} trials, {} rows ({} s)",
        windows.len(),
        points.len(),
        windows.len() as f64 * args.window
    );

    let mut cfg = EmConfig::new(args.components);
    cfg.seed = args.seed;
    cfg.max_iterations = args.max_iterations;
    cfg.log_likelihood_tolerance = args.tolerance;
    let fit = fit_em(&points, &cfg)?;
    println!(
        "log-likelihood {} after {} iterations ({})",
        fit.log_likelihood,
        fit.iterations,
        if fit.converged {
            "converged"
        } else {
            "iteration limit"
        }
    );
    if !validation.is_empty() {
        let rows = training_points(&validation);
        let eval = fit.mixture.evaluator()?;
        let mut total = 0.0;
        for r in &rows {
            total += eval.log_density(r)?;
        }
        println!(
            "validation: {} trials, {} rows, log-likelihood {total} ({} per row)",
            validation.len(),
            rows.len(),
            total / rows.len() as f64
        );
    }
    let model = BehaviorModel::split_blocks(&fit.mixture)?;
    model.save(&args.out)?;
    println!("model written to {}", args.out.display());
    Ok(())
}

struct Prediction {
    pm: PlantModel,
    steps: usize,
    traj: BeliefTrajectory,
    model: BehaviorModel,
    init: Belief,
}

fn run_prediction(args: &PredictionArgs) -> Result<Prediction> {
    let pm = load_plant(&args.plant)?;
    let model = BehaviorModel::load(&args.model)?;
    let init = load_init(args.init.as_deref())?;
    let steps = horizon_steps(args.horizon, pm.dt())?;
    let cfg = PredictConfig {
        horizon_steps: steps,
        max_components: args.max_components as usize,
        ..PredictConfig::default()
    };
    let traj = run_predict(&init, &pm, &model, &cfg)?;
    Ok(Prediction {
        pm,
        steps,
        traj,
        model,
        init,
    })
}

/// Grid window of ±4 standard deviations around the position mean.
fn auto_range(belief: &Belief) -> ([f64; 2], [f64; 2]) {
    let (mean, cov) = belief.mixture.moments();
    let half = |i: usize| (4.0 * cov[(i, i)].sqrt()).max(1.0);
    (
        [mean[0] - half(0), mean[0] + half(0)],
        [mean[1] - half(1), mean[1] + half(1)],
    )
}

pub fn predict(
    args: &PredictionArgs,
    at: &[f64],
    outputs: &[Output],
    zone: Option<&str>,
    grid_points: usize,
    trace: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let p = run_prediction(args)?;
    let dt = p.pm.dt();
    let horizon = p.steps as f64 * dt;
    let instants: Vec<f64> = if at.is_empty() {
        vec![horizon]
    } else {
        at.to_vec()
    };
    let mut picks = Vec::new();
    for &t in &instants {
        if !(t >= 0.0) || t > horizon + 1e-9 {
            return Err(usage(format!(
                "--at {t} lies outside the horizon [0, {horizon}]"
            )));
        }
        picks.push((t, (t / dt).round() as usize));
    }
    let zone = parse_zone(zone)?;
    ensure_dir(out)?;

    if outputs.contains(&Output::Beliefs) {
        write(&out.join("beliefs.json"), p.traj.to_json()?)?;
    }
    for &(t, k) in &picks {
        let b = &p.traj.beliefs[k];
        let (mean, _) = b.mixture.moments();
        let mut line = format!(
            "t = {t} s: {} components, position mean ({}, {})",
            b.mixture.len(),
            mean[0],
            mean[1]
        );
        if outputs.contains(&Output::Grid) {
            let (xr, yr) = auto_range(b);
            let grid = density_grid(b, xr, yr, grid_points, grid_points)?;
            write(&out.join(format!("grid_t{t}.csv")), grid.to_csv())?;
        }
        if outputs.contains(&Output::Risk) {
            let _ = write!(line, ", risk {}", collision_probability(b, &zone));
        }
        println!("{line}");
    }
    if outputs.contains(&Output::Risk) {
        write(
            &out.join("risk.csv"),
            profile_to_csv(&risk_profile(&p.traj, &zone)),
        )?;
    }
    if let Some(path) = trace {
        write(path, serde_json::to_string_pretty(&p.traj.steps)?)?;
    }
    Ok(())
}

#[derive(Serialize)]
#[serde(rename_all = "camelCase")]
struct CompareReport {
    mode: &'static str,
    samples: usize,
    horizon_steps: usize,
    seed: u64,
    predicted_mean: Vec<f64>,
    empirical_mean: Vec<f64>,
    mean_diff: Vec<f64>,
    mean_standard_errors: Vec<f64>,
    cov_diff_frobenius: f64,
    fraction_of_samples_above_density_quantile: f64,
    density_level: f64,
    hull_area: f64,
    predicted_components: usize,
}

pub fn compare(
    args: &PredictionArgs,
    samples: usize,
    mode: Mode,
    seed: u64,
    saturate: bool,
    grid_points: usize,
    out: &Path,
) -> Result<()> {
    let p = run_prediction(args)?;
    let input_mode = match mode {
        Mode::Behavior => InputMode::BehaviorModel,
        Mode::Uniform => InputMode::UniformBounds,
    };
    let mut cfg = McConfig::new(samples, p.steps, input_mode, seed);
    cfg.saturate = saturate;
    let mc = oracle::run_monte_carlo(&p.init, &p.pm, Some(&p.model), &cfg)?;
    let predicted = p.traj.last();
    let (pmean, pcov) = predicted.mixture.moments();
    let se = oracle::mean_standard_errors(&mc.final_states);
    let mean_diff: Vec<f64> = (0..6).map(|i| pmean[i] - mc.empirical_mean[i]).collect();
    let cov_diff = (&pcov - oracle::to_dmatrix(&mc.empirical_cov)).norm();

    const LEVEL: f64 = 0.95;
    let reference = predicted.mixture.sample(samples, seed ^ 0x5E_ED0F_DE45);
    let points = oracle::to_dvectors(&mc.final_states);
    let inside =
        oracle::fraction_in_density_region(&predicted.mixture, &reference, &points, LEVEL)?;
    let hull_area = polygon_area(&mc.convex_hull);

    ensure_dir(out)?;
    let positions = mc.final_positions();
    let mut csv = String::from("px,py\n");
    for [x, y] in &positions {
        let _ = writeln!(csv, "{x},{y}");
    }
    write(&out.join("samples.csv"), csv)?;
    let mut hull = String::from("x,y\n");
    for [x, y] in &mc.convex_hull {
        let _ = writeln!(hull, "{x},{y}");
    }
    write(&out.join("hull.csv"), hull)?;
    let (xr, yr) = auto_range(predicted);
    write(
        &out.join("grid.csv"),
        density_grid(predicted, xr, yr, grid_points, grid_points)?.to_csv(),
    )?;

    let report = CompareReport {
        mode: match mode {
            Mode::Behavior => "behaviorModel",
            Mode::Uniform => "uniformBounds",
        },
        samples,
        horizon_steps: p.steps,
        seed,
        predicted_mean: pmean.iter().copied().collect(),
        empirical_mean: mc.empirical_mean.iter().copied().collect(),
        mean_diff,
        mean_standard_errors: se.iter().copied().collect(),
        cov_diff_frobenius: cov_diff,
        fraction_of_samples_above_density_quantile: inside,
        density_level: LEVEL,
        hull_area,
        predicted_components: predicted.mixture.len(),
    };
    write(
        &out.join("report.json"),
        serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "hull area {hull_area}, {:.4} of samples inside the {LEVEL} density region, covariance difference {cov_diff}",
        inside
    );
    Ok(())
}

pub fn risk(args: &PredictionArgs, zone: Option<&str>, out: &Path) -> Result<()> {
    let zone = parse_zone(zone)?;
    let p = run_prediction(args)?;
    let profile = risk_profile(&p.traj, &zone);
    write(out, profile_to_csv(&profile))?;
    let peak = profile
        .iter()
        .copied()
        .fold((0.0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let (t_end, p_end) = *profile.last().expect("profile includes the initial belief");
    println!(
        "risk at t = {t_end} s: {p_end}; peak {} at t = {} s",
        peak.1, peak.0
    );
    Ok(())
}

pub fn serve(
    port: u16,
    trials_dir: PathBuf,
    model: Option<&Path>,
    no_overlay: bool,
    world: Option<&Path>,
    plant: &PlantArg,
) -> Result<()> {
    let pm = load_plant(plant)?;
    let world = load_world(world)?;
    let overlay = if no_overlay {
        None
    } else {
        let m = match model {
            Some(p) => BehaviorModel::load(p)?,
            None => scenario::default_pilot_behavior(),
        };
        Some(gmreach_service::OverlayConfig::new(m))
    };
    let cfg = gmreach_service::ServerConfig::new(trials_dir, pm, world, overlay);
    let runtime = tokio::runtime::Runtime::new().context("starting async runtime")?;
    runtime
        .block_on(gmreach_service::run(([0, 0, 0, 0], port).into(), cfg))
        .context("serving")?;
    Ok(())
}

pub fn regression_curve(model: &Path, t0: f64, t1: f64, dt: f64, out: &Path) -> Result<()> {
    if !(dt > 0.0) || !(t1 >= t0) {
        return Err(usage("regression curve needs dt > 0 and t1 >= t0"));
    }
    let model = BehaviorModel::load(model)?;
    let curve = model.regression_curve(t0, t1, dt)?;
    write(out, curve_to_csv(&curve))?;
    println!("{} points written to {}", curve.len(), out.display());
    Ok(())
}
