//! Command-line orchestration: `simulate`, `solve`, `map-only`, `densify`,
//! and `eval`. Each command resolves a [`RunConfig`] (defaults, then config
//! file, then flags), writes its artifacts atomically into `out_dir`, and
//! finishes with a manifest naming every parameter and output digest.

use crate::camera::{CameraModel, PanoramaGeometry};
use crate::config::{parse_map_size, parse_window, RunConfig, SceneKind};
use crate::error::{Error, Result};
use crate::event::{clip_to_span, load_events, pair_events, save_events, Event, ResidualPair};
use crate::io::{
    load_calibration, load_map_raw, load_mask_pgm, load_trajectory, save_calibration,
    save_iteration_log, save_map_pgm16, save_map_raw, save_mask_pgm, save_trajectory,
    write_manifest,
};
use crate::map::{build_valid_mask, PanoramaMap};
use crate::metrics;
use crate::simulate::{
    scale_to_max_gradient, scale_to_range, scene_bandlimited, scene_checkerboard,
    scene_step_grid, simulate_events, sinusoid_trajectory,
};
use crate::solver::{lm_run, map_only_run, IterationRecord, OptState};
use crate::trajectory::RotationTrajectory;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

/// Number of bins written to the residual-histogram artifact.
const HISTOGRAM_BINS: usize = 61;

#[derive(Parser, Debug)]
#[command(
    name = "evpano",
    version,
    about = "Joint refinement of an event camera's rotations and a panoramic log-intensity map"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize events from a procedural panorama and a smooth rotation.
    Simulate(SharedOpts),
    /// Jointly refine the trajectory and the semi-dense map.
    Solve(SharedOpts),
    /// Refine only the map, holding the input trajectory fixed.
    MapOnly(SharedOpts),
    /// Fill the invalid pixels of a semi-dense map from its gradients.
    Densify(SharedOpts),
    /// Trajectory and photometric metrics against ground truth.
    Eval(SharedOpts),
}

/// Flags shared by every subcommand; names mirror the config-file keys.
#[derive(Args, Debug, Default)]
pub struct SharedOpts {
    /// Flat `key = value` config file; explicit flags override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// Force sequential accumulation for bit-reproducible outputs.
    #[arg(long)]
    pub deterministic: bool,
    /// quadratic | huber | cauchy
    #[arg(long)]
    pub loss: Option<String>,
    /// Contrast threshold C.
    #[arg(long)]
    pub contrast: Option<f64>,
    /// Control-pose frequency in Hz.
    #[arg(long)]
    pub pose_freq: Option<f64>,
    /// Map geometry `WxH` (width must be 2x height).
    #[arg(long)]
    pub map_size: Option<String>,
    /// cholesky | cg
    #[arg(long)]
    pub solver: Option<String>,
    /// Time window `T0:T1` in seconds.
    #[arg(long)]
    pub window: Option<String>,
    #[arg(long)]
    pub events: Option<PathBuf>,
    #[arg(long)]
    pub calibration: Option<PathBuf>,
    #[arg(long)]
    pub trajectory: Option<PathBuf>,
    #[arg(long)]
    pub gt_trajectory: Option<PathBuf>,
    #[arg(long)]
    pub initial_map: Option<PathBuf>,
    #[arg(long)]
    pub initial_mask: Option<PathBuf>,
    #[arg(long)]
    pub gt_map: Option<PathBuf>,
    /// bandlimited | checkerboard | stepgrid
    #[arg(long)]
    pub scene: Option<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Simulator integration step in seconds.
    #[arg(long)]
    pub sim_dt: Option<f64>,
    /// Simulated trajectory length in seconds.
    #[arg(long)]
    pub duration: Option<f64>,
}

impl SharedOpts {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.load_file(path)?;
        }
        let mut set_path = |key: &str, v: &Option<PathBuf>| -> Result<()> {
            if let Some(p) = v {
                cfg.set(key, &p.display().to_string())?;
            }
            Ok(())
        };
        set_path("out_dir", &self.out_dir)?;
        set_path("events", &self.events)?;
        set_path("calibration", &self.calibration)?;
        set_path("trajectory", &self.trajectory)?;
        set_path("gt_trajectory", &self.gt_trajectory)?;
        set_path("initial_map", &self.initial_map)?;
        set_path("initial_mask", &self.initial_mask)?;
        set_path("gt_map", &self.gt_map)?;
        if self.deterministic {
            cfg.set("deterministic", "true")?;
        }
        if let Some(v) = &self.loss {
            cfg.set("loss", v)?;
        }
        if let Some(v) = self.contrast {
            cfg.set("contrast", &v.to_string())?;
        }
        if let Some(v) = self.pose_freq {
            cfg.set("pose_freq", &v.to_string())?;
        }
        if let Some(v) = &self.map_size {
            parse_map_size(v)?;
            cfg.set("map_size", v)?;
        }
        if let Some(v) = &self.solver {
            cfg.set("solver", v)?;
        }
        if let Some(v) = &self.window {
            parse_window(v)?;
            cfg.set("window", v)?;
        }
        if let Some(v) = &self.scene {
            cfg.set("scene", v)?;
        }
        if let Some(v) = self.seed {
            cfg.set("seed", &v.to_string())?;
        }
        if let Some(v) = self.sim_dt {
            cfg.set("sim_dt", &v.to_string())?;
        }
        if let Some(v) = self.duration {
            cfg.set("duration", &v.to_string())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Dispatches a parsed command line and returns the process exit code
/// (0 success, 2 config error, 3 data error, 4 solver error). Errors print
/// one machine-readable line on stderr.
pub fn run(cli: Cli) -> i32 {
    let outcome = match &cli.command {
        Command::Simulate(opts) => opts.resolve().and_then(|cfg| cmd_simulate(&cfg)),
        Command::Solve(opts) => opts.resolve().and_then(|cfg| cmd_solve(&cfg)),
        Command::MapOnly(opts) => opts.resolve().and_then(|cfg| cmd_map_only(&cfg)),
        Command::Densify(opts) => opts.resolve().and_then(|cfg| cmd_densify(&cfg)),
        Command::Eval(opts) => opts.resolve().and_then(|cfg| cmd_eval(&cfg)),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error exit={} kind={} message={:?}", e.exit_code(), kind(&e), e.to_string());
            e.exit_code()
        }
    }
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Config(_) => "config",
        Error::Data { .. } | Error::Io(_) => "data",
        Error::Solver(_) => "solver",
        Error::Aliasing { .. } => "aliasing",
    }
}

fn require<'a>(path: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    path.as_deref()
        .ok_or_else(|| Error::Config(format!("missing required input: {key} (flag --{key})")))
}

/// Default camera when no calibration file is given: a small desk-scale
/// sensor with a ~56 degree field of view.
fn default_camera() -> CameraModel {
    CameraModel::new(64, 64, 60.0, 60.0, 31.5, 31.5).expect("static camera parameters")
}

// ----------------------------------------------------------------- simulate

pub fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let camera = match &cfg.calibration {
        Some(path) => load_calibration(path)?,
        None => default_camera(),
    };
    let geom = PanoramaGeometry::new(cfg.map_width, cfg.map_height)?;
    let egm = cfg.egm()?;

    let mut values = match cfg.scene {
        SceneKind::Bandlimited => scene_bandlimited(geom.width, geom.height, cfg.seed, cfg.harmonics),
        SceneKind::Checkerboard => scene_checkerboard(geom.width, geom.height, cfg.tile, 1.0),
        SceneKind::StepGrid => scene_step_grid(geom.width, geom.height, cfg.period, 1.0),
    };
    // Amplitude policy: bandlimited scenes are bounded by their steepest
    // gradient (the solvability knob); hard-edged scenes by value range.
    match cfg.scene {
        SceneKind::Bandlimited => {
            let target = if cfg.amplitude > 0.0 { cfg.amplitude } else { cfg.contrast / 15.0 };
            scale_to_max_gradient(geom.width, geom.height, &mut values, target);
        }
        SceneKind::Checkerboard | SceneKind::StepGrid => {
            let target = if cfg.amplitude > 0.0 { cfg.amplitude } else { 2.0 * cfg.contrast };
            scale_to_range(&mut values, target);
        }
    }

    let traj = match &cfg.trajectory {
        Some(path) => load_trajectory(path)?,
        None => {
            let n_poses = (cfg.duration * cfg.pose_freq).round() as usize + 1;
            let amp = cfg.amp_deg.map(f64::to_radians);
            // Quadrature x/z phases keep the angular speed bounded away from
            // zero so no trajectory segment goes starved of events.
            sinusoid_trajectory(
                0.0,
                cfg.pose_freq,
                n_poses.max(2),
                amp,
                [3.0, 4.0, 3.0],
                [0.0, 0.0, std::f64::consts::FRAC_PI_2],
            )
        }
    };

    let events = simulate_events(&camera, geom, &values, &traj, egm, cfg.sim_dt)?;

    let out = &cfg.out_dir;
    let events_path = out.join("events.txt");
    let traj_path = out.join("gt_trajectory.txt");
    let map_path = out.join("gt_map.f32");
    let preview_path = out.join("gt_map.pgm");
    let calib_path = out.join("calibration.txt");
    save_events(&events, &events_path)?;
    save_trajectory(&traj, &traj_path)?;
    save_map_raw(geom.width, geom.height, &values, &map_path)?;
    save_map_pgm16(geom.width, geom.height, &values, None, &preview_path)?;
    save_calibration(&camera, &calib_path)?;
    write_manifest(
        &out.join("manifest.txt"),
        "simulate",
        &cfg.to_kv(),
        &[events_path, traj_path, map_path, preview_path, calib_path],
    )?;
    println!("simulated {} events over {:.3} s", events.len(), traj.t_end() - traj.t_start());
    Ok(())
}

// -------------------------------------------------------------- solve inputs

struct SolveInputs {
    camera: CameraModel,
    traj: RotationTrajectory,
    pairs: Vec<ResidualPair>,
    n_events: usize,
}

/// Loads events + calibration + trajectory and pairs the events over the
/// requested window clipped to the trajectory span.
fn load_solve_inputs(cfg: &RunConfig) -> Result<SolveInputs> {
    let camera = load_calibration(require(&cfg.calibration, "calibration")?)?;
    let traj = load_trajectory(require(&cfg.trajectory, "trajectory")?)?;
    let events: Vec<Event> = load_events(require(&cfg.events, "events")?)?;
    let span = (traj.t_start(), traj.t_end());
    let window = match cfg.window {
        Some((t0, t1)) => {
            if t0 < span.0 || t1 > span.1 {
                return Err(Error::Config(format!(
                    "window {t0}:{t1} exceeds the trajectory span {}:{}",
                    span.0, span.1
                )));
            }
            (t0, t1)
        }
        None => span,
    };
    let (kept, dropped) = clip_to_span(&events, window);
    if dropped > 0 {
        eprintln!("note: {dropped} events outside the window were dropped");
    }
    let paired = pair_events(&kept, window)?;
    Ok(SolveInputs { camera, traj, pairs: paired.pairs, n_events: kept.len() })
}

/// Initial map state: an explicit raster + mask when configured, otherwise
/// zeros under the mask rebuilt from the initial trajectory.
fn initial_map(cfg: &RunConfig, inputs: &SolveInputs) -> Result<PanoramaMap> {
    let geom = PanoramaGeometry::new(cfg.map_width, cfg.map_height)?;
    match (&cfg.initial_map, &cfg.initial_mask) {
        (Some(map_path), Some(mask_path)) => {
            let (w, h, values) = load_map_raw(map_path)?;
            if (w, h) != (geom.width, geom.height) {
                return Err(Error::Config(format!(
                    "initial map is {w}x{h}, config says {}x{}",
                    geom.width, geom.height
                )));
            }
            let (mw, mh, mask) = load_mask_pgm(mask_path)?;
            if (mw, mh) != (w, h) {
                return Err(Error::data(mask_path, "mask geometry differs from map"));
            }
            Ok(PanoramaMap::from_values(geom, values, mask))
        }
        (None, None) => {
            let mask = build_valid_mask(&inputs.pairs, &inputs.camera, geom, &inputs.traj)?;
            Ok(PanoramaMap::zeros(geom, mask))
        }
        _ => Err(Error::Config("initial_map and initial_mask must be given together".into())),
    }
}

fn save_map_artifacts(state: &OptState, out: &Path) -> Result<Vec<PathBuf>> {
    let map = &state.map;
    let raw = out.join("map.f32");
    let mask = out.join("mask.pgm");
    let preview = out.join("map.pgm");
    save_map_raw(map.width(), map.height(), map.values(), &raw)?;
    save_mask_pgm(map.width(), map.height(), map.mask(), &mask)?;
    save_map_pgm16(map.width(), map.height(), map.values(), Some(map.mask()), &preview)?;
    Ok(vec![raw, mask, preview])
}

/// Metrics shared by `solve` and `map-only`: final photometric error, pair
/// accounting, and ARE against ground truth when one is configured.
fn common_metrics(
    cfg: &RunConfig,
    inputs: &SolveInputs,
    state: &OptState,
    records: &[IterationRecord],
) -> Result<Vec<(String, f64)>> {
    let egm = cfg.egm()?;
    let mut out = Vec::new();
    out.push(("events".into(), inputs.n_events as f64));
    out.push(("pairs".into(), inputs.pairs.len() as f64));
    out.push(("iterations".into(), records.len() as f64));
    out.push((
        "accepted_iterations".into(),
        records.iter().filter(|r| r.accepted).count() as f64,
    ));
    out.push(("phe_final".into(), metrics::phe(&inputs.camera, state, &inputs.pairs, &egm)?));
    if let Some(gt_path) = &cfg.gt_trajectory {
        let gt = load_trajectory(gt_path)?;
        let est = &state.trajectory;
        let t0 = est.t_start().max(gt.t_start());
        let pair = metrics::align_at(est, &gt, t0)?;
        let times: Vec<f64> = metrics::control_times(est)
            .into_iter()
            .filter(|&t| gt.contains(t))
            .collect();
        out.push(("are_rmse_deg".into(), metrics::are_rmse(&pair, &times)?));
    }
    Ok(out)
}

// -------------------------------------------------------------------- solve

/// Full joint refinement. Without an explicit initial map the map block is
/// first fitted by the linear map-only pass on the initial trajectory, then
/// poses and map are refined jointly.
pub fn cmd_solve(cfg: &RunConfig) -> Result<()> {
    let inputs = load_solve_inputs(cfg)?;
    let egm = cfg.egm()?;
    let map = initial_map(cfg, &inputs)?;
    let bootstrap = cfg.initial_map.is_none();
    let mut state = OptState::new(inputs.traj.clone(), map);
    if bootstrap {
        map_only_run(&inputs.camera, &mut state, &inputs.pairs, &egm, &cfg.solver)?;
    }
    let records = lm_run(&inputs.camera, &mut state, &inputs.pairs, &egm, &cfg.solver)?;

    let out = &cfg.out_dir;
    let mut files = save_map_artifacts(&state, out)?;
    let traj_path = out.join("trajectory.txt");
    save_trajectory(&state.trajectory, &traj_path)?;
    files.push(traj_path);

    let densified = crate::densify::densify(&state.map)?;
    let dense_path = out.join("densified.f32");
    let dense_preview = out.join("densified.pgm");
    save_map_raw(state.map.width(), state.map.height(), &densified.values, &dense_path)?;
    save_map_pgm16(state.map.width(), state.map.height(), &densified.values, None, &dense_preview)?;
    files.push(dense_path);
    files.push(dense_preview);

    let log_path = out.join("iterations.csv");
    save_iteration_log(&records, &log_path)?;
    files.push(log_path);

    let mut report = common_metrics(cfg, &inputs, &state, &records)?;
    if let Some(first) = records.first() {
        report.insert(0, ("phe_initial".into(), first.phe));
    }
    let metrics_path = out.join("metrics.csv");
    metrics::save_metrics_csv(&report, &metrics_path)?;
    files.push(metrics_path);

    write_manifest(&out.join("manifest.txt"), "solve", &cfg.to_kv(), &files)?;
    print!("{}", metrics::format_summary(&report));
    Ok(())
}

// ----------------------------------------------------------------- map-only

pub fn cmd_map_only(cfg: &RunConfig) -> Result<()> {
    let inputs = load_solve_inputs(cfg)?;
    let egm = cfg.egm()?;
    let map = initial_map(cfg, &inputs)?;
    let mut state = OptState::new(inputs.traj.clone(), map);
    let records = map_only_run(&inputs.camera, &mut state, &inputs.pairs, &egm, &cfg.solver)?;

    let out = &cfg.out_dir;
    let mut files = save_map_artifacts(&state, out)?;
    let log_path = out.join("iterations.csv");
    save_iteration_log(&records, &log_path)?;
    files.push(log_path);

    let mut report = common_metrics(cfg, &inputs, &state, &records)?;
    if let Some(gt_map_path) = &cfg.gt_map {
        let (w, h, reference) = load_map_raw(gt_map_path)?;
        if (w, h) != (state.map.width(), state.map.height()) {
            return Err(Error::data(gt_map_path, "ground-truth map geometry differs"));
        }
        let (est, gt) = metrics::gauge_aligned_valid_pixels(&state.map, &reference);
        report.push(("map_pearson".into(), metrics::pearson(&est, &gt)));
        report.push(("map_rms".into(), metrics::rms_diff(&est, &gt)));
    }
    let metrics_path = out.join("metrics.csv");
    metrics::save_metrics_csv(&report, &metrics_path)?;
    files.push(metrics_path);

    write_manifest(&out.join("manifest.txt"), "map-only", &cfg.to_kv(), &files)?;
    print!("{}", metrics::format_summary(&report));
    Ok(())
}

// ------------------------------------------------------------------ densify

pub fn cmd_densify(cfg: &RunConfig) -> Result<()> {
    let map_path = require(&cfg.initial_map, "initial_map")?;
    let (w, h, values) = load_map_raw(map_path)?;
    let geom = PanoramaGeometry::new(w, h)?;
    let mask = match &cfg.initial_mask {
        Some(mask_path) => {
            let (mw, mh, mask) = load_mask_pgm(mask_path)?;
            if (mw, mh) != (w, h) {
                return Err(Error::data(mask_path, "mask geometry differs from map"));
            }
            mask
        }
        None => vec![true; w * h],
    };
    let map = PanoramaMap::from_values(geom, values, mask);
    let outcome = crate::densify::densify(&map)?;

    let out = &cfg.out_dir;
    let dense_path = out.join("densified.f32");
    let preview_path = out.join("densified.pgm");
    save_map_raw(w, h, &outcome.values, &dense_path)?;
    save_map_pgm16(w, h, &outcome.values, None, &preview_path)?;
    let report = vec![
        ("cg_iterations".to_string(), outcome.cg_iterations as f64),
        ("rel_residual".to_string(), outcome.rel_residual),
    ];
    let metrics_path = out.join("metrics.csv");
    metrics::save_metrics_csv(&report, &metrics_path)?;
    write_manifest(
        &out.join("manifest.txt"),
        "densify",
        &cfg.to_kv(),
        &[dense_path, preview_path, metrics_path],
    )?;
    print!("{}", metrics::format_summary(&report));
    Ok(())
}

// --------------------------------------------------------------------- eval

/// Metrics-only pass: trajectory error always, photometric metrics whenever
/// events + calibration + a map raster/mask are configured.
pub fn cmd_eval(cfg: &RunConfig) -> Result<()> {
    let est = load_trajectory(require(&cfg.trajectory, "trajectory")?)?;
    let gt = load_trajectory(require(&cfg.gt_trajectory, "gt_trajectory")?)?;
    let t0 = match cfg.window {
        Some((t0, _)) => t0,
        None => est.t_start().max(gt.t_start()),
    };
    let pair = metrics::align_at(&est, &gt, t0)?;
    let times: Vec<f64> =
        metrics::control_times(&est).into_iter().filter(|&t| gt.contains(t)).collect();
    let mut report = vec![("are_rmse_deg".to_string(), metrics::are_rmse(&pair, &times)?)];

    let out = &cfg.out_dir;
    let mut files = Vec::new();
    if let (Some(_), Some(_), Some(map_path), Some(mask_path)) =
        (&cfg.events, &cfg.calibration, &cfg.initial_map, &cfg.initial_mask)
    {
        let inputs = load_solve_inputs(cfg)?;
        let egm = cfg.egm()?;
        let (w, h, values) = load_map_raw(map_path)?;
        let geom = PanoramaGeometry::new(w, h)?;
        let (mw, mh, mask) = load_mask_pgm(mask_path)?;
        if (mw, mh) != (w, h) {
            return Err(Error::data(mask_path, "mask geometry differs from map"));
        }
        let state = OptState::new(inputs.traj.clone(), PanoramaMap::from_values(geom, values, mask));
        report.push(("phe".into(), metrics::phe(&inputs.camera, &state, &inputs.pairs, &egm)?));
        report.push((
            "frac_below_half_c".into(),
            metrics::fraction_within(
                &inputs.camera,
                &state,
                &inputs.pairs,
                &egm,
                cfg.contrast / 2.0,
            )?,
        ));
        let hist =
            metrics::residual_histogram(&inputs.camera, &state, &inputs.pairs, &egm, HISTOGRAM_BINS)?;
        let hist_path = out.join("residual_histogram.csv");
        metrics::save_histogram_csv(&hist, &hist_path)?;
        files.push(hist_path);
    }

    let metrics_path = out.join("metrics.csv");
    metrics::save_metrics_csv(&report, &metrics_path)?;
    files.push(metrics_path);
    write_manifest(&out.join("manifest.txt"), "eval", &cfg.to_kv(), &files)?;
    print!("{}", metrics::format_summary(&report));
    Ok(())
}
