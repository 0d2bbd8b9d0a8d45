//! Run configuration: flat key-value files plus command-line overrides.
//! Flag names mirror config keys, and [`RunConfig::to_kv`] flattens the full
//! effective configuration for the run manifest.

use crate::error::{Error, Result};
use crate::event::EGMParams;
use crate::io::parse_kv_file;
use crate::solver::{LinearSolver, Loss, SolverConfig};
use std::path::{Path, PathBuf};

/// Procedural ground-truth scene for `simulate`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneKind {
    Bandlimited,
    Checkerboard,
    StepGrid,
}

impl SceneKind {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "bandlimited" => Ok(SceneKind::Bandlimited),
            "checkerboard" => Ok(SceneKind::Checkerboard),
            "stepgrid" => Ok(SceneKind::StepGrid),
            other => Err(Error::Config(format!(
                "unknown scene {other:?} (expected bandlimited, checkerboard, or stepgrid)"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            SceneKind::Bandlimited => "bandlimited",
            SceneKind::Checkerboard => "checkerboard",
            SceneKind::StepGrid => "stepgrid",
        }
    }
}

/// Everything a run needs: input paths, map geometry, event-model constants,
/// solver knobs, and the simulator's procedural-scene parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    // Input paths. Which ones are required depends on the subcommand.
    pub events: Option<PathBuf>,
    pub calibration: Option<PathBuf>,
    pub trajectory: Option<PathBuf>,
    /// Ground-truth trajectory for metric evaluation.
    pub gt_trajectory: Option<PathBuf>,
    /// Initial semi-dense map raster; zero-initialized when absent.
    pub initial_map: Option<PathBuf>,
    /// Validity mask accompanying `initial_map`.
    pub initial_mask: Option<PathBuf>,
    /// Ground-truth map raster for evaluation.
    pub gt_map: Option<PathBuf>,
    pub out_dir: PathBuf,

    // Model geometry and event-model constants.
    pub map_width: usize,
    pub map_height: usize,
    pub pose_freq: f64,
    pub contrast: f64,
    /// Optional time window [t0, t1]; full span when absent.
    pub window: Option<(f64, f64)>,

    pub solver: SolverConfig,

    // Simulation (only read by `simulate`).
    pub scene: SceneKind,
    pub seed: u64,
    pub harmonics: usize,
    pub tile: usize,
    pub period: usize,
    /// Scene amplitude: max-gradient target for `bandlimited`, value range
    /// for the hard-edged scenes.
    pub amplitude: f64,
    pub sim_dt: f64,
    pub duration: f64,
    /// Per-axis sinusoid amplitudes of the procedural trajectory, degrees.
    pub amp_deg: [f64; 3],
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            events: None,
            calibration: None,
            trajectory: None,
            gt_trajectory: None,
            initial_map: None,
            initial_mask: None,
            gt_map: None,
            out_dir: PathBuf::from("out"),
            map_width: 1024,
            map_height: 512,
            pose_freq: 20.0,
            contrast: 0.2,
            window: None,
            solver: SolverConfig::default(),
            scene: SceneKind::Bandlimited,
            seed: 29,
            harmonics: 3,
            tile: 32,
            period: 24,
            amplitude: 0.0, // 0 = per-scene default, resolved by the simulator command
            sim_dt: 1e-4,
            duration: 5.0,
            amp_deg: [15.0, 40.0, 15.0],
        }
    }
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("cannot parse {key} = {value:?}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad(key, value))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" => Ok(true),
        "false" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

/// Parses `WxH`, e.g. `1024x512`.
pub fn parse_map_size(value: &str) -> Result<(usize, usize)> {
    let (w, h) = value.split_once('x').ok_or_else(|| bad("map_size", value))?;
    Ok((parse_num("map_size", w)?, parse_num("map_size", h)?))
}

/// Parses `T0:T1`, e.g. `0.5:4.5`.
pub fn parse_window(value: &str) -> Result<(f64, f64)> {
    let (a, b) = value.split_once(':').ok_or_else(|| bad("window", value))?;
    Ok((parse_num("window", a)?, parse_num("window", b)?))
}

impl RunConfig {
    /// Applies one `key = value` assignment; unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "events" => self.events = Some(PathBuf::from(value)),
            "calibration" => self.calibration = Some(PathBuf::from(value)),
            "trajectory" => self.trajectory = Some(PathBuf::from(value)),
            "gt_trajectory" => self.gt_trajectory = Some(PathBuf::from(value)),
            "initial_map" => self.initial_map = Some(PathBuf::from(value)),
            "initial_mask" => self.initial_mask = Some(PathBuf::from(value)),
            "gt_map" => self.gt_map = Some(PathBuf::from(value)),
            "out_dir" => self.out_dir = PathBuf::from(value),
            "map_size" => (self.map_width, self.map_height) = parse_map_size(value)?,
            "pose_freq" => self.pose_freq = parse_num(key, value)?,
            "contrast" => self.contrast = parse_num(key, value)?,
            "window" => self.window = Some(parse_window(value)?),
            "loss" => self.solver.loss = Loss::parse(value)?,
            "solver" => self.solver.linear_solver = LinearSolver::parse(value)?,
            "lambda0" => self.solver.lambda_init = parse_num(key, value)?,
            "lambda_factor" => self.solver.lambda_factor = parse_num(key, value)?,
            "max_iterations" => self.solver.max_iterations = parse_num(key, value)?,
            "rel_decrease_tol" => self.solver.rel_decrease_tol = parse_num(key, value)?,
            "step_tol" => self.solver.step_tol = parse_num(key, value)?,
            "cg_tol" => self.solver.cg_tol = parse_num(key, value)?,
            "deterministic" => self.solver.deterministic = parse_bool(key, value)?,
            "scene" => self.scene = SceneKind::parse(value)?,
            "seed" => self.seed = parse_num(key, value)?,
            "harmonics" => self.harmonics = parse_num(key, value)?,
            "tile" => self.tile = parse_num(key, value)?,
            "period" => self.period = parse_num(key, value)?,
            "amplitude" => self.amplitude = parse_num(key, value)?,
            "sim_dt" => self.sim_dt = parse_num(key, value)?,
            "duration" => self.duration = parse_num(key, value)?,
            "amp_deg" => {
                let parts: Vec<&str> = value.split(',').collect();
                if parts.len() != 3 {
                    return Err(bad(key, value));
                }
                for (slot, part) in self.amp_deg.iter_mut().zip(parts) {
                    *slot = parse_num(key, part)?;
                }
            }
            other => return Err(Error::Config(format!("unknown config key {other:?}"))),
        }
        Ok(())
    }

    /// Loads a flat key-value config file over the current values.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let kv = parse_kv_file(path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        for (k, v) in kv {
            self.set(&k, &v)?;
        }
        Ok(())
    }

    /// Checks cross-field invariants; call once the configuration is final.
    pub fn validate(&self) -> Result<()> {
        if self.map_width != 2 * self.map_height {
            return Err(Error::Config(format!(
                "map size {}x{} violates width = 2 * height",
                self.map_width, self.map_height
            )));
        }
        if !(self.pose_freq > 0.0) || !self.pose_freq.is_finite() {
            return Err(Error::Config(format!("pose_freq {} must be positive", self.pose_freq)));
        }
        if let Some((t0, t1)) = self.window {
            if !(t1 > t0) {
                return Err(Error::Config(format!("window {t0}:{t1} needs t1 > t0")));
            }
        }
        // Reuses the event-model range checks for the contrast threshold.
        EGMParams::symmetric(self.contrast)?;
        if !(self.sim_dt > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config("sim_dt and duration must be positive".into()));
        }
        Ok(())
    }

    /// Event-model constants implied by the configuration.
    pub fn egm(&self) -> Result<EGMParams> {
        EGMParams::symmetric(self.contrast)
    }

    /// The full effective configuration as ordered key-value pairs, ready
    /// for the run manifest. Optional paths appear only when set.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let mut kv: Vec<(String, String)> = Vec::new();
        let mut path = |key: &str, value: &Option<PathBuf>| {
            if let Some(p) = value {
                kv.push((key.into(), p.display().to_string()));
            }
        };
        path("events", &self.events);
        path("calibration", &self.calibration);
        path("trajectory", &self.trajectory);
        path("gt_trajectory", &self.gt_trajectory);
        path("initial_map", &self.initial_map);
        path("initial_mask", &self.initial_mask);
        path("gt_map", &self.gt_map);
        kv.push(("out_dir".into(), self.out_dir.display().to_string()));
        kv.push(("map_size".into(), format!("{}x{}", self.map_width, self.map_height)));
        kv.push(("pose_freq".into(), format!("{}", self.pose_freq)));
        kv.push(("contrast".into(), format!("{}", self.contrast)));
        if let Some((t0, t1)) = self.window {
            kv.push(("window".into(), format!("{t0}:{t1}")));
        }
        kv.push(("loss".into(), self.solver.loss.name().into()));
        kv.push(("solver".into(), self.solver.linear_solver.name().into()));
        kv.push(("lambda0".into(), format!("{}", self.solver.lambda_init)));
        kv.push(("lambda_factor".into(), format!("{}", self.solver.lambda_factor)));
        kv.push(("max_iterations".into(), format!("{}", self.solver.max_iterations)));
        kv.push(("rel_decrease_tol".into(), format!("{}", self.solver.rel_decrease_tol)));
        kv.push(("step_tol".into(), format!("{}", self.solver.step_tol)));
        kv.push(("cg_tol".into(), format!("{}", self.solver.cg_tol)));
        kv.push(("deterministic".into(), format!("{}", self.solver.deterministic)));
        kv.push(("scene".into(), self.scene.name().into()));
        kv.push(("seed".into(), format!("{}", self.seed)));
        kv.push(("harmonics".into(), format!("{}", self.harmonics)));
        kv.push(("tile".into(), format!("{}", self.tile)));
        kv.push(("period".into(), format!("{}", self.period)));
        kv.push(("amplitude".into(), format!("{}", self.amplitude)));
        kv.push(("sim_dt".into(), format!("{}", self.sim_dt)));
        kv.push(("duration".into(), format!("{}", self.duration)));
        kv.push((
            "amp_deg".into(),
            format!("{},{},{}", self.amp_deg[0], self.amp_deg[1], self.amp_deg[2]),
        ));
        kv
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_the_documented_operating_point() {
        let cfg = RunConfig::default();
        assert_eq!((cfg.map_width, cfg.map_height), (1024, 512));
        assert_eq!(cfg.pose_freq, 20.0);
        assert_eq!(cfg.contrast, 0.2);
        assert_eq!(cfg.solver.lambda_init, 1e-3);
        assert_eq!(cfg.solver.lambda_factor, 10.0);
        assert_eq!(cfg.solver.max_iterations, 50);
        assert_eq!(cfg.solver.rel_decrease_tol, 1e-6);
        assert_eq!(cfg.solver.step_tol, 1e-10);
        assert_eq!(cfg.solver.cg_tol, 1e-6);
        cfg.validate().unwrap();
    }

    #[test]
    fn set_overrides_and_rejects_unknown_keys() {
        let mut cfg = RunConfig::default();
        cfg.set("map_size", "512x256").unwrap();
        cfg.set("loss", "huber").unwrap();
        cfg.set("solver", "cg").unwrap();
        cfg.set("window", "0.5:4.5").unwrap();
        cfg.set("deterministic", "true").unwrap();
        cfg.set("amp_deg", "10, 30, 5").unwrap();
        assert_eq!((cfg.map_width, cfg.map_height), (512, 256));
        assert_eq!(cfg.solver.loss, Loss::Huber);
        assert_eq!(cfg.solver.linear_solver, LinearSolver::ConjugateGradient);
        assert_eq!(cfg.window, Some((0.5, 4.5)));
        assert!(cfg.solver.deterministic);
        assert_eq!(cfg.amp_deg, [10.0, 30.0, 5.0]);

        assert!(matches!(cfg.set("no_such_key", "1"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("map_size", "512by256"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("window", "1.0"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("deterministic", "yes"), Err(Error::Config(_))));
        assert!(matches!(cfg.set("amp_deg", "1,2"), Err(Error::Config(_))));
    }

    #[test]
    fn validate_enforces_cross_field_invariants() {
        let mut cfg = RunConfig::default();
        cfg.map_width = 600; // not 2 * 512
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default();
        cfg.pose_freq = 0.0;
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default();
        cfg.window = Some((2.0, 2.0));
        assert!(matches!(cfg.validate(), Err(Error::Config(_))));

        let mut cfg = RunConfig::default();
        cfg.contrast = -0.1;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn config_files_layer_under_explicit_overrides() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        std::fs::write(
            &path,
            "# desk run\nmap_size = 512x256\ncontrast = 0.3\nscene = checkerboard\nseed = 11\n",
        )
        .unwrap();
        let mut cfg = RunConfig::default();
        cfg.load_file(&path).unwrap();
        assert_eq!(cfg.contrast, 0.3);
        assert_eq!(cfg.scene, SceneKind::Checkerboard);
        // A later set() (the CLI flag) wins over the file value.
        cfg.set("contrast", "0.25").unwrap();
        assert_eq!(cfg.contrast, 0.25);

        std::fs::write(&path, "map_size = 512x256\nbogus = 1\n").unwrap();
        let mut cfg = RunConfig::default();
        assert!(matches!(cfg.load_file(&path), Err(Error::Config(_))));
    }

    #[test]
    fn to_kv_round_trips_through_set() {
        let mut cfg = RunConfig::default();
        cfg.set("events", "in/events.txt").unwrap();
        cfg.set("window", "0.25:3.75").unwrap();
        cfg.set("loss", "cauchy").unwrap();
        let kv = cfg.to_kv();

        let mut back = RunConfig::default();
        for (k, v) in &kv {
            back.set(k, v).unwrap();
        }
        assert_eq!(back, cfg);
        assert!(kv.iter().any(|(k, v)| k == "loss" && v == "cauchy"));
        // Unset optional paths must not appear at all.
        assert!(!kv.iter().any(|(k, _)| k == "gt_map"));
    }
}
