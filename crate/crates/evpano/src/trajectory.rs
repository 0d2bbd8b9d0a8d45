//! Piecewise-geodesic rotation trajectory over uniformly spaced control
//! poses.
//!
//! Between consecutive control poses the orientation follows the geodesic
//! `R(t) = exp(u(t) * log(R_{i+1} * R_i^-1)) * R_i` with
//! `u(t) = (t - t_i) / (t_{i+1} - t_i)`, so the angular velocity is constant
//! on each segment and the trajectory is continuous at the knots.

use crate::error::{Error, Result};
use crate::so3::{exp_so3, log_so3, Rotation, Vec3};

/// Uniform spacing must hold to within this tolerance in seconds.
pub const SPACING_TOL: f64 = 1e-9;

/// A sampled rotation with the segment information needed to linearize
/// around it: the bracketing control-pose index and the normalized position.
#[derive(Clone, Copy, Debug)]
pub struct SampledPose {
    pub rotation: Rotation,
    /// Index `i` of the segment `[t_i, t_{i+1}]` containing the query time.
    pub segment: usize,
    /// Normalized position in the segment, in `[0, 1]`.
    pub u: f64,
}

/// Control poses at `t_i = t0 + i / freq`.
#[derive(Clone, Debug)]
pub struct RotationTrajectory {
    t0: f64,
    freq: f64,
    poses: Vec<Rotation>,
}

impl RotationTrajectory {
    /// At least two control poses; `freq` in Hz, positive and finite.
    pub fn new(t0: f64, freq: f64, poses: Vec<Rotation>) -> Result<Self> {
        if !(freq.is_finite() && freq > 0.0) {
            return Err(Error::Config(format!("control pose frequency {freq} must be positive")));
        }
        if poses.len() < 2 {
            return Err(Error::Config(format!(
                "trajectory needs at least 2 control poses, got {}",
                poses.len()
            )));
        }
        if !t0.is_finite() {
            return Err(Error::Config(format!("trajectory start time {t0} is not finite")));
        }
        Ok(RotationTrajectory { t0, freq, poses })
    }

    /// Builds from explicit timestamps, validating strict monotonicity and
    /// uniform spacing at `1/freq` to within [`SPACING_TOL`]. This is the
    /// loader-facing constructor.
    pub fn from_timestamped(times: &[f64], poses: Vec<Rotation>) -> Result<Self> {
        if times.len() != poses.len() {
            return Err(Error::Config(format!(
                "{} timestamps for {} poses",
                times.len(),
                poses.len()
            )));
        }
        if times.len() < 2 {
            return Err(Error::Config("trajectory needs at least 2 control poses".into()));
        }
        let dt = times[1] - times[0];
        if dt <= 0.0 {
            return Err(Error::Config("trajectory timestamps must be strictly increasing".into()));
        }
        for k in 1..times.len() {
            let step = times[k] - times[k - 1];
            if (step - dt).abs() > SPACING_TOL {
                return Err(Error::Config(format!(
                    "control poses must be uniformly spaced: step {} at index {} deviates from {} \
                     by more than {SPACING_TOL} s",
                    step, k, dt
                )));
            }
        }
        RotationTrajectory::new(times[0], 1.0 / dt, poses)
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the constructor guarantees >= 2 poses
    }

    pub fn freq(&self) -> f64 {
        self.freq
    }

    pub fn t_start(&self) -> f64 {
        self.t0
    }

    pub fn t_end(&self) -> f64 {
        self.time_at(self.poses.len() - 1)
    }

    /// Timestamp of control pose `i`, computed non-cumulatively.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + (i as f64) / self.freq
    }

    pub fn poses(&self) -> &[Rotation] {
        &self.poses
    }

    pub fn poses_mut(&mut self) -> &mut [Rotation] {
        &mut self.poses
    }

    pub fn contains(&self, t: f64) -> bool {
        t >= self.t_start() && t <= self.t_end()
    }

    /// Geodesic interpolation at `t`, which must lie within the span.
    /// `t = t_end` maps to the last segment with `u = 1`.
    pub fn sample(&self, t: f64) -> Result<SampledPose> {
        if !self.contains(t) {
            return Err(Error::Solver(format!(
                "query time {t} outside trajectory span [{}, {}]",
                self.t_start(),
                self.t_end()
            )));
        }
        let raw = (t - self.t0) * self.freq;
        let segment = (raw.floor() as usize).min(self.poses.len() - 2);
        let mut u = (raw - segment as f64).clamp(0.0, 1.0);
        // Snap to the knot when rounding of `raw` left us an ulp away, so
        // control timestamps reproduce their poses exactly.
        if u < 1e-9 {
            u = 0.0;
        } else if u > 1.0 - 1e-9 {
            u = 1.0;
        }
        let r0 = &self.poses[segment];
        let r1 = &self.poses[segment + 1];
        let rotation = if u == 0.0 {
            *r0
        } else if u == 1.0 {
            *r1
        } else {
            let dphi = log_so3(&r1.compose(&r0.inverse()));
            exp_so3(&(dphi * u)).compose(r0)
        };
        Ok(SampledPose { rotation, segment, u })
    }

    /// Relative axis-angle `log(R_{i+1} * R_i^-1)` of segment `i`; the
    /// linearizer caches these per iteration.
    pub fn segment_delta(&self, segment: usize) -> Vec3 {
        log_so3(&self.poses[segment + 1].compose(&self.poses[segment].inverse()))
    }
}
