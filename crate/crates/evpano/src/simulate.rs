//! Pure-rotation event simulator: sweeps the camera over a dense
//! ground-truth panorama, tracks per-pixel log intensity on a fine time
//! grid, and emits an event whenever the change since the last event
//! reaches the contrast threshold. Also provides procedural panoramas and
//! ground-truth trajectory synthesis for tests and experiments.

use crate::camera::{CameraModel, PanoramaGeometry};
use crate::error::{Error, Result};
use crate::event::{EGMParams, Event};
use crate::map::bilinear_sample;
use crate::so3::{exp_so3, Vec3};
use crate::trajectory::RotationTrajectory;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use std::f64::consts::{PI, TAU};

/// Threshold slack: a change within one part in 10^9 of the contrast
/// threshold still fires, so exact-multiple sweeps are not lost to float
/// rounding.
const THRESHOLD_SLACK: f64 = 1e-9;

/// Simulates events over the trajectory's full time span.
///
/// Per camera pixel, the log intensity is the bilinear readout of the dense
/// panorama at the warped position, sampled every `dt_sample` seconds. A
/// per-step change of C/4 or more aborts with an aliasing error (the step
/// size undersamples the signal); otherwise crossings of the reference
/// level +- C fire events, timed by linear interpolation within the step,
/// and the reference moves by exactly +-C per event. Events are returned
/// sorted by (t, x, y).
pub fn simulate_events(
    cam: &CameraModel,
    geom: PanoramaGeometry,
    panorama: &[f64],
    traj: &RotationTrajectory,
    egm: EGMParams,
    dt_sample: f64,
) -> Result<Vec<Event>> {
    if !(dt_sample.is_finite() && dt_sample > 0.0) {
        return Err(Error::Config(format!("dt_sample must be positive, got {dt_sample}")));
    }
    assert_eq!(panorama.len(), geom.width * geom.height);
    let (t0, t1) = (traj.t_start(), traj.t_end());
    let n_steps = ((t1 - t0) / dt_sample).ceil().max(1.0) as usize;
    let alias_bound = 0.25 * egm.c_pos.min(egm.c_neg);

    let n_pix = (cam.width * cam.height) as usize;
    let rays: Vec<Vec3> = (0..n_pix)
        .map(|i| {
            let (x, y) = (i as u32 % cam.width, i as u32 / cam.width);
            cam.back_project(x as f64, y as f64)
        })
        .collect();

    let sample_all = |t: f64, out: &mut [f64]| -> Result<()> {
        let rot = traj.sample(t)?;
        for (i, ray) in rays.iter().enumerate() {
            let z = rot.rotation.rotate(ray);
            let p = geom.project(&z);
            out[i] = bilinear_sample(geom.width, geom.height, panorama, &p);
        }
        Ok(())
    };

    let mut prev = vec![0.0; n_pix];
    let mut cur = vec![0.0; n_pix];
    sample_all(t0, &mut prev)?;
    let mut reference = prev.clone();
    let mut t_prev = t0;
    let mut events: Vec<Event> = Vec::new();

    for step in 1..=n_steps {
        let t = if step == n_steps { t1 } else { t0 + step as f64 * dt_sample };
        sample_all(t, &mut cur)?;
        for i in 0..n_pix {
            let (l_prev, l_new) = (prev[i], cur[i]);
            let dl = l_new - l_prev;
            if dl.abs() >= alias_bound {
                let (x, y) = (i as u32 % cam.width, i as u32 / cam.width);
                return Err(Error::Aliasing { x: x as u16, y: y as u16, t, delta: dl });
            }
            loop {
                let diff = l_new - reference[i];
                let (pol, c) = if diff >= 0.0 { (1i8, egm.c_pos) } else { (-1i8, egm.c_neg) };
                if diff.abs() < c * (1.0 - THRESHOLD_SLACK) {
                    break;
                }
                let target = reference[i] + pol as f64 * c;
                let frac = if dl.abs() > 0.0 {
                    ((target - l_prev) / dl).clamp(0.0, 1.0)
                } else {
                    1.0
                };
                events.push(Event {
                    t: t_prev + frac * (t - t_prev),
                    x: (i as u32 % cam.width) as u16,
                    y: (i as u32 / cam.width) as u16,
                    pol,
                });
                reference[i] = target;
            }
        }
        std::mem::swap(&mut prev, &mut cur);
        t_prev = t;
    }

    events.sort_by(|a, b| {
        (a.t, a.x, a.y).partial_cmp(&(b.t, b.x, b.y)).expect("finite event fields")
    });
    Ok(events)
}

// ------------------------------------------------------------ scenes

/// Smooth seam-periodic panorama: a sum of products of integer azimuth
/// harmonics and low-order elevation waves with seeded random amplitudes
/// and phases. Values are roughly unit scale; rescale with
/// [`scale_to_max_gradient`] or [`scale_to_range`].
pub fn scene_bandlimited(width: usize, height: usize, seed: u64, harmonics: usize) -> Vec<f64> {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let terms: Vec<(f64, f64, f64, f64, f64)> = (0..harmonics.max(1))
        .map(|_| {
            (
                rng.random_range(0.3..1.0),          // amplitude
                rng.random_range(1..5) as f64,       // integer azimuth frequency
                rng.random_range(0.0..TAU),          // azimuth phase
                rng.random_range(0.5..2.5),          // elevation frequency
                rng.random_range(0.0..TAU),          // elevation phase
            )
        })
        .collect();
    let mut values = vec![0.0; width * height];
    for y in 0..height {
        let el = (y as f64 + 0.5) / height as f64 * PI;
        for x in 0..width {
            let az = (x as f64 + 0.5) / width as f64 * TAU;
            values[y * width + x] = terms
                .iter()
                .map(|&(a, m, p, q, s)| a * (m * az + p).sin() * (q * el + s).sin())
                .sum();
        }
    }
    values
}

/// Checkerboard panorama: tiles of side `tile` alternating between
/// `-amplitude/2` and `+amplitude/2`. Hard edges; pick `dt_sample` so the
/// per-step sweep stays well under a pixel or the simulator will report
/// aliasing.
pub fn scene_checkerboard(width: usize, height: usize, tile: usize, amplitude: f64) -> Vec<f64> {
    assert!(tile > 0);
    let mut values = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let parity = (x / tile + y / tile) % 2;
            values[y * width + x] = if parity == 0 { -amplitude / 2.0 } else { amplitude / 2.0 };
        }
    }
    values
}

/// Grid of step edges: one staircase level per `period`-wide band in each
/// axis, summed, spanning `amplitude` overall.
pub fn scene_step_grid(width: usize, height: usize, period: usize, amplitude: f64) -> Vec<f64> {
    assert!(period > 0);
    let mut values = vec![0.0; width * height];
    for y in 0..height {
        for x in 0..width {
            let step = ((x / period) % 2 + (y / period) % 2) as f64;
            values[y * width + x] = (step / 2.0 - 0.5) * amplitude;
        }
    }
    values
}

/// Largest neighbor-difference magnitude (azimuth wraps, elevation does
/// not): an upper proxy for the per-pixel gradient.
pub fn max_gradient(width: usize, height: usize, values: &[f64]) -> f64 {
    let mut g: f64 = 0.0;
    for y in 0..height {
        for x in 0..width {
            let v = values[y * width + x];
            let r = values[y * width + (x + 1) % width];
            g = g.max((r - v).abs());
            if y + 1 < height {
                g = g.max((values[(y + 1) * width + x] - v).abs());
            }
        }
    }
    g
}

/// Rescales (about the mean) so the largest neighbor difference equals
/// `target`.
pub fn scale_to_max_gradient(width: usize, height: usize, values: &mut [f64], target: f64) {
    let g = max_gradient(width, height, values);
    if g == 0.0 {
        return;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let s = target / g;
    for v in values.iter_mut() {
        *v = mean + (*v - mean) * s;
    }
}

/// Rescales (about the mean) so max - min equals `target`.
pub fn scale_to_range(values: &mut [f64], target: f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if hi <= lo {
        return;
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    let s = target / (hi - lo);
    for v in values.iter_mut() {
        *v = mean + (*v - mean) * s;
    }
}

// ------------------------------------------------------- trajectories

/// Smooth ground-truth trajectory: control poses on R(t) = exp(phi(t)) with
/// per-axis sinusoidal rotation-vector components. `amp` in radians,
/// `cycles` in full oscillations over the trajectory span.
pub fn sinusoid_trajectory(
    t0: f64,
    freq: f64,
    n_poses: usize,
    amp: [f64; 3],
    cycles: [f64; 3],
    phase: [f64; 3],
) -> RotationTrajectory {
    assert!(n_poses >= 2);
    let span = (n_poses - 1) as f64 / freq;
    let poses = (0..n_poses)
        .map(|i| {
            let s = i as f64 / (n_poses - 1) as f64;
            let phi = Vec3::new(
                amp[0] * (TAU * cycles[0] * s + phase[0]).sin(),
                amp[1] * (TAU * cycles[1] * s + phase[1]).sin(),
                amp[2] * (TAU * cycles[2] * s + phase[2]).sin(),
            );
            exp_so3(&phi)
        })
        .collect();
    let _ = span;
    RotationTrajectory::new(t0, freq, poses).expect("n_poses >= 2 and freq > 0")
}

/// Left-perturbs every control pose (optionally keeping the first fixed)
/// with an isotropic normal rotation vector whose RMS angle is `rms_rad`.
pub fn perturb_trajectory(
    traj: &RotationTrajectory,
    rms_rad: f64,
    seed: u64,
    keep_first: bool,
) -> RotationTrajectory {
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let sigma = rms_rad / 3f64.sqrt();
    let normal = |rng: &mut ChaCha12Rng| -> f64 {
        // Box-Muller; two uniforms, one normal kept.
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
    };
    let poses = traj
        .poses()
        .iter()
        .enumerate()
        .map(|(i, pose)| {
            if keep_first && i == 0 {
                *pose
            } else {
                let delta = Vec3::new(
                    sigma * normal(&mut rng),
                    sigma * normal(&mut rng),
                    sigma * normal(&mut rng),
                );
                pose.perturb_left(&delta)
            }
        })
        .collect();
    RotationTrajectory::new(traj.t_start(), traj.freq(), poses).expect("same shape as input")
}
