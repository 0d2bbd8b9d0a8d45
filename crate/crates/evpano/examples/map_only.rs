//! Map recovery with frozen rotations: starting from a zero map, the
//! quadratic subproblem is linear and a couple of damped solves recover the
//! scene up to one constant per connected component of observed pixels.
//!
//!     cargo run --example map_only

use evpano::camera::{CameraModel, PanoramaGeometry};
use evpano::event::{pair_events, EGMParams};
use evpano::map::{build_valid_mask, PanoramaMap};
use evpano::metrics::{gauge_aligned_valid_pixels, pearson, rms_diff};
use evpano::simulate::{
    scale_to_max_gradient, scene_bandlimited, simulate_events, sinusoid_trajectory,
};
use evpano::solver::{map_only_run, OptState, SolverConfig};

fn main() -> evpano::Result<()> {
    let (width, height) = (256, 128);
    let geom = PanoramaGeometry::new(width, height)?;
    let camera = CameraModel::new(64, 64, 60.0, 60.0, 31.5, 31.5)?;
    let egm = EGMParams::symmetric(0.2)?;

    let mut scene = scene_bandlimited(width, height, 29, 3);
    scale_to_max_gradient(width, height, &mut scene, egm.c_pos / 15.0);
    let traj = sinusoid_trajectory(
        0.0,
        20.0,
        41,
        [15f64.to_radians(), 40f64.to_radians(), 15f64.to_radians()],
        [3.0, 4.0, 3.0],
        [0.0, 0.0, std::f64::consts::FRAC_PI_2],
    );
    let events = simulate_events(&camera, geom, &scene, &traj, egm, 1e-4)?;
    let pairs = pair_events(&events, (traj.t_start(), traj.t_end()))?.pairs;

    let mask = build_valid_mask(&pairs, &camera, geom, &traj)?;
    let mut state = OptState::new(traj, PanoramaMap::zeros(geom, mask));
    let records =
        map_only_run(&camera, &mut state, &pairs, &egm, &SolverConfig::default())?;

    // Event pairs only constrain map differences, so compare after removing
    // the per-component mean offset against the ground-truth scene.
    let (est, reference) = gauge_aligned_valid_pixels(&state.map, &scene);
    println!("pairs        {}", pairs.len());
    println!("valid        {} of {} map pixels", state.map.valid_count(), geom.pixels());
    println!("iterations   {}", records.len());
    println!("correlation  {:.4} (Pearson, valid pixels)", pearson(&est, &reference));
    println!("residual rms {:.4} (log-intensity units, C = {})", rms_diff(&est, &reference), egm.c_pos);
    Ok(())
}
