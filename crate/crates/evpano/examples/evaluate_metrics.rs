//! Trajectory and photometric evaluation: absolute rotation error after
//! gauge alignment, the residual histogram, and the fraction of residuals
//! inside the half-contrast band.
//!
//!     cargo run --example evaluate_metrics

use evpano::camera::{CameraModel, PanoramaGeometry};
use evpano::event::{pair_events, EGMParams};
use evpano::map::PanoramaMap;
use evpano::metrics::{
    align_at, are_rmse, control_times, fraction_within, format_summary, phe, residual_histogram,
};
use evpano::simulate::{
    perturb_trajectory, scale_to_max_gradient, scene_bandlimited, simulate_events,
    sinusoid_trajectory,
};
use evpano::solver::OptState;

fn main() -> evpano::Result<()> {
    let (width, height) = (256, 128);
    let geom = PanoramaGeometry::new(width, height)?;
    let camera = CameraModel::new(64, 64, 60.0, 60.0, 31.5, 31.5)?;
    let egm = EGMParams::symmetric(0.2)?;

    let mut scene = scene_bandlimited(width, height, 29, 3);
    scale_to_max_gradient(width, height, &mut scene, egm.c_pos / 15.0);
    let gt = sinusoid_trajectory(
        0.0,
        20.0,
        41,
        [15f64.to_radians(), 40f64.to_radians(), 15f64.to_radians()],
        [3.0, 4.0, 3.0],
        [0.0, 0.0, std::f64::consts::FRAC_PI_2],
    );
    let events = simulate_events(&camera, geom, &scene, &gt, egm, 1e-4)?;
    let pairs = pair_events(&events, (gt.t_start(), gt.t_end()))?.pairs;

    // Score a noisy estimate against ground truth, with the ground-truth
    // map standing in for a reconstruction.
    let est = perturb_trajectory(&gt, 0.5f64.to_radians(), 11, true);
    let aligned = align_at(&est, &gt, gt.t_start())?;
    let state = OptState::new(
        est.clone(),
        PanoramaMap::from_values(geom, scene.clone(), vec![true; geom.pixels()]),
    );

    let metrics = vec![
        ("events".to_string(), events.len() as f64),
        ("pairs".to_string(), pairs.len() as f64),
        ("are_rmse_deg".to_string(), are_rmse(&aligned, &control_times(&gt))?),
        ("phe".to_string(), phe(&camera, &state, &pairs, &egm)?),
        (
            "frac_below_half_c".to_string(),
            fraction_within(&camera, &state, &pairs, &egm, egm.c_pos / 2.0)?,
        ),
    ];
    print!("{}", format_summary(&metrics));

    let hist = residual_histogram(&camera, &state, &pairs, &egm, 21)?;
    let peak = *hist.counts.iter().max().unwrap() as f64;
    println!("\nresidual histogram over [-3C, 3C], C = {}:", egm.c_pos);
    for (center, count) in hist.centers.iter().zip(&hist.counts) {
        let bar = "#".repeat((40.0 * *count as f64 / peak).round() as usize);
        println!("{center:>7.3}  {count:>6}  {bar}");
    }
    Ok(())
}
