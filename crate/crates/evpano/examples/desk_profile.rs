//! Temporary profiling harness for the desk-scale experiment. Not part of
//! the example set; measures stage costs so the acceptance fixture can be
//! sized honestly.

use evpano::camera::{CameraModel, PanoramaGeometry};
use evpano::event::{pair_events, EGMParams};
use evpano::map::{build_valid_mask, PanoramaMap};
use evpano::metrics::{align_at, are_rmse, control_times, fraction_within, phe};
use evpano::simulate::{
    perturb_trajectory, scale_to_max_gradient, scene_bandlimited, simulate_events,
    sinusoid_trajectory,
};
use evpano::solver::{lm_run, map_only_run, LinearSolver, OptState, SolverConfig};
use std::time::Instant;

fn main() -> evpano::Result<()> {
    let w = 512;
    let h = 256;
    let c = 0.2;
    let freq = 20.0;
    let secs = 5.0;

    let geom = PanoramaGeometry::new(w, h)?;
    let camera = CameraModel::new(64, 64, 60.0, 60.0, 31.5, 31.5)?;
    let egm = EGMParams::symmetric(c)?;
    let mut scene = scene_bandlimited(w, h, 29, 3);
    scale_to_max_gradient(w, h, &mut scene, c / 15.0);
    let n_poses = (secs * freq) as usize + 1;
    let gt = sinusoid_trajectory(
        0.0,
        freq,
        n_poses,
        [15f64.to_radians(), 40f64.to_radians(), 15f64.to_radians()],
        [3.0, 4.0, 3.0],
        [0.0, 0.0, std::f64::consts::FRAC_PI_2],
    );

    let t = Instant::now();
    let events = simulate_events(&camera, geom, &scene, &gt, egm, 1e-4)?;
    println!("simulate      {:8.2} s   {} events", t.elapsed().as_secs_f64(), events.len());

    let t = Instant::now();
    let pairs = pair_events(&events, (gt.t_start(), gt.t_end()))?.pairs;
    println!("pairing       {:8.2} s   {} pairs", t.elapsed().as_secs_f64(), pairs.len());

    let noisy = perturb_trajectory(&gt, 1f64.to_radians(), 7, true);
    let config = SolverConfig {
        linear_solver: LinearSolver::ConjugateGradient,
        deterministic: true,
        ..SolverConfig::default()
    };

    let t = Instant::now();
    let mask = build_valid_mask(&pairs, &camera, geom, &noisy)?;
    let valid = mask.iter().filter(|&&m| m).count();
    let mut state = OptState::new(noisy, PanoramaMap::zeros(geom, mask));
    println!("mask          {:8.2} s   {} valid px", t.elapsed().as_secs_f64(), valid);

    let t = Instant::now();
    map_only_run(&camera, &mut state, &pairs, &egm, &config)?;
    println!("bootstrap     {:8.2} s", t.elapsed().as_secs_f64());

    let times = control_times(&gt);
    let init_phe = phe(&camera, &state, &pairs, &egm)?;
    let init_frac = fraction_within(&camera, &state, &pairs, &egm, c / 2.0)?;
    let init_are = are_rmse(&align_at(&state.trajectory, &gt, 0.0)?, &times)?;
    println!("init          phe {init_phe:.6e}  frac {init_frac:.4}  are {init_are:.4} deg");

    let t = Instant::now();
    let records = lm_run(&camera, &mut state, &pairs, &egm, &config)?;
    let solve_secs = t.elapsed().as_secs_f64();
    for r in &records {
        println!(
            "  it {:2} lambda {:9.2e} phe {:.6e} robust {:.6e} {}",
            r.iter,
            r.lambda,
            r.phe,
            r.robust_loss,
            if r.accepted { "acc" } else { "rej" },
        );
    }
    println!("solve         {:8.2} s   {} attempts", solve_secs, records.len());

    let final_phe = phe(&camera, &state, &pairs, &egm)?;
    let final_frac = fraction_within(&camera, &state, &pairs, &egm, c / 2.0)?;
    let final_are = are_rmse(&align_at(&state.trajectory, &gt, 0.0)?, &times)?;
    println!("final         phe {final_phe:.6e}  frac {final_frac:.4}  are {final_are:.4} deg");
    println!(
        "ratios        phe {:.4}  are {:.4}  frac x{:.2}",
        final_phe / init_phe,
        final_are / init_are,
        final_frac / init_frac.max(1e-300),
    );
    Ok(())
}
