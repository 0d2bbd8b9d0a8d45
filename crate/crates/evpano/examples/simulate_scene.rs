//! Synthesizes an event stream from a procedural panorama and a smooth
//! rotation, then prints stream statistics and writes the artifacts.
//!
//!     cargo run --example simulate_scene

use evpano::camera::{CameraModel, PanoramaGeometry};
use evpano::event::{pair_events, save_events, EGMParams};
use evpano::io::{save_map_pgm16, save_map_raw, save_trajectory};
use evpano::simulate::{
    scale_to_max_gradient, scene_bandlimited, simulate_events, sinusoid_trajectory,
};

fn main() -> evpano::Result<()> {
    let (width, height) = (256, 128);
    let geom = PanoramaGeometry::new(width, height)?;
    let camera = CameraModel::new(64, 64, 60.0, 60.0, 31.5, 31.5)?;
    let egm = EGMParams::symmetric(0.2)?;

    // Band-limited log-intensity scene; the gradient cap sets how far the
    // camera must turn between threshold crossings (here C/15 per pixel).
    let mut scene = scene_bandlimited(width, height, 29, 3);
    scale_to_max_gradient(width, height, &mut scene, egm.c_pos / 15.0);

    // Two seconds of smooth motion with persistent excitation on all axes.
    let traj = sinusoid_trajectory(
        0.0,
        20.0,
        41,
        [15f64.to_radians(), 40f64.to_radians(), 15f64.to_radians()],
        [3.0, 4.0, 3.0],
        [0.0, 0.0, std::f64::consts::FRAC_PI_2],
    );

    let events = simulate_events(&camera, geom, &scene, &traj, egm, 1e-4)?;
    let span = traj.t_end() - traj.t_start();
    let paired = pair_events(&events, (traj.t_start(), traj.t_end()))?;
    let positives = events.iter().filter(|e| e.pol > 0).count();

    println!("scene        {width}x{height}, max gradient {:.4} / px", egm.c_pos / 15.0);
    println!("trajectory   {} control poses over {span:.1} s", traj.len());
    println!("events       {} ({:.0} / s)", events.len(), events.len() as f64 / span);
    println!("polarity     {positives} on, {} off", events.len() - positives);
    println!("pairs        {} (first event per pixel has no predecessor)", paired.pairs.len());

    let dir = std::env::temp_dir().join("evpano_simulate_scene");
    std::fs::create_dir_all(&dir)?;
    save_events(&events, &dir.join("events.txt"))?;
    save_trajectory(&traj, &dir.join("gt_trajectory.txt"))?;
    save_map_raw(width, height, &scene, &dir.join("gt_map.f32"))?;
    save_map_pgm16(width, height, &scene, None, &dir.join("gt_map.pgm"))?;
    println!("artifacts    {}", dir.display());
    Ok(())
}
