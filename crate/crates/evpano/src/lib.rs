//! Joint refinement of a purely rotating event camera's orientation
//! trajectory and a panoramic log-intensity map.
//!
//! Each event pairs with its predecessor at the same pixel; warping both onto
//! an equirectangular map under a piecewise-geodesic rotation trajectory
//! turns the camera's contrast threshold into a per-event photometric
//! residual. A sparsity-aware Levenberg-Marquardt solver refines all control
//! poses and all observed map pixels jointly. The crate also ships a
//! pure-rotation event simulator, map densification, and evaluation metrics,
//! so every claim is reproducible from procedural scenes.
//!
//! Start from the runnable examples:
//!
//! ```text
//! examples/
//!   simulate_scene.rs    synthesize events from a procedural panorama
//!   joint_refine.rs      full trajectory + map refinement on synthetic data
//!   map_only.rs          map recovery with frozen rotations
//!   densify_map.rs       gradient-domain fill-in of a semi-dense map
//!   evaluate_metrics.rs  trajectory error and photometric metrics
//! ```
//!
//! or from the `evpano` binary, which exposes the same capabilities as
//! subcommands (`simulate`, `solve`, `map-only`, `densify`, `eval`).

pub mod camera;
pub mod cli;
pub mod config;
pub mod densify;
pub mod error;
pub mod event;
pub mod io;
pub mod map;
pub mod metrics;
pub mod simulate;
pub mod so3;
pub mod solver;
pub mod sparse;
pub mod trajectory;

pub use error::{Error, Result};
