//! Pinhole camera and equirectangular panorama geometry.
//!
//! The warp chain for an event at pixel `x` and time `t` is
//!
//! ```text
//! x --K^-1--> bearing (not normalized) --R(t)--> world ray z --pi--> map point p
//! ```
//!
//! Map convention: `p_x = (atan2(z_x, z_z) + pi) * W / (2 pi)` wrapped into
//! `[0, W)`, and `p_y = acos(-z_y / |z|) * H / pi` in `[0, H]`, so the
//! camera's forward axis `+z` lands on the map-row center and `+y` (image
//! down) on the bottom pole. Pixel origin is the top-left corner with
//! half-pixel centers: the cell `[i, i+1) x [j, j+1)` is pixel `(i, j)`.

use crate::error::{Error, Result};
use crate::so3::Vec3;
use crate::trajectory::RotationTrajectory;
use nalgebra::Matrix2x3;

/// Bearings within this angle (radians) of a pole have no usable projection
/// Jacobian; residual pairs warping there are skipped and counted.
pub const POLE_MARGIN: f64 = 1e-6;

/// Intrinsics of the (undistorted) event camera.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CameraModel {
    pub width: u32,
    pub height: u32,
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraModel {
    pub fn new(width: u32, height: u32, fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config("camera resolution must be nonzero".into()));
        }
        for (name, v) in [("fx", fx), ("fy", fy)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("camera {name} = {v} must be positive")));
            }
        }
        if !cx.is_finite() || !cy.is_finite() {
            return Err(Error::Config("camera principal point must be finite".into()));
        }
        Ok(CameraModel { width, height, fx, fy, cx, cy })
    }

    /// Back-projects a pixel to the camera-frame bearing `K^-1 [x, y, 1]^T`.
    /// The bearing is deliberately not normalized; the projection and its
    /// Jacobian are scale-invariant.
    #[inline]
    pub fn back_project(&self, x: f64, y: f64) -> Vec3 {
        Vec3::new((x - self.cx) / self.fx, (y - self.cy) / self.fy, 1.0)
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as u32) < self.width && (y as u32) < self.height
    }
}

/// Continuous position on the panorama, `x in [0, W)`, `y in [0, H]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MapPoint {
    pub x: f64,
    pub y: f64,
}

impl MapPoint {
    /// Nearest-neighbor pixel under the half-pixel-center convention: the
    /// cell containing the point, with the bottom-pole boundary `y = H`
    /// clamped into the last row.
    #[inline]
    pub fn nearest(&self, width: usize, height: usize) -> (usize, usize) {
        let ix = (self.x.floor() as isize).rem_euclid(width as isize) as usize;
        let iy = (self.y.floor() as usize).min(height - 1);
        (ix, iy)
    }
}

/// Equirectangular panorama raster: azimuth spans the full circle over
/// `width` columns (periodic), elevation spans pole to pole over `height`
/// rows (clamped).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PanoramaGeometry {
    pub width: usize,
    pub height: usize,
}

impl PanoramaGeometry {
    /// The full sphere at square pixels requires `width = 2 * height`.
    pub fn new(width: usize, height: usize) -> Result<Self> {
        if height < 2 || width != 2 * height {
            return Err(Error::Config(format!(
                "panorama size {width}x{height} must satisfy width = 2 * height with height >= 2"
            )));
        }
        Ok(PanoramaGeometry { width, height })
    }

    #[inline]
    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    /// Angle between the bearing and the nearest pole axis (+-y).
    #[inline]
    pub fn pole_angle(z: &Vec3) -> f64 {
        z.x.hypot(z.z).atan2(z.y.abs())
    }

    /// Projects a nonzero bearing onto the map.
    #[inline]
    pub fn project(&self, z: &Vec3) -> MapPoint {
        let w = self.width as f64;
        let az = z.x.atan2(z.z);
        let x = ((az + std::f64::consts::PI) * w / (2.0 * std::f64::consts::PI)).rem_euclid(w);
        let cos_el = (-z.y / z.norm()).clamp(-1.0, 1.0);
        let y = cos_el.acos() * self.height as f64 / std::f64::consts::PI;
        MapPoint { x, y }
    }

    /// Jacobian of [`Self::project`] with respect to the bearing, in map
    /// pixels per unit bearing change. `None` within [`POLE_MARGIN`] of a
    /// pole, where the azimuth derivative diverges.
    pub fn jacobian(&self, z: &Vec3) -> Option<Matrix2x3<f64>> {
        if Self::pole_angle(z) < POLE_MARGIN {
            return None;
        }
        let r2 = z.x * z.x + z.z * z.z;
        let rho2 = z.norm_squared();
        let r = r2.sqrt();
        let kx = self.width as f64 / (2.0 * std::f64::consts::PI);
        let ky = self.height as f64 / std::f64::consts::PI;
        Some(Matrix2x3::new(
            kx * z.z / r2,
            0.0,
            -kx * z.x / r2,
            -ky * z.y * z.x / (r * rho2),
            ky * r / rho2,
            -ky * z.y * z.z / (r * rho2),
        ))
    }
}

/// Full warp of one camera pixel at one time under a trajectory.
pub fn warp(
    camera: &CameraModel,
    geometry: &PanoramaGeometry,
    trajectory: &RotationTrajectory,
    x: f64,
    y: f64,
    t: f64,
) -> Result<MapPoint> {
    let pose = trajectory.sample(t)?;
    let z = pose.rotation.rotate(&camera.back_project(x, y));
    Ok(geometry.project(&z))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::exp_so3;
    use crate::trajectory::RotationTrajectory;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn geo() -> PanoramaGeometry {
        PanoramaGeometry::new(1024, 512).unwrap()
    }

    #[test]
    fn back_project_literals() {
        let cam = CameraModel::new(128, 128, 200.0, 200.0, 64.0, 64.0).unwrap();
        assert_eq!(cam.back_project(64.0, 64.0), Vec3::new(0.0, 0.0, 1.0));
        assert_eq!(cam.back_project(0.0, 0.0), Vec3::new(-0.32, -0.32, 1.0));
    }

    #[test]
    fn project_literals() {
        let g = geo();
        let center = g.project(&Vec3::new(0.0, 0.0, 1.0));
        assert_eq!((center.x, center.y), (512.0, 256.0));
        // +y is the bottom pole, -y the top pole.
        assert_eq!(g.project(&Vec3::new(0.0, -1.0, 0.0)).y, 0.0);
        assert_eq!(g.project(&Vec3::new(0.0, 1.0, 0.0)).y, 512.0);
        // +x is a quarter turn to the right of forward.
        let px = g.project(&Vec3::new(1.0, 0.0, 0.0)).x;
        assert!((px - 768.0).abs() < 1e-9);
        // Backward bearings sit on the seam.
        assert_eq!(g.project(&Vec3::new(0.0, 0.0, -1.0)).x, 0.0);
    }

    #[test]
    fn project_is_scale_invariant() {
        let g = geo();
        let mut rng = ChaCha12Rng::seed_from_u64(31);
        for _ in 0..100 {
            let z = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
                rng.random_range(-1.0..1.0),
            );
            if z.norm() < 1e-3 {
                continue;
            }
            let p = g.project(&z);
            let q = g.project(&(z * rng.random_range(0.1..50.0)));
            assert!((p.x - q.x).abs() < 1e-9 && (p.y - q.y).abs() < 1e-9);
        }
    }

    #[test]
    fn projected_points_stay_in_bounds() {
        let g = geo();
        let mut rng = ChaCha12Rng::seed_from_u64(32);
        for _ in 0..2000 {
            let z = Vec3::new(
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            );
            if z.norm() < 1e-6 {
                continue;
            }
            let p = g.project(&z);
            assert!(p.x >= 0.0 && p.x < g.width as f64);
            assert!(p.y >= 0.0 && p.y <= g.height as f64);
            let (ix, iy) = p.nearest(g.width, g.height);
            assert!(ix < g.width && iy < g.height);
        }
    }

    #[test]
    fn jacobian_matches_central_differences() {
        let g = geo();
        let mut rng = ChaCha12Rng::seed_from_u64(33);
        let h = 1e-6;
        let w = g.width as f64;
        let mut checked = 0;
        while checked < 200 {
            let z = Vec3::new(
                rng.random_range(-1.0..1.0),
                rng.random_range(-0.9..0.9),
                rng.random_range(-1.0..1.0),
            );
            if z.norm() < 0.3 || PanoramaGeometry::pole_angle(&z) < 0.05 {
                continue;
            }
            let jac = g.jacobian(&z).unwrap();
            for k in 0..3 {
                let mut dz = Vec3::zeros();
                dz[k] = h;
                let plus = g.project(&(z + dz));
                let minus = g.project(&(z - dz));
                // Unwrap the azimuth difference across the seam.
                let mut dx = plus.x - minus.x;
                if dx > w / 2.0 {
                    dx -= w;
                } else if dx < -w / 2.0 {
                    dx += w;
                }
                let fd_x = dx / (2.0 * h);
                let fd_y = (plus.y - minus.y) / (2.0 * h);
                let scale = jac[(0, k)].abs().max(jac[(1, k)].abs()).max(1.0);
                assert!(
                    (jac[(0, k)] - fd_x).abs() < 1e-4 * scale,
                    "d px / d z{k}: analytic {} vs fd {fd_x}",
                    jac[(0, k)]
                );
                assert!(
                    (jac[(1, k)] - fd_y).abs() < 1e-4 * scale,
                    "d py / d z{k}: analytic {} vs fd {fd_y}",
                    jac[(1, k)]
                );
            }
            checked += 1;
        }
    }

    #[test]
    fn jacobian_literal_at_forward() {
        let g = geo();
        let jac = g.jacobian(&Vec3::new(0.0, 0.0, 1.0)).unwrap();
        let kx = g.width as f64 / (2.0 * std::f64::consts::PI);
        assert!((jac[(0, 0)] - kx).abs() < 1e-12);
        assert_eq!(jac[(0, 1)], 0.0);
    }

    #[test]
    fn jacobian_is_none_near_poles() {
        let g = geo();
        assert!(g.jacobian(&Vec3::new(1e-7, 1.0, 1e-7)).is_none());
        assert!(g.jacobian(&Vec3::new(0.0, -1.0, 0.0)).is_none());
        assert!(g.jacobian(&Vec3::new(2e-6, 1.0, 0.0)).is_some());
    }

    #[test]
    fn warp_at_identity_hits_map_center() {
        let cam = CameraModel::new(64, 64, 100.0, 100.0, 31.5, 31.5).unwrap();
        let g = geo();
        let traj =
            RotationTrajectory::new(0.0, 10.0, vec![crate::so3::Rotation::identity(); 3]).unwrap();
        let p = warp(&cam, &g, &traj, 31.5, 31.5, 0.15).unwrap();
        assert!((p.x - 512.0).abs() < 1e-12 && (p.y - 256.0).abs() < 1e-12);
    }

    #[test]
    fn warp_follows_a_yaw_rotation() {
        // Yawing the camera by az about +y moves the forward bearing to
        // azimuth az, i.e. right on the map by az * W / (2 pi).
        let cam = CameraModel::new(64, 64, 100.0, 100.0, 31.5, 31.5).unwrap();
        let g = geo();
        let az = 0.3;
        let r = exp_so3(&Vec3::new(0.0, az, 0.0));
        let z = r.rotate(&Vec3::new(0.0, 0.0, 1.0));
        let p = g.project(&z);
        assert!((p.x - (512.0 + az * 1024.0 / (2.0 * std::f64::consts::PI))).abs() < 1e-9);
        assert!((p.y - 256.0).abs() < 1e-9);
        let _ = cam;
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(CameraModel::new(0, 64, 100.0, 100.0, 0.0, 0.0).is_err());
        assert!(CameraModel::new(64, 64, -1.0, 100.0, 0.0, 0.0).is_err());
        assert!(PanoramaGeometry::new(1000, 512).is_err());
        assert!(PanoramaGeometry::new(2, 1).is_err());
    }
}
