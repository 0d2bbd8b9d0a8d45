//! Rotation algebra on SO(3).
//!
//! Provides the hat/vee isomorphism, exponential and logarithm maps, the left
//! Jacobian and its inverse, and the interpolation coupling matrix
//! `A(u, phi) = u * J(u*phi) * J^-1(phi)` that maps perturbations of segment
//! endpoint rotations to perturbations of a geodesically interpolated
//! rotation.
//!
//! Rotations are stored as orthonormal 3x3 matrices; quaternions appear only
//! at file-format boundaries. All perturbations are *left* perturbations,
//! `R <- exp(hat(dphi)) * R`.
//!
//! Numerical branches:
//!
//! | quantity                  | closed form fails      | replacement            |
//! |---------------------------|------------------------|------------------------|
//! | `exp`, `J`, `J^-1` ratios | theta -> 0             | 4th-order Taylor       |
//! | `log` scale theta/sin     | theta -> 0             | 4th-order Taylor       |
//! | `log` axis                | theta -> pi (sin -> 0) | diagonal of (R + I)/2  |

use nalgebra::{Matrix3, Vector3};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

/// Below this angle (radians) trigonometric coefficient ratios switch to
/// their 4th-order Taylor expansions: at 1e-4 the truncated term is ~1e-18,
/// below the f64 rounding floor, while the closed forms start losing digits
/// to cancellation.
pub const SMALL_ANGLE: f64 = 1e-4;

/// Rotations within this angle of pi are on the logarithm's branch cut: the
/// antisymmetric part no longer determines the axis and it is recovered from
/// the dominant diagonal of (R + I)/2 instead.
pub const NEAR_PI: f64 = 1e-7;

/// Skew-symmetric matrix such that `hat(a) * b = a x b`.
#[inline]
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(
        0.0, -v.z, v.y, //
        v.z, 0.0, -v.x, //
        -v.y, v.x, 0.0,
    )
}

/// Inverse of [`hat`] on skew-symmetric matrices; for a general matrix it
/// reads the antisymmetric part's off-diagonal entries.
#[inline]
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// A rotation matrix. Invariant: orthonormal with determinant +1 to within
/// 1e-12, maintained by projecting after constructions and updates that can
/// accumulate drift.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rotation(Mat3);

impl Rotation {
    pub fn identity() -> Self {
        Rotation(Mat3::identity())
    }

    /// Wraps a matrix that is already orthonormal (e.g. a product of
    /// orthonormal factors). Debug builds assert the invariant.
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        debug_assert!(orthonormality_error(&m) < 1e-9, "matrix is not a rotation");
        Rotation(m)
    }

    /// Projects an arbitrary matrix with positive determinant onto SO(3)
    /// (polar factor, the nearest rotation in the Frobenius norm).
    pub fn project(m: &Mat3) -> Self {
        Rotation(polar_factor(m))
    }

    #[inline]
    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    #[inline]
    pub fn inverse(&self) -> Self {
        Rotation(self.0.transpose())
    }

    /// Plain product `self * rhs` (no re-orthonormalization).
    #[inline]
    pub fn compose(&self, rhs: &Rotation) -> Self {
        Rotation(self.0 * rhs.0)
    }

    #[inline]
    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    #[inline]
    pub fn rotate_inv(&self, v: &Vec3) -> Vec3 {
        self.0.tr_mul(v)
    }

    /// Left-perturbs by an axis-angle increment and re-orthonormalizes:
    /// `exp(hat(dphi)) * R`, then polar projection. This is the update
    /// applied to control poses after every accepted optimizer step.
    pub fn perturb_left(&self, dphi: &Vec3) -> Self {
        Rotation(polar_factor(&(exp_so3(dphi).0 * self.0)))
    }

    /// Geodesic distance to `other` in radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        log_so3(&Rotation(self.0.tr_mul(&other.0))).norm()
    }

    /// Hamilton unit quaternion (w last by convention of the trajectory file
    /// format: qx qy qz qw).
    pub fn to_quaternion(&self) -> [f64; 4] {
        let q = nalgebra::UnitQuaternion::from_rotation_matrix(
            &nalgebra::Rotation3::from_matrix_unchecked(self.0),
        );
        [q.i, q.j, q.k, q.w]
    }

    /// Builds from a Hamilton quaternion `[qx, qy, qz, qw]`; the caller is
    /// responsible for norm validation (file loaders reject deviations
    /// beyond 1e-6, then the quaternion is renormalized here).
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let uq = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
            q[3], q[0], q[1], q[2],
        ));
        Rotation(*uq.to_rotation_matrix().matrix())
    }
}

/// Max-abs deviation of `m^T m` from the identity.
pub fn orthonormality_error(m: &Mat3) -> f64 {
    let d = m.tr_mul(m) - Mat3::identity();
    d.iter().fold(0.0f64, |a, &v| a.max(v.abs()))
}

/// Orthogonal polar factor by Newton iteration `X <- (X + X^-T) / 2`;
/// converges quadratically for matrices with positive determinant, in one or
/// two steps from the near-orthonormal inputs produced by compose/update
/// drift.
fn polar_factor(m: &Mat3) -> Mat3 {
    let mut x = *m;
    for _ in 0..32 {
        let xit = x
            .try_inverse()
            .expect("polar projection of a singular matrix")
            .transpose();
        let next = (x + xit) * 0.5;
        let delta = (next - x).abs().max();
        x = next;
        if delta < 1e-14 {
            break;
        }
    }
    x
}

/// Exponential map (Rodrigues), `exp(hat(phi))`.
pub fn exp_so3(phi: &Vec3) -> Rotation {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    // sin(t)/t and (1-cos(t))/t^2, with Taylor branches near zero.
    let (a, b) = if theta < SMALL_ANGLE {
        (
            1.0 - theta2 / 6.0 + theta2 * theta2 / 120.0,
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
        )
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    let k = hat(phi);
    Rotation(Mat3::identity() + k * a + k * k * b)
}

/// Logarithm map: the axis-angle vector `phi` with `||phi|| <= pi` such that
/// `exp(phi) = r`. See [`log_so3_flagged`] for the branch-cut indicator.
pub fn log_so3(r: &Rotation) -> Vec3 {
    log_so3_flagged(r).0
}

/// Logarithm map together with a flag marking inputs within [`NEAR_PI`] of
/// the branch cut at angle pi, where the returned axis sign is a convention.
pub fn log_so3_flagged(r: &Rotation) -> (Vec3, bool) {
    let m = r.matrix();
    // w = vee((R - R^T)/2) = sin(theta) * axis: accurate absolutely for all
    // theta, so atan2 recovers the angle accurately at both ends of [0, pi].
    let w = vee(m) - vee(&m.transpose());
    let w = w * 0.5;
    let sin_theta = w.norm();
    let cos_theta = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = sin_theta.atan2(cos_theta);

    if theta < SMALL_ANGLE {
        // theta/sin(theta) = 1 + t^2/6 + 7 t^4/360 + O(t^6)
        let t2 = theta * theta;
        return (w * (1.0 + t2 / 6.0 + 7.0 * t2 * t2 / 360.0), false);
    }
    let near_pi = std::f64::consts::PI - theta < NEAR_PI;
    if near_pi {
        // At the cut, (R + I)/2 = axis * axis^T: take the column with the
        // largest diagonal and normalize. The antisymmetric part fixes the
        // sign while it is nonzero; at exactly pi either sign is valid.
        let s = (m + Mat3::identity()) * 0.5;
        let j = (0..3)
            .max_by(|&a, &b| s[(a, a)].partial_cmp(&s[(b, b)]).unwrap())
            .unwrap();
        let mut axis = s.column(j) / s[(j, j)].sqrt();
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
        return (axis * theta, true);
    }
    (w * (theta / sin_theta), false)
}

/// Left Jacobian of SO(3):
/// `J(phi) = I + (1-cos t)/t^2 hat(phi) + (t - sin t)/t^3 hat(phi)^2`.
///
/// Defined by `exp(phi + dphi) = exp(hat(J(phi) dphi)) * exp(phi) + O(|dphi|^2)`.
pub fn left_jacobian(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let (b, c) = if theta < SMALL_ANGLE {
        (
            0.5 - theta2 / 24.0 + theta2 * theta2 / 720.0,
            1.0 / 6.0 - theta2 / 120.0 + theta2 * theta2 / 5040.0,
        )
    } else {
        (
            (1.0 - theta.cos()) / theta2,
            (theta - theta.sin()) / (theta2 * theta),
        )
    };
    let k = hat(phi);
    Mat3::identity() + k * b + k * k * c
}

/// Inverse left Jacobian:
/// `J^-1(phi) = I - hat(phi)/2 + (1/t^2 - (1+cos t)/(2 t sin t)) hat(phi)^2`.
///
/// Requires `||phi|| < pi` (J is singular at pi).
pub fn left_jacobian_inv(phi: &Vec3) -> Mat3 {
    let theta2 = phi.norm_squared();
    let theta = theta2.sqrt();
    let c = if theta < SMALL_ANGLE {
        // 1/12 + t^2/720 + t^4/30240 + O(t^6)
        1.0 / 12.0 + theta2 / 720.0 + theta2 * theta2 / 30240.0
    } else {
        1.0 / theta2 - (1.0 + theta.cos()) / (2.0 * theta * theta.sin())
    };
    let k = hat(phi);
    Mat3::identity() - k * 0.5 + k * k * c
}

/// Interpolation coupling matrix `A(u, phi) = u * J(u*phi) * J^-1(phi)`.
///
/// For the geodesic `R(u) = exp(u * log(R2 * R1^-1)) * R1` with
/// `phi = log(R2 * R1^-1)`, left-perturbing the endpoints by `dphi1`, `dphi2`
/// perturbs `R(u)` by `(I - A) dphi1 + A dphi2` to first order. Endpoint
/// identities: `A(0, phi) = 0`, `A(1, phi) = I`, and `A(u, 0) = u * I`.
pub fn interp_jacobian(u: f64, phi: &Vec3) -> Mat3 {
    left_jacobian(&(phi * u)) * left_jacobian_inv(phi) * u
}
