//! Gradient-domain densification of the refined semi-dense panorama:
//! measure the map's gradient with 3-tap central-difference kernels where
//! both taps are valid, take the guidance field as zero across hole
//! interiors, and reconstruct a dense panorama whose gradient matches the
//! field in the least-squares (Poisson / normal-equations) sense.

use crate::error::{Error, Result};
use crate::map::PanoramaMap;
use crate::sparse::{solve_cg, CsrMatrix};

/// Relative CG residual for the Poisson solve.
pub const DENSIFY_CG_TOL: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct DensifyOutcome {
    /// Dense log-intensity panorama, row-major.
    pub values: Vec<f64>,
    pub cg_iterations: usize,
    pub rel_residual: f64,
}

/// Densifies a semi-dense map. The azimuthal gradient wraps across the
/// seam; vertical kernels stop one row short of each pole (natural Neumann
/// boundary).
///
/// Gradient equations exist where the kernel's two taps are both valid
/// (measured value) or both invalid (zero: flat fill across holes); mixed
/// positions carry no information about the map's gradient and contribute
/// no equation. Zero-target rows across a mask boundary would drag valid
/// pixels toward their unobserved neighbors, so equations never couple
/// valid with invalid pixels and the observed structure is reproduced
/// exactly. The additive gauge — one constant per connected component of
/// the equation graph — is fixed by matching each component's mean over
/// valid pixels to the semi-dense input's (components without valid pixels
/// take the global shift). On an all-valid map the components are the four
/// (x parity, y parity) classes of the stride-2 kernels.
pub fn densify(map: &PanoramaMap) -> Result<DensifyOutcome> {
    let cap = 10 * map.width() * map.height();
    densify_with_cap(map, cap)
}

pub(crate) fn densify_with_cap(map: &PanoramaMap, cap: usize) -> Result<DensifyOutcome> {
    if map.valid_count() == 0 {
        return Err(Error::Solver("densify requires at least one valid pixel".into()));
    }
    let (w, h) = (map.width(), map.height());
    let n = w * h;
    let flat = |x: usize, y: usize| y * w + x;

    // Quadratic form of the stacked gradient rows: each row with taps
    // (lo, hi) and coefficients (-1/2, +1/2) contributes a 2x2 block.
    let mut triplets = Vec::with_capacity(8 * n);
    let mut rhs = vec![0.0; n];
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], i: usize) -> usize {
        let mut r = i;
        while parent[r] != r {
            parent[r] = parent[parent[r]];
            r = parent[r];
        }
        r
    }
    let mut add_row = |lo: usize, hi: usize, target: f64, parent: &mut [usize]| {
        triplets.push((lo, lo, 0.25));
        triplets.push((hi, hi, 0.25));
        triplets.push((lo, hi, -0.25));
        triplets.push((hi, lo, -0.25));
        if target != 0.0 {
            rhs[hi] += 0.5 * target;
            rhs[lo] -= 0.5 * target;
        }
        let (a, b) = (find(parent, lo), find(parent, hi));
        parent[a] = b;
    };

    let mut kernel_positions = Vec::with_capacity(2 * n);
    for y in 0..h {
        for x in 0..w {
            kernel_positions.push((flat((x + w - 1) % w, y), flat((x + 1) % w, y)));
        }
    }
    for y in 1..h.saturating_sub(1) {
        for x in 0..w {
            kernel_positions.push((flat(x, y - 1), flat(x, y + 1)));
        }
    }
    for (lo, hi) in kernel_positions {
        match (map.mask()[lo], map.mask()[hi]) {
            (true, true) => {
                add_row(lo, hi, 0.5 * (map.values()[hi] - map.values()[lo]), &mut parent)
            }
            (false, false) => add_row(lo, hi, 0.0, &mut parent),
            _ => {} // mixed support: the gradient here is unobservable
        }
    }

    let a = CsrMatrix::from_triplets(n, &triplets);
    let out = solve_cg(&a, &rhs, DENSIFY_CG_TOL, cap);
    if !out.converged {
        return Err(Error::Solver(format!(
            "densification CG stalled at relative residual {:.3e} after {} iterations",
            out.rel_residual, out.iterations
        )));
    }

    let mut values = out.x;
    // Per-component gauge repair; see the doc comment.
    use std::collections::HashMap;
    let mut stats: HashMap<usize, (f64, f64, usize)> = HashMap::new();
    let mut global = (0.0f64, 0.0f64, 0usize);
    for i in 0..n {
        if map.mask()[i] {
            let root = find(&mut parent, i);
            let e = stats.entry(root).or_default();
            e.0 += map.values()[i];
            e.1 += values[i];
            e.2 += 1;
            global.0 += map.values()[i];
            global.1 += values[i];
            global.2 += 1;
        }
    }
    let global_shift = (global.0 - global.1) / global.2 as f64;
    for i in 0..n {
        let root = find(&mut parent, i);
        let shift = match stats.get(&root) {
            Some(&(sin, sout, c)) => (sin - sout) / c as f64,
            None => global_shift,
        };
        values[i] += shift;
    }
    Ok(DensifyOutcome { values, cg_iterations: out.iterations, rel_residual: out.rel_residual })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::PanoramaGeometry;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::f64::consts::TAU;

    fn geom(w: usize, h: usize) -> PanoramaGeometry {
        PanoramaGeometry::new(w, h).unwrap()
    }

    /// Smooth seam-periodic test pattern whose four parity-class means all
    /// vanish (pure azimuth harmonics), so the reconstruction gauge is a
    /// single global constant.
    fn smooth_values(w: usize, h: usize) -> Vec<f64> {
        let mut v = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let az = (x as f64 + 0.5) / w as f64 * TAU;
                let el = (y as f64 + 0.5) / h as f64;
                v[y * w + x] = 0.6 * az.sin() * (1.5 * el).cos()
                    + 0.25 * (2.0 * az + 0.4).cos() * (2.2 * el + 0.3).sin();
            }
        }
        v
    }

    fn rms_up_to_constant(a: &[f64], b: &[f64], select: impl Fn(usize) -> bool) -> f64 {
        let idx: Vec<usize> = (0..a.len()).filter(|&i| select(i)).collect();
        let shift = idx.iter().map(|&i| a[i] - b[i]).sum::<f64>() / idx.len() as f64;
        (idx.iter().map(|&i| (a[i] - b[i] - shift).powi(2)).sum::<f64>() / idx.len() as f64)
            .sqrt()
    }

    #[test]
    fn constant_map_densifies_to_the_same_constant() {
        let g = geom(32, 16);
        let mut rng = ChaCha12Rng::seed_from_u64(81);
        let mask: Vec<bool> = (0..32 * 16).map(|_| rng.random_bool(0.4)).collect();
        let values = mask.iter().map(|&m| if m { 1.7 } else { 0.0 }).collect();
        let map = PanoramaMap::from_values(g, values, mask);
        let out = densify(&map).unwrap();
        for v in &out.values {
            assert!((v - 1.7).abs() < 1e-7);
        }
    }

    #[test]
    fn vertical_ramp_is_reproduced_exactly() {
        // A ramp in elevation has a globally consistent gradient field (no
        // seam crossing), so reconstruction is exact up to the gauge.
        let (w, h) = (32, 16);
        let g = geom(w, h);
        let values: Vec<f64> = (0..w * h).map(|i| 0.31 * (i / w) as f64).collect();
        let map = PanoramaMap::from_values(g, values.clone(), vec![true; w * h]);
        let out = densify(&map).unwrap();
        assert!(rms_up_to_constant(&out.values, &values, |_| true) < 1e-7);
    }

    #[test]
    fn all_valid_smooth_map_round_trips() {
        let (w, h) = (64, 32);
        let values = smooth_values(w, h);
        let map = PanoramaMap::from_values(geom(w, h), values.clone(), vec![true; w * h]);
        let out = densify(&map).unwrap();
        assert!(rms_up_to_constant(&out.values, &values, |_| true) < 1e-6);
    }

    #[test]
    fn checkerboard_mask_recovers_valid_pixels() {
        let (w, h) = (64, 32);
        let values = smooth_values(w, h);
        let mask: Vec<bool> = (0..w * h).map(|i| (i % w + i / w) % 2 == 0).collect();
        let map = PanoramaMap::from_values(geom(w, h), values.clone(), mask.clone());
        let out = densify(&map).unwrap();

        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rms = rms_up_to_constant(&out.values, &values, |i| mask[i]);
        assert!(rms < 0.05 * (hi - lo), "rms {rms} vs range {}", hi - lo);
        for v in &out.values {
            assert!(v.is_finite());
        }
    }

    #[test]
    fn densified_output_correlates_with_input_on_valid_pixels() {
        let (w, h) = (64, 32);
        let mut rng = ChaCha12Rng::seed_from_u64(82);
        let values = smooth_values(w, h);
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.6)).collect();
        let map = PanoramaMap::from_values(geom(w, h), values.clone(), mask.clone());
        let out = densify(&map).unwrap();

        let idx: Vec<usize> = (0..w * h).filter(|&i| mask[i]).collect();
        let mean = |v: &[f64]| idx.iter().map(|&i| v[i]).sum::<f64>() / idx.len() as f64;
        let (ma, mb) = (mean(&out.values), mean(&values));
        let mut num = 0.0;
        let mut da = 0.0;
        let mut db = 0.0;
        for &i in &idx {
            let (a, b) = (out.values[i] - ma, values[i] - mb);
            num += a * b;
            da += a * a;
            db += b * b;
        }
        let pearson = num / (da.sqrt() * db.sqrt());
        assert!(pearson >= 0.99, "pearson {pearson}");
    }

    #[test]
    fn masked_reconstruction_matches_dense_least_squares_oracle() {
        // Independent oracle: materialize the gradient system densely and
        // solve by SVD. Any two least-squares solutions differ only in the
        // equation graph's null space, so their data residuals must agree;
        // and on valid pixels the gauge-repaired output must match the
        // input itself.
        let (w, h) = (16, 8);
        let values = smooth_values(w, h);
        let mut rng = ChaCha12Rng::seed_from_u64(83);
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.55)).collect();
        let map = PanoramaMap::from_values(geom(w, h), values.clone(), mask.clone());
        let out = densify(&map).unwrap();

        let n = w * h;
        let mut rows: Vec<(usize, usize, f64)> = Vec::new();
        let mut push = |lo: usize, hi: usize| match (mask[lo], mask[hi]) {
            (true, true) => rows.push((lo, hi, 0.5 * (values[hi] - values[lo]))),
            (false, false) => rows.push((lo, hi, 0.0)),
            _ => {}
        };
        for y in 0..h {
            for x in 0..w {
                push(y * w + (x + w - 1) % w, y * w + (x + 1) % w);
            }
        }
        for y in 1..h - 1 {
            for x in 0..w {
                push((y - 1) * w + x, (y + 1) * w + x);
            }
        }
        let mut g = nalgebra::DMatrix::zeros(rows.len(), n);
        let mut tgt = nalgebra::DVector::zeros(rows.len());
        for (r, &(lo, hi, t)) in rows.iter().enumerate() {
            g[(r, lo)] = -0.5;
            g[(r, hi)] = 0.5;
            tgt[r] = t;
        }
        let sol = g.clone().svd(true, true).solve(&tgt, 1e-10).unwrap();
        let res_oracle = (&g * sol - &tgt).norm();
        let res_ours = (&g * nalgebra::DVector::from_column_slice(&out.values) - &tgt).norm();
        assert!(
            (res_ours - res_oracle).abs() < 1e-6,
            "residuals {res_ours} vs {res_oracle}"
        );

        for i in 0..n {
            if mask[i] {
                assert!((out.values[i] - values[i]).abs() < 1e-6, "pixel {i}");
            }
        }
    }

    #[test]
    fn half_masked_map_reproduces_valid_pixels() {
        // Holes only get a flat per-component fill, but the observed
        // pixels' own equations are consistent and solve exactly.
        let (w, h) = (64, 32);
        let values = smooth_values(w, h);
        let mut rng = ChaCha12Rng::seed_from_u64(84);
        let mask: Vec<bool> = (0..w * h).map(|_| rng.random_bool(0.5)).collect();
        let observed =
            values.iter().zip(&mask).map(|(&v, &m)| if m { v } else { 0.0 }).collect();
        let map = PanoramaMap::from_values(geom(w, h), observed, mask.clone());
        let out = densify(&map).unwrap();

        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let rms = rms_up_to_constant(&out.values, &values, |i| mask[i]);
        assert!(rms < 0.05 * (hi - lo), "valid-pixel rms {rms} vs range {}", hi - lo);
        assert!(rms < 1e-6, "consistent system should solve exactly, rms {rms}");
    }

    #[test]
    fn iteration_cap_is_an_error() {
        let (w, h) = (32, 16);
        let values = smooth_values(w, h);
        let map = PanoramaMap::from_values(geom(w, h), values, vec![true; w * h]);
        assert!(matches!(densify_with_cap(&map, 2), Err(Error::Solver(_))));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let map = PanoramaMap::zeros(geom(16, 8), vec![false; 16 * 8]);
        assert!(densify(&map).is_err());
    }
}
