//! Semi-dense panoramic log-intensity map: values, valid mask, and the
//! index table that maps valid pixels to optimization-state coordinates.

use crate::camera::{warp, CameraModel, MapPoint, PanoramaGeometry};
use crate::error::{Error, Result};
use crate::event::ResidualPair;
use crate::trajectory::RotationTrajectory;
use nalgebra::Vector2;

const INVALID: u32 = u32::MAX;

/// Panoramic map state. Invalid pixels never enter the optimization state;
/// their stored value is excluded from every residual and metric.
#[derive(Debug, Clone)]
pub struct PanoramaMap {
    geom: PanoramaGeometry,
    values: Vec<f64>,
    mask: Vec<bool>,
    /// Flat pixel -> state index, `INVALID` sentinel for masked-out pixels.
    state_index: Vec<u32>,
    /// State index -> flat pixel; together with `state_index` a bijection.
    state_pixels: Vec<u32>,
}

impl PanoramaMap {
    /// Zero-valued map over the given mask (the default initialization).
    pub fn zeros(geom: PanoramaGeometry, mask: Vec<bool>) -> Self {
        let values = vec![0.0; geom.width * geom.height];
        Self::from_values(geom, values, mask)
    }

    pub fn from_values(geom: PanoramaGeometry, values: Vec<f64>, mask: Vec<bool>) -> Self {
        let n = geom.width * geom.height;
        assert_eq!(values.len(), n);
        assert_eq!(mask.len(), n);
        let mut state_index = vec![INVALID; n];
        let mut state_pixels = Vec::new();
        for (i, &m) in mask.iter().enumerate() {
            if m {
                state_index[i] = state_pixels.len() as u32;
                state_pixels.push(i as u32);
            }
        }
        PanoramaMap { geom, values, mask, state_index, state_pixels }
    }

    pub fn geometry(&self) -> PanoramaGeometry {
        self.geom
    }

    pub fn width(&self) -> usize {
        self.geom.width
    }

    pub fn height(&self) -> usize {
        self.geom.height
    }

    /// Number of valid pixels N_p, the dimension of the map state.
    pub fn valid_count(&self) -> usize {
        self.state_pixels.len()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    #[inline]
    pub fn flat(&self, x: usize, y: usize) -> usize {
        y * self.geom.width + x
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.mask[self.flat(x, y)]
    }

    /// State index of a valid pixel, `None` for invalid ones.
    pub fn state_index_of(&self, x: usize, y: usize) -> Option<usize> {
        let idx = self.state_index[self.flat(x, y)];
        (idx != INVALID).then_some(idx as usize)
    }

    /// Pixel coordinates of a state index.
    pub fn pixel_of_state(&self, n: usize) -> (usize, usize) {
        let flat = self.state_pixels[n] as usize;
        (flat % self.geom.width, flat / self.geom.width)
    }

    pub fn value_at(&self, x: usize, y: usize) -> f64 {
        self.values[self.flat(x, y)]
    }

    pub fn set_value(&mut self, x: usize, y: usize, v: f64) {
        let i = self.flat(x, y);
        self.values[i] = v;
    }

    /// Nearest-neighbor intensity readout; `None` when the nearest pixel is
    /// invalid (the caller drops and counts the pair).
    pub fn sample(&self, p: &MapPoint) -> Option<f64> {
        let (x, y) = p.nearest(self.geom.width, self.geom.height);
        self.is_valid(x, y).then(|| self.value_at(x, y))
    }

    /// Map gradient at the nearest pixel to `p`; `None` when that pixel is
    /// invalid.
    pub fn sample_gradient(&self, p: &MapPoint) -> Option<Vector2<f64>> {
        let (x, y) = p.nearest(self.geom.width, self.geom.height);
        self.is_valid(x, y).then(|| self.gradient_at(x, y))
    }

    /// First-order readout: the nearest pixel's value extrapolated along its
    /// gradient to the query point. This is the smooth local model whose
    /// pose derivative the solver's Jacobian rows represent; derivative
    /// checks probe it because the plain nearest-neighbor readout is
    /// piecewise constant. `None` when the nearest pixel is invalid.
    pub fn linearized_sample(&self, p: &MapPoint) -> Option<f64> {
        let (x, y) = p.nearest(self.geom.width, self.geom.height);
        if !self.is_valid(x, y) {
            return None;
        }
        let g = self.gradient_at(x, y);
        let dx = p.x - (x as f64 + 0.5);
        let dy = p.y - (y as f64 + 0.5);
        Some(self.value_at(x, y) + g.x * dx + g.y * dy)
    }

    /// Masked gradient stencil at a valid pixel: central difference over two
    /// valid neighbors, halved one-sided difference against the center when
    /// one side is missing, zero when both are. Azimuth neighbors wrap;
    /// vertical neighbors beyond the poles count as missing.
    pub fn gradient_at(&self, x: usize, y: usize) -> Vector2<f64> {
        let (w, h) = (self.geom.width, self.geom.height);
        let c = self.value_at(x, y);

        let xl = (x + w - 1) % w;
        let xr = (x + 1) % w;
        let gx = self.axis_diff(self.neighbor(xl, y), c, self.neighbor(xr, y));

        let up = (y > 0).then(|| self.neighbor(x, y - 1)).flatten();
        let down = (y + 1 < h).then(|| self.neighbor(x, y + 1)).flatten();
        let gy = self.axis_diff(up, c, down);

        Vector2::new(gx, gy)
    }

    fn neighbor(&self, x: usize, y: usize) -> Option<f64> {
        self.is_valid(x, y).then(|| self.value_at(x, y))
    }

    fn axis_diff(&self, lo: Option<f64>, center: f64, hi: Option<f64>) -> f64 {
        match (lo, hi) {
            (Some(l), Some(r)) => (r - l) / 2.0,
            (None, Some(r)) => (r - center) / 2.0,
            (Some(l), None) => (center - l) / 2.0,
            (None, None) => 0.0,
        }
    }

    /// Increments valid pixels by `delta` in state-index order.
    pub fn apply_update(&mut self, delta: &[f64]) -> Result<()> {
        if delta.len() != self.state_pixels.len() {
            return Err(Error::Solver(format!(
                "map update length {} != state dimension {}",
                delta.len(),
                self.state_pixels.len()
            )));
        }
        for (n, &flat) in self.state_pixels.iter().enumerate() {
            self.values[flat as usize] += delta[n];
        }
        Ok(())
    }

    /// Mean value over valid pixels (the densification gauge reference).
    pub fn mean_valid(&self) -> f64 {
        if self.state_pixels.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.state_pixels.iter().map(|&i| self.values[i as usize]).sum();
        sum / self.state_pixels.len() as f64
    }

    /// Labels 4-connected components of the valid mask (azimuth wraps, the
    /// vertical axis does not). Returns per-pixel labels (`u32::MAX` when
    /// invalid) and the component count.
    pub fn valid_components(&self) -> (Vec<u32>, usize) {
        let (w, h) = (self.geom.width, self.geom.height);
        let mut labels = vec![INVALID; w * h];
        let mut count = 0u32;
        let mut stack = Vec::new();
        for start in 0..w * h {
            if !self.mask[start] || labels[start] != INVALID {
                continue;
            }
            labels[start] = count;
            stack.push(start);
            while let Some(i) = stack.pop() {
                let (x, y) = (i % w, i / w);
                let mut visit = |j: usize| {
                    if self.mask[j] && labels[j] == INVALID {
                        labels[j] = count;
                        stack.push(j);
                    }
                };
                visit(y * w + (x + 1) % w);
                visit(y * w + (x + w - 1) % w);
                if y > 0 {
                    visit(i - w);
                }
                if y + 1 < h {
                    visit(i + w);
                }
            }
            count += 1;
        }
        (labels, count as usize)
    }
}

/// Marks a pixel valid iff at least one warped event endpoint
/// (nearest-neighbor rounding) lands on it under the initial trajectory.
pub fn build_valid_mask(
    pairs: &[ResidualPair],
    cam: &CameraModel,
    geom: PanoramaGeometry,
    traj: &RotationTrajectory,
) -> Result<Vec<bool>> {
    let mut mask = vec![false; geom.width * geom.height];
    for pair in pairs {
        for t in [pair.t_curr, pair.t_prev] {
            let p = warp(cam, &geom, traj, pair.x as f64, pair.y as f64, t)?;
            let (px, py) = p.nearest(geom.width, geom.height);
            mask[py * geom.width + px] = true;
        }
    }
    Ok(mask)
}

/// Bilinear readout of a dense raster with pixel centers at half-integer
/// coordinates, wrapping in azimuth and clamping at the poles. Used by the
/// simulator, where the ground-truth panorama is fully populated.
pub fn bilinear_sample(width: usize, height: usize, values: &[f64], p: &MapPoint) -> f64 {
    debug_assert_eq!(values.len(), width * height);
    let u = p.x - 0.5;
    let v = (p.y - 0.5).clamp(0.0, height as f64 - 1.0);
    let x0f = u.floor();
    let y0 = v.floor() as usize;
    let fx = u - x0f;
    let fy = v - y0 as f64;
    let x0 = (x0f.rem_euclid(width as f64)) as usize;
    let x1 = (x0 + 1) % width;
    let y1 = (y0 + 1).min(height - 1);
    let at = |x: usize, y: usize| values[(y * width + x) as usize];
    let top = at(x0, y0) * (1.0 - fx) + at(x1, y0) * fx;
    let bot = at(x0, y1) * (1.0 - fx) + at(x1, y1) * fx;
    top * (1.0 - fy) + bot * fy
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{Rotation, Vec3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;
    use std::collections::HashSet;

    fn small_geom() -> PanoramaGeometry {
        PanoramaGeometry::new(64, 32).unwrap()
    }

    fn identity_traj() -> RotationTrajectory {
        RotationTrajectory::new(0.0, 10.0, vec![Rotation::identity(); 3]).unwrap()
    }

    #[test]
    fn empty_pairs_give_all_false_mask() {
        let cam = CameraModel::new(32, 32, 40.0, 40.0, 15.5, 15.5).unwrap();
        let mask = build_valid_mask(&[], &cam, small_geom(), &identity_traj()).unwrap();
        assert!(mask.iter().all(|&m| !m));
    }

    #[test]
    fn single_pair_marks_one_pixel() {
        let cam = CameraModel::new(32, 32, 40.0, 40.0, 15.5, 15.5).unwrap();
        let pair = ResidualPair { event_index: 0, t_curr: 0.11, t_prev: 0.02, x: 15, y: 15, pol: 1 };
        let geom = small_geom();
        let mask = build_valid_mask(&[pair], &cam, geom, &identity_traj()).unwrap();
        assert_eq!(mask.iter().filter(|&&m| m).count(), 1);
        // Static trajectory: pixel near the principal point maps to the
        // panorama center.
        let p = warp(&cam, &geom, &identity_traj(), 15.0, 15.0, 0.11).unwrap();
        let (px, py) = p.nearest(geom.width, geom.height);
        assert!(mask[py * geom.width + px]);
        // (15, 15) sits half a pixel left/up of the principal point, so the
        // warped point lands just short of the panorama center (32, 16).
        assert_eq!((px, py), (31, 15));
    }

    #[test]
    fn mask_matches_brute_force_warp_rasterization() {
        let mut rng = ChaCha12Rng::seed_from_u64(61);
        let cam = CameraModel::new(48, 48, 55.0, 55.0, 23.5, 23.5).unwrap();
        let geom = PanoramaGeometry::new(128, 64).unwrap();
        let poses: Vec<Rotation> = (0..5)
            .scan(Rotation::identity(), |r, _| {
                *r = r.perturb_left(&Vec3::new(
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                    rng.random_range(-0.1..0.1),
                ));
                Some(*r)
            })
            .collect();
        let traj = RotationTrajectory::new(0.0, 10.0, poses).unwrap();
        let pairs: Vec<ResidualPair> = (0..400)
            .map(|i| {
                let t_prev = rng.random_range(0.0..0.35);
                ResidualPair {
                    event_index: i,
                    t_curr: t_prev + rng.random_range(0.001..0.05),
                    t_prev,
                    x: rng.random_range(0..48),
                    y: rng.random_range(0..48),
                    pol: 1,
                }
            })
            .collect();
        let mask = build_valid_mask(&pairs, &cam, geom, &traj).unwrap();

        let mut expected = HashSet::new();
        for pair in &pairs {
            for t in [pair.t_curr, pair.t_prev] {
                let p = warp(&cam, &geom, &traj, pair.x as f64, pair.y as f64, t).unwrap();
                expected.insert(p.nearest(geom.width, geom.height));
            }
        }
        for y in 0..geom.height {
            for x in 0..geom.width {
                assert_eq!(
                    mask[y * geom.width + x],
                    expected.contains(&(x, y)),
                    "pixel ({x}, {y})"
                );
            }
        }
        assert_eq!(mask.iter().filter(|&&m| m).count(), expected.len());
    }

    #[test]
    fn index_table_is_a_bijection() {
        let mut rng = ChaCha12Rng::seed_from_u64(62);
        let geom = small_geom();
        let mask: Vec<bool> = (0..64 * 32).map(|_| rng.random_bool(0.4)).collect();
        let map = PanoramaMap::zeros(geom, mask.clone());
        assert_eq!(map.valid_count(), mask.iter().filter(|&&m| m).count());
        for n in 0..map.valid_count() {
            let (x, y) = map.pixel_of_state(n);
            assert_eq!(map.state_index_of(x, y), Some(n));
        }
        let mut seen = 0;
        for y in 0..geom.height {
            for x in 0..geom.width {
                match map.state_index_of(x, y) {
                    Some(n) => {
                        assert_eq!(map.pixel_of_state(n), (x, y));
                        seen += 1;
                    }
                    None => assert!(!map.is_valid(x, y)),
                }
            }
        }
        assert_eq!(seen, map.valid_count());
    }

    #[test]
    fn constant_map_samples_constant_with_zero_gradient() {
        let geom = small_geom();
        let n = geom.width * geom.height;
        let map = PanoramaMap::from_values(geom, vec![2.5; n], vec![true; n]);
        let p = MapPoint { x: 17.3, y: 9.8 };
        assert_eq!(map.sample(&p), Some(2.5));
        assert_eq!(map.sample_gradient(&p), Some(Vector2::new(0.0, 0.0)));
    }

    #[test]
    fn ramp_gradient_is_exact_at_interior_pixels() {
        let geom = small_geom();
        let a = 0.37;
        let mut values = vec![0.0; geom.width * geom.height];
        for y in 0..geom.height {
            for x in 0..geom.width {
                values[y * geom.width + x] = a * x as f64;
            }
        }
        let map = PanoramaMap::from_values(geom, values, vec![true; 64 * 32]);
        for y in 1..geom.height - 1 {
            for x in 1..geom.width - 1 {
                let g = map.gradient_at(x, y);
                assert!((g.x - a).abs() < 1e-12, "({x}, {y}): {g:?}");
                assert!(g.y.abs() < 1e-12);
            }
        }
    }

    #[test]
    fn linearized_sample_extrapolates_from_the_cell_center() {
        let geom = small_geom();
        let (ax, ay) = (0.37, -0.19);
        let mut values = vec![0.0; geom.width * geom.height];
        for y in 0..geom.height {
            for x in 0..geom.width {
                values[y * geom.width + x] = ax * x as f64 + ay * y as f64;
            }
        }
        // Hole away from the query band: its neighbors fall back to
        // one-sided stencils and would not reproduce the plane.
        let mut mask = vec![true; geom.width * geom.height];
        mask[2 * geom.width + 20] = false;
        let map = PanoramaMap::from_values(geom, values, mask);

        // At a cell center the extrapolation term vanishes.
        let center = MapPoint { x: 30.5, y: 15.5 };
        let v = map.linearized_sample(&center).unwrap();
        assert!((v - (ax * 30.0 + ay * 15.0)).abs() < 1e-12);

        // Off-center queries in the same cell move along the local gradient;
        // on an interior bilinear ramp that reproduces the plane exactly.
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        for _ in 0..200 {
            let p = MapPoint {
                x: 5.0 + rng.random_range(0.0..54.0),
                y: 5.0 + rng.random_range(0.0..22.0),
            };
            if let Some(v) = map.linearized_sample(&p) {
                let expect = ax * (p.x - 0.5) + ay * (p.y - 0.5);
                assert!((v - expect).abs() < 1e-12, "({}, {}): {v}", p.x, p.y);
            }
        }

        // Queries landing on the invalidated cell read nothing.
        assert_eq!(map.linearized_sample(&MapPoint { x: 20.5, y: 2.5 }), None);
    }

    /// Independent restatement of the masked stencil rule.
    fn gradient_oracle(map: &PanoramaMap, x: usize, y: usize) -> Vector2<f64> {
        let (w, h) = (map.width(), map.height());
        let val = |x: usize, y: usize| map.is_valid(x, y).then(|| map.value_at(x, y));
        let c = map.value_at(x, y);
        let one_axis = |m: Option<f64>, p: Option<f64>| match (m, p) {
            (Some(a), Some(b)) => (b - a) * 0.5,
            (None, Some(b)) => (b - c) * 0.5,
            (Some(a), None) => (c - a) * 0.5,
            (None, None) => 0.0,
        };
        let gx = one_axis(val((x + w - 1) % w, y), val((x + 1) % w, y));
        let gy = one_axis(
            if y == 0 { None } else { val(x, y - 1) },
            if y + 1 == h { None } else { val(x, y + 1) },
        );
        Vector2::new(gx, gy)
    }

    #[test]
    fn gradient_matches_masked_stencil_oracle_everywhere() {
        let mut rng = ChaCha12Rng::seed_from_u64(63);
        let geom = small_geom();
        let n = geom.width * geom.height;
        let values: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.55)).collect();
        let map = PanoramaMap::from_values(geom, values, mask);
        for y in 0..geom.height {
            for x in 0..geom.width {
                if map.is_valid(x, y) {
                    let got = map.gradient_at(x, y);
                    let want = gradient_oracle(&map, x, y);
                    assert_eq!(got, want, "pixel ({x}, {y})");
                }
            }
        }
    }

    #[test]
    fn invalid_pixels_are_never_read() {
        // Poison invalid entries with NaN: any readout touching them would
        // go non-finite.
        let mut rng = ChaCha12Rng::seed_from_u64(64);
        let geom = small_geom();
        let n = geom.width * geom.height;
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let values: Vec<f64> = mask
            .iter()
            .map(|&m| if m { rng.random_range(-1.0..1.0) } else { f64::NAN })
            .collect();
        let map = PanoramaMap::from_values(geom, values, mask);
        for _ in 0..2000 {
            let p = MapPoint {
                x: rng.random_range(0.0..geom.width as f64),
                y: rng.random_range(0.0..geom.height as f64),
            };
            if let Some(v) = map.sample(&p) {
                assert!(v.is_finite());
                assert!(map.sample_gradient(&p).unwrap().iter().all(|g| g.is_finite()));
            } else {
                assert!(map.sample_gradient(&p).is_none());
            }
        }
    }

    #[test]
    fn apply_update_moves_only_indexed_pixels() {
        let geom = small_geom();
        let n = geom.width * geom.height;
        let mut rng = ChaCha12Rng::seed_from_u64(65);
        let mask: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        let mut map = PanoramaMap::zeros(geom, mask);
        let before = map.values().to_vec();

        map.apply_update(&vec![0.0; map.valid_count()]).unwrap();
        assert_eq!(map.values(), &before[..]);

        let mut delta = vec![0.0; map.valid_count()];
        let probe = map.valid_count() / 2;
        delta[probe] = 1.0;
        map.apply_update(&delta).unwrap();
        let (px, py) = map.pixel_of_state(probe);
        for y in 0..geom.height {
            for x in 0..geom.width {
                let want = if (x, y) == (px, py) { 1.0 } else { 0.0 };
                assert_eq!(map.value_at(x, y), want);
            }
        }

        assert!(map.apply_update(&[0.0]).is_err());
    }

    #[test]
    fn bilinear_reproduces_linear_ramp_and_wraps_seam() {
        let (w, h) = (64usize, 32usize);
        let mut values = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                values[y * w + x] = 0.2 * x as f64 + 0.1 * y as f64;
            }
        }
        // Exact on the bilinear span away from the seam.
        let mut rng = ChaCha12Rng::seed_from_u64(66);
        for _ in 0..200 {
            let x = rng.random_range(1.0..w as f64 - 1.0);
            let y = rng.random_range(1.0..h as f64 - 1.0);
            let got = bilinear_sample(w, h, &values, &MapPoint { x, y });
            let want = 0.2 * (x - 0.5) + 0.1 * (y - 0.5);
            assert!((got - want).abs() < 1e-12, "({x}, {y})");
        }

        // A panorama periodic in azimuth stays continuous across the seam.
        let mut periodic = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let az = (x as f64 + 0.5) / w as f64 * std::f64::consts::TAU;
                periodic[y * w + x] = az.sin();
            }
        }
        let y = 10.3;
        let left = bilinear_sample(w, h, &periodic, &MapPoint { x: 1e-9, y });
        let right = bilinear_sample(w, h, &periodic, &MapPoint { x: w as f64 - 1e-9, y });
        assert!((left - right).abs() < 1e-6);
    }

    #[test]
    fn components_respect_azimuth_wrap() {
        let geom = small_geom();
        let n = geom.width * geom.height;
        let mut mask = vec![false; n];
        let at = |x: usize, y: usize| y * geom.width + x;
        // Blob A straddles the seam on row 5.
        mask[at(0, 5)] = true;
        mask[at(63, 5)] = true;
        // Blob B is isolated.
        mask[at(30, 20)] = true;
        mask[at(31, 20)] = true;
        mask[at(31, 21)] = true;
        let map = PanoramaMap::zeros(geom, mask);
        let (labels, count) = map.valid_components();
        assert_eq!(count, 2);
        assert_eq!(labels[at(0, 5)], labels[at(63, 5)]);
        assert_ne!(labels[at(0, 5)], labels[at(30, 20)]);
        assert_eq!(labels[at(30, 20)], labels[at(31, 21)]);
        assert_eq!(labels[at(1, 5)], u32::MAX);
    }
}
