//! Sparse symmetric linear algebra for the damped normal equations: CSR
//! assembly from triplets, a Jacobi-preconditioned conjugate gradient, and
//! an LDL^T factorization backend.

use crate::error::{Error, Result};
use sprs::{FillInReduction, SymmetryCheck};
use sprs_ldl::Ldl;

/// Square sparse matrix in compressed sparse row form. For the symmetric
/// systems assembled here the same buffers double as compressed sparse
/// column storage.
#[derive(Debug, Clone)]
pub struct CsrMatrix {
    dim: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Assembles from (row, col, value) triplets, summing duplicates.
    /// Every diagonal entry is materialized (explicit zero when absent) so
    /// factorizations and damping always find it.
    pub fn from_triplets(dim: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut entries: Vec<(usize, usize, f64)> = Vec::with_capacity(triplets.len() + dim);
        entries.extend_from_slice(triplets);
        entries.extend((0..dim).map(|i| (i, i, 0.0)));
        // Stable sort: duplicates at a cell merge in insertion order, so
        // mirrored (i,j)/(j,i) contribution sequences sum to bit-identical
        // values and a symmetrically assembled matrix is exactly symmetric.
        entries.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));

        let mut row_ptr = Vec::with_capacity(dim + 1);
        row_ptr.push(0usize);
        let mut col_idx: Vec<usize> = Vec::new();
        let mut values: Vec<f64> = Vec::new();
        let mut cur_row = 0usize;
        for &(r, c, v) in &entries {
            assert!(r < dim && c < dim, "triplet ({r}, {c}) outside {dim}x{dim}");
            while cur_row < r {
                row_ptr.push(col_idx.len());
                cur_row += 1;
            }
            let row_start = *row_ptr.last().unwrap();
            if col_idx.len() > row_start && *col_idx.last().unwrap() == c {
                *values.last_mut().unwrap() += v;
            } else {
                col_idx.push(c);
                values.push(v);
            }
        }
        while cur_row < dim {
            row_ptr.push(col_idx.len());
            cur_row += 1;
        }
        CsrMatrix { dim, row_ptr, col_idx, values }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// y = A x.
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        assert_eq!(x.len(), self.dim);
        assert_eq!(y.len(), self.dim);
        for r in 0..self.dim {
            let mut acc = 0.0;
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            y[r] = acc;
        }
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.dim];
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    d[r] = self.values[k];
                }
            }
        }
        d
    }

    /// Copy with the diagonal scaled by `1 + lambda`: the damped system
    /// A + lambda*diag(A). Explicit zero diagonals stay zero and fall to the
    /// unit-diagonal substitution in the solvers.
    pub fn with_damping(&self, lambda: f64) -> CsrMatrix {
        let mut damped = self.clone();
        for r in 0..damped.dim {
            for k in damped.row_ptr[r]..damped.row_ptr[r + 1] {
                if damped.col_idx[k] == r {
                    damped.values[k] *= 1.0 + lambda;
                }
            }
        }
        damped
    }

    /// sqrt(x^T A x); meaningful for symmetric positive semidefinite A.
    pub fn a_norm(&self, x: &[f64]) -> f64 {
        let mut ax = vec![0.0; self.dim];
        self.mul_vec(x, &mut ax);
        x.iter().zip(&ax).map(|(a, b)| a * b).sum::<f64>().max(0.0).sqrt()
    }

    /// Dense copy, for small oracles in tests.
    pub fn to_dense(&self) -> nalgebra::DMatrix<f64> {
        let mut m = nalgebra::DMatrix::zeros(self.dim, self.dim);
        for r in 0..self.dim {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                m[(r, self.col_idx[k])] += self.values[k];
            }
        }
        m
    }

    /// Solves A x = b by sparse LDL^T with reverse Cuthill-McKee ordering.
    /// Coordinates whose entire row is zero (parameters untouched by any
    /// residual, e.g. under a zero initial map) get a unit diagonal and
    /// therefore a zero update.
    pub fn solve_ldlt(&self, b: &[f64]) -> Result<Vec<f64>> {
        assert_eq!(b.len(), self.dim);
        if self.dim == 0 {
            return Ok(Vec::new());
        }
        let mut values = self.values.clone();
        let zero_rows: Vec<usize> = (0..self.dim)
            .filter(|&r| {
                self.values[self.row_ptr[r]..self.row_ptr[r + 1]].iter().all(|&v| v == 0.0)
            })
            .collect();
        for &r in &zero_rows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                if self.col_idx[k] == r {
                    values[k] = 1.0;
                }
            }
        }
        // Symmetric matrix: the CSR buffers are also its CSC form.
        let csc = sprs::CsMat::new_csc(
            (self.dim, self.dim),
            self.row_ptr.clone(),
            self.col_idx.clone(),
            values,
        );
        let ldl = Ldl::new()
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .numeric(csc.view())
            .map_err(|e| Error::Solver(format!("LDL^T factorization failed: {e}")))?;
        Ok(ldl.solve(b))
    }
}

/// Conjugate-gradient outcome. `converged` is false when the iteration cap
/// was hit; `x` is then the iterate with the smallest residual seen.
#[derive(Debug, Clone)]
pub struct CgOutcome {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub rel_residual: f64,
    pub converged: bool,
}

/// Jacobi-preconditioned conjugate gradient for symmetric positive
/// (semi)definite systems. Stops when ||b - A x|| <= tol * ||b||.
pub fn solve_cg(a: &CsrMatrix, b: &[f64], tol: f64, max_iter: usize) -> CgOutcome {
    let n = a.dim();
    assert_eq!(b.len(), n);
    let b_norm = norm(b);
    if b_norm == 0.0 {
        return CgOutcome { x: vec![0.0; n], iterations: 0, rel_residual: 0.0, converged: true };
    }
    let inv_diag: Vec<f64> = a
        .diagonal()
        .iter()
        .map(|&d| if d > 0.0 { 1.0 / d } else { 1.0 })
        .collect();

    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(ri, di)| ri * di).collect();
    let mut p = z.clone();
    let mut rz: f64 = dot(&r, &z);
    let mut ap = vec![0.0; n];

    let mut best_x = x.clone();
    let mut best_res = 1.0f64;
    for iter in 1..=max_iter {
        a.mul_vec(&p, &mut ap);
        let pap = dot(&p, &ap);
        if pap <= 0.0 || !pap.is_finite() {
            // Numerical breakdown (semidefinite direction); keep best.
            return CgOutcome { x: best_x, iterations: iter, rel_residual: best_res, converged: false };
        }
        let alpha = rz / pap;
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        let rel = norm(&r) / b_norm;
        if rel < best_res {
            best_res = rel;
            best_x.copy_from_slice(&x);
        }
        if rel <= tol {
            return CgOutcome { x, iterations: iter, rel_residual: rel, converged: true };
        }
        for i in 0..n {
            z[i] = r[i] * inv_diag[i];
        }
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    CgOutcome { x: best_x, iterations: max_iter, rel_residual: best_res, converged: false }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_spd(rng: &mut ChaCha12Rng, n: usize, density: f64) -> (CsrMatrix, DMatrix<f64>) {
        // A = J^T J + 0.5 I with sparse random J, mirrored into triplets.
        let m = 3 * n;
        let mut j = DMatrix::zeros(m, n);
        for r in 0..m {
            for c in 0..n {
                if rng.random_bool(density) {
                    j[(r, c)] = rng.random_range(-1.0..1.0);
                }
            }
        }
        let dense = j.transpose() * &j + DMatrix::identity(n, n) * 0.5;
        let mut triplets = Vec::new();
        for r in 0..n {
            for c in 0..n {
                if dense[(r, c)] != 0.0 {
                    triplets.push((r, c, dense[(r, c)]));
                }
            }
        }
        (CsrMatrix::from_triplets(n, &triplets), dense)
    }

    #[test]
    fn triplets_merge_duplicates_and_materialize_diagonal() {
        let a = CsrMatrix::from_triplets(3, &[(0, 1, 2.0), (0, 1, 3.0), (2, 0, 1.0), (1, 1, 4.0)]);
        let d = a.to_dense();
        assert_eq!(d[(0, 1)], 5.0);
        assert_eq!(d[(2, 0)], 1.0);
        assert_eq!(d[(1, 1)], 4.0);
        assert_eq!(d[(0, 0)], 0.0);
        // Diagonal entries exist even when zero.
        assert_eq!(a.diagonal(), vec![0.0, 4.0, 0.0]);
        // (0,0) (0,1) (1,1) (2,0) (2,2): duplicates merged, diagonal explicit.
        assert_eq!(a.nnz(), 5);
    }

    #[test]
    fn mul_vec_matches_dense_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        for _ in 0..20 {
            let n = rng.random_range(1..25);
            let mut triplets = Vec::new();
            for _ in 0..rng.random_range(0..80) {
                triplets.push((
                    rng.random_range(0..n),
                    rng.random_range(0..n),
                    rng.random_range(-2.0..2.0),
                ));
            }
            let a = CsrMatrix::from_triplets(n, &triplets);
            let dense = a.to_dense();
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let mut y = vec![0.0; n];
            a.mul_vec(&x, &mut y);
            let want = &dense * DVector::from_column_slice(&x);
            for i in 0..n {
                assert!((y[i] - want[i]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn ldlt_matches_dense_cholesky() {
        let mut rng = ChaCha12Rng::seed_from_u64(72);
        for _ in 0..10 {
            let n = rng.random_range(2..40);
            let (a, dense) = random_spd(&mut rng, n, 0.3);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = a.solve_ldlt(&b).unwrap();
            let want = dense
                .clone()
                .cholesky()
                .unwrap()
                .solve(&DVector::from_column_slice(&b));
            for i in 0..n {
                assert!((x[i] - want[i]).abs() < 1e-9, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn zero_rows_get_zero_solution() {
        // Parameter 1 is untouched by any residual: its row and column are
        // entirely zero. The solve must leave it at zero and still recover
        // the rest exactly.
        let triplets = vec![(0, 0, 4.0), (2, 2, 2.0), (0, 2, 1.0), (2, 0, 1.0)];
        let a = CsrMatrix::from_triplets(3, &triplets);
        let x = a.solve_ldlt(&[6.0, 0.0, 5.0]).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12);
        assert_eq!(x[1], 0.0);
        assert!((x[2] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn cg_matches_dense_solution_on_spd_systems() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        for _ in 0..10 {
            let n = rng.random_range(2..40);
            let (a, dense) = random_spd(&mut rng, n, 0.4);
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let out = solve_cg(&a, &b, 1e-12, 10 * n * n);
            assert!(out.converged, "n={n}");
            let want = dense
                .clone()
                .cholesky()
                .unwrap()
                .solve(&DVector::from_column_slice(&b));
            for i in 0..n {
                assert!((out.x[i] - want[i]).abs() < 1e-8, "n={n} i={i}");
            }
        }
    }

    #[test]
    fn cg_on_diagonal_system_converges_in_one_iteration() {
        // Jacobi preconditioning makes a diagonal system exact after one step,
        // regardless of conditioning.
        let triplets: Vec<_> = (0..50).map(|i| (i, i, 10f64.powi((i % 7) as i32))).collect();
        let a = CsrMatrix::from_triplets(50, &triplets);
        let b: Vec<f64> = (0..50).map(|i| (i as f64).sin()).collect();
        let out = solve_cg(&a, &b, 1e-14, 100);
        assert!(out.converged);
        assert_eq!(out.iterations, 1);
    }

    #[test]
    fn cg_cap_returns_best_iterate_with_flag() {
        let mut rng = ChaCha12Rng::seed_from_u64(74);
        let (a, _) = random_spd(&mut rng, 30, 0.5);
        let b: Vec<f64> = (0..30).map(|_| rng.random_range(-1.0..1.0)).collect();
        let capped = solve_cg(&a, &b, 1e-30, 3);
        assert!(!capped.converged);
        assert_eq!(capped.iterations, 3);
        // Best iterate is no worse than the starting residual.
        assert!(capped.rel_residual < 1.0);
        let mut ax = vec![0.0; 30];
        a.mul_vec(&capped.x, &mut ax);
        let res: f64 = ax.iter().zip(&b).map(|(v, w)| (v - w) * (v - w)).sum::<f64>().sqrt();
        let bn: f64 = b.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!((res / bn - capped.rel_residual).abs() < 1e-9);
    }

    #[test]
    fn zero_rhs_returns_zero_immediately() {
        let a = CsrMatrix::from_triplets(4, &[(0, 0, 1.0)]);
        let out = solve_cg(&a, &[0.0; 4], 1e-10, 10);
        assert!(out.converged);
        assert_eq!(out.iterations, 0);
        assert_eq!(out.x, vec![0.0; 4]);
    }

    #[test]
    fn a_norm_matches_dense_quadratic_form() {
        let mut rng = ChaCha12Rng::seed_from_u64(75);
        let (a, dense) = random_spd(&mut rng, 12, 0.5);
        let x: Vec<f64> = (0..12).map(|_| rng.random_range(-1.0..1.0)).collect();
        let xv = DVector::from_column_slice(&x);
        let want = (xv.transpose() * &dense * &xv)[(0, 0)].sqrt();
        assert!((a.a_norm(&x) - want).abs() < 1e-10);
    }
}
