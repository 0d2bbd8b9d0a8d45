//! Levenberg-Marquardt refinement of the pose trajectory and the semi-dense
//! panorama from per-event photometric residuals.
//!
//! Each residual pair contributes one row `r` to the normal equations
//! `A = sum w r r^T`, `b = -sum w r eps`, assembled cumulatively in the
//! arrowhead partition [A11 A12; A12^T A22] without ever materializing the
//! Jacobian. Pose entries come from the chain map-gradient x projection x
//! bearing-hat x spline-interpolation; map entries are exactly +1 and -1 at
//! the two nearest-neighbor pixels.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::camera::{CameraModel, PanoramaGeometry, POLE_MARGIN};
use crate::error::{Error, Result};
use crate::event::{EGMParams, ResidualPair};
use crate::map::{build_valid_mask, PanoramaMap};
use crate::so3::{hat, interp_jacobian, Mat3, Vec3};
use crate::sparse::{solve_cg, CsrMatrix};
use crate::trajectory::RotationTrajectory;

/// Robust loss applied to photometric residuals. The solver minimizes
/// `sum rho(eps_k)` via iteratively reweighted least squares: each residual
/// enters the normal equations with the weight `w(eps) = rho'(eps) / eps`,
/// refreshed every iteration at the current residual value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Loss {
    #[default]
    Quadratic,
    /// Huber with threshold delta: quadratic core, linear tails.
    Huber,
    /// Cauchy (Lorentzian): strongly redescending weights.
    Cauchy,
}

/// Huber threshold, in log-intensity units (matches typical contrast
/// sensitivities of 0.1 .. 0.5).
pub const HUBER_DELTA: f64 = 0.05;
/// Cauchy scale squared.
pub const CAUCHY_B2: f64 = 1.0 / 50.0;

impl Loss {
    /// rho(eps), the robust cost of one residual.
    pub fn rho(self, eps: f64) -> f64 {
        match self {
            Loss::Quadratic => eps * eps,
            Loss::Huber => {
                let a = eps.abs();
                if a < HUBER_DELTA {
                    eps * eps
                } else {
                    (2.0 * a - HUBER_DELTA) * HUBER_DELTA
                }
            }
            Loss::Cauchy => CAUCHY_B2 * (1.0 + eps * eps / CAUCHY_B2).ln(),
        }
    }

    /// IRLS weight w(eps) = rho'(eps) / (2 eps), normalized so the
    /// quadratic loss has weight 1.
    pub fn weight(self, eps: f64) -> f64 {
        match self {
            Loss::Quadratic => 1.0,
            Loss::Huber => {
                let a = eps.abs();
                if a < HUBER_DELTA {
                    1.0
                } else {
                    HUBER_DELTA / a
                }
            }
            Loss::Cauchy => 1.0 / (1.0 + eps * eps / CAUCHY_B2),
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "quadratic" => Ok(Loss::Quadratic),
            "huber" => Ok(Loss::Huber),
            "cauchy" => Ok(Loss::Cauchy),
            other => Err(Error::Config(format!(
                "unknown loss {other:?}; expected quadratic, huber, or cauchy"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Loss::Quadratic => "quadratic",
            Loss::Huber => "huber",
            Loss::Cauchy => "cauchy",
        }
    }
}

/// Linear-system backend for the damped normal equations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LinearSolver {
    /// Sparse LDL^T factorization of the full damped system.
    #[default]
    Cholesky,
    /// Jacobi-preconditioned conjugate gradient.
    ConjugateGradient,
}

impl LinearSolver {
    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "cholesky" => Ok(LinearSolver::Cholesky),
            "cg" => Ok(LinearSolver::ConjugateGradient),
            other => Err(Error::Config(format!(
                "unknown solver {other:?}; expected cholesky or cg"
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LinearSolver::Cholesky => "cholesky",
            LinearSolver::ConjugateGradient => "cg",
        }
    }
}

/// Knobs for the joint refinement.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub loss: Loss,
    pub linear_solver: LinearSolver,
    /// Initial damping lambda_0.
    pub lambda_init: f64,
    /// Multiplier applied on rejection (and its inverse on acceptance).
    pub lambda_factor: f64,
    pub max_iterations: usize,
    /// Stop when the relative decrease of the robust loss falls below this.
    pub rel_decrease_tol: f64,
    /// Stop when the max-norm of the update falls below this.
    pub step_tol: f64,
    /// Relative residual tolerance for the conjugate-gradient backend.
    pub cg_tol: f64,
    /// Freeze the trajectory and refine only the map block.
    pub map_only: bool,
    /// Force sequential accumulation for bit-reproducible runs.
    pub deterministic: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            loss: Loss::Quadratic,
            linear_solver: LinearSolver::Cholesky,
            lambda_init: 1e-3,
            lambda_factor: 10.0,
            max_iterations: 50,
            rel_decrease_tol: 1e-6,
            step_tol: 1e-10,
            cg_tol: 1e-6,
            map_only: false,
            deterministic: false,
        }
    }
}

/// One row of the iteration log.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationRecord {
    pub iter: usize,
    pub lambda: f64,
    /// Photometric error sum(eps^2), always the unweighted quadratic value.
    pub phe: f64,
    /// Robust objective sum(rho(eps)) that drives step acceptance.
    pub robust_loss: f64,
    pub step_norm_pose: f64,
    pub step_norm_map: f64,
    pub accepted: bool,
    /// Residual pairs skipped this iteration because an endpoint left the
    /// valid-mask or projected into a pole margin.
    pub skipped_pairs: usize,
}

/// Joint optimization state: spline control poses plus the semi-dense map.
#[derive(Debug, Clone)]
pub struct OptState {
    pub trajectory: RotationTrajectory,
    pub map: PanoramaMap,
    /// Gauge policy: hold the first control pose fixed, removing its three
    /// columns from the reduced system. The map's per-component constant
    /// modes are left to the damping.
    pub fix_first_pose: bool,
}

impl OptState {
    pub fn new(trajectory: RotationTrajectory, map: PanoramaMap) -> Self {
        OptState { trajectory, map, fix_first_pose: true }
    }

    /// Free pose coordinates, 3 per non-fixed control pose.
    pub fn pose_dim(&self) -> usize {
        3 * (self.trajectory.len() - usize::from(self.fix_first_pose))
    }

    pub fn map_dim(&self) -> usize {
        self.map.valid_count()
    }

    /// Reduced parameter count 3*(P - fixed) + N_p.
    pub fn dim(&self) -> usize {
        self.pose_dim() + self.map_dim()
    }

    /// First column of control pose `i` in the reduced vector; `None` for
    /// the gauge-fixed pose.
    pub fn pose_col(&self, i: usize) -> Option<usize> {
        if self.fix_first_pose {
            (i > 0).then(|| 3 * (i - 1))
        } else {
            Some(3 * i)
        }
    }

    /// Applies a stacked update [dphi_1 .. dphi_P' ; dbeta]: free poses are
    /// left-perturbed (and re-orthonormalized), valid map pixels
    /// incremented in state order.
    pub fn apply_step(&mut self, dp: &[f64]) -> Result<()> {
        let pd = self.pose_dim();
        if dp.len() != pd + self.map_dim() {
            return Err(Error::Solver(format!(
                "step length {} != state dimension {}",
                dp.len(),
                pd + self.map_dim()
            )));
        }
        for i in 0..self.trajectory.len() {
            if let Some(c) = self.pose_col(i) {
                let dphi = Vec3::new(dp[c], dp[c + 1], dp[c + 2]);
                let poses = self.trajectory.poses_mut();
                poses[i] = poses[i].perturb_left(&dphi);
            }
        }
        self.map.apply_update(&dp[pd..])
    }
}

/// Linearization of one warped endpoint: its spline bracket and the 1x3
/// rows d(eps)/d(dphi) at the two bracketing control poses. The endpoint
/// sign of Eq.-(14) form (- at the event time, + one crossing earlier) is
/// already folded into the rows.
#[derive(Debug, Clone, Copy)]
pub struct EndpointBlocks {
    pub segment: usize,
    pub u: f64,
    /// Row at control pose `segment`.
    pub row_lo: Vec3,
    /// Row at control pose `segment + 1`.
    pub row_hi: Vec3,
    /// Valid-state index of the nearest map pixel.
    pub map_index: usize,
}

/// One linearized photometric residual. Map coefficients are exactly +1 on
/// `curr.map_index` and -1 on `prev.map_index`, cancelling when the two
/// coincide.
#[derive(Debug, Clone, Copy)]
pub struct Residual {
    pub eps: f64,
    pub weight: f64,
    pub curr: EndpointBlocks,
    pub prev: EndpointBlocks,
}

fn endpoint_blocks(
    camera: &CameraModel,
    state: &OptState,
    x: f64,
    y: f64,
    t: f64,
    sign: f64,
) -> Result<Option<(f64, EndpointBlocks)>> {
    let pose = state.trajectory.sample(t)?;
    let z = pose.rotation.rotate(&camera.back_project(x, y));
    let geom = state.map.geometry();
    let Some(proj) = geom.jacobian(&z) else {
        return Ok(None); // pole margin
    };
    let p = geom.project(&z);
    let (px, py) = p.nearest(state.map.width(), state.map.height());
    let Some(map_index) = state.map.state_index_of(px, py) else {
        return Ok(None); // left the frozen valid mask
    };
    let grad = state.map.gradient_at(px, py);
    // q^T = grad_M^T * (dpi/dz) * z^, split over the bracketing control
    // poses as q^T (I - A) and q^T A.
    let q = (proj * hat(&z)).transpose() * grad;
    let a = interp_jacobian(pose.u, &state.trajectory.segment_delta(pose.segment));
    let row_lo = (Mat3::identity() - a).transpose() * (q * sign);
    let row_hi = a.transpose() * (q * sign);
    Ok(Some((
        state.map.value_at(px, py),
        EndpointBlocks { segment: pose.segment, u: pose.u, row_lo, row_hi, map_index },
    )))
}

fn endpoint_value(
    camera: &CameraModel,
    state: &OptState,
    x: f64,
    y: f64,
    t: f64,
) -> Result<Option<f64>> {
    let pose = state.trajectory.sample(t)?;
    let z = pose.rotation.rotate(&camera.back_project(x, y));
    if PanoramaGeometry::pole_angle(&z) < POLE_MARGIN {
        return Ok(None);
    }
    Ok(state.map.sample(&state.map.geometry().project(&z)))
}

/// Photometric residual of one pair: nearest-neighbor map difference minus
/// the signed threshold. `Ok(None)` when an endpoint leaves the valid mask
/// or projects into the pole margin; callers skip and count those.
pub fn residual(
    camera: &CameraModel,
    state: &OptState,
    pair: &ResidualPair,
    egm: &EGMParams,
) -> Result<Option<f64>> {
    let (x, y) = (f64::from(pair.x), f64::from(pair.y));
    let Some(m_curr) = endpoint_value(camera, state, x, y, pair.t_curr)? else {
        return Ok(None);
    };
    let Some(m_prev) = endpoint_value(camera, state, x, y, pair.t_prev)? else {
        return Ok(None);
    };
    Ok(Some(m_curr - m_prev - f64::from(pair.pol) * egm.threshold(pair.pol)))
}

/// Residual value and Jacobian blocks for one pair at the operating state,
/// under the same skip rule as [`residual`]. The robust weight is
/// initialized to 1; the LM loop refreshes it from the loss.
pub fn linearize(
    camera: &CameraModel,
    state: &OptState,
    pair: &ResidualPair,
    egm: &EGMParams,
) -> Result<Option<Residual>> {
    let (x, y) = (f64::from(pair.x), f64::from(pair.y));
    let Some((m_curr, curr)) = endpoint_blocks(camera, state, x, y, pair.t_curr, -1.0)? else {
        return Ok(None);
    };
    let Some((m_prev, prev)) = endpoint_blocks(camera, state, x, y, pair.t_prev, 1.0)? else {
        return Ok(None);
    };
    let eps = m_curr - m_prev - f64::from(pair.pol) * egm.threshold(pair.pol);
    Ok(Some(Residual { eps, weight: 1.0, curr, prev }))
}

/// Loss summary of one evaluation pass.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossEval {
    /// Photometric error sum(eps^2), loss-independent.
    pub phe: f64,
    /// sum(rho(eps)) under the selected loss; drives step acceptance.
    pub robust: f64,
    pub skipped: usize,
    pub used: usize,
}

/// Per-pair residuals of `state`, one slot per pair, `None` where the skip
/// rule fires. Computed in parallel unless `deterministic`; order always
/// matches `pairs`.
pub fn scan_residuals(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    deterministic: bool,
) -> Result<Vec<Option<f64>>> {
    if deterministic {
        pairs.iter().map(|p| residual(camera, state, p, egm)).collect()
    } else {
        pairs.par_iter().map(|p| residual(camera, state, p, egm)).collect()
    }
}

fn sum_scan(scan: &[Option<f64>], loss: Loss) -> LossEval {
    let mut out = LossEval { phe: 0.0, robust: 0.0, skipped: 0, used: 0 };
    for e in scan {
        match e {
            Some(e) => {
                out.phe += e * e;
                out.robust += loss.rho(*e);
                out.used += 1;
            }
            None => out.skipped += 1,
        }
    }
    out
}

/// Evaluates `state` over `pairs` without linearizing. Residuals are
/// computed in parallel unless `deterministic`; the sums always run
/// sequentially in pair order so results are bit-reproducible.
pub fn evaluate_loss(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    loss: Loss,
    deterministic: bool,
) -> Result<LossEval> {
    Ok(sum_scan(&scan_residuals(camera, state, pairs, egm, deterministic)?, loss))
}

/// Linearizes every pair at the operating state, dropping skipped ones;
/// residuals come back in pair order together with the skip count.
pub fn linearize_all(
    camera: &CameraModel,
    state: &OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    deterministic: bool,
) -> Result<(Vec<Residual>, usize)> {
    let rows: Vec<Option<Residual>> = if deterministic {
        pairs.iter().map(|p| linearize(camera, state, p, egm)).collect::<Result<_>>()?
    } else {
        pairs.par_iter().map(|p| linearize(camera, state, p, egm)).collect::<Result<_>>()?
    };
    let skipped = rows.iter().filter(|r| r.is_none()).count();
    Ok((rows.into_iter().flatten().collect(), skipped))
}

/// The weighted normal equations in arrowhead partition. `a12` holds
/// (pose row, map col) triplets mirrored on assembly; `a22` triplets carry
/// both symmetric halves already.
#[derive(Debug, Clone)]
pub struct NormalEquations {
    pub pose_dim: usize,
    pub map_dim: usize,
    /// Dense pose-pose block (small and block-banded at desk scale).
    pub a11: DMatrix<f64>,
    pub a12: Vec<(usize, usize, f64)>,
    pub a22: Vec<(usize, usize, f64)>,
    /// Stacked right-hand side [b1; b2].
    pub b: DVector<f64>,
}

impl NormalEquations {
    pub fn dim(&self) -> usize {
        self.pose_dim + self.map_dim
    }

    /// Full symmetric system as CSR. Mirrored halves receive bit-identical
    /// contribution sequences, so the result equals its transpose exactly.
    pub fn assemble(&self) -> CsrMatrix {
        let mut trip =
            Vec::with_capacity(self.pose_dim * self.pose_dim + 2 * self.a12.len() + self.a22.len());
        for i in 0..self.pose_dim {
            for j in 0..self.pose_dim {
                let v = self.a11[(i, j)];
                if v != 0.0 {
                    trip.push((i, j, v));
                }
            }
        }
        for &(i, j, v) in &self.a12 {
            trip.push((i, self.pose_dim + j, v));
            trip.push((self.pose_dim + j, i, v));
        }
        for &(i, j, v) in &self.a22 {
            trip.push((self.pose_dim + i, self.pose_dim + j, v));
        }
        CsrMatrix::from_triplets(self.dim(), &trip)
    }
}

/// Cumulative assembly of A = sum w r r^T and b = -sum w r eps from the
/// linearized residuals, never materializing the Jacobian. The per-residual
/// map contribution is the four-entry [[w,-w],[-w,w]] pattern, vanishing
/// when the endpoint pixels coincide. With `config.map_only` the pose block
/// is empty.
pub fn accumulate_normal_equations(
    residuals: &[Residual],
    state: &OptState,
    config: &SolverConfig,
) -> NormalEquations {
    let pose_dim = if config.map_only { 0 } else { state.pose_dim() };
    let map_dim = state.map_dim();
    let mut a11 = DMatrix::zeros(pose_dim, pose_dim);
    let mut a12: Vec<(usize, usize, f64)> = Vec::new();
    let mut a22: Vec<(usize, usize, f64)> = Vec::with_capacity(4 * residuals.len());
    let mut b = DVector::zeros(pose_dim + map_dim);

    let mut entries: Vec<(usize, f64)> = Vec::with_capacity(12);
    for res in residuals {
        let w = res.weight;
        entries.clear();
        if pose_dim > 0 {
            for ep in [&res.curr, &res.prev] {
                for (pose, row) in [(ep.segment, &ep.row_lo), (ep.segment + 1, &ep.row_hi)] {
                    if let Some(c) = state.pose_col(pose) {
                        for (k, v) in [row.x, row.y, row.z].into_iter().enumerate() {
                            if v != 0.0 {
                                entries.push((c + k, v));
                            }
                        }
                    }
                }
            }
            // Endpoints sharing a control pose contribute to the same
            // columns; merge so each coordinate appears once in the row.
            entries.sort_unstable_by_key(|e| e.0);
            entries.dedup_by(|cur, kept| {
                if cur.0 == kept.0 {
                    kept.1 += cur.1;
                    true
                } else {
                    false
                }
            });
        }
        for i in 0..entries.len() {
            let (ci, vi) = entries[i];
            b[ci] -= w * vi * res.eps;
            a11[(ci, ci)] += w * (vi * vi);
            for &(cj, vj) in &entries[i + 1..] {
                // One product feeds both halves bit-identically.
                let v = w * (vi * vj);
                a11[(ci, cj)] += v;
                a11[(cj, ci)] += v;
            }
        }
        let (mc, mp) = (res.curr.map_index, res.prev.map_index);
        if mc != mp {
            b[pose_dim + mc] -= w * res.eps;
            b[pose_dim + mp] += w * res.eps;
            a22.push((mc, mc, w));
            a22.push((mp, mp, w));
            a22.push((mc, mp, -w));
            a22.push((mp, mc, -w));
            for &(c, v) in &entries {
                let t = w * v;
                a12.push((c, mc, t));
                a12.push((c, mp, -t));
            }
        }
    }
    NormalEquations { pose_dim, map_dim, a11, a12, a22, b }
}

/// One damped linear solve. `converged` is false when the CG backend hit
/// its iteration cap and returned its best iterate; the Cholesky backend
/// always reports true.
#[derive(Debug, Clone)]
pub struct StepSolution {
    pub step: Vec<f64>,
    pub converged: bool,
}

/// Solves (A + lambda diag(A)) dP = b with the configured backend.
pub fn solve_normal_equations(
    ne: &NormalEquations,
    lambda: f64,
    config: &SolverConfig,
) -> Result<StepSolution> {
    solve_damped(&ne.assemble(), ne.b.as_slice(), lambda, config)
}

fn solve_damped(
    system: &CsrMatrix,
    b: &[f64],
    lambda: f64,
    config: &SolverConfig,
) -> Result<StepSolution> {
    let damped = system.with_damping(lambda);
    match config.linear_solver {
        LinearSolver::Cholesky => match damped.solve_ldlt(b) {
            Ok(step) => Ok(StepSolution { step, converged: true }),
            Err(e) => Err(Error::Solver(format!(
                "damped system failed to factor at lambda={lambda:.3e} ({e}); \
                 a larger damping may restore definiteness"
            ))),
        },
        LinearSolver::ConjugateGradient => {
            let out = solve_cg(&damped, b, config.cg_tol, 10 * damped.dim());
            Ok(StepSolution { step: out.x, converged: out.converged })
        }
    }
}

fn max_abs(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, &v| m.max(v.abs()))
}

/// Levenberg-Marquardt refinement of `state` in place; returns the
/// iteration log (one row per solve attempt, with the candidate's losses).
///
/// Accepted steps strictly decrease the robust loss and divide lambda by
/// the configured factor; rejections multiply it and retry on the same
/// linearization. Because the skip rule makes the explained pair set
/// state-dependent, candidates are compared over the union of both sets: a
/// pair the candidate no longer explains keeps its current cost, a newly
/// explained pair adds its candidate cost. A step can therefore never look
/// better by pushing pairs off the valid mask. Terminates on relative
/// decrease below `rel_decrease_tol` over an accepted step, on a step
/// max-norm below `step_tol`, or at `max_iterations` attempts; a failed
/// factorization escalates lambda and retries like a rejection.
pub fn lm_run(
    camera: &CameraModel,
    state: &mut OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    config: &SolverConfig,
) -> Result<Vec<IterationRecord>> {
    let mut records = Vec::new();
    let mut lambda = config.lambda_init;
    let mut iter = 0;

    let mut cur_scan = scan_residuals(camera, state, pairs, egm, config.deterministic)?;
    let mut cur = sum_scan(&cur_scan, config.loss);
    if !cur.robust.is_finite() {
        return Err(Error::Solver(format!(
            "non-finite loss over {} explained pairs at the initial state",
            cur.used
        )));
    }

    'relinearize: loop {
        // Fresh linearization and robust weights at the operating state.
        let (mut residuals, _) = linearize_all(camera, state, pairs, egm, config.deterministic)?;
        for r in &mut residuals {
            r.weight = config.loss.weight(r.eps);
        }
        let ne = accumulate_normal_equations(&residuals, state, config);
        let system = ne.assemble();

        loop {
            if iter >= config.max_iterations {
                break 'relinearize;
            }
            iter += 1;
            let sol = match solve_damped(&system, ne.b.as_slice(), lambda, config) {
                Ok(sol) => sol,
                Err(_) => {
                    // Non-SPD at this damping: log the stalled attempt and
                    // escalate, as for a rejected step.
                    records.push(IterationRecord {
                        iter,
                        lambda,
                        phe: cur.phe,
                        robust_loss: cur.robust,
                        step_norm_pose: 0.0,
                        step_norm_map: 0.0,
                        accepted: false,
                        skipped_pairs: cur.skipped,
                    });
                    lambda *= config.lambda_factor;
                    continue;
                }
            };
            let step_pose = max_abs(&sol.step[..ne.pose_dim]);
            let step_map = max_abs(&sol.step[ne.pose_dim..]);

            let mut candidate = state.clone();
            if config.map_only {
                candidate.map.apply_update(&sol.step)?;
            } else {
                candidate.apply_step(&sol.step)?;
            }
            let cand_scan =
                scan_residuals(camera, &candidate, pairs, egm, config.deterministic)?;
            let cand = sum_scan(&cand_scan, config.loss);
            // Union accounting: pairs explained by neither state cost 0.
            let mut cand_total = cand.robust;
            for (c, k) in cand_scan.iter().zip(&cur_scan) {
                if let (None, Some(e)) = (c, k) {
                    cand_total += config.loss.rho(*e);
                }
            }
            if !cand_total.is_finite() {
                return Err(Error::Solver(format!(
                    "non-finite loss at iteration {iter} (lambda {lambda:.3e}, \
                     reference loss {:.6e})",
                    cur.robust
                )));
            }
            let accepted = cand_total < cur.robust;
            records.push(IterationRecord {
                iter,
                lambda,
                phe: cand.phe,
                robust_loss: cand.robust,
                step_norm_pose: step_pose,
                step_norm_map: step_map,
                accepted,
                skipped_pairs: cand.skipped,
            });
            let tiny_step = step_pose.max(step_map) < config.step_tol;
            if accepted {
                let rel = (cur.robust - cand_total) / cur.robust;
                *state = candidate;
                cur_scan = cand_scan;
                cur = cand;
                lambda /= config.lambda_factor;
                if rel < config.rel_decrease_tol || tiny_step {
                    break 'relinearize;
                }
                continue 'relinearize;
            }
            lambda *= config.lambda_factor;
            if tiny_step {
                break 'relinearize;
            }
        }
    }
    Ok(records)
}

/// Map-only reduction: freezes the trajectory, rebuilds the valid mask from
/// it (keeping the current values), and runs the LM loop restricted to the
/// map block. Under the quadratic loss the subproblem is linear, so the
/// loop collapses to a couple of damped solves.
pub fn map_only_run(
    camera: &CameraModel,
    state: &mut OptState,
    pairs: &[ResidualPair],
    egm: &EGMParams,
    config: &SolverConfig,
) -> Result<Vec<IterationRecord>> {
    let geom = state.map.geometry();
    let mask = build_valid_mask(pairs, camera, geom, &state.trajectory)?;
    state.map = PanoramaMap::from_values(geom, state.map.values().to_vec(), mask);
    let mut cfg = config.clone();
    cfg.map_only = true;
    lm_run(camera, state, pairs, egm, &cfg)
}
