//! Receding-horizon tracking control via the first-order optimality system.
//!
//! Each control cycle minimizes
//!
//! ```text
//! J = ½(x(t_f) - x_d(t_f))ᵀ Q_f (x(t_f) - x_d(t_f))
//!   + ∫ ½(x - x_d)ᵀ Q (x - x_d) + ½ uᵀ R u dt
//! ```
//!
//! subject to the learned (or nominal) dynamics. The variational conditions
//! couple states and costates into a two-point boundary value problem:
//! `u = -R⁻¹ (∂f/∂u)ᵀ λ`, `λ̇ = -(∂f/∂x)ᵀ λ - Q (x - x_d)`, with
//! `x(t_0) = x_0` and `λ(t_f) = Q_f (x(t_f) - x_d(t_f))`. The 12-dim
//! augmented system is discretized by implicit trapezoidal collocation on a
//! fixed mesh and solved with a damped Newton iteration whose Jacobian is
//! assembled analytically into a banded matrix (half-bandwidth 17).
//!
//! Thrust non-negativity deliberately stays outside the variational system:
//! the solved controls are projected per emitted command (see [`project`]).

pub mod band;
mod project;

pub use project::{project_thrusts, Projection};

use crate::dynamics::{thrust_accel_map, BasisCoefficients, State, Thrusts};
use crate::reference::ReferencePath;
use crate::sim::{ControlFault, Controller, CONTROL_RATE_HZ};
use crate::sysid::{fit_model, FitOptions, LearnedModel, SharedModel};
use band::BandMatrix;
use nalgebra::{Cholesky, Const, DVector, Matrix3x4, Matrix4, Matrix6, SMatrix, SVector, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use std::collections::VecDeque;
use thiserror::Error;

type Vector12 = SVector<f64, 12>;
type Matrix12 = SMatrix<f64, 12, 12>;

#[derive(Debug, Error)]
pub enum OcpError {
    #[error("invalid problem: {0}")]
    Invalid(String),
    #[error("Newton stalled after {iterations} iterations (residual {residual:.3e})")]
    NoConvergence { iterations: usize, residual: f64, best: Box<OcSolution> },
}

/// Quadratic tracking weights. `validate` enforces the configuration
/// contract (symmetry, positive definiteness); the solver itself only
/// requires `R` invertible, so tests may run degenerate `Q = 0` problems.
#[derive(Debug, Clone, PartialEq)]
pub struct CostWeights {
    pub q: Matrix6<f64>,
    pub r: Matrix4<f64>,
    pub qf: Matrix6<f64>,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            q: Matrix6::from_diagonal(&Vector6::new(100.0, 100.0, 10.0, 1.0, 1.0, 0.1)),
            r: Matrix4::identity() * 0.1,
            qf: Matrix6::from_diagonal(&Vector6::new(100.0, 100.0, 10.0, 1.0, 1.0, 0.1)),
        }
    }
}

impl CostWeights {
    pub fn validate(&self) -> Result<(), OcpError> {
        fn check<const N: usize>(name: &str, m: &SMatrix<f64, N, N>) -> Result<(), OcpError> {
            let asym = (m - m.transpose()).amax();
            if asym > 1e-12 {
                return Err(OcpError::Invalid(format!("{name} asymmetric by {asym:.3e}")));
            }
            if Cholesky::new(*m).is_none() {
                return Err(OcpError::Invalid(format!("{name} is not positive definite")));
            }
            Ok(())
        }
        check("Q", &self.q)?;
        check("R", &self.r)?;
        check("Q_f", &self.qf)
    }
}

/// One tracking problem over `[t0, t0 + horizon]`.
pub struct OcProblem<'a> {
    pub coeffs: &'a BasisCoefficients,
    pub weights: &'a CostWeights,
    pub x0: Vector6<f64>,
    pub path: &'a dyn ReferencePath,
    pub t0: f64,
    pub horizon: f64,
    pub grid: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub iterations: usize,
    pub max_residual: f64,
    pub converged: bool,
}

/// Converged (or best-effort) solution on the collocation mesh.
#[derive(Debug, Clone)]
pub struct OcSolution {
    pub times: Vec<f64>,
    pub states: Vec<Vector6<f64>>,
    pub costates: Vec<Vector6<f64>>,
    /// Raw stationarity controls at the nodes (pre-projection).
    pub controls: Vec<Thrusts>,
    pub report: ConvergenceReport,
}

/// Worst-case first-order optimality residuals of a solution.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PontryaginResiduals {
    /// Max collocation defect on the state rows.
    pub dynamics: f64,
    /// Max collocation defect on the costate rows.
    pub costate: f64,
    /// Max `‖uᵀR + λᵀ ∂f/∂u‖∞` over nodes.
    pub stationarity: f64,
    /// Max boundary-condition violation.
    pub boundary: f64,
}

impl PontryaginResiduals {
    pub fn worst(&self) -> f64 {
        self.dynamics.max(self.costate).max(self.stationarity).max(self.boundary)
    }
}

/// `d/dθ` of the thrust-to-acceleration map: heading rotation swaps the
/// sine and cosine coefficients (yaw row is heading-independent).
fn thrust_accel_map_deriv(c: &BasisCoefficients, theta: f64) -> Matrix3x4<f64> {
    let (s, co) = theta.sin_cos();
    let mut b = Matrix3x4::zeros();
    for i in 0..4 {
        b[(0, i)] = c.w1[1 + 2 * i] * co - c.w1[2 + 2 * i] * s;
        b[(1, i)] = c.w2[1 + 2 * i] * co - c.w2[2 + 2 * i] * s;
    }
    b
}

/// Optimal control from the stationarity condition `uᵀR + λᵀ ∂f/∂u = 0`.
pub fn stationarity_control(
    coeffs: &BasisCoefficients,
    weights: &CostWeights,
    s: &State,
    lambda: &Vector6<f64>,
) -> Thrusts {
    let b3 = thrust_accel_map(coeffs, s.heading);
    let lam_v = lambda.fixed_rows::<3>(3).into_owned();
    let chol = Cholesky::new(weights.r).expect("R positive definite");
    -chol.solve(&(b3.transpose() * lam_v))
}

/// Costate dynamics `λ̇ = -(∂f/∂x)ᵀ λ - Q (x - x_d)`, with `u` at its
/// stationary value.
pub fn costate_rhs(
    coeffs: &BasisCoefficients,
    weights: &CostWeights,
    x: &Vector6<f64>,
    lambda: &Vector6<f64>,
    xd: &Vector6<f64>,
) -> Vector6<f64> {
    let chol = Cholesky::new(weights.r).expect("R positive definite");
    let mut y = Vector12::zeros();
    y.fixed_rows_mut::<6>(0).copy_from(x);
    y.fixed_rows_mut::<6>(6).copy_from(lambda);
    let f = augmented_rhs(coeffs, &weights.q, &chol, xd, &y);
    f.fixed_rows::<6>(6).into_owned()
}

/// Augmented right-hand side `d/dt (x, λ)` of the optimality system.
fn augmented_rhs(
    coeffs: &BasisCoefficients,
    q: &Matrix6<f64>,
    r_chol: &Cholesky<f64, Const<4>>,
    xd: &Vector6<f64>,
    y: &Vector12,
) -> Vector12 {
    let theta = y[2];
    let v = Vector3::new(y[3], y[4], y[5]);
    let lam_q = Vector3::new(y[6], y[7], y[8]);
    let lam_v = Vector3::new(y[9], y[10], y[11]);
    let wd = Vector3::new(coeffs.w1[0], coeffs.w2[0], coeffs.w3[0]);

    let b3 = thrust_accel_map(coeffs, theta);
    let b3p = thrust_accel_map_deriv(coeffs, theta);
    let u = -r_chol.solve(&(b3.transpose() * lam_v));

    let g = wd.component_mul(&v) + b3 * u;
    let x_err = y.fixed_rows::<6>(0) - xd;
    let q_err = q * x_err;
    let m = b3p * u;

    let mut f = Vector12::zeros();
    f[0] = v[0];
    f[1] = v[1];
    f[2] = v[2];
    f.fixed_rows_mut::<3>(3).copy_from(&g);
    // λ̇_q: only the heading costate feels the state directly.
    f[6] = -q_err[0];
    f[7] = -q_err[1];
    f[8] = -m.dot(&lam_v) - q_err[2];
    // λ̇_v = -λ_q - w_d ∘ λ_v - Q rows.
    f[9] = -lam_q[0] - wd[0] * lam_v[0] - q_err[3];
    f[10] = -lam_q[1] - wd[1] * lam_v[1] - q_err[4];
    f[11] = -lam_q[2] - wd[2] * lam_v[2] - q_err[5];
    f
}

/// Analytic Jacobian of [`augmented_rhs`] w.r.t. the augmented state,
/// differentiating through the stationarity control.
fn augmented_jacobian(
    coeffs: &BasisCoefficients,
    q: &Matrix6<f64>,
    r_chol: &Cholesky<f64, Const<4>>,
    y: &Vector12,
) -> Matrix12 {
    let theta = y[2];
    let lam_v = Vector3::new(y[9], y[10], y[11]);
    let wd = Vector3::new(coeffs.w1[0], coeffs.w2[0], coeffs.w3[0]);

    let b3 = thrust_accel_map(coeffs, theta);
    let b3p = thrust_accel_map_deriv(coeffs, theta);
    let u = -r_chol.solve(&(b3.transpose() * lam_v));
    let s_vec = b3p.transpose() * lam_v;
    let rinv_s = r_chol.solve(&s_vec);
    let rinv_bt = r_chol.solve(&b3.transpose());
    let m = b3p * u;
    let t_force = b3 * u;

    let mut j = Matrix12::zeros();
    // Kinematics rows.
    j[(0, 3)] = 1.0;
    j[(1, 4)] = 1.0;
    j[(2, 5)] = 1.0;

    // Acceleration rows: g = w_d ∘ v + B(θ) u*(θ, λ_v).
    let dg_dtheta = m - b3 * rinv_s;
    for r in 0..3 {
        j[(3 + r, 2)] = dg_dtheta[r];
        j[(3 + r, 3 + r)] = wd[r];
    }
    let dg_dlamv = -(b3 * rinv_bt);
    for r in 0..3 {
        for c in 0..3 {
            j[(3 + r, 9 + c)] = dg_dlamv[(r, c)];
        }
    }

    // λ̇_q rows: -Q(x - x_d) everywhere, plus the h₃ = λ_vᵀ B'(θ) u* term
    // in the heading row.
    for r in 0..3 {
        for c in 0..6 {
            j[(6 + r, c)] = -q[(r, c)];
        }
    }
    // ∂h₃/∂θ: B'' = -B on the force rows, zero on the yaw row.
    let dh3_dtheta = (-lam_v[0] * t_force[0] - lam_v[1] * t_force[1]) - s_vec.dot(&rinv_s);
    j[(8, 2)] -= dh3_dtheta;
    // ∂h₃/∂λ_v = mᵀ - sᵀ R⁻¹ Bᵀ.
    let correction = rinv_bt.transpose() * s_vec;
    for c in 0..3 {
        j[(8, 9 + c)] -= m[c] - correction[c];
    }

    // λ̇_v rows.
    for r in 0..3 {
        for c in 0..6 {
            j[(9 + r, c)] = -q[(3 + r, c)];
        }
        j[(9 + r, 6 + r)] = -1.0;
        j[(9 + r, 9 + r)] = -wd[r];
    }
    j
}

/// Boundary-condition residual `[x(t_0) - x_0; λ(t_f) - Q_f (x(t_f) - x_d(t_f))]`.
pub fn boundary_residual(
    sol: &OcSolution,
    x0: &Vector6<f64>,
    weights: &CostWeights,
    xd_f: &Vector6<f64>,
) -> Vector12 {
    let mut r = Vector12::zeros();
    let first = sol.states.first().expect("populated solution");
    let last = sol.states.last().expect("populated solution");
    let lam_f = sol.costates.last().expect("populated solution");
    r.fixed_rows_mut::<6>(0).copy_from(&(first - x0));
    r.fixed_rows_mut::<6>(6).copy_from(&(lam_f - weights.qf * (last - xd_f)));
    r
}

struct Mesh {
    times: Vec<f64>,
    refs: Vec<Vector6<f64>>,
    h: f64,
}

fn build_mesh(prob: &OcProblem) -> Mesh {
    let n = prob.grid;
    let h = prob.horizon / n as f64;
    let times: Vec<f64> = (0..=n).map(|i| prob.t0 + i as f64 * h).collect();
    let refs = times.iter().map(|&t| prob.path.state_at(t).to_vector()).collect();
    Mesh { times, refs, h }
}

fn residual_all(
    prob: &OcProblem,
    mesh: &Mesh,
    r_chol: &Cholesky<f64, Const<4>>,
    z: &DVector<f64>,
) -> (DVector<f64>, f64) {
    let n = prob.grid;
    let mut res = DVector::zeros(12 * (n + 1));
    let rhs: Vec<Vector12> = (0..=n)
        .map(|i| {
            let y = z.fixed_rows::<12>(12 * i).into_owned();
            augmented_rhs(prob.coeffs, &prob.weights.q, r_chol, &mesh.refs[i], &y)
        })
        .collect();

    // Initial condition rows.
    for r in 0..6 {
        res[r] = z[r] - prob.x0[r];
    }
    // Interval defects.
    let half_h = 0.5 * mesh.h;
    for i in 0..n {
        let yi = z.fixed_rows::<12>(12 * i);
        let yn = z.fixed_rows::<12>(12 * (i + 1));
        let base = 6 + 12 * i;
        for r in 0..12 {
            res[base + r] = yn[r] - yi[r] - half_h * (rhs[i][r] + rhs[i + 1][r]);
        }
    }
    // Transversality rows.
    let base = 6 + 12 * n;
    let x_f = z.fixed_rows::<6>(12 * n).into_owned();
    let lam_f = z.fixed_rows::<6>(12 * n + 6).into_owned();
    let term = lam_f - prob.weights.qf * (x_f - mesh.refs[n]);
    for r in 0..6 {
        res[base + r] = term[r];
    }
    // amax skips NaN (comparisons are false), which would let a partially
    // NaN residual fake convergence; propagate non-finite entries instead.
    let max = res
        .iter()
        .fold(0.0f64, |a, &v| if v.is_finite() { a.max(v.abs()) } else { f64::INFINITY });
    (res, max)
}

fn assemble_jacobian(
    prob: &OcProblem,
    mesh: &Mesh,
    r_chol: &Cholesky<f64, Const<4>>,
    z: &DVector<f64>,
) -> BandMatrix {
    let n = prob.grid;
    let dim = 12 * (n + 1);
    let mut jac = BandMatrix::zeros(dim, 17, 17);
    let half_h = 0.5 * mesh.h;

    let node_jacs: Vec<Matrix12> = (0..=n)
        .map(|i| {
            let y = z.fixed_rows::<12>(12 * i).into_owned();
            augmented_jacobian(prob.coeffs, &prob.weights.q, r_chol, &y)
        })
        .collect();

    for r in 0..6 {
        jac.set(r, r, 1.0);
    }
    for i in 0..n {
        let base = 6 + 12 * i;
        for r in 0..12 {
            for c in 0..12 {
                let eye = if r == c { 1.0 } else { 0.0 };
                jac.add(base + r, 12 * i + c, -eye - half_h * node_jacs[i][(r, c)]);
                jac.add(base + r, 12 * (i + 1) + c, eye - half_h * node_jacs[i + 1][(r, c)]);
            }
        }
    }
    let base = 6 + 12 * n;
    for r in 0..6 {
        for c in 0..6 {
            jac.add(base + r, 12 * n + c, -prob.weights.qf[(r, c)]);
        }
        jac.add(base + r, 12 * n + 6 + r, 1.0);
    }
    jac
}

fn solution_from(z: &DVector<f64>, mesh: &Mesh, prob: &OcProblem, report: ConvergenceReport) -> OcSolution {
    let n = prob.grid;
    let mut states = Vec::with_capacity(n + 1);
    let mut costates = Vec::with_capacity(n + 1);
    let mut controls = Vec::with_capacity(n + 1);
    let chol = Cholesky::new(prob.weights.r).expect("R positive definite");
    for i in 0..=n {
        let x = z.fixed_rows::<6>(12 * i).into_owned();
        let lam = z.fixed_rows::<6>(12 * i + 6).into_owned();
        let b3 = thrust_accel_map(prob.coeffs, x[2]);
        let u = -chol.solve(&(b3.transpose() * lam.fixed_rows::<3>(3).into_owned()));
        states.push(x);
        costates.push(lam);
        controls.push(u);
    }
    OcSolution { times: mesh.times.clone(), states, costates, controls, report }
}

/// Initial iterate: warm solutions re-use the costate profile node for node
/// (consecutive problems are near-periodic translates of each other) and
/// re-propagate the state rows from the new initial condition; cold starts
/// use zero costates and a straight-line state guess.
fn initial_iterate(
    prob: &OcProblem,
    mesh: &Mesh,
    r_chol: &Cholesky<f64, Const<4>>,
    warm: Option<&OcSolution>,
) -> DVector<f64> {
    let n = prob.grid;
    let mut z = DVector::zeros(12 * (n + 1));
    let lam_guess: Vec<Vector6<f64>> = match warm {
        Some(w) if w.costates.len() == n + 1 => w.costates.clone(),
        _ => vec![Vector6::zeros(); n + 1],
    };

    let mut x = prob.x0;
    for i in 0..=n {
        z.fixed_rows_mut::<6>(12 * i).copy_from(&x);
        z.fixed_rows_mut::<6>(12 * i + 6).copy_from(&lam_guess[i]);
        if i < n {
            if warm.is_some() {
                // Midpoint step of the state half of the augmented system.
                let mut y = Vector12::zeros();
                y.fixed_rows_mut::<6>(0).copy_from(&x);
                y.fixed_rows_mut::<6>(6).copy_from(&lam_guess[i]);
                let k1 = augmented_rhs(prob.coeffs, &prob.weights.q, r_chol, &mesh.refs[i], &y);
                let mut ymid = y + 0.5 * mesh.h * k1;
                ymid.fixed_rows_mut::<6>(6)
                    .copy_from(&(0.5 * (lam_guess[i] + lam_guess[i + 1])));
                let k2 = augmented_rhs(prob.coeffs, &prob.weights.q, r_chol, &mesh.refs[i], &ymid);
                x += mesh.h * k2.fixed_rows::<6>(0).into_owned();
            } else {
                let frac = (i + 1) as f64 / n as f64;
                x = prob.x0 + frac * (mesh.refs[n] - prob.x0);
            }
        }
    }
    z
}

const NEWTON_TOL: f64 = 1e-9;
const NEWTON_MAX_ITER: usize = 50;

/// Solve the collocated optimality system. On failure the error carries the
/// best iterate so a caller can inspect or reuse it.
pub fn solve_tpbvp(prob: &OcProblem, warm: Option<&OcSolution>) -> Result<OcSolution, OcpError> {
    if !(prob.horizon > 0.0) || !prob.horizon.is_finite() {
        return Err(OcpError::Invalid(format!("horizon {} must be positive", prob.horizon)));
    }
    if prob.grid < 2 {
        return Err(OcpError::Invalid(format!("grid {} must be at least 2", prob.grid)));
    }
    if !prob.x0.iter().all(|v| v.is_finite()) {
        return Err(OcpError::Invalid("non-finite initial state".into()));
    }
    let coeffs_finite = prob.coeffs.w1.iter().all(|v| v.is_finite())
        && prob.coeffs.w2.iter().all(|v| v.is_finite())
        && prob.coeffs.w3.iter().all(|v| v.is_finite());
    if !coeffs_finite {
        return Err(OcpError::Invalid("non-finite model coefficients".into()));
    }
    let r_chol = Cholesky::new(prob.weights.r)
        .ok_or_else(|| OcpError::Invalid("R is not positive definite".into()))?;

    let mesh = build_mesh(prob);
    let mut z = initial_iterate(prob, &mesh, &r_chol, warm);
    let (mut res, mut res_max) = residual_all(prob, &mesh, &r_chol, &z);
    let mut best = (z.clone(), res_max, 0usize);

    for iter in 0..NEWTON_MAX_ITER {
        if res_max < NEWTON_TOL {
            let report =
                ConvergenceReport { iterations: iter, max_residual: res_max, converged: true };
            return Ok(solution_from(&z, &mesh, prob, report));
        }
        let mut jac = assemble_jacobian(prob, &mesh, &r_chol, &z);
        let mut step: Vec<f64> = (-&res).as_slice().to_vec();
        if jac.solve_in_place(&mut step).is_err() {
            break;
        }
        let dz = DVector::from_vec(step);
        if !dz.iter().all(|v| v.is_finite()) {
            break;
        }

        // Backtracking on the residual 2-norm merit.
        let merit = res.norm();
        let mut alpha = 1.0f64;
        let mut accepted = false;
        for _ in 0..9 {
            let trial = &z + alpha * &dz;
            let (trial_res, trial_max) = residual_all(prob, &mesh, &r_chol, &trial);
            if trial_res.norm() <= (1.0 - 1e-4 * alpha) * merit && trial_max.is_finite() {
                z = trial;
                res = trial_res;
                res_max = trial_max;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
        if res_max < best.1 {
            best = (z.clone(), res_max, iter + 1);
        }
    }

    if res_max < NEWTON_TOL {
        let report = ConvergenceReport {
            iterations: NEWTON_MAX_ITER,
            max_residual: res_max,
            converged: true,
        };
        return Ok(solution_from(&z, &mesh, prob, report));
    }
    let (bz, bres, biter) = best;
    let report = ConvergenceReport { iterations: biter, max_residual: bres, converged: false };
    Err(OcpError::NoConvergence {
        iterations: biter,
        residual: bres,
        best: Box::new(solution_from(&bz, &mesh, prob, report)),
    })
}

/// First-order optimality residuals of a solution against its problem.
pub fn pontryagin_residuals(prob: &OcProblem, sol: &OcSolution) -> PontryaginResiduals {
    let r_chol = Cholesky::new(prob.weights.r).expect("R positive definite");
    let mesh = build_mesh(prob);
    let n = prob.grid;
    let rhs: Vec<Vector12> = (0..=n)
        .map(|i| {
            let mut y = Vector12::zeros();
            y.fixed_rows_mut::<6>(0).copy_from(&sol.states[i]);
            y.fixed_rows_mut::<6>(6).copy_from(&sol.costates[i]);
            augmented_rhs(prob.coeffs, &prob.weights.q, &r_chol, &mesh.refs[i], &y)
        })
        .collect();
    let mut dyn_res = 0.0f64;
    let mut cos_res = 0.0f64;
    let half_h = 0.5 * mesh.h;
    for i in 0..n {
        for r in 0..6 {
            let d = sol.states[i + 1][r]
                - sol.states[i][r]
                - half_h * (rhs[i][r] + rhs[i + 1][r]);
            dyn_res = dyn_res.max(d.abs());
            let dl = sol.costates[i + 1][r]
                - sol.costates[i][r]
                - half_h * (rhs[i][6 + r] + rhs[i + 1][6 + r]);
            cos_res = cos_res.max(dl.abs());
        }
    }
    let mut stat = 0.0f64;
    for i in 0..=n {
        let b3 = thrust_accel_map(prob.coeffs, sol.states[i][2]);
        let lam_v = sol.costates[i].fixed_rows::<3>(3).into_owned();
        let resid = sol.controls[i].transpose() * prob.weights.r + (b3.transpose() * lam_v).transpose();
        stat = stat.max(resid.amax());
    }
    let xd_f = mesh.refs[n];
    let bres = boundary_residual(sol, &prob.x0, prob.weights, &xd_f).amax();
    PontryaginResiduals { dynamics: dyn_res, costate: cos_res, stationarity: stat, boundary: bres }
}

/// Sample the node controls at `rate` Hz over the horizon by piecewise
/// linear interpolation. For the default 1 s horizon at 100 Hz this yields
/// the 100 commands emitted until the next solve.
pub fn extract_control_sequence(sol: &OcSolution, rate: f64) -> Vec<Thrusts> {
    let t0 = *sol.times.first().expect("populated solution");
    let tf = *sol.times.last().expect("populated solution");
    let count = ((tf - t0) * rate).round() as usize;
    (0..count).map(|k| interp_nodes(&sol.times, &sol.controls, t0 + k as f64 / rate)).collect()
}

fn interp_nodes<const N: usize>(
    times: &[f64],
    values: &[SVector<f64, N>],
    t: f64,
) -> SVector<f64, N> {
    let n = times.len();
    if t <= times[0] {
        return values[0];
    }
    if t >= times[n - 1] {
        return values[n - 1];
    }
    let hi = times.partition_point(|&tt| tt <= t).min(n - 1);
    let lo = hi - 1;
    let frac = (t - times[lo]) / (times[hi] - times[lo]);
    values[lo] * (1.0 - frac) + values[hi] * frac
}

/// Per-solve diagnostic record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolveRecord {
    pub t: f64,
    pub iterations: usize,
    pub residual: f64,
    pub wall_ms: f64,
    pub warm_started: bool,
    pub converged: bool,
    /// First-order optimality residuals; present for converged solves.
    pub optimality: Option<PontryaginResiduals>,
}

/// Per-identification diagnostic record.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub t: f64,
    pub ok: bool,
    /// Per equation: the prior model was kept for lack of excitation.
    pub kept_previous: [bool; 3],
    pub detail: String,
}

/// Diagnostics accumulated over a closed-loop run.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct RunDiagnostics {
    pub solves: Vec<SolveRecord>,
    pub fits: Vec<FitRecord>,
    pub saturated_commands: usize,
}

impl RunDiagnostics {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("diagnostics serialize")
    }
}

/// Online refitting schedule for the data-driven mode.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OnlineIdentification {
    /// Seconds between refits.
    pub refresh: f64,
    /// Trailing data window per fit [s].
    pub window: f64,
    pub options: FitOptions,
}

impl Default for OnlineIdentification {
    fn default() -> Self {
        Self { refresh: 30.0, window: 30.0, options: FitOptions::default() }
    }
}

/// Controller geometry and weights.
#[derive(Debug, Clone)]
pub struct RhcConfig {
    pub weights: CostWeights,
    /// Optimization horizon, also the re-solve period [s].
    pub horizon: f64,
    /// Collocation intervals per horizon.
    pub grid: usize,
    /// Uniform thrust level the projection pulls toward [N].
    pub guess: f64,
    /// Use the previous solution to start the next solve.
    pub warm_start: bool,
}

impl Default for RhcConfig {
    fn default() -> Self {
        Self {
            weights: CostWeights::default(),
            horizon: 1.0,
            grid: 20,
            guess: 0.2,
            warm_start: true,
        }
    }
}

/// Receding-horizon controller: solves the optimality system every horizon,
/// emits projected thrusts at the control rate in between, and optionally
/// refits the model online from its own measurement history.
///
/// Model handoff goes through [`SharedModel`]: the in-flight command
/// sequence always comes from the model read at its solve tick, so a swap
/// mid-sequence never alters already-extracted commands.
pub struct RhcController<P: ReferencePath> {
    config: RhcConfig,
    path: P,
    shared: SharedModel,
    online: Option<OnlineIdentification>,
    next_fit: f64,
    hist_t: Vec<f64>,
    hist_x: Vec<State>,
    hist_u: Vec<Thrusts>,
    queue: VecDeque<Thrusts>,
    warm: Option<OcSolution>,
    last_cmd: Thrusts,
    consecutive_failures: usize,
    diagnostics: RunDiagnostics,
}

impl<P: ReferencePath> RhcController<P> {
    pub fn new(config: RhcConfig, path: P, initial_model: LearnedModel) -> Self {
        Self::with_shared(config, path, SharedModel::new(initial_model))
    }

    /// Build against an externally owned model slot (e.g. swapped by tests
    /// or a separate fitting thread).
    pub fn with_shared(config: RhcConfig, path: P, shared: SharedModel) -> Self {
        let next_fit = f64::INFINITY;
        Self {
            config,
            path,
            shared,
            online: None,
            next_fit,
            hist_t: Vec::new(),
            hist_x: Vec::new(),
            hist_u: Vec::new(),
            queue: VecDeque::new(),
            warm: None,
            last_cmd: Thrusts::zeros(),
            consecutive_failures: 0,
            diagnostics: RunDiagnostics::default(),
        }
    }

    /// Enable online refitting from the controller's own history.
    pub fn with_online(mut self, online: OnlineIdentification) -> Self {
        self.next_fit = online.refresh;
        self.online = Some(online);
        self
    }

    pub fn diagnostics(&self) -> &RunDiagnostics {
        &self.diagnostics
    }

    pub fn shared_model(&self) -> SharedModel {
        self.shared.clone()
    }

    fn maybe_fit(&mut self, t: f64) {
        let Some(online) = self.online else { return };
        if t + 1e-9 < self.next_fit {
            return;
        }
        self.next_fit += online.refresh;
        let span = match (self.hist_t.first(), self.hist_t.last()) {
            (Some(a), Some(b)) => b - a,
            _ => 0.0,
        };
        // History is sampled after command dispatch, so at the fit tick it
        // ends one control period short of t. Grant that one-sample slack
        // rather than silently skipping a fit scheduled at exactly
        // t = window.
        if span + 1.0 / CONTROL_RATE_HZ + 1e-9 < online.window {
            return;
        }
        let window = online.window.min(span);
        let prior = self.shared.latest();
        match fit_model(
            &self.hist_t,
            &self.hist_x,
            &self.hist_u,
            window,
            &online.options,
            Some(prior.as_ref()),
        ) {
            Ok(outcome) => {
                self.diagnostics.fits.push(FitRecord {
                    t,
                    ok: true,
                    kept_previous: outcome.kept_previous,
                    detail: outcome.detail,
                });
                self.shared.publish(outcome.model);
            }
            Err(err) => {
                self.diagnostics.fits.push(FitRecord {
                    t,
                    ok: false,
                    kept_previous: [true; 3],
                    detail: err.to_string(),
                });
            }
        }
        // Drop history older than one window before the next fit could need
        // it, so long runs stay bounded.
        let keep_from = t - online.window - online.refresh;
        let cut = self.hist_t.partition_point(|&tt| tt < keep_from);
        if cut > 0 {
            self.hist_t.drain(..cut);
            self.hist_x.drain(..cut);
            self.hist_u.drain(..cut);
        }
    }

    fn solve_and_refill(&mut self, t: f64, measured: &State) -> Result<(), ControlFault> {
        let model = self.shared.latest();
        let coeffs = model.coefficients();
        let prob = OcProblem {
            coeffs: &coeffs,
            weights: &self.config.weights,
            x0: measured.to_vector(),
            path: &self.path,
            t0: t,
            horizon: self.config.horizon,
            grid: self.config.grid,
        };
        let warm = if self.config.warm_start { self.warm.as_ref() } else { None };
        let warm_started = warm.is_some();
        let start = std::time::Instant::now();
        let outcome = solve_tpbvp(&prob, warm);
        let wall_ms = start.elapsed().as_secs_f64() * 1e3;
        match outcome {
            Ok(sol) => {
                self.diagnostics.solves.push(SolveRecord {
                    t,
                    iterations: sol.report.iterations,
                    residual: sol.report.max_residual,
                    wall_ms,
                    warm_started,
                    converged: true,
                    optimality: Some(pontryagin_residuals(&prob, &sol)),
                });
                let raw = extract_control_sequence(&sol, CONTROL_RATE_HZ);
                for (k, u_raw) in raw.iter().enumerate() {
                    let tk = t + k as f64 / CONTROL_RATE_HZ;
                    let theta = interp_nodes(&sol.times, &sol.states, tk)[2];
                    let p = project_thrusts(&coeffs, theta, u_raw, self.config.guess);
                    if p.saturated {
                        self.diagnostics.saturated_commands += 1;
                    }
                    self.queue.push_back(p.thrusts);
                }
                self.warm = Some(sol);
                self.consecutive_failures = 0;
                Ok(())
            }
            Err(err) => {
                let (iterations, residual) = match &err {
                    OcpError::NoConvergence { iterations, residual, .. } => (*iterations, *residual),
                    OcpError::Invalid(_) => (0, f64::NAN),
                };
                self.diagnostics.solves.push(SolveRecord {
                    t,
                    iterations,
                    residual,
                    wall_ms,
                    warm_started,
                    converged: false,
                    optimality: None,
                });
                self.consecutive_failures += 1;
                if self.consecutive_failures > 3 {
                    return Err(ControlFault {
                        reason: format!(
                            "optimal control solver failed {} consecutive times: {err}",
                            self.consecutive_failures
                        ),
                    });
                }
                // Degrade: hold the previous command level for a single
                // control period and drop the stale warm start, so the next
                // tick retries from a cold iterate instead of running open
                // loop for a whole refill window.
                self.queue.push_back(self.last_cmd);
                self.warm = None;
                Ok(())
            }
        }
    }
}

impl<P: ReferencePath> Controller for RhcController<P> {
    fn tick(&mut self, _index: usize, t: f64, measured: &State) -> Result<Thrusts, ControlFault> {
        self.maybe_fit(t);
        if self.queue.is_empty() {
            self.solve_and_refill(t, measured)?;
        }
        let u = self.queue.pop_front().expect("queue refilled");
        self.last_cmd = u;
        if self.online.is_some() {
            self.hist_t.push(t);
            self.hist_x.push(*measured);
            self.hist_u.push(u);
        }
        Ok(u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{true_basis_coefficients, VehicleParams};
    use crate::reference::{CurveSpec, FixedReference, ReferenceState};
    use crate::sysid::{model_eval, model_jacobians};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};

    fn coeffs() -> BasisCoefficients {
        true_basis_coefficients(&VehicleParams::default())
    }

    fn model() -> LearnedModel {
        LearnedModel::from_params(&VehicleParams::default(), 0.0)
    }

    fn random_vec6(rng: &mut impl Rng, scale: f64) -> Vector6<f64> {
        Vector6::from_fn(|_, _| rng.gen_range(-scale..scale))
    }

    #[test]
    fn stationarity_zero_costate_gives_zero_control() {
        let u = stationarity_control(&coeffs(), &CostWeights::default(), &State::default(), &Vector6::zeros());
        assert_eq!(u, Thrusts::zeros());
    }

    #[test]
    fn stationarity_scales_inversely_with_r() {
        let c = coeffs();
        let s = State { heading: 0.8, ..State::default() };
        let lam = Vector6::new(0.1, -0.2, 0.3, 0.4, -0.5, 0.6);
        let w1 = CostWeights::default();
        let mut w2 = CostWeights::default();
        w2.r *= 5.0;
        let u1 = stationarity_control(&c, &w1, &s, &lam);
        let u2 = stationarity_control(&c, &w2, &s, &lam);
        assert_relative_eq!(u2, u1 / 5.0, max_relative = 1e-12);
    }

    #[test]
    fn stationarity_residual_vanishes_identically() {
        let c = coeffs();
        let w = CostWeights::default();
        let mut rng = rand::rngs::StdRng::seed_from_u64(5);
        for _ in 0..50 {
            let s = State { heading: rng.gen_range(-6.0..6.0), ..State::default() };
            let lam = random_vec6(&mut rng, 2.0);
            let u = stationarity_control(&c, &w, &s, &lam);
            let b3 = thrust_accel_map(&c, s.heading);
            let lam_v = lam.fixed_rows::<3>(3).into_owned();
            let resid = (u.transpose() * w.r + (b3.transpose() * lam_v).transpose()).amax();
            assert!(resid < 1e-12, "stationarity residual {resid}");
        }
    }

    #[test]
    fn costate_rhs_vanishes_on_reference_with_zero_costate() {
        let xd = Vector6::new(1.0, 2.0, 0.5, 0.1, 0.0, 0.0);
        let got = costate_rhs(&coeffs(), &CostWeights::default(), &xd, &Vector6::zeros(), &xd);
        assert_eq!(got, Vector6::zeros());
    }

    #[test]
    fn costate_rhs_reduces_to_adjoint_when_q_is_zero() {
        let c = coeffs();
        let mut w = CostWeights::default();
        w.q = Matrix6::zeros();
        let x = Vector6::new(0.0, 0.0, 0.7, 0.2, -0.1, 0.3);
        let lam = Vector6::new(0.3, -0.2, 0.1, 0.5, 0.4, -0.6);
        let xd = Vector6::new(9.0, 9.0, 9.0, 9.0, 9.0, 9.0);
        // x_d must be irrelevant with Q = 0.
        let a = costate_rhs(&c, &w, &x, &lam, &xd);
        let b = costate_rhs(&c, &w, &x, &lam, &x);
        assert_relative_eq!(a, b, max_relative = 1e-14);
    }

    #[test]
    fn costate_rhs_is_minus_hamiltonian_gradient() {
        let c = coeffs();
        let w = CostWeights::default();
        let mut rng = rand::rngs::StdRng::seed_from_u64(9);
        for _ in 0..20 {
            let x = random_vec6(&mut rng, 0.8);
            let lam = random_vec6(&mut rng, 0.8);
            let xd = random_vec6(&mut rng, 0.8);
            // H(x) with u held at the stationary value of the base point;
            // by the envelope property the partial matches the total.
            let st = State::from_vector(&x);
            let u = stationarity_control(&c, &w, &st, &lam);
            let hamiltonian = |xv: &Vector6<f64>| {
                let sv = State::from_vector(xv);
                let g = {
                    let b3 = thrust_accel_map(&c, sv.heading);
                    let wd = Vector3::new(c.w1[0], c.w2[0], c.w3[0]);
                    wd.component_mul(&Vector3::new(sv.vx, sv.vy, sv.yaw_rate)) + b3 * u
                };
                let f = Vector6::new(xv[3], xv[4], xv[5], g[0], g[1], g[2]);
                let err = xv - xd;
                0.5 * (err.transpose() * w.q * err)[0]
                    + 0.5 * (u.transpose() * w.r * u)[0]
                    + lam.dot(&f)
            };
            let got = costate_rhs(&c, &w, &x, &lam, &xd);
            let h = 1e-6;
            for i in 0..6 {
                let mut xp = x;
                let mut xm = x;
                xp[i] += h;
                xm[i] -= h;
                let fd = -(hamiltonian(&xp) - hamiltonian(&xm)) / (2.0 * h);
                assert_relative_eq!(got[i], fd, epsilon = 1e-6, max_relative = 1e-6);
            }
        }
    }

    #[test]
    fn augmented_jacobian_matches_finite_differences() {
        let c = coeffs();
        let w = CostWeights::default();
        let r_chol = Cholesky::new(w.r).unwrap();
        let xd = Vector6::new(0.4, -0.3, 0.2, 0.05, -0.02, 0.1);
        let mut rng = rand::rngs::StdRng::seed_from_u64(17);
        for _ in 0..30 {
            let y = Vector12::from_fn(|_, _| rng.gen_range(-1.0..1.0));
            let jac = augmented_jacobian(&c, &w.q, &r_chol, &y);
            let h = 1e-6;
            for col in 0..12 {
                let mut yp = y;
                let mut ym = y;
                yp[col] += h;
                ym[col] -= h;
                let fp = augmented_rhs(&c, &w.q, &r_chol, &xd, &yp);
                let fm = augmented_rhs(&c, &w.q, &r_chol, &xd, &ym);
                let fd = (fp - fm) / (2.0 * h);
                for row in 0..12 {
                    assert_relative_eq!(
                        jac[(row, col)],
                        fd[row],
                        epsilon = 2e-6,
                        max_relative = 2e-6
                    );
                }
            }
        }
    }

    fn rest_reference() -> FixedReference {
        FixedReference(ReferenceState::default())
    }

    #[test]
    fn zero_cost_problem_returns_free_drift() {
        let c = coeffs();
        let mut w = CostWeights::default();
        w.q = Matrix6::zeros();
        w.qf = Matrix6::zeros();
        let x0 = Vector6::new(0.1, -0.2, 0.4, 0.08, -0.03, 0.2);
        let prob = OcProblem {
            coeffs: &c,
            weights: &w,
            x0,
            path: &rest_reference(),
            t0: 0.0,
            horizon: 1.0,
            grid: 20,
        };
        let sol = solve_tpbvp(&prob, None).unwrap();
        assert!(sol.report.converged);
        for (lam, u) in sol.costates.iter().zip(&sol.controls) {
            assert!(lam.amax() < 1e-10);
            assert!(u.amax() < 1e-10);
        }
        // Free drift oracle: integrate the unforced model finely.
        let mdl = model();
        let mut x = x0;
        let dt = 1e-4;
        for _ in 0..10_000 {
            let f = |xv: &Vector6<f64>| {
                let g = model_eval(&mdl, &State::from_vector(xv), &Thrusts::zeros());
                Vector6::new(xv[3], xv[4], xv[5], g[0], g[1], g[2])
            };
            let k1 = f(&x);
            let k2 = f(&(x + 0.5 * dt * k1));
            let k3 = f(&(x + 0.5 * dt * k2));
            let k4 = f(&(x + dt * k3));
            x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let gap = (sol.states.last().unwrap() - x).amax();
        assert!(gap < 1e-4, "drift endpoint differs by {gap}");
    }

    #[test]
    fn equilibrium_tracking_needs_no_control() {
        let c = coeffs();
        let w = CostWeights::default();
        let prob = OcProblem {
            coeffs: &c,
            weights: &w,
            x0: Vector6::zeros(),
            path: &rest_reference(),
            t0: 0.0,
            horizon: 1.0,
            grid: 20,
        };
        let sol = solve_tpbvp(&prob, None).unwrap();
        assert!(sol.report.converged);
        assert!(sol.report.iterations <= 1);
        for u in &sol.controls {
            assert!(u.amax() < 1e-9);
        }
    }

    fn sine_problem_x0() -> Vector6<f64> {
        let r = CurveSpec::sine_default().state_at(0.0).to_vector();
        r + Vector6::new(0.03, -0.02, 0.05, 0.0, 0.0, 0.0)
    }

    #[test]
    fn pontryagin_residuals_are_tiny_on_a_converged_solve() {
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let prob = OcProblem {
            coeffs: &c,
            weights: &w,
            x0: sine_problem_x0(),
            path: &curve,
            t0: 0.0,
            horizon: 1.0,
            grid: 20,
        };
        let sol = solve_tpbvp(&prob, None).unwrap();
        assert!(sol.report.converged);
        let res = pontryagin_residuals(&prob, &sol);
        assert!(res.dynamics < 1e-6, "dynamics {}", res.dynamics);
        assert!(res.costate < 1e-6, "costate {}", res.costate);
        assert!(res.stationarity < 1e-6, "stationarity {}", res.stationarity);
        assert!(res.boundary < 1e-6, "boundary {}", res.boundary);
    }

    /// Simulate the model under an interpolated control signal and return
    /// the tracking cost of the problem.
    fn rollout_cost(
        prob: &OcProblem,
        times: &[f64],
        controls: &[Thrusts],
    ) -> f64 {
        let mdl_coeffs = prob.coeffs;
        let dt = 5e-4;
        let steps = (prob.horizon / dt).round() as usize;
        let mut x = prob.x0;
        let mut j = 0.0;
        let stage = |x: &Vector6<f64>, u: &Thrusts, t: f64| {
            let xd = prob.path.state_at(t).to_vector();
            let e = x - xd;
            0.5 * (e.transpose() * prob.weights.q * e)[0]
                + 0.5 * (u.transpose() * prob.weights.r * u)[0]
        };
        let f = |x: &Vector6<f64>, u: &Thrusts| {
            let s = State::from_vector(x);
            let b3 = thrust_accel_map(mdl_coeffs, s.heading);
            let wd = Vector3::new(mdl_coeffs.w1[0], mdl_coeffs.w2[0], mdl_coeffs.w3[0]);
            let g = wd.component_mul(&Vector3::new(s.vx, s.vy, s.yaw_rate)) + b3 * u;
            Vector6::new(x[3], x[4], x[5], g[0], g[1], g[2])
        };
        for k in 0..steps {
            let t = prob.t0 + k as f64 * dt;
            let u = interp_nodes(times, controls, t);
            let u_mid = interp_nodes(times, controls, t + 0.5 * dt);
            let u_end = interp_nodes(times, controls, t + dt);
            let w_trapz = if k == 0 { 0.5 } else { 1.0 };
            j += w_trapz * dt * stage(&x, &u, t);
            let k1 = f(&x, &u);
            let k2 = f(&(x + 0.5 * dt * k1), &u_mid);
            let k3 = f(&(x + 0.5 * dt * k2), &u_mid);
            let k4 = f(&(x + dt * k3), &u_end);
            x += (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        let tf = prob.t0 + prob.horizon;
        let uf = interp_nodes(times, controls, tf);
        j += 0.5 * dt * stage(&x, &uf, tf);
        let ef = x - prob.path.state_at(tf).to_vector();
        j + 0.5 * (ef.transpose() * prob.weights.qf * ef)[0]
    }

    #[test]
    fn no_random_perturbation_beats_the_solution_cost() {
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let prob = OcProblem {
            coeffs: &c,
            weights: &w,
            x0: sine_problem_x0(),
            path: &curve,
            t0: 0.0,
            horizon: 1.0,
            grid: 20,
        };
        let sol = solve_tpbvp(&prob, None).unwrap();
        let j_star = rollout_cost(&prob, &sol.times, &sol.controls);
        let mut rng = rand::rngs::StdRng::seed_from_u64(23);
        for trial in 0..100 {
            let perturbed: Vec<Thrusts> = sol
                .controls
                .iter()
                .map(|u| u + Thrusts::from_fn(|_, _| rng.gen_range(-0.05..0.05)))
                .collect();
            let j = rollout_cost(&prob, &sol.times, &perturbed);
            assert!(j > j_star, "perturbation {trial} undercut the optimum: {j} < {j_star}");
        }
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        // Discrete check of the Jacobian machinery in optimization form:
        // explicit-Euler rollout, trapezoid state cost, analytic adjoint.
        let mdl = model();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let n = 100usize;
        let h = 0.01;
        let mut rng = rand::rngs::StdRng::seed_from_u64(31);
        let us: Vec<Thrusts> =
            (0..n).map(|_| Thrusts::from_fn(|_, _| rng.gen_range(0.0..0.4))).collect();
        let xd: Vec<Vector6<f64>> =
            (0..=n).map(|k| curve.state_at(k as f64 * h).to_vector()).collect();
        let weight = |k: usize| if k == 0 || k == n { 0.5 * h } else { h };

        let rollout = |us: &[Thrusts]| -> (f64, Vec<Vector6<f64>>) {
            let mut xs = vec![sine_problem_x0()];
            for u in us.iter() {
                let x = *xs.last().unwrap();
                let g = model_eval(&mdl, &State::from_vector(&x), u);
                xs.push(x + h * Vector6::new(x[3], x[4], x[5], g[0], g[1], g[2]));
            }
            let mut j = 0.0;
            for k in 0..=n {
                let e = xs[k] - xd[k];
                j += weight(k) * 0.5 * (e.transpose() * w.q * e)[0];
                if k < n {
                    j += h * 0.5 * (us[k].transpose() * w.r * us[k])[0];
                }
            }
            let ef = xs[n] - xd[n];
            j += 0.5 * (ef.transpose() * w.qf * ef)[0];
            (j, xs)
        };

        let (j0, xs) = rollout(&us);
        // Backward adjoint of the same discrete map.
        let mut p = w.qf * (xs[n] - xd[n]) + weight(n) * (w.q * (xs[n] - xd[n]));
        let mut grad = vec![Thrusts::zeros(); n];
        for k in (0..n).rev() {
            let sk = State::from_vector(&xs[k]);
            let (a, b) = model_jacobians(&mdl, &sk, &us[k]);
            grad[k] = h * (w.r * us[k]) + h * (b.transpose() * p);
            p = weight(k) * (w.q * (xs[k] - xd[k])) + p + h * (a.transpose() * p);
        }

        let delta = 1e-6;
        for &(k, j_comp) in &[(3usize, 0usize), (17, 2), (50, 1), (88, 3), (99, 0)] {
            let mut up = us.clone();
            up[k][j_comp] += delta;
            let (jp, _) = rollout(&up);
            let fd = (jp - j0) / delta;
            assert_relative_eq!(grad[k][j_comp], fd, max_relative = 1e-4, epsilon = 1e-8);
        }
    }

    #[test]
    fn extraction_reproduces_node_values_and_constants() {
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let prob = OcProblem {
            coeffs: &c,
            weights: &w,
            x0: sine_problem_x0(),
            path: &curve,
            t0: 0.0,
            horizon: 1.0,
            grid: 20,
        };
        let sol = solve_tpbvp(&prob, None).unwrap();
        let seq = extract_control_sequence(&sol, 100.0);
        assert_eq!(seq.len(), 100);
        // Node spacing 0.05 s: every fifth sample sits exactly on a node.
        for i in 0..20 {
            assert_relative_eq!(seq[5 * i], sol.controls[i], max_relative = 1e-12);
        }
        // A constant control field extracts to a constant sequence.
        let mut flat = sol.clone();
        for u in &mut flat.controls {
            *u = Thrusts::repeat(0.2);
        }
        let seq = extract_control_sequence(&flat, 100.0);
        assert!(seq.iter().all(|u| (u - Thrusts::repeat(0.2)).amax() < 1e-15));
    }

    #[test]
    fn coarse_interpolant_tracks_a_dense_resolve() {
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let mk = |grid: usize| OcProblem {
            coeffs: &c,
            weights: &w,
            x0: sine_problem_x0(),
            path: &curve,
            t0: 0.0,
            horizon: 1.0,
            grid,
        };
        let coarse = solve_tpbvp(&mk(20), None).unwrap();
        let dense = solve_tpbvp(&mk(200), None).unwrap();
        let sa = extract_control_sequence(&coarse, 100.0);
        let sb = extract_control_sequence(&dense, 100.0);
        let range = {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for u in &sb {
                lo = lo.min(u.min());
                hi = hi.max(u.max());
            }
            hi - lo
        };
        let worst = sa
            .iter()
            .zip(&sb)
            .map(|(a, b)| (a - b).amax())
            .fold(0.0f64, f64::max);
        assert!(worst < 0.05 * range, "interpolant error {worst} vs range {range}");
    }

    #[test]
    fn doubling_the_grid_barely_moves_the_commands() {
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let mk = |grid: usize| OcProblem {
            coeffs: &c,
            weights: &w,
            x0: sine_problem_x0(),
            path: &curve,
            t0: 0.0,
            horizon: 1.0,
            grid,
        };
        let a = extract_control_sequence(&solve_tpbvp(&mk(20), None).unwrap(), 100.0);
        let b = extract_control_sequence(&solve_tpbvp(&mk(40), None).unwrap(), 100.0);
        let range = {
            let mut lo = f64::INFINITY;
            let mut hi = f64::NEG_INFINITY;
            for u in &b {
                lo = lo.min(u.min());
                hi = hi.max(u.max());
            }
            hi - lo
        };
        let mut sq = 0.0;
        let mut count = 0.0;
        for (ua, ub) in a.iter().zip(&b) {
            sq += (ua - ub).norm_squared();
            count += 4.0;
        }
        let rms = (sq / count).sqrt();
        assert!(rms < 0.02 * range, "grid refinement rms {rms} vs range {range}");
    }

    #[test]
    fn symmetric_geometry_makes_the_optimality_system_linear() {
        // For the nominal coefficients the body-frame thrust Gram matrix is
        // isotropic in the force plane, so B(θ)R⁻¹B(θ)ᵀ is heading
        // independent and the heading-costate coupling λ_vᵀB'R⁻¹Bᵀλ_v is a
        // quadratic form of an antisymmetric matrix, identically zero. The
        // collocated optimality system is then exactly linear and Newton
        // converges in one step from any start, however large the offset.
        let c = coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        for off in [0.05, 0.5, 2.0] {
            let x0 = curve.state_at(0.0).to_vector()
                + Vector6::new(off, -off, off, 0.0, 0.0, 0.1 * off);
            let prob = OcProblem {
                coeffs: &c,
                weights: &w,
                x0,
                path: &curve,
                t0: 0.0,
                horizon: 1.0,
                grid: 20,
            };
            let sol = solve_tpbvp(&prob, None).unwrap();
            assert!(
                sol.report.iterations <= 1,
                "offset {off}: {} iterations",
                sol.report.iterations
            );
        }
    }

    /// Nominal coefficients distorted by a deterministic ±10% multiplicative
    /// pattern, the anisotropy a fit from noisy data would show.
    fn anisotropic_coeffs() -> BasisCoefficients {
        let mut c = coeffs();
        let mut state = 0x9e3779b97f4a7c15u64;
        let mut next = || {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        };
        for v in c.w1.iter_mut().chain(c.w2.iter_mut()).chain(c.w3.iter_mut()) {
            *v *= 1.0 + 0.1 * next();
        }
        c
    }

    #[test]
    fn warm_starts_on_anisotropic_models_never_lose_and_save_work() {
        // Anisotropic coefficients break the exact-linearity degeneracy of
        // the symmetric geometry, so consecutive receding-horizon windows
        // need real Newton work. Warm starting from the previous solution
        // must never take more iterations than a cold start on the same
        // problem, must save iterations somewhere over a 30-window run, and
        // must land on the same solution.
        let c = anisotropic_coeffs();
        let w = CostWeights::default();
        let curve = CurveSpec::sine_default();
        let mut x0 = curve.state_at(0.0).to_vector()
            + Vector6::new(0.05, -0.05, 0.1, 0.0, 0.0, 0.0);
        let mut warm: Option<OcSolution> = None;
        let mut warm_iters = Vec::new();
        let mut cold_iters = Vec::new();
        for tick in 0..30 {
            let prob = OcProblem {
                coeffs: &c,
                weights: &w,
                x0,
                path: &curve,
                t0: tick as f64,
                horizon: 1.0,
                grid: 20,
            };
            let sol_warm = solve_tpbvp(&prob, warm.as_ref()).unwrap();
            let sol_cold = solve_tpbvp(&prob, None).unwrap();
            let gap = sol_warm
                .states
                .iter()
                .zip(&sol_cold.states)
                .map(|(a, b)| (a - b).amax())
                .fold(0.0f64, f64::max);
            assert!(gap < 1e-6, "warm and cold disagree by {gap}");
            if tick > 0 {
                warm_iters.push(sol_warm.report.iterations);
                cold_iters.push(sol_cold.report.iterations);
            }
            x0 = *sol_warm.states.last().unwrap();
            warm = Some(sol_warm);
        }
        for (w_it, c_it) in warm_iters.iter().zip(&cold_iters) {
            assert!(w_it <= c_it, "warm {warm_iters:?} vs cold {cold_iters:?}");
        }
        let total_warm: usize = warm_iters.iter().sum();
        let total_cold: usize = cold_iters.iter().sum();
        assert!(
            total_warm < total_cold,
            "warm {warm_iters:?} (sum {total_warm}) vs cold {cold_iters:?} (sum {total_cold})"
        );
    }

    #[test]
    fn invalid_problems_are_rejected() {
        let c = coeffs();
        let w = CostWeights::default();
        let bad_grid = OcProblem {
            coeffs: &c,
            weights: &w,
            x0: Vector6::zeros(),
            path: &rest_reference(),
            t0: 0.0,
            horizon: 1.0,
            grid: 1,
        };
        assert!(matches!(solve_tpbvp(&bad_grid, None), Err(OcpError::Invalid(_))));
        let bad_horizon = OcProblem { horizon: 0.0, grid: 20, ..bad_grid };
        assert!(matches!(solve_tpbvp(&bad_horizon, None), Err(OcpError::Invalid(_))));
    }

    #[test]
    fn weight_validation_rejects_asymmetry_and_indefiniteness() {
        assert!(CostWeights::default().validate().is_ok());
        let mut asym = CostWeights::default();
        asym.q[(0, 1)] = 1.0;
        assert!(asym.validate().is_err());
        let mut indef = CostWeights::default();
        indef.r[(2, 2)] = -1.0;
        assert!(indef.validate().is_err());
    }

    #[test]
    fn controller_tracks_and_solves_fast() {
        let cfg = RhcConfig::default();
        let curve = CurveSpec::sine_default();
        let mut ctl = RhcController::new(cfg, curve, model());
        let log = crate::sim::run_scenario(
            VehicleParams::default(),
            &curve,
            &[],
            &mut ctl,
            8.0,
            &crate::sim::SimOptions::default(),
        )
        .unwrap();
        assert!(log.fault.is_none());
        assert_eq!(log.len(), 801);
        // Initial offset is zero (starts on-path); stays close throughout.
        let worst = log.errors.iter().cloned().fold(0.0f64, f64::max);
        assert!(worst < 0.05, "tracking error grew to {worst} m");
        // Ticks 0..=800: a fresh sequence starts at every whole second,
        // including the final logged tick at t = 8.
        let d = ctl.diagnostics();
        assert_eq!(d.solves.len(), 9);
        assert!(d.solves.iter().all(|s| s.converged));
        let mut walls: Vec<f64> = d.solves.iter().map(|s| s.wall_ms).collect();
        walls.sort_by(f64::total_cmp);
        assert!(walls[walls.len() / 2] < 250.0, "median solve {} ms", walls[walls.len() / 2]);
    }

    #[test]
    fn model_swap_mid_sequence_does_not_touch_inflight_commands() {
        let curve = CurveSpec::sine_default();
        let measured = State::from_vector(&sine_problem_x0());
        let run = |swap_tick: Option<usize>| -> Vec<Thrusts> {
            let shared = SharedModel::new(model());
            let mut ctl = RhcController::with_shared(RhcConfig::default(), curve, shared.clone());
            let mut out = Vec::new();
            for k in 0..100 {
                if swap_tick == Some(k) {
                    // A very different model mid-sequence.
                    let mut distorted = model();
                    for v in distorted.w1.iter_mut() {
                        *v *= 3.0;
                    }
                    shared.publish(distorted);
                }
                out.push(ctl.tick(k, k as f64 * 0.01, &measured).unwrap());
            }
            out
        };
        let untouched = run(None);
        let swapped = run(Some(7));
        assert_eq!(untouched, swapped);
    }

    #[test]
    fn repeated_solver_failure_escalates_to_a_fault() {
        // A model with NaN coefficients can never converge.
        let mut broken = model();
        broken.w1[0] = f64::NAN;
        let curve = CurveSpec::sine_default();
        let mut ctl = RhcController::new(RhcConfig::default(), curve, broken);
        let log = crate::sim::run_scenario(
            VehicleParams::default(),
            &curve,
            &[],
            &mut ctl,
            10.0,
            &crate::sim::SimOptions::default(),
        )
        .unwrap();
        let fault = log.fault.as_ref().expect("controller fault");
        // Each failed tick holds for one control period, so the fourth
        // consecutive failure trips the breaker at t = 0.03.
        assert_relative_eq!(fault.time, 0.03, epsilon = 1e-9);
        assert!(fault.reason.contains("consecutive"));
        assert_eq!(log.len(), 3);
        // Held zero thrust while degrading.
        assert!(log.controls.iter().all(|u| u.amax() == 0.0));
    }
}

