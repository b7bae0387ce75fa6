//! Non-negative thrust projection.
//!
//! The stationarity condition hands back an unconstrained thrust vector
//! `raw`, but the jets only push. The four thrusters are over-actuated for
//! the three generalized forces, so `raw` can be traded along the null
//! space of the thrust map without changing the produced wrench. The
//! projection picks the null-space point closest to a uniform positive
//! `guess` level:
//!
//! ```text
//! min ‖F - guess·1‖²   s.t.   B(θ) F = B(θ) raw,   F ≥ 0
//! ```
//!
//! With the physical jet layout the null space is exactly the all-ones
//! direction (equal thrusts cancel in force and moment), so the problem is
//! a one-dimensional clamp; the code handles general null-space dimensions
//! via a small active-set iteration so slightly asymmetric learned models
//! behave identically. When no non-negative F can realize the demanded
//! wrench at all, the closest realizable wrench is used instead
//! (non-negative least squares) and the result is flagged as saturated.

use crate::dynamics::{thrust_accel_map, BasisCoefficients, Thrusts};
use nalgebra::{DMatrix, DVector, Matrix3x4, Vector4};

/// Outcome of a projection: always non-negative thrusts, with `saturated`
/// set when the demanded wrench itself had to be altered.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    pub thrusts: Thrusts,
    pub saturated: bool,
}

const FEAS_TOL: f64 = 1e-10;

/// Orthonormal basis of the null space of the 3x4 thrust map, via the
/// eigendecomposition of `BᵀB` (a thin SVD would not expose the kernel).
fn null_space(b: &Matrix3x4<f64>) -> DMatrix<f64> {
    let gram = b.transpose() * b;
    let eig = nalgebra::SymmetricEigen::new(gram);
    let lam_max = eig.eigenvalues.iter().fold(0.0f64, |a, &v| a.max(v));
    let tol = lam_max.max(1e-300) * 1e-12;
    let null_cols: Vec<usize> =
        (0..4).filter(|&i| eig.eigenvalues[i] < tol).collect();
    let mut n = DMatrix::zeros(4, null_cols.len());
    for (j, &i) in null_cols.iter().enumerate() {
        n.set_column(j, &eig.eigenvectors.column(i));
    }
    n
}

/// Minimize `‖F - guess·1‖` over `F = base + N c ≥ 0`. Returns `None` when
/// the feasible set is empty (or the active set cannot certify a point).
fn toward_uniform(n: &DMatrix<f64>, base: &Vector4<f64>, guess: f64) -> Option<Vector4<f64>> {
    let d = n.ncols();
    let target = Vector4::repeat(guess) - base;
    // Unconstrained optimum in null coordinates (N has orthonormal columns).
    let c0 = n.transpose() * target;

    let mut active: Vec<usize> = Vec::new();
    for _ in 0..16 {
        let c;
        if active.is_empty() {
            c = c0.clone();
        } else {
            // Project c0 onto the affine set {c : N_W c = -base_W}.
            let w = active.len();
            let mut a = DMatrix::zeros(w, d);
            let mut rhs = DVector::zeros(w);
            for (r, &i) in active.iter().enumerate() {
                a.set_row(r, &n.row(i));
                rhs[r] = -base[i];
            }
            let gram = &a * a.transpose();
            let resid = rhs - &a * &c0;
            let nu = gram.clone().svd(true, true).solve(&resid, 1e-12).ok()?;
            c = &c0 + a.transpose() * &nu;
            // If the active equalities are not met the set is inconsistent,
            // i.e. the demanded wrench needs a negative thrust.
            for &i in active.iter() {
                let fi = base[i] + (n.row(i) * &c)[0];
                if fi.abs() > 1e-8 {
                    return None;
                }
            }
            // Multiplier sign check: negative means the bound should not
            // be active after all.
            if let Some((pos, _)) = nu
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < -FEAS_TOL)
                .min_by(|x, y| x.1.total_cmp(y.1))
            {
                active.remove(pos);
                continue;
            }
        }

        let f = base + nalgebra::Vector4::from_iterator((0..4).map(|i| (n.row(i) * &c)[0]));
        let mut worst = None;
        let mut worst_v = -FEAS_TOL;
        for i in 0..4 {
            if !active.contains(&i) && f[i] < worst_v {
                worst_v = f[i];
                worst = Some(i);
            }
        }
        match worst {
            Some(i) if active.len() < 4 => active.push(i),
            Some(_) => return None,
            None => {
                let mut out = f;
                for i in 0..4 {
                    if out[i].abs() < FEAS_TOL {
                        out[i] = 0.0;
                    }
                }
                return Some(out);
            }
        }
    }
    None
}

/// Lawson-Hanson non-negative least squares for `min ‖A x - b‖`, `x ≥ 0`.
fn nnls(a: &Matrix3x4<f64>, b: &nalgebra::Vector3<f64>) -> Vector4<f64> {
    let mut x = Vector4::zeros();
    let mut passive = [false; 4];
    let scale = b.norm().max(1e-12);
    for _ in 0..50 {
        let grad = a.transpose() * (b - a * x);
        let mut best: Option<(usize, f64)> = None;
        for i in 0..4 {
            if !passive[i] && grad[i] > 1e-12 * scale {
                if best.map_or(true, |(_, g)| grad[i] > g) {
                    best = Some((i, grad[i]));
                }
            }
        }
        let Some((j, _)) = best else { break };
        passive[j] = true;

        loop {
            let cols: Vec<usize> = (0..4).filter(|&i| passive[i]).collect();
            let mut ap = DMatrix::zeros(3, cols.len());
            for (ci, &i) in cols.iter().enumerate() {
                ap.set_column(ci, &a.column(i));
            }
            let z = ap
                .clone()
                .svd(true, true)
                .solve(&DVector::from_column_slice(b.as_slice()), 1e-12)
                .expect("svd solve");
            if z.iter().all(|&v| v > 0.0) {
                x = Vector4::zeros();
                for (ci, &i) in cols.iter().enumerate() {
                    x[i] = z[ci];
                }
                break;
            }
            // Step back to the feasible boundary and drop zeroed entries.
            let mut alpha = 1.0f64;
            for (ci, &i) in cols.iter().enumerate() {
                if z[ci] <= 0.0 {
                    alpha = alpha.min(x[i] / (x[i] - z[ci]));
                }
            }
            for (ci, &i) in cols.iter().enumerate() {
                x[i] += alpha * (z[ci] - x[i]);
                if x[i] < 1e-14 {
                    x[i] = 0.0;
                    passive[i] = false;
                }
            }
        }
    }
    x
}

/// Project the raw stationarity control onto non-negative thrusts that
/// realize the same generalized force, staying as close as possible to a
/// uniform `guess` newtons per jet. See the module docs for the fallback
/// when the wrench is unrealizable.
pub fn project_thrusts(
    coeffs: &BasisCoefficients,
    theta: f64,
    raw: &Thrusts,
    guess: f64,
) -> Projection {
    let b = thrust_accel_map(coeffs, theta);
    let n = null_space(&b);
    if let Some(f) = toward_uniform(&n, raw, guess) {
        let drift = (b * (f - raw)).norm();
        if drift <= 1e-9 * (1.0 + (b * raw).norm()) {
            return Projection { thrusts: f, saturated: false };
        }
    }
    // Unrealizable wrench: realize the nearest one, then still spread the
    // slack toward the guess level (keeps the result idempotent).
    let feasible = nnls(&b, &(b * raw));
    let polished = toward_uniform(&n, &feasible, guess).unwrap_or(feasible);
    Projection { thrusts: polished, saturated: true }
}
