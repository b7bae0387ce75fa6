//! Planar rigid-body dynamics of an over-actuated four-jet watercraft.
//!
//! The craft is modeled as a rigid body in the horizontal plane with
//! generalized coordinates `q = [X_G, Y_G, theta]` (inertial position of the
//! center of mass and heading). Lagrange's equations give
//!
//! ```text
//! M qdd + C(q, qd) qd = Q_thr + Q_hydr + Q_drag
//! ```
//!
//! where `M` is constant (so `C` vanishes identically, which
//! [`coriolis_matrix`] evaluates rather than assumes), `Q_thr` collects the
//! four jet forces through the corner-point Jacobians, `Q_hydr` is an added
//! mass of the surrounding water lumped into an effective-sphere term, and
//! `Q_drag` is linear viscous drag applied in the body frame.
//!
//! Jets sit at the corners of a square of side `spacing`, each with a fixed
//! in-body thrust direction at angle `thrust_angle` off the hull edge. The
//! directions mirror across both body axes, so the four thrusts cancel
//! pairwise: equal commands produce zero net force and zero net moment, and
//! the all-ones thrust vector spans the null space of the allocation map.
//! That redundancy is what lets the thrust projection shift any commanded
//! wrench into the non-negative orthant.

use nalgebra::{Matrix2, Matrix3, Matrix3x4, Matrix6, Matrix6x4, SVector, Vector2, Vector3, Vector6};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Per-jet thrust magnitudes `[F1, F2, F3, F4]` in newtons. Physical
/// commands are non-negative; raw optimizer output may not be, which is why
/// the thrust projection exists.
pub type Thrusts = nalgebra::Vector4<f64>;

/// Generalized force `[Q_X, Q_Y, Q_theta]` (N, N, N·m).
pub type GeneralizedForce = Vector3<f64>;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid vehicle parameter {name} = {value}")]
    InvalidParam { name: &'static str, value: f64 },
    #[error("effective mass matrix is not positive definite")]
    SingularMass,
}

/// Physical parameters of the craft and the water it sits in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VehicleParams {
    /// Hull mass [kg].
    pub mass: f64,
    /// Carried payload [kg]; added to the hull mass, not to the yaw inertia.
    pub payload: f64,
    /// Yaw moment of inertia about the center of mass [kg·m^2].
    pub inertia_zz: f64,
    /// Side length of the square of jet mounting points [m].
    pub spacing: f64,
    /// Fixed in-body jet direction angle [rad], strictly inside (0, pi/2).
    pub thrust_angle: f64,
    /// Radius of the effective sphere used for added mass and drag [m].
    pub effective_radius: f64,
    /// Water density [kg/m^3].
    pub water_density: f64,
    /// Water dynamic viscosity [Pa·s].
    pub water_viscosity: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 0.25,
            payload: 0.0,
            inertia_zz: 0.0045,
            spacing: 0.025,
            thrust_angle: std::f64::consts::FRAC_PI_4,
            effective_radius: 0.08,
            water_density: 1000.0,
            water_viscosity: 1.0,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("mass", self.mass),
            ("inertia_zz", self.inertia_zz),
            ("spacing", self.spacing),
            ("effective_radius", self.effective_radius),
            ("water_density", self.water_density),
            ("water_viscosity", self.water_viscosity),
        ];
        for (name, value) in positive {
            if !(value > 0.0) || !value.is_finite() {
                return Err(DynamicsError::InvalidParam { name, value });
            }
        }
        if !(self.payload >= 0.0) || !self.payload.is_finite() {
            return Err(DynamicsError::InvalidParam { name: "payload", value: self.payload });
        }
        if !(self.thrust_angle > 0.0 && self.thrust_angle < std::f64::consts::FRAC_PI_2) {
            return Err(DynamicsError::InvalidParam {
                name: "thrust_angle",
                value: self.thrust_angle,
            });
        }
        Ok(())
    }

    /// Total translating mass: hull plus payload [kg].
    pub fn total_mass(&self) -> f64 {
        self.mass + self.payload
    }
}

/// Full kinematic state `x = [X_G, Y_G, theta, Xdot, Ydot, thetadot]`.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct State {
    /// Inertial position of the center of mass [m].
    pub x: f64,
    pub y: f64,
    /// Heading [rad], unwrapped (not reduced mod 2*pi).
    pub heading: f64,
    /// Inertial velocity of the center of mass [m/s].
    pub vx: f64,
    pub vy: f64,
    /// Yaw rate [rad/s].
    pub yaw_rate: f64,
}

impl State {
    pub fn to_vector(&self) -> Vector6<f64> {
        Vector6::new(self.x, self.y, self.heading, self.vx, self.vy, self.yaw_rate)
    }

    pub fn from_vector(v: &Vector6<f64>) -> Self {
        Self { x: v[0], y: v[1], heading: v[2], vx: v[3], vy: v[4], yaw_rate: v[5] }
    }

    pub fn is_finite(&self) -> bool {
        self.to_vector().iter().all(|c| c.is_finite())
    }
}

/// Rotation from body axes to inertial axes for heading `theta`.
pub fn rotation_matrix(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(c, -s, s, c)
}

/// d/dtheta of [`rotation_matrix`].
pub fn rotation_matrix_deriv(theta: f64) -> Matrix2<f64> {
    let (s, c) = theta.sin_cos();
    Matrix2::new(-s, -c, c, -s)
}

/// Rigid-body mass matrix assembled from the center-of-mass Jacobians,
/// `M = Jv^T (m + payload) Jv + Jw^T I_zz Jw`. Constant in `q`.
pub fn mass_matrix(p: &VehicleParams) -> Matrix3<f64> {
    // Jv = d(r_G)/d(qdot) = [I2 | 0], Jw = [0 0 1].
    let jv = nalgebra::Matrix2x3::<f64>::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0);
    let jw = nalgebra::Matrix1x3::<f64>::new(0.0, 0.0, 1.0);
    jv.transpose() * p.total_mass() * jv + jw.transpose() * p.inertia_zz * jw
}

/// Coriolis matrix `C_ij = sum_k (dM_ij/dq_k - 1/2 dM_jk/dq_i) qd_k`,
/// evaluated literally with central differences of the (q-independent) mass
/// matrix so tests can assert it vanishes instead of hard-coding zero.
pub fn coriolis_matrix(p: &VehicleParams, qdot: &Vector3<f64>) -> Matrix3<f64> {
    let m_of_q = |_q: &Vector3<f64>| mass_matrix(p);
    let h = 1e-6;
    let q0 = Vector3::zeros();
    // dm[k] = dM/dq_k.
    let mut dm = [Matrix3::<f64>::zeros(); 3];
    for k in 0..3 {
        let mut qp = q0;
        let mut qm = q0;
        qp[k] += h;
        qm[k] -= h;
        dm[k] = (m_of_q(&qp) - m_of_q(&qm)) / (2.0 * h);
    }
    let mut c = Matrix3::zeros();
    for i in 0..3 {
        for j in 0..3 {
            let mut cij = 0.0;
            for k in 0..3 {
                cij += (dm[k][(i, j)] - 0.5 * dm[i][(j, k)]) * qdot[k];
            }
            c[(i, j)] = cij;
        }
    }
    c
}

/// Added-mass matrix of the effective sphere:
/// `diag(4/3 pi rho R^3, 4/3 pi rho R^3, 1/10 pi rho R^5)`.
pub fn added_mass_matrix(p: &VehicleParams) -> Matrix3<f64> {
    let r = p.effective_radius;
    let rho = p.water_density;
    let translational = 4.0 / 3.0 * std::f64::consts::PI * rho * r.powi(3);
    let rotational = 0.1 * std::f64::consts::PI * rho * r.powi(5);
    Matrix3::from_diagonal(&Vector3::new(translational, translational, rotational))
}

/// Linear viscous drag coefficients in the body frame:
/// `diag(4 pi mu R, 4 pi mu R, 0.04 pi mu R^2)`.
pub fn drag_matrix(p: &VehicleParams) -> Matrix3<f64> {
    let r = p.effective_radius;
    let mu = p.water_viscosity;
    let translational = 4.0 * std::f64::consts::PI * mu * r;
    let rotational = 0.04 * std::f64::consts::PI * mu * r * r;
    Matrix3::from_diagonal(&Vector3::new(translational, translational, rotational))
}

/// Effective inertia seen by the equations of motion: `M + M_A`.
pub fn effective_mass_matrix(p: &VehicleParams) -> Matrix3<f64> {
    mass_matrix(p) + added_mass_matrix(p)
}

/// In-body jet mounting points, in hull order: rear-left, front-left,
/// front-right, rear-right (body x forward, y to port).
pub fn jet_positions(p: &VehicleParams) -> [Vector2<f64>; 4] {
    let h = 0.5 * p.spacing;
    [
        Vector2::new(-h, h),
        Vector2::new(h, h),
        Vector2::new(h, -h),
        Vector2::new(-h, -h),
    ]
}

/// In-body unit thrust directions, mirrored across both body axes so the
/// four of them sum to zero and their moments cancel pairwise.
pub fn jet_directions(p: &VehicleParams) -> [Vector2<f64>; 4] {
    let (s, c) = p.thrust_angle.sin_cos();
    [
        Vector2::new(-c, -s),
        Vector2::new(c, -s),
        Vector2::new(c, s),
        Vector2::new(-c, s),
    ]
}

/// Moment of each unit jet thrust about the center of mass [N·m per N].
/// Frame-independent (position and force rotate together).
pub fn jet_moment_arms(p: &VehicleParams) -> [f64; 4] {
    let pos = jet_positions(p);
    let dir = jet_directions(p);
    let mut arms = [0.0; 4];
    for i in 0..4 {
        arms[i] = pos[i].x * dir[i].y - pos[i].y * dir[i].x;
    }
    arms
}

/// Generalized force of the four jets, assembled through the corner-point
/// Jacobians: `Q = sum_i J_i^T R(theta) f_i F_i` with
/// `J_i = [I2 | R'(theta) r_i]`.
pub fn thruster_generalized_forces(
    p: &VehicleParams,
    theta: f64,
    u: &Thrusts,
) -> GeneralizedForce {
    let rot = rotation_matrix(theta);
    let rot_d = rotation_matrix_deriv(theta);
    let pos = jet_positions(p);
    let dir = jet_directions(p);
    let mut q = Vector3::zeros();
    for i in 0..4 {
        let f_inertial = rot * (dir[i] * u[i]);
        let jac_theta = rot_d * pos[i];
        q[0] += f_inertial.x;
        q[1] += f_inertial.y;
        q[2] += jac_theta.dot(&f_inertial);
    }
    q
}

/// Viscous drag generalized force: velocity is taken to the body frame,
/// damped by [`drag_matrix`], and the force mapped back to inertial axes.
pub fn drag_generalized_forces(p: &VehicleParams, state: &State) -> GeneralizedForce {
    let d = drag_matrix(p);
    let rot = rotation_matrix(state.heading);
    let v_body = rot.transpose() * Vector2::new(state.vx, state.vy);
    let f_body = Vector2::new(-d[(0, 0)] * v_body.x, -d[(1, 1)] * v_body.y);
    let f_inertial = rot * f_body;
    Vector3::new(f_inertial.x, f_inertial.y, -d[(2, 2)] * state.yaw_rate)
}

/// Generalized acceleration `qdd = M_eff^{-1} (Q_thr + Q_drag - C qd)`.
pub fn eom_accel(
    p: &VehicleParams,
    state: &State,
    u: &Thrusts,
) -> Result<Vector3<f64>, DynamicsError> {
    eom_accel_with_extra(p, state, u, &Vector3::zeros())
}

/// [`eom_accel`] with an additional externally applied generalized force
/// (used by the simulator's disturbance events).
pub fn eom_accel_with_extra(
    p: &VehicleParams,
    state: &State,
    u: &Thrusts,
    extra: &GeneralizedForce,
) -> Result<Vector3<f64>, DynamicsError> {
    let qdot = Vector3::new(state.vx, state.vy, state.yaw_rate);
    let q = thruster_generalized_forces(p, state.heading, u)
        + drag_generalized_forces(p, state)
        + extra
        - coriolis_matrix(p, &qdot) * qdot;
    effective_mass_matrix(p)
        .cholesky()
        .map(|chol| chol.solve(&q))
        .ok_or(DynamicsError::SingularMass)
}

/// Full state derivative `f(x, u) = [v; eom_accel]`.
pub fn state_derivative(
    p: &VehicleParams,
    state: &State,
    u: &Thrusts,
) -> Result<Vector6<f64>, DynamicsError> {
    let a = eom_accel(p, state, u)?;
    Ok(Vector6::new(state.vx, state.vy, state.yaw_rate, a[0], a[1], a[2]))
}

/// Analytic Jacobians of the state derivative: `(df/dx, df/du)`.
///
/// Drag is isotropic in translation, so its generalized force is
/// heading-independent and only the jet term contributes to the theta
/// column.
pub fn accel_jacobians(
    p: &VehicleParams,
    state: &State,
    u: &Thrusts,
) -> Result<(Matrix6<f64>, Matrix6x4<f64>), DynamicsError> {
    let m_eff = effective_mass_matrix(p);
    let chol = m_eff.cholesky().ok_or(DynamicsError::SingularMass)?;
    let d = drag_matrix(p);
    let rot = rotation_matrix(state.heading);
    let rot_d = rotation_matrix_deriv(state.heading);
    let dir = jet_directions(p);
    let arms = jet_moment_arms(p);

    let mut jx = Matrix6::zeros();
    jx.fixed_view_mut::<3, 3>(0, 3).copy_from(&Matrix3::identity());

    // d(qdd)/dtheta: only the jet forces rotate with the hull.
    let mut dq_dtheta = Vector3::zeros();
    for i in 0..4 {
        let df = rot_d * (dir[i] * u[i]);
        dq_dtheta[0] += df.x;
        dq_dtheta[1] += df.y;
    }
    let da_dtheta = chol.solve(&dq_dtheta);
    for r in 0..3 {
        jx[(3 + r, 2)] = da_dtheta[r];
    }

    // d(qdd)/dv = M_eff^{-1} * (-diag(d, d, d_yaw)).
    let dv = chol.solve(&Matrix3::from_diagonal(&Vector3::new(
        -d[(0, 0)],
        -d[(1, 1)],
        -d[(2, 2)],
    )));
    jx.fixed_view_mut::<3, 3>(3, 3).copy_from(&dv);

    let mut ju = Matrix6x4::zeros();
    for i in 0..4 {
        let f = rot * dir[i];
        let col = chol.solve(&Vector3::new(f.x, f.y, arms[i]));
        for r in 0..3 {
            ju[(3 + r, i)] = col[r];
        }
    }
    Ok((jx, ju))
}

// ---------------------------------------------------------------------------
// Basis-coefficient expansion
// ---------------------------------------------------------------------------

/// Coefficients of the acceleration equations over the identification basis.
///
/// Column order is fixed and shared with the identifier:
///
/// - `w1` (surge): `[Xdot, F1 sin(theta), F1 cos(theta), F2 sin(theta),
///   F2 cos(theta), F3 sin(theta), F3 cos(theta), F4 sin(theta),
///   F4 cos(theta)]`
/// - `w2` (sway): same columns with `Ydot` in place of `Xdot`
/// - `w3` (yaw): `[thetadot, F1, F2, F3, F4]`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BasisCoefficients {
    pub w1: SVector<f64, 9>,
    pub w2: SVector<f64, 9>,
    pub w3: SVector<f64, 5>,
}

impl BasisCoefficients {
    pub fn is_finite(&self) -> bool {
        self.w1.iter().chain(self.w2.iter()).chain(self.w3.iter()).all(|c| c.is_finite())
    }

    /// Largest relative coefficient deviation from `other`, with `other` as
    /// the reference. Reference entries at exact zero require exact zeros.
    pub fn max_relative_error(&self, other: &Self) -> f64 {
        let pairs = self
            .w1
            .iter()
            .zip(other.w1.iter())
            .chain(self.w2.iter().zip(other.w2.iter()))
            .chain(self.w3.iter().zip(other.w3.iter()));
        let mut worst: f64 = 0.0;
        for (a, b) in pairs {
            let err = if *b == 0.0 {
                if *a == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                ((a - b) / b).abs()
            };
            worst = worst.max(err);
        }
        worst
    }
}

/// Exact basis coefficients of the plant with parameters `p`; what a perfect
/// identifier recovers from data generated by this model.
pub fn true_basis_coefficients(p: &VehicleParams) -> BasisCoefficients {
    let m_eff = effective_mass_matrix(p);
    let d = drag_matrix(p);
    let m11 = m_eff[(0, 0)];
    let i33 = m_eff[(2, 2)];
    let dir = jet_directions(p);
    let arms = jet_moment_arms(p);

    let mut w1 = SVector::<f64, 9>::zeros();
    let mut w2 = SVector::<f64, 9>::zeros();
    w1[0] = -d[(0, 0)] / m11;
    w2[0] = -d[(1, 1)] / m11;
    for i in 0..4 {
        // Inertial jet force: (px c - py s, px s + py c) * F_i, so the
        // surge row pairs (-py, px)/m11 with (sin, cos) and the sway row
        // pairs (px, py)/m11.
        w1[1 + 2 * i] = -dir[i].y / m11;
        w1[2 + 2 * i] = dir[i].x / m11;
        w2[1 + 2 * i] = dir[i].x / m11;
        w2[2 + 2 * i] = dir[i].y / m11;
    }

    let mut w3 = SVector::<f64, 5>::zeros();
    w3[0] = -d[(2, 2)] / i33;
    for i in 0..4 {
        w3[1 + i] = arms[i] / i33;
    }
    BasisCoefficients { w1, w2, w3 }
}

/// The 3x4 map from thrusts to generalized accelerations implied by a set
/// of basis coefficients, at heading `theta`. Rows: surge, sway, yaw.
pub fn thrust_accel_map(coeffs: &BasisCoefficients, theta: f64) -> Matrix3x4<f64> {
    let (s, c) = theta.sin_cos();
    let mut b = Matrix3x4::zeros();
    for i in 0..4 {
        b[(0, i)] = coeffs.w1[1 + 2 * i] * s + coeffs.w1[2 + 2 * i] * c;
        b[(1, i)] = coeffs.w2[1 + 2 * i] * s + coeffs.w2[2 + 2 * i] * c;
        b[(2, i)] = coeffs.w3[1 + i];
    }
    b
}

/// Plant wrapper that pre-factorizes the effective mass matrix for the
/// simulator's inner loop.
#[derive(Clone)]
pub struct Plant {
    params: VehicleParams,
    chol: nalgebra::Cholesky<f64, nalgebra::Const<3>>,
    drag_diag: Vector3<f64>,
    directions: [Vector2<f64>; 4],
    arms: [f64; 4],
}

impl Plant {
    pub fn new(params: VehicleParams) -> Result<Self, DynamicsError> {
        params.validate()?;
        let chol = effective_mass_matrix(&params).cholesky().ok_or(DynamicsError::SingularMass)?;
        let d = drag_matrix(&params);
        Ok(Self {
            params,
            chol,
            drag_diag: Vector3::new(d[(0, 0)], d[(1, 1)], d[(2, 2)]),
            directions: jet_directions(&params),
            arms: jet_moment_arms(&params),
        })
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    /// State derivative with an extra generalized force, on the fast path.
    pub fn derivative(&self, s: &Vector6<f64>, u: &Thrusts, extra: &GeneralizedForce) -> Vector6<f64> {
        let (sin_t, cos_t) = s[2].sin_cos();
        let mut q = *extra;
        for i in 0..4 {
            let dx = self.directions[i].x;
            let dy = self.directions[i].y;
            q[0] += (dx * cos_t - dy * sin_t) * u[i];
            q[1] += (dx * sin_t + dy * cos_t) * u[i];
            q[2] += self.arms[i] * u[i];
        }
        // Isotropic translational drag: body-frame damping equals -d * v.
        q[0] -= self.drag_diag.x * s[3];
        q[1] -= self.drag_diag.y * s[4];
        q[2] -= self.drag_diag.z * s[5];
        let a = self.chol.solve(&q);
        Vector6::new(s[3], s[4], s[5], a[0], a[1], a[2])
    }

    /// Kinetic energy `1/2 qd^T M_eff qd` [J].
    pub fn kinetic_energy(&self, s: &Vector6<f64>) -> f64 {
        let m = effective_mass_matrix(&self.params);
        let v = Vector3::new(s[3], s[4], s[5]);
        0.5 * v.dot(&(m * v))
    }
}
