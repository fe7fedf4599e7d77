//! Comparison estimators: the discretized variational pose estimator (VPE)
//! and a bias-free dual-quaternion multiplicative EKF driven by per-frame pose
//! pseudo-measurements, plus an SVD solver for the weighted Wahba problem.

use nalgebra::{DMatrix, Matrix3xX, Quaternion, Vector4};

use crate::error::{Error, Result};
use crate::geometry::{adjoint_apply, exp_se3, exp_so3, hat, Mat3, Mat6, Pose, RotationMatrix, Twist, Vec3, Vec6};
use crate::measurements::{s_l, vex_antisym, FrameData};
use crate::observer::ObserverState;

/// Solves `max ⟨B, R⟩` over SO(3) for the attitude profile matrix `B`.
pub fn wahba_from_profile(b: &Mat3) -> Result<RotationMatrix> {
    if !b.iter().all(|x| x.is_finite()) {
        return Err(Error::NonFinite("attitude profile matrix"));
    }
    let svd = b.svd(true, true);
    let (u, v_t) = (svd.u.expect("requested"), svd.v_t.expect("requested"));
    let s = svd.singular_values;
    let mut sorted: Vec<f64> = s.iter().copied().collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let ratio = if sorted[0] > 0.0 { sorted[1] / sorted[0] } else { 0.0 };
    if ratio < 1e-12 {
        return Err(Error::DegenerateProfile { ratio });
    }
    // Flip the axis of the smallest singular value when the unconstrained optimum is a reflection.
    let smallest = (0..3).min_by(|&i, &j| s[i].total_cmp(&s[j])).expect("three values");
    let mut d = Vec3::repeat(1.0);
    d[smallest] = (u.determinant() * v_t.determinant()).signum();
    Ok(RotationMatrix::renormalize(&(u * Mat3::from_diagonal(&d) * v_t)))
}

/// Minimizer of `½⟨D − R Eᵐ, (D − R Eᵐ) W⟩`, from `B = D W Eᵐᵀ`.
pub fn wahba_svd(d: &Matrix3xX<f64>, e_m: &Matrix3xX<f64>, w: &DMatrix<f64>) -> Result<RotationMatrix> {
    wahba_from_profile(&(d * w * e_m.transpose()))
}

/// Pose pseudo-measurement: Wahba attitude and centroid translation `q̄ − R āᵐ`.
pub fn pose_from_frame(frame: &FrameData) -> Result<Pose> {
    let r = wahba_from_profile(&frame.l)?;
    let b = frame.q_bar - r.matrix() * frame.a_bar;
    Ok(Pose::new(r, b))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpeParams {
    pub j: Mat3,
    pub m: Mat3,
    pub d_t: Mat3,
    pub d_r: Mat3,
    pub kappa: f64,
    pub phi_prime: f64,
}

impl Default for VpeParams {
    fn default() -> Self {
        Self {
            j: Mat3::from_diagonal(&Vec3::new(1.2, 1.0, 0.9)),
            m: Mat3::identity(),
            d_t: Mat3::identity() * 10.0,
            d_r: Mat3::identity() * 10.0,
            kappa: 1.1,
            phi_prime: 1.0,
        }
    }
}

fn is_spd(m: &Mat3) -> bool {
    (m - m.transpose()).norm() <= 1e-12 * m.norm().max(1.0) && m.cholesky().is_some()
}

impl VpeParams {
    pub fn validate(&self) -> Result<()> {
        for (name, m) in [("J", &self.j), ("M", &self.m), ("D_t", &self.d_t), ("D_r", &self.d_r)] {
            if !is_spd(m) {
                return Err(Error::InvalidGains(format!("VPE matrix {name} must be symmetric positive definite")));
            }
        }
        if !(self.kappa > 0.0 && self.phi_prime > 0.0) {
            return Err(Error::InvalidGains("VPE kappa and Phi' must be positive".into()));
        }
        Ok(())
    }

    /// `𝒥 = ½ tr(J) I − J`.
    pub fn nonstandard_inertia(&self) -> Mat3 {
        Mat3::identity() * (0.5 * self.j.trace()) - self.j
    }
}

/// VPE state; `omega` and `upsilon` are velocity-error estimates as in the FTS observer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VpeState {
    pub g_hat: Pose,
    pub omega: Vec3,
    pub upsilon: Vec3,
    pub params: VpeParams,
}

const NEWTON_TOL: f64 = 1e-12;
const NEWTON_MAX_ITERS: usize = 50;
const NEWTON_FD_STEP: f64 = 1e-7;

fn implicit_residual(f: &Vec3, jw: &Vec3, jcal: &Mat3, dt: f64) -> Vec3 {
    jw - vex_antisym(&(exp_so3(f).into_inner() * jcal)) / dt
}

/// Solves `(Jω)^× = (F𝒥 − 𝒥Fᵀ)/Δt` for `F = exp(f)` by Newton iteration.
pub fn solve_implicit_rotation(omega: &Vec3, params: &VpeParams, dt: f64) -> Result<RotationMatrix> {
    let jw = params.j * omega;
    let jcal = params.nonstandard_inertia();
    let scale = jw.norm().max(1.0);
    let mut f = omega * dt;
    let mut r = implicit_residual(&f, &jw, &jcal, dt);
    for iteration in 0..NEWTON_MAX_ITERS {
        if r.norm() <= NEWTON_TOL * scale {
            return Ok(exp_so3(&f));
        }
        let mut jac = Mat3::zeros();
        for i in 0..3 {
            let mut fp = f;
            fp[i] += NEWTON_FD_STEP;
            jac.set_column(i, &((implicit_residual(&fp, &jw, &jcal, dt) - r) / NEWTON_FD_STEP));
        }
        let Some(delta) = jac.lu().solve(&(-r)) else {
            return Err(Error::ImplicitSolveFailed {
                residual: r.norm(),
                iterations: iteration,
            });
        };
        f += delta;
        r = implicit_residual(&f, &jw, &jcal, dt);
    }
    if r.norm() <= NEWTON_TOL * scale {
        return Ok(exp_so3(&f));
    }
    Err(Error::ImplicitSolveFailed {
        residual: r.norm(),
        iterations: NEWTON_MAX_ITERS,
    })
}

impl VpeState {
    pub fn new(g_hat: Pose, xi_hat: &Twist, xi_m: &Twist, params: VpeParams) -> Self {
        let s = ObserverState::from_estimates(g_hat, xi_hat, xi_m);
        Self {
            g_hat,
            omega: s.omega,
            upsilon: s.upsilon,
            params,
        }
    }

    pub fn velocity_estimate(&self, xi_m: &Twist) -> Twist {
        *xi_m - adjoint_apply(&self.g_hat.inverse(), &Twist::new(self.omega, self.upsilon))
    }
}

/// One VPE update using the twist at `k` and the frame at `k + 1`.
pub fn vpe_step(state: &VpeState, next_frame: &FrameData, xi_m: &Twist, dt: f64) -> Result<VpeState> {
    let p = &state.params;
    let f = solve_implicit_rotation(&state.omega, p, dt)?;
    let ft = f.transpose().into_inner();
    let xi_hat = state.velocity_estimate(xi_m);
    let g_next = state.g_hat.compose(&exp_se3(&xi_hat, dt));
    let r_next = g_next.rotation.matrix();
    let q_bar = next_frame.q_bar;
    let offset = g_next.position + r_next * next_frame.a_bar;

    let upsilon_rhs = ft * p.m * state.upsilon + dt * p.kappa * (offset - q_bar);
    let upsilon = (p.m + dt * p.d_t)
        .lu()
        .solve(&upsilon_rhs)
        .ok_or(Error::NonFinite("VPE translational solve"))?;
    let s = s_l(&g_next.rotation, &next_frame.l);
    let omega_rhs = ft * p.j * state.omega + dt * (p.m * upsilon).cross(&upsilon) + dt * p.kappa * q_bar.cross(&offset)
        - dt * p.phi_prime * s;
    let omega = (p.j + dt * p.d_r)
        .lu()
        .solve(&omega_rhs)
        .ok_or(Error::NonFinite("VPE rotational solve"))?;
    Ok(VpeState {
        g_hat: g_next,
        omega,
        upsilon,
        params: state.params,
    })
}

/// Unit dual quaternion `q_r + ε q_d`, stored as `[w, x, y, z]` pairs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualQuaternion {
    pub real: Vector4<f64>,
    pub dual: Vector4<f64>,
}

fn to_quat(v: &Vector4<f64>) -> Quaternion<f64> {
    Quaternion::new(v[0], v[1], v[2], v[3])
}

fn from_quat(q: &Quaternion<f64>) -> Vector4<f64> {
    Vector4::new(q.w, q.i, q.j, q.k)
}

fn pure(v: &Vec3) -> Quaternion<f64> {
    Quaternion::new(0.0, v.x, v.y, v.z)
}

impl DualQuaternion {
    pub fn identity() -> Self {
        Self {
            real: Vector4::new(1.0, 0.0, 0.0, 0.0),
            dual: Vector4::zeros(),
        }
    }

    /// `q_r ↔ R`, `q_d = ½ (0, b) ⊗ q_r`.
    pub fn from_pose(g: &Pose) -> Self {
        let uq = nalgebra::UnitQuaternion::from_matrix(g.rotation.matrix());
        let qr = *uq.quaternion();
        let qd = pure(&g.position) * qr * 0.5;
        Self {
            real: from_quat(&qr),
            dual: from_quat(&qd),
        }
    }

    pub fn to_pose(&self) -> Pose {
        let qr = to_quat(&self.real);
        let uq = nalgebra::UnitQuaternion::from_quaternion(qr);
        let b = (to_quat(&self.dual) * qr.conjugate() * 2.0).imag();
        Pose::new(RotationMatrix::renormalize(&uq.to_rotation_matrix().into_inner()), b)
    }

    pub fn mul(&self, other: &Self) -> Self {
        let (ar, ad) = (to_quat(&self.real), to_quat(&self.dual));
        let (br, bd) = (to_quat(&other.real), to_quat(&other.dual));
        Self {
            real: from_quat(&(ar * br)),
            dual: from_quat(&(ar * bd + ad * br)),
        }
    }

    pub fn conjugate(&self) -> Self {
        Self {
            real: from_quat(&to_quat(&self.real).conjugate()),
            dual: from_quat(&to_quat(&self.dual).conjugate()),
        }
    }

    pub fn negate(&self) -> Self {
        Self {
            real: -self.real,
            dual: -self.dual,
        }
    }

    /// Normalizes the real part and projects the dual part onto its orthogonal complement.
    pub fn enforce_constraints(&self) -> Self {
        let real = self.real / self.real.norm();
        let dual = self.dual - real * real.dot(&self.dual);
        Self { real, dual }
    }

    pub fn constraint_error(&self) -> f64 {
        (self.real.norm() - 1.0).abs().max(self.real.dot(&self.dual).abs())
    }

    pub fn is_finite(&self) -> bool {
        self.real.iter().chain(self.dual.iter()).all(|x| x.is_finite())
    }

    fn vector_parts(&self) -> Vec6 {
        Vec6::new(self.real[1], self.real[2], self.real[3], self.dual[1], self.dual[2], self.dual[3])
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqMekfParams {
    pub q_proc: Mat6,
    pub r_meas: Mat6,
    pub p0: Mat6,
}

impl DqMekfParams {
    /// Noise covariances derived from the sensor noise levels.
    ///
    /// The error state holds the vector parts of the error dual quaternion,
    /// which are half the small-angle rotation and half the body-frame offset.
    pub fn from_noise(gyro_std: f64, transvel_std: f64, attitude_meas_std: f64, position_meas_std: f64) -> Self {
        let mut q_proc = Mat6::zeros();
        let mut r_meas = Mat6::zeros();
        let mut p0 = Mat6::zeros();
        for i in 0..3 {
            q_proc[(i, i)] = gyro_std * gyro_std;
            q_proc[(i + 3, i + 3)] = transvel_std * transvel_std;
            r_meas[(i, i)] = (0.5 * attitude_meas_std).powi(2).max(R_FLOOR);
            r_meas[(i + 3, i + 3)] = (0.5 * position_meas_std).powi(2).max(R_FLOOR);
            p0[(i, i)] = 1.0;
            p0[(i + 3, i + 3)] = 4.0;
        }
        Self { q_proc, r_meas, p0 }
    }

    /// Measurement-noise levels of the pseudo-pose for point noise `sigma_p` on
    /// `j` points with RMS radius `rho` about their centroid.
    pub fn from_point_noise(gyro_std: f64, transvel_std: f64, sigma_p: f64, j: usize, rho: f64, q_bar_norm: f64) -> Self {
        let att = sigma_p / (rho * (j as f64).sqrt());
        let pos = (sigma_p * sigma_p / j as f64 + (att * q_bar_norm).powi(2)).sqrt();
        Self::from_noise(gyro_std, transvel_std, att, pos)
    }
}

const R_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DqMekfState {
    pub q_hat: DualQuaternion,
    pub p: Mat6,
    pub params: DqMekfParams,
    /// Number of updates that took the large-error branch.
    pub large_error_updates: usize,
}

impl DqMekfState {
    pub fn new(g_hat: Pose, params: DqMekfParams) -> Self {
        Self {
            q_hat: DualQuaternion::from_pose(&g_hat),
            p: params.p0,
            params,
            large_error_updates: 0,
        }
    }

    pub fn pose(&self) -> Pose {
        self.q_hat.to_pose()
    }
}

/// Error-state Jacobians `F = [[−Ω̂×, 0], [−ν̂×, −Ω̂×]]`, `G = −½ I`.
fn error_jacobians(xi: &Twist) -> (Mat6, Mat6) {
    let mut f = Mat6::zeros();
    let wx = hat(&xi.angular);
    f.fixed_view_mut::<3, 3>(0, 0).copy_from(&(-wx));
    f.fixed_view_mut::<3, 3>(3, 0).copy_from(&(-hat(&xi.linear)));
    f.fixed_view_mut::<3, 3>(3, 3).copy_from(&(-wx));
    (f, Mat6::identity() * -0.5)
}

/// Multiplicative correction from the 6-vector state increment.
///
/// The small-error form needs `‖Δr‖ < 1`; otherwise, or when forced, the
/// large-error form is used. Returns the correction and whether the large form
/// was taken.
fn correction(dx: &Vec6, force_large: bool) -> (DualQuaternion, bool) {
    let r = Vec3::new(dx[0], dx[1], dx[2]);
    let d = Vec3::new(dx[3], dx[4], dx[5]);
    let n2 = r.norm_squared();
    if n2 < 1.0 && !force_large {
        let s = (1.0 - n2).sqrt();
        let dq = DualQuaternion {
            real: Vector4::new(s, r.x, r.y, r.z),
            dual: Vector4::new(-r.dot(&d) / s, d.x, d.y, d.z),
        };
        (dq, false)
    } else {
        let c = 1.0 / (1.0 + n2).sqrt();
        let dq = DualQuaternion {
            real: Vector4::new(c, r.x * c, r.y * c, r.z * c),
            dual: Vector4::new(-r.dot(&d) / c, d.x, d.y, d.z),
        };
        (dq, true)
    }
}

/// Propagates with the measured twist over `dt`, then updates with the pose pseudo-measurement.
pub fn dqmekf_step(state: &DqMekfState, pose_meas: &Pose, xi_m: &Twist, dt: f64) -> DqMekfState {
    let motion = DualQuaternion::from_pose(&exp_se3(xi_m, dt));
    let q_minus = state.q_hat.mul(&motion).enforce_constraints();

    let (f, g) = error_jacobians(xi_m);
    let mut p = state.p + (f * state.p + state.p * f.transpose()) * dt + g * state.params.q_proc * g.transpose() * (dt * dt);
    p = 0.5 * (p + p.transpose());

    let mut dz = q_minus.conjugate().mul(&DualQuaternion::from_pose(pose_meas));
    let beyond_half_turn = dz.real[0] < 0.0;
    if beyond_half_turn {
        dz = dz.negate();
    }
    let innovation = dz.vector_parts();
    let s = p + state.params.r_meas;
    let gain = match s.cholesky() {
        Some(ch) => p * ch.inverse(),
        None => p * s.try_inverse().unwrap_or_else(Mat6::zeros),
    };
    let dx = gain * innovation;
    let (dq, large) = correction(&dx, beyond_half_turn);
    let q_plus = q_minus.mul(&dq).enforce_constraints();
    let i_kh = Mat6::identity() - gain;
    let mut p_plus = i_kh * p * i_kh.transpose() + gain * state.params.r_meas * gain.transpose();
    p_plus = 0.5 * (p_plus + p_plus.transpose());
    DqMekfState {
        q_hat: q_plus,
        p: p_plus,
        params: state.params,
        large_error_updates: state.large_error_updates + usize::from(large),
    }
}
