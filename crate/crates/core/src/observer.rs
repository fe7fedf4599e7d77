//! Finite-time stable pose estimator on TSE(3).
//!
//! The estimator state is the pose estimate `ĝ` and the velocity-error estimate
//! `φ = [ω; υ]`. Each update applies one explicit Euler step to `φ` and the
//! exact group exponential to `ĝ`.

use crate::error::{Error, Result};
use crate::geometry::{adjoint_apply, exp_se3, hat, Mat3, Pose, RotationMatrix, Twist, Vec3};
use crate::measurements::{s_l, translation_residual_y, vex_antisym, FrameData};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverGains {
    pub p: f64,
    pub kappa: f64,
    pub k_p: f64,
    pub k_omega: f64,
    pub k_upsilon: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub eps_reg: f64,
}

impl Default for ObserverGains {
    fn default() -> Self {
        Self::reference()
    }
}

impl ObserverGains {
    /// Gains used in the reference scenarios.
    pub fn reference() -> Self {
        Self {
            p: 13.0 / 11.0,
            kappa: 1.1,
            k_p: 10.1,
            k_omega: 11.01,
            k_upsilon: 10.02,
            alpha1: 88.65,
            alpha2: 0.9609,
            eps_reg: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p > 1.0 && self.p < 2.0) {
            return Err(Error::InvalidGains(format!("p must lie in (1, 2), got {}", self.p)));
        }
        let named = [
            ("kappa", self.kappa),
            ("k_p", self.k_p),
            ("k_omega", self.k_omega),
            ("k_upsilon", self.k_upsilon),
            ("alpha1", self.alpha1),
            ("alpha2", self.alpha2),
            ("eps_reg", self.eps_reg),
        ];
        for (name, v) in named {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGains(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// `1 − 1/p`.
    pub fn exponent(&self) -> f64 {
        1.0 - 1.0 / self.p
    }

    /// Rate constant of `V̇ ≤ −k₀ V^{1/p}`.
    pub fn k0(&self) -> f64 {
        let e = self.exponent();
        let c = 2f64.powf(1.0 / self.p);
        (self.alpha1 * self.k_p.powf(e))
            .min(c * self.alpha2 * (self.k_p * self.kappa).powf(e))
            .min(c * self.k_upsilon)
            .min(c * self.k_omega)
    }
}

/// Pose estimate and velocity-error estimate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObserverState {
    pub g_hat: Pose,
    pub omega: Vec3,
    pub upsilon: Vec3,
    pub k: usize,
}

impl ObserverState {
    /// `φ₀ = Ad_ĝ₀(ξᵐ₀ − ξ̂₀)`.
    pub fn from_estimates(g_hat: Pose, xi_hat: &Twist, xi_m: &Twist) -> Self {
        let phi = adjoint_apply(&g_hat, &(*xi_m - *xi_hat));
        Self {
            g_hat,
            omega: phi.angular,
            upsilon: phi.linear,
            k: 0,
        }
    }

    pub fn phi(&self) -> Twist {
        Twist::new(self.omega, self.upsilon)
    }

    /// `ξ̂ = ξ_in − Ad_{ĝ⁻¹} φ`.
    pub fn velocity_estimate(&self, xi_input: &Twist) -> Twist {
        *xi_input - adjoint_apply(&self.g_hat.inverse(), &self.phi())
    }

    pub fn is_finite(&self) -> bool {
        self.g_hat.is_finite() && self.omega.iter().chain(self.upsilon.iter()).all(|x| x.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtsTerms {
    pub s_l: Vec3,
    pub y: Vec3,
    pub z1: Vec3,
    pub z2: Vec3,
    pub psi: Vec3,
    pub phi: Vec3,
    pub w_l: Vec3,
    pub v_y: Vec3,
    pub q_bar: Vec3,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovSample {
    pub u: f64,
    pub psi_sq: f64,
    pub phi_sq: f64,
    pub v: f64,
}

/// `H(x) = I − 2(1 − 1/p) x xᵀ / xᵀx`.
pub fn h_matrix(x: &Vec3, p: f64) -> Mat3 {
    Mat3::identity() - (2.0 * (1.0 - 1.0 / p) / x.norm_squared()) * x * x.transpose()
}

/// `x / (xᵀx)^{1−1/p}`, zero below the regularization floor.
fn holder(x: &Vec3, gains: &ObserverGains) -> Vec3 {
    let n2 = x.norm_squared();
    if n2 < gains.eps_reg {
        Vec3::zeros()
    } else {
        x / n2.powf(gains.exponent())
    }
}

/// `α H(x) w / (xᵀx)^{1−1/p}`, skipped below the regularization floor.
fn h_term(x: &Vec3, w: &Vec3, alpha: f64, gains: &ObserverGains) -> Vec3 {
    let n2 = x.norm_squared();
    if n2 < gains.eps_reg {
        Vec3::zeros()
    } else {
        h_matrix(x, gains.p) * w * (alpha / n2.powf(gains.exponent()))
    }
}

pub fn fts_terms(state: &ObserverState, frame: &FrameData, gains: &ObserverGains) -> FtsTerms {
    let r_hat = &state.g_hat.rotation;
    let s = s_l(r_hat, &frame.l);
    let y = translation_residual_y(&state.g_hat, &frame.a_bar, &frame.q_bar);
    let z1 = holder(&s, gains);
    let z2 = holder(&y, gains);
    let omega = state.omega;
    FtsTerms {
        s_l: s,
        y,
        z1,
        z2,
        psi: omega + gains.alpha1 * z1,
        phi: state.upsilon + omega.cross(&frame.q_bar) + gains.alpha2 * z2,
        w_l: vex_antisym(&(frame.l * r_hat.matrix().transpose() * hat(&omega))),
        v_y: state.upsilon + omega.cross(&(frame.q_bar - y)),
        q_bar: frame.q_bar,
    }
}

/// `(γ, η) = (ω̇, υ̇)`.
pub fn observer_derivatives(terms: &FtsTerms, gains: &ObserverGains) -> (Vec3, Vec3) {
    let gamma = -gains.k_p * terms.s_l
        - gains.k_omega * holder(&terms.psi, gains)
        - h_term(&terms.s_l, &terms.w_l, gains.alpha1, gains);
    let eta = terms.q_bar.cross(&gamma)
        - gains.k_p * gains.kappa * terms.y
        - gains.k_upsilon * holder(&terms.phi, gains)
        - h_term(&terms.y, &terms.v_y, gains.alpha2, gains);
    (gamma, eta)
}

/// One discrete update of length `dt` with frame data and input twist held fixed.
pub fn step(state: &ObserverState, frame: &FrameData, xi_input: &Twist, gains: &ObserverGains, dt: f64) -> ObserverState {
    let terms = fts_terms(state, frame, gains);
    let (gamma, eta) = observer_derivatives(&terms, gains);
    let xi_hat = state.velocity_estimate(xi_input);
    ObserverState {
        g_hat: state.g_hat.compose(&exp_se3(&xi_hat, dt)),
        omega: state.omega + dt * gamma,
        upsilon: state.upsilon + dt * eta,
        k: state.k + 1,
    }
}

/// Frame data seen after the body has moved by `delta` in its own frame.
pub fn propagate_frame(frame: &FrameData, delta: &Pose) -> FrameData {
    let rd = delta.rotation.matrix();
    FrameData {
        a_bar: rd.transpose() * (frame.a_bar - delta.position),
        l: frame.l * rd,
        ..*frame
    }
}

/// One measurement epoch of length `dt` split into `substeps` equal updates.
///
/// Between updates the frame is carried forward with the input twist, so
/// `substeps = 1` reduces to [`step`].
pub fn advance(
    state: &ObserverState,
    frame: &FrameData,
    xi_input: &Twist,
    gains: &ObserverGains,
    dt: f64,
    substeps: usize,
) -> ObserverState {
    let n = substeps.max(1);
    let h = dt / n as f64;
    let mut s = step(state, frame, xi_input, gains, h);
    for i in 1..n {
        let moved = propagate_frame(frame, &exp_se3(xi_input, h * i as f64));
        s = step(&s, &moved, xi_input, gains, h);
    }
    ObserverState { k: state.k + 1, ..s }
}

/// `V = k_p U + ½ΨᵀΨ + ½ΦᵀΦ`.
pub fn lyapunov(state: &ObserverState, frame: &FrameData, gains: &ObserverGains) -> LyapunovSample {
    let terms = fts_terms(state, frame, gains);
    let u = 0.5 * gains.kappa * terms.y.norm_squared() + frame.rotational_potential(&state.g_hat.rotation);
    let psi_sq = terms.psi.norm_squared();
    let phi_sq = terms.phi.norm_squared();
    LyapunovSample {
        u,
        psi_sq,
        phi_sq,
        v: gains.k_p * u + 0.5 * psi_sq + 0.5 * phi_sq,
    }
}

/// Noise and neighborhood bounds for the robustness condition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessBounds {
    pub eps_omega: f64,
    pub eps_upsilon: f64,
    pub q_bar_max: f64,
    pub s_l_max: f64,
    pub y_max: f64,
    pub psi_max: f64,
    pub phi_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobustnessCheck {
    pub satisfied: bool,
    pub margin: f64,
    pub lambda: f64,
}

/// Evaluates `α_min / k_min ≥ Λ / (s_L,max^{2/p} + y_max^{2/p})`.
pub fn check_gain_robustness(gains: &ObserverGains, b: &RobustnessBounds) -> RobustnessCheck {
    let p = gains.p;
    let e = 2.0 / p - 1.0;
    let lambda = (2.0 / p * b.eps_omega - b.psi_max) * b.psi_max.powf(e)
        + (2.0 / p * (b.eps_upsilon + b.q_bar_max * b.eps_omega) - b.phi_max) * b.phi_max.powf(e);
    let alpha_min = (gains.alpha1 * gains.k_p).min(gains.alpha2 * gains.k_p * gains.kappa);
    let k_min = gains.k_upsilon.min(gains.k_omega);
    let lhs = alpha_min / k_min;
    let rhs = lambda / (b.s_l_max.powf(2.0 / p) + b.y_max.powf(2.0 / p));
    RobustnessCheck {
        satisfied: lhs >= rhs,
        margin: lhs - rhs,
        lambda,
    }
}

/// `(φ, ‖χ‖)` of the estimate against the truth, with `Q = R R̂ᵀ` and `χ = b − Q b̂`.
pub fn pose_errors(truth: &Pose, estimate: &Pose) -> (f64, f64) {
    let q: RotationMatrix = truth.rotation * estimate.rotation.transpose();
    let chi = truth.position - q.matrix() * estimate.position;
    (crate::geometry::principal_angle(&q), chi.norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_so3, principal_angle};
    use crate::measurements::{synthesize_frame, FeaturePointSet, Landmarks, PointNoise};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn landmarks() -> Landmarks {
        Landmarks::new(FeaturePointSet::default_tetrahedron(), &Vec3::new(3.0, 2.0, 1.0)).unwrap()
    }

    fn frame_at(lm: &Landmarks, g: &Pose) -> FrameData {
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        lm.frame_data(&synthesize_frame(g, &lm.points, &PointNoise::none(), 0.0, &mut rng))
            .unwrap()
    }

    fn rand_vec(rng: &mut ChaCha20Rng, s: f64) -> Vec3 {
        Vec3::from_fn(|_, _| rng.random_range(-s..s))
    }

    #[test]
    fn h_matrix_examples() {
        let h = h_matrix(&Vec3::x(), 1.5);
        assert_relative_eq!(h, Mat3::from_diagonal(&Vec3::new(1.0 / 3.0, 1.0, 1.0)), epsilon = 1e-15);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for _ in 0..100 {
            let x = rand_vec(&mut rng, 3.0);
            let p = rng.random_range(1.01..1.99);
            let h = h_matrix(&x, p);
            assert!((h * x - (2.0 / p - 1.0) * x).norm() < 1e-12 * x.norm().max(1.0));
            assert!((h - h.transpose()).norm() < 1e-15);
            assert!((h_matrix(&(x * -3.7), p) - h).norm() < 1e-13);
            let mut eig: Vec<f64> = h.symmetric_eigenvalues().iter().copied().collect();
            eig.sort_by(f64::total_cmp);
            assert!((eig[0] - (2.0 / p - 1.0)).abs() < 1e-12);
            assert!((eig[1] - 1.0).abs() < 1e-12 && (eig[2] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reference_gains_are_valid_and_k0() {
        let g = ObserverGains::reference();
        g.validate().unwrap();
        // Independent evaluation of the minimum of the four rate constants.
        let e = 2.0 / 13.0;
        let c = 2f64.powf(11.0 / 13.0);
        let candidates = [
            88.65 * 10.1f64.powf(e),
            c * 0.9609 * (10.1f64 * 1.1).powf(e),
            c * 10.02,
            c * 11.01,
        ];
        let oracle = candidates.iter().copied().fold(f64::INFINITY, f64::min);
        assert_relative_eq!(g.k0(), oracle, epsilon = 1e-12);
        assert_relative_eq!(g.k0(), 2.5019, epsilon = 1e-4);
    }

    #[test]
    fn invalid_gains_are_rejected() {
        for bad in [
            ObserverGains { p: 1.0, ..ObserverGains::reference() },
            ObserverGains { p: 2.0, ..ObserverGains::reference() },
            ObserverGains { k_p: 0.0, ..ObserverGains::reference() },
            ObserverGains { alpha2: -1.0, ..ObserverGains::reference() },
            ObserverGains { kappa: f64::NAN, ..ObserverGains::reference() },
        ] {
            assert!(matches!(bad.validate(), Err(Error::InvalidGains(_))));
        }
    }

    #[test]
    fn equilibrium_is_fixed_point() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let g = Pose::new(exp_so3(&Vec3::new(0.3, -0.1, 0.2)), Vec3::new(1.0, 0.5, -0.3));
        let frame = frame_at(&lm, &g);
        let state = ObserverState::from_estimates(g, &Twist::zero(), &Twist::zero());
        let terms = fts_terms(&state, &frame, &gains);
        for v in [terms.s_l, terms.y, terms.z1, terms.z2, terms.psi, terms.phi, terms.w_l, terms.v_y] {
            assert!(v.norm() < 1e-12);
        }
        let (gamma, eta) = observer_derivatives(&terms, &gains);
        assert!(gamma.norm() < 1e-12 && eta.norm() < 1e-12);
        let next = step(&state, &frame, &Twist::zero(), &gains, 0.1);
        assert!((next.g_hat.to_homogeneous() - g.to_homogeneous()).norm() < 1e-12);
        assert!(next.omega.norm() < 1e-12 && next.upsilon.norm() < 1e-12);
        assert!(lyapunov(&state, &frame, &gains).v < 1e-12);
    }

    #[test]
    fn initial_velocity_error_matches_error_kinematics_definition() {
        let g_hat = Pose::new(exp_so3(&Vec3::new(0.9 * std::f64::consts::PI, 0.0, 0.0)), Vec3::new(1.5, 1.0, 1.0));
        let xi = Twist::new(Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.65, 0.0, 0.1));
        let xi_hat = Twist::new(Vec3::new(-0.67, -0.25, -0.09), Vec3::new(0.76, -2.63, 2.83));
        let s = ObserverState::from_estimates(g_hat, &xi_hat, &xi);
        let r = g_hat.rotation.matrix();
        let omega = r * (xi.angular - xi_hat.angular);
        let upsilon = r * (xi.linear - xi_hat.linear) - omega.cross(&g_hat.position);
        assert!((s.omega - omega).norm() < 1e-14);
        assert!((s.upsilon - upsilon).norm() < 1e-14);
        assert!((s.velocity_estimate(&xi).to_vector() - xi_hat.to_vector()).norm() < 1e-13);
    }

    #[test]
    fn regularized_branches_return_zero() {
        let gains = ObserverGains::reference();
        assert_eq!(holder(&Vec3::new(1e-6, 0.0, 0.0), &gains), Vec3::zeros());
        let x = Vec3::new(1e-3, 0.0, 0.0);
        let z = holder(&x, &gains);
        assert_relative_eq!(z.norm(), 1e-3f64.powf(2.0 / gains.p - 1.0), epsilon = 1e-15);
        assert_eq!(h_term(&Vec3::zeros(), &Vec3::x(), 1.0, &gains), Vec3::zeros());
    }

    #[test]
    fn gamma_opposes_attitude_error() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        for _ in 0..200 {
            let g = Pose::new(exp_so3(&rand_vec(&mut rng, 1.0)), rand_vec(&mut rng, 2.0));
            let frame = frame_at(&lm, &g);
            let q_err = exp_so3(&rand_vec(&mut rng, 0.05));
            let g_hat = Pose::new(q_err.transpose() * g.rotation, q_err.transpose().matrix() * g.position);
            let state = ObserverState {
                g_hat,
                omega: Vec3::zeros(),
                upsilon: Vec3::zeros(),
                k: 0,
            };
            let terms = fts_terms(&state, &frame, &gains);
            let (gamma, _) = observer_derivatives(&terms, &gains);
            assert!(terms.y.norm() < 1e-9 || terms.y.norm() < terms.s_l.norm() * 10.0);
            assert!(gamma.dot(&terms.s_l) < 0.0);
        }
    }

    /// True pose under a constant body twist.
    fn truth_at(g0: &Pose, xi: &Twist, t: f64) -> Pose {
        g0.compose(&exp_se3(xi, t))
    }

    /// `(Q, y)` along the error kinematics: `Q̇ = Qω×`, `χ̇ = Qυ`.
    #[test]
    fn v_y_and_u_dot_match_finite_differences() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let mut rng = ChaCha20Rng::seed_from_u64(17);
        for _ in 0..200 {
            let g0 = Pose::new(exp_so3(&rand_vec(&mut rng, 2.0)), rand_vec(&mut rng, 3.0));
            let xi = Twist::new(rand_vec(&mut rng, 0.5), rand_vec(&mut rng, 1.0));
            let g_hat0 = Pose::new(exp_so3(&rand_vec(&mut rng, 2.0)), rand_vec(&mut rng, 3.0));
            let omega = rand_vec(&mut rng, 1.0);
            let upsilon = rand_vec(&mut rng, 1.0);
            let state0 = ObserverState {
                g_hat: g_hat0,
                omega,
                upsilon,
                k: 0,
            };
            let xi_hat = state0.velocity_estimate(&xi);
            let at = |t: f64| {
                let g = truth_at(&g0, &xi, t);
                let g_hat = g_hat0.compose(&exp_se3(&xi_hat, t));
                let s = ObserverState { g_hat, ..state0 };
                let frame = frame_at(&lm, &g);
                let terms = fts_terms(&s, &frame, &gains);
                (terms, lyapunov(&s, &frame, &gains).u)
            };
            let h = 1e-5;
            let (tp, up) = at(h);
            let (tm, um) = at(-h);
            let (t0, _) = at(0.0);
            let fd_y = (tp.y - tm.y) / (2.0 * h);
            assert!((fd_y - t0.v_y).norm() < 1e-4, "v_y {}", (fd_y - t0.v_y).norm());
            let fd_s = (tp.s_l - tm.s_l) / (2.0 * h);
            assert!((fd_s - t0.w_l).norm() < 1e-4, "w_L {}", (fd_s - t0.w_l).norm());
            let fd_u = (up - um) / (2.0 * h);
            let u_dot = gains.kappa * t0.y.dot(&(upsilon + omega.cross(&lm.q_bar))) + t0.s_l.dot(&omega);
            assert!((fd_u - u_dot).abs() < 1e-4, "dU/dt {}", (fd_u - u_dot).abs());
        }
    }

    #[derive(Clone, Copy)]
    struct Flat {
        r: Mat3,
        b: Vec3,
        omega: Vec3,
        upsilon: Vec3,
    }

    impl Flat {
        fn axpy(&self, h: f64, d: &Flat) -> Flat {
            Flat {
                r: self.r + d.r * h,
                b: self.b + d.b * h,
                omega: self.omega + d.omega * h,
                upsilon: self.upsilon + d.upsilon * h,
            }
        }
    }

    /// Continuous-time vector field with noise-free measurements of a constant-twist truth.
    fn field(lm: &Landmarks, gains: &ObserverGains, g0: &Pose, xi: &Twist, t: f64, x: &Flat) -> Flat {
        let g = truth_at(g0, xi, t);
        let frame = frame_at(lm, &g);
        let s = ObserverState {
            g_hat: Pose::new(RotationMatrix::from_matrix_unchecked(x.r), x.b),
            omega: x.omega,
            upsilon: x.upsilon,
            k: 0,
        };
        let (gamma, eta) = observer_derivatives(&fts_terms(&s, &frame, gains), gains);
        let xi_hat = s.velocity_estimate(xi);
        Flat {
            r: x.r * hat(&xi_hat.angular),
            b: x.r * xi_hat.linear,
            omega: gamma,
            upsilon: eta,
        }
    }

    fn rk4(lm: &Landmarks, gains: &ObserverGains, g0: &Pose, xi: &Twist, x0: Flat, t_end: f64, n: usize) -> Flat {
        let h = t_end / n as f64;
        let mut x = x0;
        for i in 0..n {
            let t = i as f64 * h;
            let k1 = field(lm, gains, g0, xi, t, &x);
            let k2 = field(lm, gains, g0, xi, t + h / 2.0, &x.axpy(h / 2.0, &k1));
            let k3 = field(lm, gains, g0, xi, t + h / 2.0, &x.axpy(h / 2.0, &k2));
            let k4 = field(lm, gains, g0, xi, t + h, &x.axpy(h, &k3));
            x = Flat {
                r: x.r + (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r) * (h / 6.0),
                b: x.b + (k1.b + 2.0 * k2.b + 2.0 * k3.b + k4.b) * (h / 6.0),
                omega: x.omega + (k1.omega + 2.0 * k2.omega + 2.0 * k3.omega + k4.omega) * (h / 6.0),
                upsilon: x.upsilon + (k1.upsilon + 2.0 * k2.upsilon + 2.0 * k3.upsilon + k4.upsilon) * (h / 6.0),
            };
        }
        x
    }

    #[test]
    fn single_step_local_error_is_second_order() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let g0 = Pose::new(exp_so3(&Vec3::new(0.1, 0.2, -0.1)), Vec3::new(0.2, -0.1, 0.3));
        let xi = Twist::new(Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.65, 0.0, 0.1));
        let g_hat = Pose::new(exp_so3(&Vec3::new(0.8, -0.4, 0.3)) * g0.rotation, g0.position + Vec3::new(1.0, -0.5, 0.7));
        let state = ObserverState {
            g_hat,
            omega: Vec3::new(0.3, -0.2, 0.1),
            upsilon: Vec3::new(-0.2, 0.4, 0.1),
            k: 0,
        };
        let x0 = Flat {
            r: *g_hat.rotation.matrix(),
            b: g_hat.position,
            omega: state.omega,
            upsilon: state.upsilon,
        };
        let err = |dt: f64| {
            let next = step(&state, &frame_at(&lm, &g0), &xi, &gains, dt);
            let reference = rk4(&lm, &gains, &g0, &xi, x0, dt, 100);
            ((next.g_hat.rotation.matrix() - reference.r).norm_squared()
                + (next.g_hat.position - reference.b).norm_squared()
                + (next.omega - reference.omega).norm_squared()
                + (next.upsilon - reference.upsilon).norm_squared())
            .sqrt()
        };
        let e1 = err(2e-3);
        let e2 = err(1e-3);
        let ratio = e1 / e2;
        assert!((3.5..4.5).contains(&ratio), "ratio {ratio} ({e1}, {e2})");
    }

    #[test]
    fn substeps_one_is_the_plain_step() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let g = Pose::new(exp_so3(&Vec3::new(0.1, 0.2, 0.3)), Vec3::new(1.0, 2.0, 3.0));
        let state = ObserverState {
            g_hat: Pose::identity(),
            omega: Vec3::new(0.1, 0.0, 0.0),
            upsilon: Vec3::new(0.0, 0.2, 0.0),
            k: 3,
        };
        let xi = Twist::new(Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.65, 0.0, 0.1));
        let frame = frame_at(&lm, &g);
        assert_eq!(advance(&state, &frame, &xi, &gains, 0.1, 1), step(&state, &frame, &xi, &gains, 0.1));
        assert_eq!(advance(&state, &frame, &xi, &gains, 0.1, 7).k, 4);
    }

    #[test]
    fn propagated_frame_matches_resynthesis() {
        let lm = landmarks();
        let g = Pose::new(exp_so3(&Vec3::new(0.4, -0.2, 0.1)), Vec3::new(1.0, -1.0, 0.5));
        let xi = Twist::new(Vec3::new(0.2, 0.15, -0.1), Vec3::new(0.65, 0.3, 0.1));
        let delta = exp_se3(&xi, 0.037);
        let moved = propagate_frame(&frame_at(&lm, &g), &delta);
        let direct = frame_at(&lm, &g.compose(&delta));
        assert!((moved.l - direct.l).norm() < 1e-12);
        assert!((moved.a_bar - direct.a_bar).norm() < 1e-12);
        assert!((moved.e_energy - direct.e_energy).abs() < 1e-12);
    }

    #[test]
    fn group_closure_without_reprojection() {
        let lm = landmarks();
        let gains = ObserverGains::reference();
        let mut rng = ChaCha20Rng::seed_from_u64(23);
        let mut state = ObserverState {
            g_hat: Pose::identity(),
            omega: Vec3::zeros(),
            upsilon: Vec3::zeros(),
            k: 0,
        };
        let g = Pose::new(exp_so3(&Vec3::new(0.5, 0.5, 0.5)), Vec3::new(0.5, 1.0, 0.0));
        let frame = frame_at(&lm, &g);
        for _ in 0..10_000 {
            let xi = Twist::new(rand_vec(&mut rng, 1.0), rand_vec(&mut rng, 1.0));
            state = step(&state, &frame, &xi, &gains, 1e-3);
        }
        assert!(state.g_hat.rotation.orthogonality_error() <= 1e-9);
    }

    #[test]
    fn robustness_examples() {
        let gains = ObserverGains::reference();
        let base = RobustnessBounds {
            eps_omega: 0.0,
            eps_upsilon: 0.0,
            q_bar_max: 1.25 * 3f64.sqrt(),
            s_l_max: 0.5,
            y_max: 0.5,
            psi_max: 0.5,
            phi_max: 0.5,
        };
        let c = check_gain_robustness(&gains, &base);
        assert!(c.satisfied);
        let p = gains.p;
        assert_relative_eq!(c.lambda, -(0.5f64.powf(2.0 / p) * 2.0), epsilon = 1e-14);

        let tiny = ObserverGains {
            alpha1: 1e-6,
            alpha2: 1e-6,
            ..gains
        };
        let extreme = RobustnessBounds { eps_omega: 1e3, ..base };
        assert!(!check_gain_robustness(&tiny, &extreme).satisfied);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn margin_nonincreasing_in_eps_omega(eps in 0.0..5.0f64, eu in 0.0..1.0f64, m in 0.05..2.0f64) {
            let gains = ObserverGains::reference();
            let b = RobustnessBounds {
                eps_omega: eps,
                eps_upsilon: eu,
                q_bar_max: 2.0,
                s_l_max: m,
                y_max: m,
                psi_max: m,
                phi_max: m,
            };
            let doubled = RobustnessBounds { eps_omega: 2.0 * eps, ..b };
            prop_assert!(check_gain_robustness(&gains, &doubled).margin <= check_gain_robustness(&gains, &b).margin);
        }

        #[test]
        fn lyapunov_components_consistent(seed in proptest::num::u64::ANY) {
            let lm = landmarks();
            let gains = ObserverGains::reference();
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let g = Pose::new(exp_so3(&rand_vec(&mut rng, 2.0)), rand_vec(&mut rng, 2.0));
            let state = ObserverState {
                g_hat: Pose::new(exp_so3(&rand_vec(&mut rng, 2.0)), rand_vec(&mut rng, 2.0)),
                omega: rand_vec(&mut rng, 1.0),
                upsilon: rand_vec(&mut rng, 1.0),
                k: 0,
            };
            let frame = frame_at(&lm, &g);
            let s = lyapunov(&state, &frame, &gains);
            prop_assert!((s.v - (gains.k_p * s.u + 0.5 * s.psi_sq + 0.5 * s.phi_sq)).abs() < 1e-12 * s.v.max(1.0));
            prop_assert!(s.u >= -1e-12 && s.v >= 0.0);
            let q = g.rotation * state.g_hat.rotation.transpose();
            let k_form = crate::measurements::rotational_potential_noise_free(&q, &lm.weights.k());
            let y = translation_residual_y(&state.g_hat, &frame.a_bar, &frame.q_bar);
            prop_assert!((s.u - (k_form + 0.5 * gains.kappa * y.norm_squared())).abs() < 1e-9);
            let (phi, _) = pose_errors(&g, &state.g_hat);
            prop_assert!((phi - principal_angle(&q)).abs() < 1e-15);
        }
    }
}
