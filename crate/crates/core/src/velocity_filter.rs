//! Discrete finite-time stable measurement filter and velocity reconstruction
//! from filtered point measurements.

use crate::error::{Error, Result};
use crate::geometry::{Twist, Vec3};
use crate::measurements::FeatureFrame;

/// Default fractional exponent `r`.
pub const DEFAULT_R: f64 = 13.0 / 11.0;
pub const DEFAULT_LAMBDA: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterParams {
    pub r: f64,
    pub lambda_c: f64,
    pub dt: f64,
    pub eps_reg: f64,
}

impl FilterParams {
    pub fn new(dt: f64) -> Self {
        Self {
            r: DEFAULT_R,
            lambda_c: DEFAULT_LAMBDA,
            dt,
            eps_reg: 1e-9,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.r > 1.0 && self.r < 2.0) {
            return Err(Error::InvalidGains(format!("filter exponent r must lie in (1, 2), got {}", self.r)));
        }
        if !(self.lambda_c > 0.0 && self.lambda_c.is_finite()) {
            return Err(Error::InvalidGains(format!("lambda_c must be positive, got {}", self.lambda_c)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::InvalidScenario(format!("dt must be positive, got {}", self.dt)));
        }
        Ok(())
    }

    /// `𝒟(c) = ((cᵀc)^{1−1/r} − λ) / ((cᵀc)^{1−1/r} + λ)`.
    pub fn gain(&self, c: &Vec3) -> f64 {
        let n2 = c.norm_squared();
        let x = if n2 < self.eps_reg { 0.0 } else { n2.powf(1.0 - 1.0 / self.r) };
        (x - self.lambda_c) / (x + self.lambda_c)
    }
}

/// Two-sample filter history for one 3-vector signal.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FtsFilterState {
    pub z_f_prev: Vec3,
    pub z_f: Vec3,
    pub params: FilterParams,
}

impl FtsFilterState {
    /// Both history slots start at the first measured sample.
    pub fn new(first: Vec3, params: FilterParams) -> Self {
        Self {
            z_f_prev: first,
            z_f: first,
            params,
        }
    }
}

/// Advances the filter with measurement `z_m`; returns `(z_f_next, ż_f)`.
///
/// The history term uses `zᶠ_{k−1} − zᶠ_k`, which extrapolates the last
/// filtered increment. With `zᶠ_k − zᶠ_{k−1}` the error dynamics linearize to
/// a root at `−1 − √2` and settle into a period-2 oscillation.
pub fn fts_filter_step(state: &mut FtsFilterState, z_m: &Vec3) -> (Vec3, Vec3) {
    let params = &state.params;
    let c = state.z_f - z_m;
    let delta = state.z_f_prev - state.z_f;
    let next = z_m + params.gain(&c) * c + params.gain(&delta) * delta;
    let z_dot = (next - state.z_f) / params.dt;
    state.z_f_prev = state.z_f;
    state.z_f = next;
    (next, z_dot)
}

/// `νᶠ = (1/j) Σ (a_iᶠ × Ωᶠ − v_iᶠ)`.
pub fn reconstruct_nu(a_f: &[Vec3], a_dot_f: &[Vec3], omega_f: &Vec3) -> Result<Vec3> {
    if a_f.is_empty() {
        return Err(Error::EmptyFrame);
    }
    if a_f.len() != a_dot_f.len() {
        return Err(Error::CardinalityMismatch {
            expected: a_f.len(),
            got: a_dot_f.len(),
        });
    }
    let sum: Vec3 = a_f.iter().zip(a_dot_f).map(|(a, v)| a.cross(omega_f) - v).sum();
    Ok(sum / a_f.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilteredKinematics {
    pub omega_f: Vec3,
    pub a_f: Vec<Vec3>,
    pub a_dot_f: Vec<Vec3>,
    pub nu_f: Vec3,
    pub xi_f: Twist,
}

impl FilteredKinematics {
    pub fn a_bar_f(&self) -> Vec3 {
        self.a_f.iter().sum::<Vec3>() / self.a_f.len() as f64
    }
}

pub fn assemble_xi_f(kin: &FilteredKinematics) -> Twist {
    Twist::new(kin.omega_f, kin.nu_f)
}

/// Per-point and gyro filters producing the filtered twist each epoch.
#[derive(Debug, Clone)]
pub struct KinematicsFilter {
    points: Vec<FtsFilterState>,
    gyro: FtsFilterState,
}

impl KinematicsFilter {
    pub fn new(first_frame: &FeatureFrame, first_gyro: &Vec3, params: FilterParams) -> Result<Self> {
        params.validate()?;
        if first_frame.body_points.is_empty() {
            return Err(Error::EmptyFrame);
        }
        Ok(Self {
            points: first_frame
                .body_points
                .iter()
                .map(|a| FtsFilterState::new(*a, params))
                .collect(),
            gyro: FtsFilterState::new(*first_gyro, params),
        })
    }

    pub fn step(&mut self, frame: &FeatureFrame, gyro: &Vec3) -> Result<FilteredKinematics> {
        if frame.body_points.len() != self.points.len() {
            return Err(Error::CardinalityMismatch {
                expected: self.points.len(),
                got: frame.body_points.len(),
            });
        }
        // Epoch-k outputs are zᶠ_k and żᶠ_k; zᶠ_{k+1} only enters the derivative.
        let current = |f: &mut FtsFilterState, z: &Vec3| {
            let z_k = f.z_f;
            let (_, z_dot) = fts_filter_step(f, z);
            (z_k, z_dot)
        };
        let (omega_f, _) = current(&mut self.gyro, gyro);
        let (a_f, a_dot_f): (Vec<Vec3>, Vec<Vec3>) = self
            .points
            .iter_mut()
            .zip(&frame.body_points)
            .map(|(f, a)| current(f, a))
            .unzip();
        let nu_f = reconstruct_nu(&a_f, &a_dot_f, &omega_f)?;
        Ok(FilteredKinematics {
            omega_f,
            xi_f: Twist::new(omega_f, nu_f),
            a_f,
            a_dot_f,
            nu_f,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{exp_se3, exp_so3, hat, Pose};
    use approx::assert_relative_eq;
    use proptest::prelude::{prop_assert, prop_assert_eq, proptest, ProptestConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn params() -> FilterParams {
        FilterParams::new(0.1)
    }

    fn steps_to_converge(initial_error: f64, params: FilterParams) -> Option<usize> {
        let target = Vec3::new(0.3, -1.2, 2.0);
        let mut s = FtsFilterState::new(target + Vec3::new(initial_error, 0.0, 0.0), params);
        for k in 1..=10_000 {
            let (z, _) = fts_filter_step(&mut s, &target);
            if (z - target).norm() < 1e-6 {
                return Some(k);
            }
        }
        None
    }

    #[test]
    fn gain_examples() {
        let p = params();
        assert_eq!(p.gain(&Vec3::zeros()), -1.0);
        assert_relative_eq!(p.gain(&Vec3::x()), 0.0, epsilon = 1e-15);
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        for _ in 0..100_000 {
            let c = Vec3::from_fn(|_, _| rng.random_range(-1e3..1e3)) * rng.random_range(0.0..1.0f64).powi(6);
            let d = p.gain(&c);
            assert!((-1.0..1.0).contains(&d));
        }
    }

    #[test]
    fn constant_input_is_a_fixed_point() {
        let z = Vec3::new(1.0, 2.0, 3.0);
        let mut s = FtsFilterState::new(z, params());
        for _ in 0..5 {
            let (next, dot) = fts_filter_step(&mut s, &z);
            assert_eq!(next, z);
            assert_eq!(dot, Vec3::zeros());
        }
    }

    #[test]
    fn step_input_convergence_counts() {
        let counts: Vec<usize> = [1.0, 10.0, 100.0]
            .iter()
            .map(|&e| steps_to_converge(e, params()).expect("converges"))
            .collect();
        // Scalar brute-force iteration of the same recursion.
        let oracle = |e0: f64| {
            let d = |x: f64| {
                let m = (x * x).powf(1.0 - 11.0 / 13.0);
                (m - 1.0) / (m + 1.0)
            };
            let (mut prev, mut z) = (e0, e0);
            for k in 1..=10_000usize {
                let next = d(z) * z + d(prev - z) * (prev - z);
                prev = z;
                z = next;
                if z.abs() < 1e-6 {
                    return k;
                }
            }
            usize::MAX
        };
        assert_eq!(counts, [1.0, 10.0, 100.0].map(oracle).to_vec());
        assert_eq!(counts, vec![1, 70, 74]);
        // Growth from 10 to 100 is far below linear in the initial error.
        assert!(counts[2] < 2 * counts[1]);
    }

    #[test]
    fn forward_history_difference_oscillates() {
        let p = params();
        let target = Vec3::zeros();
        let mut z_prev = Vec3::new(10.0, 0.0, 0.0);
        let mut z = z_prev;
        let mut tail = Vec::new();
        for k in 0..5_000 {
            let c = z - target;
            let delta = z - z_prev;
            let next = target + p.gain(&c) * c + p.gain(&delta) * delta;
            z_prev = z;
            z = next;
            if k >= 4_990 {
                tail.push(z.x);
            }
        }
        assert!(tail.iter().all(|x| x.abs() > 1e-2));
        for w in tail.windows(2) {
            assert!(w[0] * w[1] < 0.0);
        }
    }

    #[test]
    fn ramp_derivative_is_exact_after_transient() {
        let p = params();
        let slope = Vec3::new(0.5, -0.2, 0.1);
        let mut s = FtsFilterState::new(Vec3::zeros(), p);
        let mut last = Vec3::zeros();
        for k in 0..400 {
            let z_m = slope * (k as f64 * p.dt);
            let (_, dot) = fts_filter_step(&mut s, &z_m);
            last = dot;
        }
        assert!((last - slope).norm() < 1e-6);
    }

    #[test]
    fn reconstruction_examples() {
        let nu = Vec3::new(0.65, 0.0, 0.1);
        let a = vec![Vec3::new(1.0, 2.0, 3.0), Vec3::new(-1.0, 0.5, 2.0)];
        let v = vec![-nu, -nu];
        assert!((reconstruct_nu(&a, &v, &Vec3::zeros()).unwrap() - nu).norm() < 1e-15);
        assert_eq!(reconstruct_nu(&[Vec3::x()], &[Vec3::zeros()], &Vec3::zeros()).unwrap(), Vec3::zeros());
        assert!(matches!(reconstruct_nu(&[], &[], &Vec3::zeros()), Err(Error::EmptyFrame)));
        let zero = FilteredKinematics {
            omega_f: Vec3::zeros(),
            a_f: vec![],
            a_dot_f: vec![],
            nu_f: Vec3::zeros(),
            xi_f: Twist::zero(),
        };
        assert_eq!(assemble_xi_f(&zero), Twist::zero());
    }

    #[test]
    fn filtered_twist_tracks_constant_motion() {
        let p = params();
        let xi = Twist::new(Vec3::new(0.0, 0.15, 0.0), Vec3::new(0.65, 0.0, 0.1));
        let points = crate::measurements::FeaturePointSet::default_tetrahedron();
        let frame_at = |k: usize| {
            let g = exp_se3(&xi, k as f64 * p.dt);
            let body = points.points().iter().map(|q| g.inverse().transform_point(q)).collect();
            FeatureFrame::new(body, k as f64 * p.dt)
        };
        let mut f = KinematicsFilter::new(&frame_at(0), &xi.angular, p).unwrap();
        let mut last = None;
        for k in 0..300 {
            last = Some(f.step(&frame_at(k), &xi.angular).unwrap());
        }
        let kin = last.unwrap();
        assert!((kin.omega_f - xi.angular).norm() < 1e-12);
        assert_eq!(assemble_xi_f(&kin), kin.xi_f);
        // Points move on circles, so the filter lags slightly on curvature.
        assert!((kin.nu_f - xi.linear).norm() < 0.05, "{}", (kin.nu_f - xi.linear).norm());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(256))]

        #[test]
        fn reconstruction_is_exact(seed in proptest::num::u64::ANY, j in 1usize..9) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let omega = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let nu = Vec3::from_fn(|_, _| rng.random_range(-2.0..2.0));
            let a: Vec<Vec3> = (0..j).map(|_| Vec3::from_fn(|_, _| rng.random_range(-5.0..5.0))).collect();
            // v_i = [a_i^× −I] ξ
            let v: Vec<Vec3> = a.iter().map(|ai| hat(ai) * omega - nu).collect();
            let rec = reconstruct_nu(&a, &v, &omega).unwrap();
            prop_assert!((rec - nu).norm() < 1e-12);
        }

        #[test]
        fn per_point_filters_are_independent(seed in proptest::num::u64::ANY) {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            let p = params();
            let g0 = Pose::new(exp_so3(&Vec3::new(0.1, 0.2, 0.3)), Vec3::zeros());
            let samples: Vec<Vec<Vec3>> = (0..20)
                .map(|_| (0..4).map(|_| g0.transform_point(&Vec3::from_fn(|_, _| rng.random_range(-3.0..3.0)))).collect())
                .collect();
            let mut bank = KinematicsFilter::new(&FeatureFrame::new(samples[0].clone(), 0.0), &Vec3::zeros(), p).unwrap();
            let mut singles: Vec<FtsFilterState> = samples[0].iter().map(|a| FtsFilterState::new(*a, p)).collect();
            for s in &samples {
                let kin = bank.step(&FeatureFrame::new(s.clone(), 0.0), &Vec3::zeros()).unwrap();
                for (i, single) in singles.iter_mut().enumerate() {
                    let z_k = single.z_f;
                    let (_, dz) = fts_filter_step(single, &s[i]);
                    prop_assert_eq!(z_k, kin.a_f[i]);
                    prop_assert_eq!(dz, kin.a_dot_f[i]);
                }
            }
        }
    }
}
