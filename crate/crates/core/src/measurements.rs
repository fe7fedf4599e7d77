//! Point-cloud measurement model and the generalized Wahba cost.
//!
//! Pairwise vectors are taken over unordered point pairs `(λ, ℓ)` with `λ < ℓ`
//! in lexicographic order, so column `c` of `D` is `q_λ − q_ℓ` for the `c`-th pair.
//! Three points only span a plane with their pairwise differences, so for `j = 3`
//! the first two pairs are kept and their cross product is appended as the third
//! column (the same rule is applied to the body-frame vectors).

use nalgebra::{DMatrix, Matrix3xX};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::geometry::{trace_inner, Mat3, Pose, RotationMatrix, Vec3};

/// `rank(D) = 3` iff `σ₃ > RANK_TOLERANCE · σ₁`.
pub const RANK_TOLERANCE: f64 = 1e-8;

/// Inertially fixed landmark positions `q_i`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePointSet {
    points: Vec<Vec3>,
}

impl FeaturePointSet {
    /// Requires at least three finite points whose pairwise vectors have rank 3.
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.len() < 3 {
            return Err(Error::TooFewPoints {
                required: 3,
                got: points.len(),
            });
        }
        if !points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("feature points"));
        }
        check_rank(&pairwise_matrix(&points))?;
        Ok(Self { points })
    }

    /// Vertices of the corner unit tetrahedron scaled by 5 m.
    pub fn default_tetrahedron() -> Self {
        Self {
            points: vec![
                Vec3::zeros(),
                Vec3::new(5.0, 0.0, 0.0),
                Vec3::new(0.0, 5.0, 0.0),
                Vec3::new(0.0, 0.0, 5.0),
            ],
        }
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mean(&self) -> Vec3 {
        mean(&self.points)
    }
}

/// Body-frame measurements `a_iᵐ` of every landmark at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureFrame {
    pub body_points: Vec<Vec3>,
    pub timestamp: f64,
}

impl FeatureFrame {
    pub fn new(body_points: Vec<Vec3>, timestamp: f64) -> Self {
        Self {
            body_points,
            timestamp,
        }
    }

    pub fn mean(&self) -> Vec3 {
        mean(&self.body_points)
    }
}

/// Inertial (`D`) and measured body-frame (`Eᵐ`) pairwise vectors, both 3×n.
#[derive(Debug, Clone, PartialEq)]
pub struct PairVectorMatrices {
    pub d: Matrix3xX<f64>,
    pub e_m: Matrix3xX<f64>,
}

impl PairVectorMatrices {
    pub fn n(&self) -> usize {
        self.d.ncols()
    }
}

/// Canonical pair order: `(λ, ℓ)` with `λ < ℓ`, lexicographic.
pub fn pair_indices(j: usize) -> Vec<(usize, usize)> {
    (0..j)
        .flat_map(|l| (l + 1..j).map(move |m| (l, m)))
        .collect()
}

fn pairwise_matrix(points: &[Vec3]) -> Matrix3xX<f64> {
    let pairs = pair_indices(points.len());
    if points.len() == 3 {
        let d1 = points[pairs[0].0] - points[pairs[0].1];
        let d2 = points[pairs[1].0] - points[pairs[1].1];
        return Matrix3xX::from_columns(&[d1, d2, d1.cross(&d2)]);
    }
    Matrix3xX::from_iterator(
        pairs.len(),
        pairs.iter().flat_map(|&(l, m)| (points[l] - points[m]).iter().copied().collect::<Vec<_>>()),
    )
}

fn check_rank(d: &Matrix3xX<f64>) -> Result<()> {
    // Singular values of D are the square roots of the eigenvalues of D Dᵀ.
    let sv = (d * d.transpose()).symmetric_eigenvalues();
    let mut s: Vec<f64> = sv.iter().map(|x| x.max(0.0).sqrt()).collect();
    s.sort_by(|a, b| b.total_cmp(a));
    let ratio = if s[0] > 0.0 { s[2] / s[0] } else { 0.0 };
    if ratio.is_nan() || ratio <= RANK_TOLERANCE {
        return Err(Error::RankDeficient { ratio });
    }
    Ok(())
}

/// Builds `D` and `Eᵐ` for one frame and verifies `rank(D) = 3`.
pub fn build_pair_matrices(points: &FeaturePointSet, frame: &FeatureFrame) -> Result<PairVectorMatrices> {
    if frame.body_points.len() != points.len() {
        return Err(Error::CardinalityMismatch {
            expected: points.len(),
            got: frame.body_points.len(),
        });
    }
    let d = pairwise_matrix(points.points());
    check_rank(&d)?;
    Ok(PairVectorMatrices {
        d,
        e_m: pairwise_matrix(&frame.body_points),
    })
}

/// Generalized Wahba weights `W = Dᵀ(DDᵀ)⁻¹K(DDᵀ)⁻¹D`.
#[derive(Debug, Clone, PartialEq)]
pub struct WahbaWeights {
    pub k_diag: Vec3,
    pub w: DMatrix<f64>,
    /// `D W`, which simplifies to `K (DDᵀ)⁻¹ D`.
    pub dw: Matrix3xX<f64>,
}

impl WahbaWeights {
    pub fn k(&self) -> Mat3 {
        Mat3::from_diagonal(&self.k_diag)
    }
}

/// Checks `k₁ > k₂ > k₃ ≥ 1`.
pub fn validate_k(k: &Vec3) -> Result<()> {
    if k.iter().all(|x| x.is_finite()) && k.x > k.y && k.y > k.z && k.z >= 1.0 {
        Ok(())
    } else {
        Err(Error::BadKOrdering([k.x, k.y, k.z]))
    }
}

pub fn compute_wahba_weights(d: &Matrix3xX<f64>, k_diag: &Vec3) -> Result<WahbaWeights> {
    validate_k(k_diag)?;
    check_rank(d)?;
    let ddt_inv = (d * d.transpose())
        .try_inverse()
        .ok_or(Error::RankDeficient { ratio: 0.0 })?;
    let k = Mat3::from_diagonal(k_diag);
    let left = d.transpose() * ddt_inv; // n×3
    let w = &left * k * left.transpose();
    let w = 0.5 * (&w + w.transpose());
    let dw = k * ddt_inv * d;
    Ok(WahbaWeights {
        k_diag: *k_diag,
        w,
        dw,
    })
}

/// `L = D W (Eᵐ)ᵀ`.
pub fn compute_l(d: &Matrix3xX<f64>, w: &DMatrix<f64>, e_m: &Matrix3xX<f64>) -> Mat3 {
    let dw = d * w;
    dw * e_m.transpose()
}

/// `vex(X − Xᵀ)`.
pub(crate) fn vex_antisym(x: &Mat3) -> Vec3 {
    Vec3::new(x[(2, 1)] - x[(1, 2)], x[(0, 2)] - x[(2, 0)], x[(1, 0)] - x[(0, 1)])
}

/// `s_L = vex(L R̂ᵀ − R̂ Lᵀ)`.
pub fn s_l(r_hat: &RotationMatrix, l: &Mat3) -> Vec3 {
    vex_antisym(&(l * r_hat.matrix().transpose()))
}

/// `s_K(Q) = vex(KQ − QᵀK)`.
pub fn s_k(q: &RotationMatrix, k: &Mat3) -> Vec3 {
    vex_antisym(&(k * q.matrix()))
}

fn mean(points: &[Vec3]) -> Vec3 {
    if points.is_empty() {
        return Vec3::zeros();
    }
    points.iter().sum::<Vec3>() / points.len() as f64
}

/// Landmark and measured centroids `(q̄, āᵐ)`.
pub fn mean_vectors(points: &FeaturePointSet, frame: &FeatureFrame) -> (Vec3, Vec3) {
    (points.mean(), frame.mean())
}

/// `y = q̄ − R̂ āᵐ − b̂`.
pub fn translation_residual_y(g_hat: &Pose, a_bar_m: &Vec3, q_bar: &Vec3) -> Vec3 {
    q_bar - g_hat.rotation.matrix() * a_bar_m - g_hat.position
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Potentials {
    pub translational: f64,
    pub rotational: f64,
    pub total: f64,
}

/// `U_r = ½⟨D − R̂Eᵐ, (D − R̂Eᵐ)W⟩`.
pub fn rotational_potential(r_hat: &RotationMatrix, pairs: &PairVectorMatrices, w: &DMatrix<f64>) -> f64 {
    let residual = &pairs.d - r_hat.matrix() * &pairs.e_m;
    let weighted = &residual * w;
    0.5 * residual.component_mul(&weighted).sum()
}

/// `⟨K, I − Q⟩`, the noise-free form of the rotational potential.
pub fn rotational_potential_noise_free(q: &RotationMatrix, k: &Mat3) -> f64 {
    trace_inner(k, &(Mat3::identity() - q.matrix()))
}

pub fn potentials(
    g_hat: &Pose,
    pairs: &PairVectorMatrices,
    q_bar: &Vec3,
    a_bar_m: &Vec3,
    weights: &WahbaWeights,
    kappa: f64,
) -> Potentials {
    let y = translation_residual_y(g_hat, a_bar_m, q_bar);
    let translational = 0.5 * kappa * y.norm_squared();
    let rotational = rotational_potential(&g_hat.rotation, pairs, &weights.w);
    Potentials {
        translational,
        rotational,
        total: translational + rotational,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseDistribution {
    /// Per-axis uniform on `[−σ√3, σ√3]`.
    Uniform,
    Gaussian,
}

/// Per-axis additive noise on the measured body-frame points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointNoise {
    pub distribution: NoiseDistribution,
    pub std: f64,
}

impl PointNoise {
    pub fn none() -> Self {
        Self {
            distribution: NoiseDistribution::Gaussian,
            std: 0.0,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec3 {
        if self.std <= 0.0 {
            return Vec3::zeros();
        }
        match self.distribution {
            NoiseDistribution::Uniform => {
                let h = self.std * 3f64.sqrt();
                Vec3::from_fn(|_, _| rng.random_range(-h..=h))
            }
            NoiseDistribution::Gaussian => {
                let normal = Normal::new(0.0, self.std).expect("finite std");
                Vec3::from_fn(|_, _| normal.sample(rng))
            }
        }
    }
}

/// `a_iᵐ = Rᵀ(q_i − b) + η_i`.
pub fn synthesize_frame<R: Rng + ?Sized>(
    true_pose: &Pose,
    points: &FeaturePointSet,
    noise: &PointNoise,
    timestamp: f64,
    rng: &mut R,
) -> FeatureFrame {
    let rt = true_pose.rotation.matrix().transpose();
    let body_points = points
        .points()
        .iter()
        .map(|q| rt * (q - true_pose.position) + noise.sample(rng))
        .collect();
    FeatureFrame::new(body_points, timestamp)
}

/// Landmark-derived quantities that stay fixed over a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Landmarks {
    pub points: FeaturePointSet,
    pub q_bar: Vec3,
    pub d: Matrix3xX<f64>,
    pub weights: WahbaWeights,
}

impl Landmarks {
    pub fn new(points: FeaturePointSet, k_diag: &Vec3) -> Result<Self> {
        let d = pairwise_matrix(points.points());
        let weights = compute_wahba_weights(&d, k_diag)?;
        Ok(Self {
            q_bar: points.mean(),
            points,
            d,
            weights,
        })
    }

    /// Processes one frame into the quantities the estimators consume.
    pub fn frame_data(&self, frame: &FeatureFrame) -> Result<FrameData> {
        if frame.body_points.len() != self.points.len() {
            return Err(Error::CardinalityMismatch {
                expected: self.points.len(),
                got: frame.body_points.len(),
            });
        }
        if !frame.body_points.iter().all(|p| p.iter().all(|x| x.is_finite())) {
            return Err(Error::NonFinite("frame points"));
        }
        let e_m = pairwise_matrix(&frame.body_points);
        let ew = &e_m * &self.weights.w;
        Ok(FrameData {
            q_bar: self.q_bar,
            a_bar: frame.mean(),
            l: &self.weights.dw * e_m.transpose(),
            k_trace: self.weights.k_diag.sum(),
            e_energy: e_m.component_mul(&ew).sum(),
        })
    }

    pub fn pair_matrices(&self, frame: &FeatureFrame) -> Result<PairVectorMatrices> {
        build_pair_matrices(&self.points, frame)
    }
}

/// Per-frame quantities consumed by the estimators.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameData {
    pub q_bar: Vec3,
    pub a_bar: Vec3,
    pub l: Mat3,
    /// `tr K`.
    pub k_trace: f64,
    /// `tr(Eᵐ W Eᵐᵀ)`, invariant under body rotation of the frame.
    pub e_energy: f64,
}

impl FrameData {
    /// `U_r = ½(tr K + tr(EᵐWEᵐᵀ)) − ⟨L, R̂⟩`, equal to the weighted Wahba cost.
    pub fn rotational_potential(&self, r_hat: &RotationMatrix) -> f64 {
        0.5 * (self.k_trace + self.e_energy) - trace_inner(&self.l, r_hat.matrix())
    }
}
