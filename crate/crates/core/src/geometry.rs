//! Closed-form SO(3) / SE(3) primitives.
//!
//! Poses map body-frame coordinates into the inertial frame: `g · a = R a + b`.
//! Twists are body-frame velocities `ξ = [Ω; ν]` with `ġ = g ξ^∨`.

use std::ops::{Add, Mul, Neg, Sub};

use nalgebra::{Matrix3, Matrix4, Matrix6, Vector3, Vector6};

use crate::error::{Error, Result};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;
pub type Vec6 = Vector6<f64>;
pub type Mat6 = Matrix6<f64>;

/// Tolerance used when validating rotation matrices and skew inputs.
pub const GROUP_TOLERANCE: f64 = 1e-9;

/// Below this angle the Rodrigues coefficients switch to their Taylor series.
const SMALL_ANGLE: f64 = 1e-6;

/// Cross-product matrix: `hat(v) * r == v.cross(&r)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds [`GROUP_TOLERANCE`].
pub fn vee(s: &Mat3) -> Result<Vec3> {
    let asymmetry = (s + s.transpose()).norm();
    if asymmetry > GROUP_TOLERANCE {
        return Err(Error::NonSkewInput { asymmetry });
    }
    Ok(vee_unchecked(s))
}

/// Reads the axial vector of the skew part of `s` without validation.
///
/// Equivalent to `vee(skew(s))`; this is what `vex(A − Aᵀ)` style expressions use.
pub fn vee_unchecked(s: &Mat3) -> Vec3 {
    Vec3::new(
        0.5 * (s[(2, 1)] - s[(1, 2)]),
        0.5 * (s[(0, 2)] - s[(2, 0)]),
        0.5 * (s[(1, 0)] - s[(0, 1)]),
    )
}

pub fn sym(a: &Mat3) -> Mat3 {
    0.5 * (a + a.transpose())
}

pub fn skew(a: &Mat3) -> Mat3 {
    0.5 * (a - a.transpose())
}

/// Trace inner product `⟨A, B⟩ = tr(AᵀB)`.
pub fn trace_inner(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// `sin θ / θ`, `(1 − cos θ) / θ²` and `(θ − sin θ) / θ³` for `θ = |v|`.
fn rodrigues_coefficients(theta: f64) -> (f64, f64, f64) {
    if theta < SMALL_ANGLE {
        let t2 = theta * theta;
        let t4 = t2 * t2;
        (
            1.0 - t2 / 6.0 + t4 / 120.0,
            0.5 - t2 / 24.0 + t4 / 720.0,
            1.0 / 6.0 - t2 / 120.0 + t4 / 5040.0,
        )
    } else {
        let (s, c) = theta.sin_cos();
        let t2 = theta * theta;
        (s / theta, (1.0 - c) / t2, (theta - s) / (t2 * theta))
    }
}

/// Element of SO(3), validated on construction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    /// Validates `RᵀR = I` (Frobenius) and `det R = 1` to [`GROUP_TOLERANCE`].
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let orthogonality = (m.transpose() * m - Mat3::identity()).norm();
        let det = m.determinant();
        if orthogonality > GROUP_TOLERANCE || (det - 1.0).abs() > GROUP_TOLERANCE {
            return Err(Error::NotARotation { orthogonality, det });
        }
        Ok(Self(m))
    }

    /// Wraps a matrix the caller knows to be a rotation (e.g. a product of rotations).
    pub fn from_matrix_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn transpose(&self) -> Self {
        Self(self.0.transpose())
    }

    /// `‖RᵀR − I‖_F`.
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Mat3::identity()).norm()
    }

    /// Gram–Schmidt re-orthonormalization. Never applied implicitly by group operations.
    pub fn renormalize(m: &Mat3) -> Self {
        let c0 = m.column(0).normalize();
        let c1 = (m.column(1) - c0 * c0.dot(&m.column(1))).normalize();
        let c2 = c0.cross(&c1);
        Self(Mat3::from_columns(&[c0, c1, c2]))
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

impl Mul<Vec3> for RotationMatrix {
    type Output = Vec3;
    fn mul(self, rhs: Vec3) -> Vec3 {
        self.0 * rhs
    }
}

/// Rodrigues' formula.
pub fn exp_so3(v: &Vec3) -> RotationMatrix {
    let (a, b, _) = rodrigues_coefficients(v.norm());
    let s = hat(v);
    RotationMatrix(Mat3::identity() + a * s + b * s * s)
}

/// Rotation angle `arccos(½(tr q − 1))` in `[0, π]`.
///
/// Evaluated as `atan2(sin θ, cos θ)` so small angles keep full precision.
pub fn principal_angle(q: &RotationMatrix) -> f64 {
    let cos = (0.5 * (q.0.trace() - 1.0)).clamp(-1.0, 1.0);
    let sin = vee_unchecked(&q.0).norm();
    sin.atan2(cos)
}

/// Body-frame velocity `ξ = [Ω; ν]`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Twist {
    pub angular: Vec3,
    pub linear: Vec3,
}

impl Twist {
    pub fn new(angular: Vec3, linear: Vec3) -> Self {
        Self { angular, linear }
    }

    pub fn zero() -> Self {
        Self::default()
    }

    pub fn from_vector(v: &Vec6) -> Self {
        Self {
            angular: v.fixed_rows::<3>(0).into_owned(),
            linear: v.fixed_rows::<3>(3).into_owned(),
        }
    }

    pub fn to_vector(&self) -> Vec6 {
        let mut v = Vec6::zeros();
        v.fixed_rows_mut::<3>(0).copy_from(&self.angular);
        v.fixed_rows_mut::<3>(3).copy_from(&self.linear);
        v
    }

    /// `ξ^∨` as a 4×4 Lie-algebra matrix.
    pub fn to_algebra(&self) -> Matrix4<f64> {
        let mut m = Matrix4::zeros();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&hat(&self.angular));
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.linear);
        m
    }

    pub fn is_finite(&self) -> bool {
        self.angular.iter().chain(self.linear.iter()).all(|x| x.is_finite())
    }

    pub fn scale(&self, s: f64) -> Self {
        Self::new(self.angular * s, self.linear * s)
    }
}

impl Add for Twist {
    type Output = Twist;
    fn add(self, rhs: Twist) -> Twist {
        Twist::new(self.angular + rhs.angular, self.linear + rhs.linear)
    }
}

impl Sub for Twist {
    type Output = Twist;
    fn sub(self, rhs: Twist) -> Twist {
        Twist::new(self.angular - rhs.angular, self.linear - rhs.linear)
    }
}

impl Neg for Twist {
    type Output = Twist;
    fn neg(self) -> Twist {
        Twist::new(-self.angular, -self.linear)
    }
}

/// Element of SE(3): attitude plus position of the body origin in the inertial frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rotation: RotationMatrix,
    pub position: Vec3,
}

impl Default for Pose {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose {
    pub fn new(rotation: RotationMatrix, position: Vec3) -> Self {
        Self { rotation, position }
    }

    pub fn identity() -> Self {
        Self::new(RotationMatrix::identity(), Vec3::zeros())
    }

    pub fn compose(&self, other: &Pose) -> Pose {
        Pose {
            rotation: self.rotation * other.rotation,
            position: self.rotation.0 * other.position + self.position,
        }
    }

    pub fn inverse(&self) -> Pose {
        let rt = self.rotation.transpose();
        Pose {
            rotation: rt,
            position: -(rt.0 * self.position),
        }
    }

    /// Maps a body-frame point into the inertial frame.
    pub fn transform_point(&self, p: &Vec3) -> Vec3 {
        self.rotation.0 * p + self.position
    }

    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation.0);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.position);
        m
    }

    /// Reads a homogeneous matrix; validates the rotation block and the bottom row.
    pub fn from_homogeneous(m: &Matrix4<f64>) -> Result<Pose> {
        let bottom = m.fixed_view::<1, 4>(3, 0);
        if (bottom - nalgebra::RowVector4::new(0.0, 0.0, 0.0, 1.0)).norm() > GROUP_TOLERANCE {
            return Err(Error::NotARotation {
                orthogonality: f64::NAN,
                det: f64::NAN,
            });
        }
        Ok(Pose {
            rotation: RotationMatrix::new(m.fixed_view::<3, 3>(0, 0).into_owned())?,
            position: m.fixed_view::<3, 1>(0, 3).into_owned(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.rotation.0.iter().chain(self.position.iter()).all(|x| x.is_finite())
    }
}

/// Closed-form SE(3) exponential of `dt · ξ^∨` using the left Jacobian of SO(3).
pub fn exp_se3(xi: &Twist, dt: f64) -> Pose {
    let w = xi.angular * dt;
    let v = xi.linear * dt;
    let (a, b, c) = rodrigues_coefficients(w.norm());
    let s = hat(&w);
    let s2 = s * s;
    let rotation = Mat3::identity() + a * s + b * s2;
    let left_jacobian = Mat3::identity() + b * s + c * s2;
    Pose {
        rotation: RotationMatrix(rotation),
        position: left_jacobian * v,
    }
}

/// Adjoint representation `[[R, 0], [b^× R, R]]` acting on `[Ω; ν]`.
pub fn adjoint(g: &Pose) -> Mat6 {
    let r = g.rotation.0;
    let mut ad = Mat6::zeros();
    ad.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    ad.fixed_view_mut::<3, 3>(3, 0).copy_from(&(hat(&g.position) * r));
    ad
}

/// `Ad_g ξ` without forming the 6×6 matrix.
pub fn adjoint_apply(g: &Pose, xi: &Twist) -> Twist {
    let ra = g.rotation.0 * xi.angular;
    Twist::new(ra, g.position.cross(&ra) + g.rotation.0 * xi.linear)
}
