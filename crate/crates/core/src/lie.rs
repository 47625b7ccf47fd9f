//! Minimal SO(3) toolkit: hat operator, exponential/logarithm maps, the
//! right Jacobian, and the right-plus composition.
//!
//! Rotations are plain `Matrix3<f64>` orthonormal matrices. Tangent elements
//! are rotation vectors (axis times angle) in `Vector3<f64>`.
//!
//! All closed-form expressions switch to their quadratic series below
//! `SMALL_ANGLE` to avoid cancellation in the sin(θ)/θ-style coefficients;
//! `1 - cos θ` is always evaluated as `2 sin²(θ/2)`.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector3};
use thiserror::Error;

/// Angle below which series expansions replace the closed forms.
pub const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Error, PartialEq)]
pub enum LieError {
    #[error("matrix is not orthonormal with determinant +1 (deviation {deviation:.3e})")]
    NotARotation { deviation: f64 },
}

/// Skew-symmetric matrix `[v]×` such that `hat(v) * w == v × w`.
#[inline]
pub fn hat(v: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on skew-symmetric input.
#[inline]
pub fn vee(m: &Matrix3<f64>) -> Vector3<f64> {
    Vector3::new(m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// Largest deviation of `r` from orthonormality / unit determinant.
pub fn rotation_deviation(r: &Matrix3<f64>) -> f64 {
    let gram = r.transpose() * r - Matrix3::identity();
    gram.abs().max().max((r.determinant() - 1.0).abs())
}

/// True when `r` is a rotation matrix within `tol`.
pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    rotation_deviation(r) <= tol
}

/// Exponential map via the Rodrigues formula.
///
/// `exp_so3(θ) = I + sin(θ)/θ [θ]× + (1 - cos θ)/θ² [θ]×²`
pub fn exp_so3(theta: &Vector3<f64>) -> Matrix3<f64> {
    exp_so3_with_switch(theta, SMALL_ANGLE)
}

pub(crate) fn exp_so3_with_switch(theta: &Vector3<f64>, switch: f64) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = hat(theta);
    if angle < switch {
        return Matrix3::identity() + k + 0.5 * (k * k);
    }
    let s = angle.sin() / angle;
    let half_sin = (0.5 * angle).sin();
    let c = 2.0 * half_sin * half_sin / (angle * angle);
    Matrix3::identity() + s * k + c * (k * k)
}

/// Logarithm map. Returns the rotation vector with magnitude in [0, π].
///
/// At exactly π the axis sign is ambiguous; the representative whose first
/// nonzero component is positive is returned.
pub fn log_so3(r: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    let deviation = rotation_deviation(r);
    if deviation > 1e-6 {
        return Err(LieError::NotARotation { deviation });
    }
    let q = UnitQuaternion::from_rotation_matrix(&Rotation3::from_matrix_unchecked(*r));
    let mut theta = q.scaled_axis();
    if theta.norm() >= std::f64::consts::PI - 1e-9 {
        for i in 0..3 {
            if theta[i].abs() > 1e-12 {
                if theta[i] < 0.0 {
                    theta = -theta;
                }
                break;
            }
        }
    }
    Ok(theta)
}

/// Right Jacobian of SO(3):
///
/// `J_r(θ) = I - (1 - cos θ)/θ² [θ]× + (θ - sin θ)/θ³ [θ]×²`
///
/// maps additive perturbations of the rotation vector to right-side tangent
/// perturbations of the exponential: `Exp(θ + δ) ≈ Exp(θ) Exp(J_r(θ) δ)`.
pub fn right_jacobian(theta: &Vector3<f64>) -> Matrix3<f64> {
    right_jacobian_with_switch(theta, SMALL_ANGLE)
}

pub(crate) fn right_jacobian_with_switch(theta: &Vector3<f64>, switch: f64) -> Matrix3<f64> {
    let angle = theta.norm();
    let k = hat(theta);
    if angle < switch {
        return Matrix3::identity() - 0.5 * k + (k * k) / 6.0;
    }
    let angle_sq = angle * angle;
    let half_sin = (0.5 * angle).sin();
    let c1 = 2.0 * half_sin * half_sin / angle_sq;
    let c2 = (angle - angle.sin()) / (angle_sq * angle);
    Matrix3::identity() - c1 * k + c2 * (k * k)
}

/// Right-plus composition `R ⊕ θ = R · Exp(θ)`.
#[inline]
pub fn oplus(r: &Matrix3<f64>, theta: &Vector3<f64>) -> Matrix3<f64> {
    r * exp_so3(theta)
}

/// Right-minus: the tangent step from `a` to `b`, `Log(aᵀ b)`.
pub fn ominus(b: &Matrix3<f64>, a: &Matrix3<f64>) -> Result<Vector3<f64>, LieError> {
    log_so3(&(a.transpose() * b))
}
