//! Attitude and frame mathematics.
//!
//! Conventions: a [`Dcm`] `[AB]` maps vector components expressed in frame B
//! into frame A; row `i` is the unit vector `a_i` written in B. Euler angles
//! follow the 3-2-1 (yaw, pitch, roll) sequence and are taken relative to the
//! Hill (LVLH) frame, so `[BN] = [BO][ON]`.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type Vec3 = Vector3<f64>;

const ORTHO_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttitudeError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("degenerate orbit frame: position and velocity are parallel or zero")]
    DegenerateFrame,
}

/// Direction cosine matrix.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Dcm(Matrix3<f64>);

impl Dcm {
    pub fn identity() -> Self {
        Dcm(Matrix3::identity())
    }

    /// Wraps a matrix after checking orthonormality and handedness.
    pub fn new(m: Matrix3<f64>) -> Result<Self, AttitudeError> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(AttitudeError::InvalidArgument("non-finite DCM element".into()));
        }
        let err = (m.transpose() * m - Matrix3::identity()).abs().max();
        if err > ORTHO_TOL {
            return Err(AttitudeError::InvalidArgument(format!(
                "matrix is not orthonormal (max deviation {err:e})"
            )));
        }
        if (m.determinant() - 1.0).abs() > ORTHO_TOL {
            return Err(AttitudeError::InvalidArgument("determinant is not +1".into()));
        }
        Ok(Dcm(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Dcm(m)
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn transpose(&self) -> Dcm {
        Dcm(self.0.transpose())
    }

    /// Maps a vector from the reference frame into this frame.
    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Row `i` of the matrix: body axis `i` expressed in the reference frame.
    pub fn axis(&self, i: usize) -> Vec3 {
        self.0.row(i).transpose()
    }
}

/// Modified Rodrigues parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mrp(Vec3);

impl Mrp {
    pub fn zero() -> Self {
        Mrp(Vec3::zeros())
    }

    /// Builds an MRP, switching to the shadow set when `|σ| > 1`.
    pub fn new(sigma: Vec3) -> Result<Self, AttitudeError> {
        if sigma.iter().any(|v| !v.is_finite()) {
            return Err(AttitudeError::InvalidArgument("non-finite MRP component".into()));
        }
        Ok(Mrp(sigma).normalized())
    }

    /// Principal rotation of `angle` radians about the unit `axis`.
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Self {
        Mrp(axis.normalize() * (angle / 4.0).tan()).normalized()
    }

    fn normalized(self) -> Self {
        let n2 = self.0.norm_squared();
        if n2 > 1.0 {
            Mrp(-self.0 / n2)
        } else {
            self
        }
    }

    pub fn vector(&self) -> &Vec3 {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0.norm()
    }
}

/// 3-2-1 Euler angles in radians.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerYpr {
    pub yaw: f64,
    pub pitch: f64,
    pub roll: f64,
}

/// Elementary frame rotation about axis 1, 2 or 3 (index 0, 1, 2).
pub fn elementary(axis: usize, angle: f64) -> Dcm {
    let (s, c) = angle.sin_cos();
    let m = match axis {
        0 => Matrix3::new(1.0, 0.0, 0.0, 0.0, c, s, 0.0, -s, c),
        1 => Matrix3::new(c, 0.0, -s, 0.0, 1.0, 0.0, s, 0.0, c),
        2 => Matrix3::new(c, s, 0.0, -s, c, 0.0, 0.0, 0.0, 1.0),
        _ => panic!("elementary rotation axis must be 0, 1 or 2"),
    };
    Dcm(m)
}

pub fn dcm_from_euler321(angles: EulerYpr) -> Result<Dcm, AttitudeError> {
    let EulerYpr { yaw, pitch, roll } = angles;
    if !(yaw.is_finite() && pitch.is_finite() && roll.is_finite()) {
        return Err(AttitudeError::InvalidArgument("non-finite Euler angle".into()));
    }
    Ok(Dcm(elementary(0, roll).0 * elementary(1, pitch).0 * elementary(2, yaw).0))
}

/// Inverse of [`dcm_from_euler321`]; pitch is returned in [-π/2, π/2].
pub fn euler321_from_dcm(d: &Dcm) -> EulerYpr {
    let m = &d.0;
    EulerYpr {
        yaw: m[(0, 1)].atan2(m[(0, 0)]),
        pitch: -m[(0, 2)].clamp(-1.0, 1.0).asin(),
        roll: m[(1, 2)].atan2(m[(2, 2)]),
    }
}

/// Hill frame `[ON]`: ô1 along position, ô3 along orbit angular momentum.
pub fn hill_frame(r: &Vec3, v: &Vec3) -> Result<Dcm, AttitudeError> {
    let rn = r.norm();
    let h = r.cross(v);
    let hn = h.norm();
    if !(rn > 0.0) || !(hn > 1e-12 * rn * v.norm()) || !hn.is_finite() {
        return Err(AttitudeError::DegenerateFrame);
    }
    let o1 = r / rn;
    let o3 = h / hn;
    let o2 = o3.cross(&o1);
    Ok(Dcm(Matrix3::from_rows(&[o1.transpose(), o2.transpose(), o3.transpose()])))
}

pub fn compose_bn(bo: &Dcm, on: &Dcm) -> Dcm {
    Dcm(bo.0 * on.0)
}

/// Euler parameters (scalar first) with a non-negative scalar part, using
/// the largest-component extraction to stay well conditioned.
pub(crate) fn quaternion_from_dcm(d: &Dcm) -> [f64; 4] {
    let c = &d.0;
    let tr = c.trace();
    let sq = [
        (1.0 + tr) / 4.0,
        (1.0 + 2.0 * c[(0, 0)] - tr) / 4.0,
        (1.0 + 2.0 * c[(1, 1)] - tr) / 4.0,
        (1.0 + 2.0 * c[(2, 2)] - tr) / 4.0,
    ];
    let (k, &big) = sq
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .expect("four entries");
    let b = big.max(0.0).sqrt();
    let p01 = (c[(1, 2)] - c[(2, 1)]) / 4.0;
    let p02 = (c[(2, 0)] - c[(0, 2)]) / 4.0;
    let p03 = (c[(0, 1)] - c[(1, 0)]) / 4.0;
    let p23 = (c[(1, 2)] + c[(2, 1)]) / 4.0;
    let p31 = (c[(2, 0)] + c[(0, 2)]) / 4.0;
    let p12 = (c[(0, 1)] + c[(1, 0)]) / 4.0;
    let mut q = match k {
        0 => [b, p01 / b, p02 / b, p03 / b],
        1 => [p01 / b, b, p12 / b, p31 / b],
        2 => [p02 / b, p12 / b, b, p23 / b],
        _ => [p03 / b, p31 / b, p23 / b, b],
    };
    if q[0] < 0.0 {
        q.iter_mut().for_each(|v| *v = -*v);
    }
    q
}

pub fn mrp_from_dcm(d: &Dcm) -> Mrp {
    let q = quaternion_from_dcm(d);
    let s = Vec3::new(q[1], q[2], q[3]) / (1.0 + q[0]);
    Mrp(s).normalized()
}

pub fn dcm_from_mrp(sigma: &Mrp) -> Dcm {
    let s = sigma.0;
    let s2 = s.norm_squared();
    let sk = s.cross_matrix();
    let m = Matrix3::identity() + (8.0 * sk * sk - 4.0 * (1.0 - s2) * sk) / (1.0 + s2).powi(2);
    Dcm(m)
}

/// Body rate relative to the inertial frame from the rate relative to the
/// Hill frame plus the orbit rate about ô3.
pub fn omega_bn(omega_bo_body: &Vec3, r: &Vec3, v: &Vec3, bo: &Dcm) -> Result<Vec3, AttitudeError> {
    hill_frame(r, v)?;
    Ok(omega_bo_body + bo.apply(&Vec3::new(0.0, 0.0, orbit_rate(r, v))))
}

/// Instantaneous orbit rate `|r×v| / |r|²`.
pub fn orbit_rate(r: &Vec3, v: &Vec3) -> f64 {
    r.cross(v).norm() / r.norm_squared()
}

/// Principal rotation angle between two attitudes, in [0, π].
///
/// Equal to `acos((tr(aᵀb) - 1) / 2)`; evaluated through the quaternion of
/// `aᵀb` so small angles keep full precision.
pub fn principal_angle(a: &Dcm, b: &Dcm) -> f64 {
    let q = quaternion_from_dcm(&Dcm(a.0.transpose() * b.0));
    (2.0 * Vec3::new(q[1], q[2], q[3]).norm().atan2(q[0])).clamp(0.0, PI)
}

/// Principal rotation carrying `from` onto `to`, as `(unit axis in the
/// `from` frame, angle)`. The axis is arbitrary (x) when the angle is zero.
pub fn relative_axis_angle(from: &Dcm, to: &Dcm) -> (Vec3, f64) {
    let rel = Dcm(to.0 * from.0.transpose());
    let q = quaternion_from_dcm(&rel);
    let v = Vec3::new(q[1], q[2], q[3]);
    let n = v.norm();
    if n < 1e-300 {
        return (Vec3::x(), 0.0);
    }
    (v / n, 2.0 * n.atan2(q[0]))
}

/// Active rotation matrix of `angle` about unit `axis` (Rodrigues formula).
pub fn rotation_about(axis: &Vec3, angle: f64) -> Matrix3<f64> {
    let k = axis.normalize();
    let (s, c) = angle.sin_cos();
    Matrix3::identity() * c + k.cross_matrix() * s + (k * k.transpose()) * (1.0 - c)
}
