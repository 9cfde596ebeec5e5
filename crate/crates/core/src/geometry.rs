//! Camera, pixel and rigid-transform primitives plus the projective
//! constructions (rotational homography, essential and fundamental matrices)
//! the rest of the crate is built on.

use nalgebra::{Matrix3, Rotation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A 3D point in camera coordinates (scene units).
pub type Point3 = Vector3<f64>;

/// Pinhole intrinsics of one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    #[serde(default)]
    pub skew: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        Self::with_skew(fx, fy, cx, cy, 0.0)
    }

    pub fn with_skew(fx: f64, fy: f64, cx: f64, cy: f64, skew: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy, skew };
        k.validate()?;
        Ok(k)
    }

    pub fn validate(&self) -> Result<()> {
        let all_finite = [self.fx, self.fy, self.cx, self.cy, self.skew]
            .iter()
            .all(|v| v.is_finite());
        if !all_finite || self.fx <= 0.0 || self.fy <= 0.0 {
            return Err(Error::InvalidInput(format!(
                "intrinsics need finite values and positive focal lengths: {self:?}"
            )));
        }
        Ok(())
    }

    pub fn matrix(&self) -> Matrix3<f64> {
        Matrix3::new(
            self.fx, self.skew, self.cx, //
            0.0, self.fy, self.cy, //
            0.0, 0.0, 1.0,
        )
    }

    /// Closed-form inverse of the upper-triangular calibration matrix.
    pub fn inverse_matrix(&self) -> Matrix3<f64> {
        let (fx, fy, s, cx, cy) = (self.fx, self.fy, self.skew, self.cx, self.cy);
        Matrix3::new(
            1.0 / fx,
            -s / (fx * fy),
            (s * cy - cx * fy) / (fx * fy),
            0.0,
            1.0 / fy,
            -cy / fy,
            0.0,
            0.0,
            1.0,
        )
    }

    /// Normalized (K⁻¹-applied) homogeneous ray for a pixel, with z = 1.
    pub fn normalize(&self, p: Pixel) -> Vector3<f64> {
        let y = (p.v - self.cy) / self.fy;
        let x = (p.u - self.cx - self.skew * y) / self.fx;
        Vector3::new(x, y, 1.0)
    }

    /// Maps a normalized point (x, y) back to pixels.
    pub fn denormalize(&self, x: f64, y: f64) -> Pixel {
        Pixel::new(self.fx * x + self.skew * y + self.cx, self.fy * y + self.cy)
    }
}

/// Continuous image coordinates in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Pixel {
    pub u: f64,
    pub v: f64,
}

impl Pixel {
    pub const fn new(u: f64, v: f64) -> Self {
        Self { u, v }
    }

    /// Centre of the integer pixel at (`row`, `col`).
    pub fn center(row: usize, col: usize) -> Self {
        Self::new(col as f64 + 0.5, row as f64 + 0.5)
    }

    pub fn homogeneous(&self) -> HomogPixel {
        HomogPixel(Vector3::new(self.u, self.v, 1.0))
    }

    pub fn to_vector(&self) -> Vector2<f64> {
        Vector2::new(self.u, self.v)
    }

    pub fn distance(&self, other: &Pixel) -> f64 {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Homogeneous pixel `(u, v, 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HomogPixel(pub Vector3<f64>);

impl HomogPixel {
    pub fn vector(&self) -> &Vector3<f64> {
        &self.0
    }
}

/// Dehomogenizes `h` into a pixel. Returns non-finite coordinates when `h.z` is 0.
pub fn dehomogenize(h: &Vector3<f64>) -> Pixel {
    Pixel::new(h.x / h.z, h.y / h.z)
}

/// Rotation plus translation acting on points as `x ↦ R·x + t`.
///
/// Serialized as a unit quaternion `[w, x, y, z]` plus translation; stored as a
/// 3×3 matrix internally.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
}

const ROTATION_TOLERANCE: f64 = 1e-9;

impl RigidTransform {
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self> {
        let rt = Self { rotation, translation };
        if !rt.is_valid() {
            return Err(Error::InvalidInput(
                "rotation must be orthonormal with determinant 1".into(),
            ));
        }
        Ok(rt)
    }

    /// Builds a transform from a matrix that is a rotation up to round-off, projecting it
    /// onto SO(3).
    pub fn from_approx(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: project_to_rotation(&rotation),
            translation,
        }
    }

    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    pub fn from_translation(t: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: t,
        }
    }

    pub fn from_axis_angle(axis_angle: Vector3<f64>, translation: Vector3<f64>) -> Self {
        Self {
            rotation: Rotation3::new(axis_angle).into_inner(),
            translation,
        }
    }

    pub fn from_quaternion(wxyz: [f64; 4], translation: Vector3<f64>) -> Result<Self> {
        let q = nalgebra::Quaternion::new(wxyz[0], wxyz[1], wxyz[2], wxyz[3]);
        let norm = q.norm();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(Error::InvalidInput("zero quaternion".into()));
        }
        let uq = UnitQuaternion::from_quaternion(q);
        Ok(Self {
            rotation: uq.to_rotation_matrix().into_inner(),
            translation,
        })
    }

    pub fn quaternion(&self) -> [f64; 4] {
        let uq = UnitQuaternion::from_matrix(&self.rotation);
        let q = uq.quaternion();
        // canonical hemisphere so that I/O is stable
        let s = if q.w < 0.0 { -1.0 } else { 1.0 };
        [s * q.w, s * q.i, s * q.j, s * q.k]
    }

    pub fn is_valid(&self) -> bool {
        let rtr = self.rotation.transpose() * self.rotation;
        let ortho = (rtr - Matrix3::identity()).iter().all(|v| v.abs() <= ROTATION_TOLERANCE);
        ortho
            && (self.rotation.determinant() - 1.0).abs() <= ROTATION_TOLERANCE
            && self.translation.iter().all(|v| v.is_finite())
    }

    pub fn apply(&self, p: &Point3) -> Point3 {
        self.rotation * p + self.translation
    }

    pub fn inverse(&self) -> Self {
        let rt = self.rotation.transpose();
        Self {
            rotation: rt,
            translation: -(rt * self.translation),
        }
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &Self) -> Self {
        Self {
            rotation: self.rotation * other.rotation,
            translation: self.rotation * other.translation + self.translation,
        }
    }

    pub fn with_translation(&self, translation: Vector3<f64>) -> Self {
        Self {
            rotation: self.rotation,
            translation,
        }
    }

    /// Rotation angle (radians) of `self.rotation`.
    pub fn rotation_angle(&self) -> f64 {
        rotation_angle(&self.rotation)
    }
}

/// Geodesic angle of a rotation matrix, in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    let c = ((r.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let s = 0.5
        * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]).norm();
    s.atan2(c)
}

/// Angle between two rotations, in radians.
pub fn rotation_error(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    rotation_angle(&(a.transpose() * b))
}

/// Unsigned angle between two vectors in radians, via atan2 of cross and dot norms.
pub fn angle_between(a: &Vector3<f64>, b: &Vector3<f64>) -> f64 {
    a.cross(b).norm().atan2(a.dot(b))
}

/// Nearest rotation matrix in the Frobenius sense.
pub fn project_to_rotation(m: &Matrix3<f64>) -> Matrix3<f64> {
    let svd = m.svd(true, true);
    let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
    let mut d = Matrix3::identity();
    if (u * vt).determinant() < 0.0 {
        d[(2, 2)] = -1.0;
    }
    u * d * vt
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        TransformRepr {
            rotation: self.quaternion(),
            translation: self.translation.into(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let repr = TransformRepr::deserialize(d)?;
        RigidTransform::from_quaternion(repr.rotation, Vector3::from(repr.translation))
            .map_err(serde::de::Error::custom)
    }
}

#[derive(Serialize, Deserialize)]
struct TransformRepr {
    /// unit quaternion `[w, x, y, z]`
    rotation: [f64; 4],
    translation: [f64; 3],
}

/// `Z · K⁻¹ · p̃`.
pub fn backproject(p: Pixel, depth: f64, k: &CameraIntrinsics) -> Result<Point3> {
    if !(depth > 0.0) {
        return Err(Error::NonPositiveDepth(depth));
    }
    Ok(k.normalize(p) * depth)
}

/// Perspective projection of a camera-frame point.
pub fn project(p: &Point3, k: &CameraIntrinsics) -> Result<Pixel> {
    if !(p.z > 0.0) {
        return Err(Error::BehindCamera(p.z));
    }
    Ok(k.denormalize(p.x / p.z, p.y / p.z))
}

/// `H_R = K0 · R_c · K1⁻¹`, mapping frame-1 pixels into a frame-1 image plane
/// rotated to frame-0 orientation.
pub fn rotational_homography(
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
    rc: &Matrix3<f64>,
) -> Matrix3<f64> {
    k0.matrix() * rc * k1.inverse_matrix()
}

/// Cross-product matrix `[t]×`.
pub fn skew(t: &Vector3<f64>) -> Matrix3<f64> {
    Matrix3::new(
        0.0, -t.z, t.y, //
        t.z, 0.0, -t.x, //
        -t.y, t.x, 0.0,
    )
}

/// Essential matrix for camera motion `(R_c, T_c)` (with `P0 = R_c·P1 + T_c`)
/// such that `x1ᵀ·E·x0 = 0` for normalized rays of a static point.
///
/// This is `R·[t]×` with `R = R_cᵀ` and `t = T_c`.
pub fn essential_from_motion(rc: &Matrix3<f64>, tc: &Vector3<f64>) -> Result<Matrix3<f64>> {
    if tc.norm() < 1e-12 {
        return Err(Error::DegenerateTranslation);
    }
    Ok(rc.transpose() * skew(tc))
}

/// `F = K1⁻ᵀ · E · K0⁻¹`.
pub fn fundamental_from_essential(
    e: &Matrix3<f64>,
    k0: &CameraIntrinsics,
    k1: &CameraIntrinsics,
) -> Matrix3<f64> {
    k1.inverse_matrix().transpose() * e * k0.inverse_matrix()
}

/// Squared Sampson error of a correspondence under `f` (`x1ᵀ f x0 = 0`), with `eps`
/// added to the denominator.
pub fn sampson_error(f: &Matrix3<f64>, x0: &Vector3<f64>, x1: &Vector3<f64>, eps: f64) -> f64 {
    let fx0 = f * x0;
    let ftx1 = f.transpose() * x1;
    let r = x1.dot(&fx0);
    r * r / (fx0.x * fx0.x + fx0.y * fx0.y + ftx1.x * ftx1.x + ftx1.y * ftx1.y + eps)
}
