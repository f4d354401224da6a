//! Pinhole-camera and rigid-body math: projection, pixel/metric coordinate
//! conversions, plane-to-image homographies and rotation parameterizations.
//!
//! Conventions: a pose maps world to camera coordinates, `X^C = R X^W + T`,
//! and the projection divides by the camera-frame depth. Image coordinates
//! are normalized (metric) unless explicitly named pixel coordinates. The
//! marker plane is `Z^W = 0`; its 2D points are in meters.

use nalgebra::{Matrix3, Vector2, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vec2 = Vector2<f64>;
pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// 2D point on the marker plane (meters); the implied third coordinate is 0.
pub type PlanarPoint = Vec2;

/// Depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-9;

/// Homogeneous scale below which perspective division is refused.
const MIN_HOMOGENEOUS_W: f64 = 1e-12;

/// Lift a marker-plane point into world coordinates on `Z^W = 0`.
#[inline]
pub fn lift(p: &PlanarPoint) -> Vec3 {
    Vec3::new(p.x, p.y, 0.0)
}

/// Rigid world-to-camera transform: `X^C = R X^W + T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pose {
    r: Mat3,
    t: Vec3,
}

impl Pose {
    /// Build a pose, checking that `r` is a proper rotation to 1e-9.
    pub fn new(r: Mat3, t: Vec3) -> Result<Self> {
        let rtr = r.transpose() * r;
        let ortho_err = (rtr - Mat3::identity()).abs().max();
        if ortho_err > 1e-9 {
            return Err(Error::invalid(
                "Pose",
                format!("rotation not orthonormal (err {ortho_err:.3e})"),
            ));
        }
        let det = r.determinant();
        if (det - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(
                "Pose",
                format!("rotation determinant {det} != +1"),
            ));
        }
        if !t.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("Pose", "non-finite translation"));
        }
        Ok(Pose { r, t })
    }

    /// Camera looking straight at the marker from distance `d` with image
    /// axes aligned to the plane axes (`R = I`, `T = [0, 0, d]`).
    pub fn fronto_parallel(d: f64) -> Self {
        Pose {
            r: Mat3::identity(),
            t: Vec3::new(0.0, 0.0, d),
        }
    }

    pub fn rotation(&self) -> &Mat3 {
        &self.r
    }

    pub fn translation(&self) -> &Vec3 {
        &self.t
    }

    /// Camera center in world coordinates, `C = -R^T T`.
    pub fn camera_center(&self) -> Vec3 {
        -(self.r.transpose() * self.t)
    }
}

/// Perspective projection of a world point to normalized image coordinates.
pub fn project(pose: &Pose, x_world: &Vec3) -> Result<Vec2> {
    let xc = pose.r * x_world + pose.t;
    if xc.z <= MIN_DEPTH {
        return Err(Error::PointBehindCamera { z: xc.z });
    }
    Ok(Vec2::new(xc.x / xc.z, xc.y / xc.z))
}

/// Pinhole intrinsics of a calibrated camera (pixels).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: f64,
    pub height: f64,
}

impl Intrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: f64, height: f64) -> Result<Self> {
        if fx <= 0.0 || fy <= 0.0 {
            return Err(Error::invalid("Intrinsics", "focal lengths must be > 0"));
        }
        if !(0.0 < cx && cx < width) || !(0.0 < cy && cy < height) {
            return Err(Error::invalid(
                "Intrinsics",
                "principal point must lie inside the image",
            ));
        }
        Ok(Intrinsics {
            fx,
            fy,
            cx,
            cy,
            width,
            height,
        })
    }

    /// The 640x480 / f=800 camera used throughout the simulations.
    pub fn default_camera() -> Self {
        Intrinsics {
            fx: 800.0,
            fy: 800.0,
            cx: 320.0,
            cy: 240.0,
            width: 640.0,
            height: 480.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        Self::new(self.fx, self.fy, self.cx, self.cy, self.width, self.height).map(|_| ())
    }
}

/// Pixel coordinates to normalized image coordinates.
#[inline]
pub fn pixel_to_normalized(k: &Intrinsics, x_px: &Vec2) -> Vec2 {
    Vec2::new((x_px.x - k.cx) / k.fx, (x_px.y - k.cy) / k.fy)
}

/// Normalized image coordinates to pixel coordinates; inverse of
/// [`pixel_to_normalized`].
#[inline]
pub fn normalized_to_pixel(k: &Intrinsics, x: &Vec2) -> Vec2 {
    Vec2::new(x.x * k.fx + k.cx, x.y * k.fy + k.cy)
}

/// Plane-to-image projective map, stored in canonical form: Frobenius norm
/// sqrt(3) and sign fixed so the (2,2) entry is non-negative (falling back to
/// the largest-magnitude entry when that entry vanishes).
#[derive(Debug, Clone, PartialEq)]
pub struct Homography {
    m: Mat3,
}

impl Homography {
    /// Canonicalize an arbitrary nonzero 3x3 matrix into a homography.
    pub fn new(m: Mat3) -> Result<Self> {
        if !m.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("Homography", "non-finite entries"));
        }
        let norm = m.norm();
        if norm < 1e-300 {
            return Err(Error::invalid("Homography", "zero matrix"));
        }
        let mut h = m * (3.0f64.sqrt() / norm);
        let pivot = if h[(2, 2)].abs() > MIN_HOMOGENEOUS_W {
            h[(2, 2)]
        } else {
            h.iter().cloned().fold(
                0.0,
                |acc: f64, v| if v.abs() > acc.abs() { v } else { acc },
            )
        };
        if pivot < 0.0 {
            h = -h;
        }
        Ok(Homography { m: h })
    }

    pub fn identity() -> Self {
        Homography {
            m: Mat3::identity() * 3.0f64.sqrt() / 3.0f64.sqrt(),
        }
    }

    /// Canonical matrix (Frobenius norm sqrt(3), fixed sign).
    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    /// Smallest singular value after scaling to unit Frobenius norm.
    pub fn min_singular_value_unit_norm(&self) -> f64 {
        let scaled = self.m / self.m.norm();
        let svals = scaled.svd(false, false).singular_values;
        svals.iter().cloned().fold(f64::INFINITY, f64::min)
    }

    /// The homography as the row-major 9-vector the stacked DLT system
    /// annihilates on exact data.
    pub fn to_vector(&self) -> nalgebra::SVector<f64, 9> {
        let mut v = nalgebra::SVector::<f64, 9>::zeros();
        for row in 0..3 {
            for col in 0..3 {
                v[3 * row + col] = self.m[(row, col)];
            }
        }
        v
    }

    /// Inverse of [`Homography::to_vector`]: reshape a 9-vector row-major and
    /// canonicalize.
    pub fn from_vector(v: &nalgebra::SVector<f64, 9>) -> Result<Self> {
        Homography::new(Mat3::from_row_slice(v.as_slice()))
    }
}

/// Homography of a camera pose over the marker plane: columns are the first
/// two rotation columns and the translation.
pub fn pose_to_homography(pose: &Pose) -> Result<Homography> {
    let r = pose.rotation();
    let m = Mat3::from_columns(&[r.column(0).into(), r.column(1).into(), *pose.translation()]);
    if pose.translation().norm() < MIN_HOMOGENEOUS_W {
        return Err(Error::DegenerateHomography);
    }
    let h = Homography::new(m)?;
    if h.min_singular_value_unit_norm() <= MIN_HOMOGENEOUS_W {
        return Err(Error::DegenerateHomography);
    }
    Ok(h)
}

/// Map a marker-plane point through a homography with perspective division.
pub fn apply_homography(h: &Homography, x_p: &PlanarPoint) -> Result<Vec2> {
    let w = h.m * Vec3::new(x_p.x, x_p.y, 1.0);
    if w.z.abs() <= MIN_HOMOGENEOUS_W {
        return Err(Error::PointAtInfinity);
    }
    Ok(Vec2::new(w.x / w.z, w.y / w.z))
}

/// Rotation as a unit axis and an angle in [0, pi].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    pub axis: Vec3,
    pub angle: f64,
}

/// Extract the axis-angle form of a rotation matrix.
///
/// The angle is in [0, pi]. A zero rotation reports the canonical axis
/// [0, 0, 1]; at pi, where axis and -axis coincide, the axis with positive
/// first nonzero component is returned.
pub fn rotation_to_axis_angle(r: &Mat3) -> AxisAngle {
    // Quaternion extraction with branch selection (Shepperd): each branch
    // divides by a large component, so accuracy holds at every angle.
    let t = r.trace();
    let (w, x, y, z);
    if t > 0.0 {
        let s = (t + 1.0).sqrt() * 2.0;
        w = 0.25 * s;
        x = (r[(2, 1)] - r[(1, 2)]) / s;
        y = (r[(0, 2)] - r[(2, 0)]) / s;
        z = (r[(1, 0)] - r[(0, 1)]) / s;
    } else if r[(0, 0)] > r[(1, 1)] && r[(0, 0)] > r[(2, 2)] {
        let s = (1.0 + r[(0, 0)] - r[(1, 1)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(2, 1)] - r[(1, 2)]) / s;
        x = 0.25 * s;
        y = (r[(0, 1)] + r[(1, 0)]) / s;
        z = (r[(0, 2)] + r[(2, 0)]) / s;
    } else if r[(1, 1)] > r[(2, 2)] {
        let s = (1.0 + r[(1, 1)] - r[(0, 0)] - r[(2, 2)]).sqrt() * 2.0;
        w = (r[(0, 2)] - r[(2, 0)]) / s;
        x = (r[(0, 1)] + r[(1, 0)]) / s;
        y = 0.25 * s;
        z = (r[(1, 2)] + r[(2, 1)]) / s;
    } else {
        let s = (1.0 + r[(2, 2)] - r[(0, 0)] - r[(1, 1)]).sqrt() * 2.0;
        w = (r[(1, 0)] - r[(0, 1)]) / s;
        x = (r[(0, 2)] + r[(2, 0)]) / s;
        y = (r[(1, 2)] + r[(2, 1)]) / s;
        z = 0.25 * s;
    }
    let mut scalar = w;
    let mut vector = Vec3::new(x, y, z);
    if scalar < 0.0 {
        scalar = -scalar;
        vector = -vector;
    }
    let angle = 2.0 * vector.norm().atan2(scalar);
    if angle < 1e-12 {
        return AxisAngle {
            axis: Vec3::new(0.0, 0.0, 1.0),
            angle,
        };
    }
    let mut axis = vector.normalize();
    if angle >= std::f64::consts::PI - 1e-12 {
        // axis and -axis coincide at pi; fix the sign deterministically.
        for i in 0..3 {
            if axis[i].abs() > 1e-12 {
                if axis[i] < 0.0 {
                    axis = -axis;
                }
                break;
            }
        }
    }
    AxisAngle { axis, angle }
}

/// Rodrigues' formula: rotation matrix of an axis-angle pair.
pub fn axis_angle_to_rotation(aa: &AxisAngle) -> Mat3 {
    let k = skew(&aa.axis);
    Mat3::identity() + k * aa.angle.sin() + k * k * (1.0 - aa.angle.cos())
}

/// Cross-product matrix of a 3-vector.
pub fn skew(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}
