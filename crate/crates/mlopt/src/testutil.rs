//! Shared helpers for unit tests.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use std::f64::consts::PI;

use crate::geometry::{axis_angle_to_rotation, AxisAngle, Mat3, PlanarPoint, Pose, Vec3};

/// Condition number of the inscribed-square configuration under the
/// fronto-parallel pose at 0.75 m, frozen from an independent SVD oracle.
pub(crate) const SQUARE_COND_AT_075: f64 = 66.681670041666607;

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub(crate) fn random_rotation(rng: &mut ChaCha8Rng) -> Mat3 {
    let axis = Vec3::new(
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
        rng.gen_range(-1.0..1.0),
    )
    .normalize();
    let angle = rng.gen_range(0.0..PI);
    axis_angle_to_rotation(&AxisAngle { axis, angle })
}

/// Random pose that keeps a disk of radius 0.2 around the marker origin
/// strictly in front of the camera.
pub(crate) fn random_valid_pose(rng: &mut ChaCha8Rng) -> Pose {
    loop {
        let r = random_rotation(rng);
        let t = Vec3::new(
            rng.gen_range(-0.3..0.3),
            rng.gen_range(-0.3..0.3),
            rng.gen_range(0.5..1.5),
        );
        let pose = Pose::new(r, t).unwrap();
        let ok = (0..8).all(|k| {
            let a = 2.0 * PI * k as f64 / 8.0;
            let p = Vec3::new(0.2 * a.cos(), 0.2 * a.sin(), 0.0);
            (pose.rotation() * p + pose.translation()).z > 0.05
        });
        if ok {
            return pose;
        }
    }
}

/// Corners of the square inscribed in the disk of radius `r`.
pub(crate) fn inscribed_square(r: f64) -> Vec<PlanarPoint> {
    let a = r / 2.0f64.sqrt();
    vec![
        PlanarPoint::new(a, a),
        PlanarPoint::new(-a, a),
        PlanarPoint::new(-a, -a),
        PlanarPoint::new(a, -a),
    ]
}

/// Uniform points in the disk of radius `r`.
pub(crate) fn random_disk_points(rng: &mut ChaCha8Rng, n: usize, r: f64) -> Vec<PlanarPoint> {
    (0..n)
        .map(|_| {
            let radius = r * rng.gen_range(0.0f64..1.0).sqrt();
            let angle = rng.gen_range(0.0..2.0 * PI);
            PlanarPoint::new(radius * angle.cos(), radius * angle.sin())
        })
        .collect()
}
