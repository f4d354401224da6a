//! Pose recovery from an estimated homography and iterative refinement by
//! minimizing the reprojection error, plus the error metrics used to score
//! estimates against ground truth.
//!
//! Two estimators are registered by name:
//! - `dlt-decomp`: normalized DLT followed by homography decomposition.
//! - `mre-lm`: damped least-squares reprojection-error minimization seeded
//!   by `dlt-decomp`.

use nalgebra::{SMatrix, SVector};

use crate::dlt::{solve_dlt, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{
    self, rotation_to_axis_angle, AxisAngle, Homography, Mat3, PlanarPoint, Pose, Vec2, Vec3,
};

/// Settings of the damped least-squares refinement.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RefinerConfig {
    pub max_iter: usize,
    /// Stop when the cost-gradient infinity norm falls below this.
    pub gradient_tol: f64,
    /// Stop when the accepted parameter update is smaller than this.
    pub param_tol: f64,
    /// Initial damping; x10 on a rejected step, /10 on an accepted one.
    pub damping_init: f64,
}

impl Default for RefinerConfig {
    fn default() -> Self {
        RefinerConfig {
            max_iter: 100,
            gradient_tol: 1e-10,
            param_tol: 1e-12,
            damping_init: 1e-3,
        }
    }
}

impl RefinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iter == 0 {
            return Err(Error::invalid("RefinerConfig", "max_iter must be > 0"));
        }
        if !(self.gradient_tol > 0.0 && self.param_tol > 0.0 && self.damping_init > 0.0) {
            return Err(Error::invalid("RefinerConfig", "tolerances must be > 0"));
        }
        Ok(())
    }
}

/// Orthogonal polar factor with determinant +1, the rotation nearest to `m`.
fn nearest_rotation(m: &Mat3) -> Mat3 {
    let svd = m.svd(true, true);
    let u = svd.u.expect("3x3 svd with u");
    let v_t = svd.v_t.expect("3x3 svd with v_t");
    let mut r = u * v_t;
    if r.determinant() < 0.0 {
        let mut u_fixed = u;
        u_fixed.set_column(2, &(-u.column(2)));
        r = u_fixed * v_t;
    }
    r
}

/// Decompose a full-rank homography into the camera pose it encodes.
///
/// The first two columns are unit rotation columns up to the projective
/// scale; the scale is fixed from their mean norm, the rotation completed by
/// the cross product and snapped to the nearest orthogonal matrix, and the
/// overall sign chosen so the marker origin sits in front of the camera.
pub fn homography_to_pose(h: &Homography) -> Result<Pose> {
    if h.min_singular_value_unit_norm() <= 1e-12 {
        return Err(Error::DegenerateHomography);
    }
    let m = h.matrix();
    let n1 = m.column(0).norm();
    let n2 = m.column(1).norm();
    if n1 + n2 < 1e-12 {
        return Err(Error::DegenerateHomography);
    }
    let lambda = 2.0 / (n1 + n2);
    let sign = if lambda * m[(2, 2)] <= 0.0 { -1.0 } else { 1.0 };
    let c1 = m.column(0) * (lambda * sign);
    let c2 = m.column(1) * (lambda * sign);
    let t = m.column(2) * (lambda * sign);
    let c3 = c1.cross(&c2);
    let r = nearest_rotation(&Mat3::from_columns(&[c1, c2, c3]));
    Pose::new(r, t.into())
}

fn reprojection_cost(corrs: &[(Vec3, Vec2)], r: &Mat3, t: &Vec3) -> Result<f64> {
    let mut cost = 0.0;
    for (world, measured) in corrs {
        let cam = r * world + t;
        if cam.z <= geometry::MIN_DEPTH {
            return Err(Error::PointBehindCamera { z: cam.z });
        }
        let proj = Vec2::new(cam.x / cam.z, cam.y / cam.z);
        cost += (measured - proj).norm_squared();
    }
    Ok(cost)
}

/// Minimize the summed squared reprojection error over the pose.
///
/// Damped least squares on a six-parameter local update (rotation increment
/// in axis-angle form composed on the left, plus a translation increment).
/// Steps are accepted only when the cost decreases, so the returned cost
/// never exceeds the initial one.
pub fn refine_pose_mre(
    corrs: &[(Vec3, Vec2)],
    init: &Pose,
    config: &RefinerConfig,
) -> Result<Pose> {
    config.validate()?;
    if corrs.len() < 3 {
        return Err(Error::TooFewPoints {
            got: corrs.len(),
            need: 3,
        });
    }
    let mut r = *init.rotation();
    let mut t = *init.translation();
    let mut cost = reprojection_cost(corrs, &r, &t)?;
    let mut damping = config.damping_init;
    let mut behind_camera_rejection = false;

    for _ in 0..config.max_iter {
        // residual r_i = measured - projected; jacobian of the residual wrt
        // the local update (omega, dt).
        let mut jtj = SMatrix::<f64, 6, 6>::zeros();
        let mut jtr = SVector::<f64, 6>::zeros();
        for (world, measured) in corrs {
            let cam = r * world + t;
            let z_inv = 1.0 / cam.z;
            let proj = Vec2::new(cam.x * z_inv, cam.y * z_inv);
            let res = measured - proj;
            let j_proj = nalgebra::SMatrix::<f64, 2, 3>::new(
                z_inv,
                0.0,
                -cam.x * z_inv * z_inv,
                0.0,
                z_inv,
                -cam.y * z_inv * z_inv,
            );
            // d(cam)/d(omega) = -[cam]_x, d(cam)/d(dt) = I
            let d_rot = -(j_proj * geometry::skew(&cam));
            let d_trans = j_proj;
            let mut jac = SMatrix::<f64, 2, 6>::zeros();
            jac.view_mut((0, 0), (2, 3)).copy_from(&(-d_rot));
            jac.view_mut((0, 3), (2, 3)).copy_from(&(-d_trans));
            jtj += jac.transpose() * jac;
            jtr += jac.transpose() * res;
        }
        if jtr.amax() < config.gradient_tol {
            break;
        }

        let mut stepped = false;
        while damping <= 1e12 {
            let mut lhs = jtj;
            for i in 0..6 {
                lhs[(i, i)] += damping;
            }
            let delta = match lhs.cholesky() {
                Some(chol) => chol.solve(&(-jtr)),
                None => {
                    damping *= 10.0;
                    continue;
                }
            };
            let omega = Vec3::new(delta[0], delta[1], delta[2]);
            let r_new = if omega.norm() > 0.0 {
                let inc = geometry::axis_angle_to_rotation(&AxisAngle {
                    axis: omega.normalize(),
                    angle: omega.norm(),
                });
                nearest_rotation(&(inc * r))
            } else {
                r
            };
            let t_new = t + Vec3::new(delta[3], delta[4], delta[5]);
            match reprojection_cost(corrs, &r_new, &t_new) {
                Ok(c_new) if c_new <= cost => {
                    r = r_new;
                    t = t_new;
                    cost = c_new;
                    damping = (damping / 10.0).max(1e-15);
                    stepped = true;
                    if delta.norm() < config.param_tol {
                        return Pose::new(r, t);
                    }
                    break;
                }
                Ok(_) => {
                    damping *= 10.0;
                }
                Err(Error::PointBehindCamera { .. }) => {
                    behind_camera_rejection = true;
                    damping *= 10.0;
                }
                Err(e) => return Err(e),
            }
        }
        if !stepped {
            if behind_camera_rejection {
                return Err(Error::DivergedBehindCamera);
            }
            break;
        }
    }
    Pose::new(r, t)
}

/// Mean squared reprojection error of an estimated homography over a fixed
/// validation set, against exact projections under the true pose. Units are
/// squared normalized image coordinates.
pub fn homography_error(
    h_hat: &Homography,
    truth: &Pose,
    validation: &[PlanarPoint],
) -> Result<f64> {
    let mut sum = 0.0;
    for p in validation {
        let exact = geometry::project(truth, &geometry::lift(p))?;
        let mapped = geometry::apply_homography(h_hat, p)?;
        sum += (exact - mapped).norm_squared();
    }
    Ok(sum / validation.len() as f64)
}

/// Rotation error in degrees: the minimal rotation aligning the estimate to
/// the truth, from the axis-angle form of `R_hat^T R`.
pub fn rotation_error(r_hat: &Mat3, r: &Mat3) -> f64 {
    rotation_to_axis_angle(&(r_hat.transpose() * r))
        .angle
        .to_degrees()
}

/// Relative translation error in percent.
pub fn translation_error(t_hat: &Vec3, t: &Vec3) -> Result<f64> {
    let norm = t.norm();
    if norm <= 1e-12 {
        return Err(Error::ZeroTranslation);
    }
    Ok((t_hat - t).norm() / norm * 100.0)
}

/// A registered pose estimator working on marker-plane correspondences.
pub trait PoseEstimator: Send + Sync {
    fn name(&self) -> &'static str;
    fn estimate(&self, corrs: &[Correspondence], refiner: &RefinerConfig) -> Result<Pose>;
}

/// Normalized DLT followed by homography decomposition.
pub struct DltDecomp;

impl PoseEstimator for DltDecomp {
    fn name(&self) -> &'static str {
        "dlt-decomp"
    }

    fn estimate(&self, corrs: &[Correspondence], _refiner: &RefinerConfig) -> Result<Pose> {
        let (h, _) = solve_dlt(corrs, true)?;
        homography_to_pose(&h)
    }
}

/// Reprojection-error minimization seeded by [`DltDecomp`].
pub struct MreLm;

impl PoseEstimator for MreLm {
    fn name(&self) -> &'static str {
        "mre-lm"
    }

    fn estimate(&self, corrs: &[Correspondence], refiner: &RefinerConfig) -> Result<Pose> {
        let init = DltDecomp.estimate(corrs, refiner)?;
        let lifted: Vec<(Vec3, Vec2)> = corrs
            .iter()
            .map(|c| (geometry::lift(&c.world), c.image))
            .collect();
        refine_pose_mre(&lifted, &init, refiner)
    }
}

/// All built-in estimators, in registry order.
pub fn builtin_methods() -> Vec<Box<dyn PoseEstimator>> {
    vec![Box::new(DltDecomp), Box::new(MreLm)]
}

/// Look an estimator up by its registered name.
pub fn method_by_name(name: &str) -> Option<Box<dyn PoseEstimator>> {
    match name {
        "dlt-decomp" => Some(Box::new(DltDecomp)),
        "mre-lm" => Some(Box::new(MreLm)),
        _ => None,
    }
}
