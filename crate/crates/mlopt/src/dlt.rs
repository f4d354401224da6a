//! The stacked linear system of planar homography estimation: construction,
//! Hartley point normalization, SVD solution, condition numbers, first-order
//! perturbation predictions and relative-error bounds.
//!
//! Each correspondence between a marker-plane point and its normalized image
//! point contributes two rows to a 2n x 9 matrix `A`. On exact data the
//! row-major flattening of the true homography spans the nullspace of `A`;
//! with noisy image points the estimate is the right singular vector of the
//! smallest singular value. Sensitivity to that noise is governed by the
//! ratio of the largest to the second-smallest singular value, `s1/s8`,
//! which is the quantity the optimizer drives down.

use nalgebra::{DMatrix, SMatrix, SVector};

use crate::error::{Error, Result};
use crate::geometry::{self, Homography, Mat3, PlanarPoint, Pose, Vec2};

/// A marker-plane point paired with its (possibly noisy) normalized image
/// projection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Correspondence {
    /// Marker-plane coordinates, meters.
    pub world: PlanarPoint,
    /// Normalized image coordinates.
    pub image: Vec2,
}

/// Pair marker-plane points with their exact projections under a pose.
pub fn correspondences_from_pose(
    points: &[PlanarPoint],
    pose: &Pose,
) -> Result<Vec<Correspondence>> {
    points
        .iter()
        .map(|p| {
            Ok(Correspondence {
                world: *p,
                image: geometry::project(pose, &geometry::lift(p))?,
            })
        })
        .collect()
}

/// The stacked 2n x 9 measurement matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DltSystem {
    a: DMatrix<f64>,
    n: usize,
}

impl DltSystem {
    /// Wrap an existing 2n x 9 matrix (n >= 4).
    pub fn from_matrix(a: DMatrix<f64>) -> Result<Self> {
        if a.ncols() != 9 || a.nrows() % 2 != 0 {
            return Err(Error::invalid(
                "DltSystem",
                format!("expected 2n x 9 matrix, got {} x {}", a.nrows(), a.ncols()),
            ));
        }
        let n = a.nrows() / 2;
        if n < 4 {
            return Err(Error::TooFewPoints { got: n, need: 4 });
        }
        Ok(DltSystem { a, n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn point_count(&self) -> usize {
        self.n
    }

    /// Full singular value decomposition with all nine right singular
    /// vectors, regardless of the row count.
    pub fn svd(&self) -> SvdSummary {
        SvdSummary::compute(&self.a)
    }
}

/// The two rows a single correspondence contributes.
fn row_pair(c: &Correspondence) -> ([f64; 9], [f64; 9]) {
    let (xp, yp) = (c.world.x, c.world.y);
    let (x, y) = (c.image.x, c.image.y);
    (
        [0.0, 0.0, 0.0, -xp, -yp, -1.0, y * xp, y * yp, y],
        [xp, yp, 1.0, 0.0, 0.0, 0.0, -x * xp, -x * yp, -x],
    )
}

/// Stack the measurement matrix from point correspondences.
pub fn build_dlt_matrix(corrs: &[Correspondence]) -> Result<DltSystem> {
    let n = corrs.len();
    if n < 4 {
        return Err(Error::TooFewPoints { got: n, need: 4 });
    }
    for c in corrs {
        if !(c.world.iter().all(|v| v.is_finite()) && c.image.iter().all(|v| v.is_finite())) {
            return Err(Error::invalid("Correspondence", "non-finite coordinates"));
        }
    }
    let mut a = DMatrix::zeros(2 * n, 9);
    for (i, c) in corrs.iter().enumerate() {
        let (even, odd) = row_pair(c);
        for j in 0..9 {
            a[(2 * i, j)] = even[j];
            a[(2 * i + 1, j)] = odd[j];
        }
    }
    Ok(DltSystem { a, n })
}

/// Singular values and vectors of a stacked system, ordered descending.
///
/// Sign convention: the largest-magnitude entry of each right singular
/// vector is positive, with the matching left vector flipped alongside so
/// `A = U S V^T` still holds.
#[derive(Debug, Clone)]
pub struct SvdSummary {
    /// Singular values `s1 >= ... >= s9 >= 0`.
    pub singular_values: [f64; 9],
    /// Right singular vectors as columns, `v1 ... v9`.
    pub v: SMatrix<f64, 9, 9>,
    /// First nine left singular vectors as columns (2n x 9).
    pub u: DMatrix<f64>,
}

impl SvdSummary {
    fn compute(a: &DMatrix<f64>) -> SvdSummary {
        // Pad with zero rows so thin SVD still yields all nine right
        // singular vectors when 2n < 9; padding rows are dropped from U.
        let rows = a.nrows().max(9);
        let mut padded = DMatrix::zeros(rows, 9);
        padded.view_mut((0, 0), (a.nrows(), 9)).copy_from(a);
        let svd = padded.svd(true, true);
        let mut s = [0.0; 9];
        for (k, v) in svd.singular_values.iter().enumerate() {
            s[k] = *v;
        }
        let vt = svd.v_t.expect("requested V^T");
        let u_full = svd.u.expect("requested U");

        let mut v = SMatrix::<f64, 9, 9>::zeros();
        let mut u = DMatrix::zeros(a.nrows(), 9);
        for k in 0..9 {
            let mut flip = 1.0;
            let mut max_abs = 0.0;
            for i in 0..9 {
                let val: f64 = vt[(k, i)];
                if val.abs() > max_abs {
                    max_abs = val.abs();
                    flip = if val < 0.0 { -1.0 } else { 1.0 };
                }
            }
            for i in 0..9 {
                v[(i, k)] = flip * vt[(k, i)];
            }
            // Repeated singular values let the factorization's U drift out of
            // step with V inside the degenerate block; u_k = A v_k / s_k is
            // the partner consistent with the stored v_k.
            if s[k] > s[0] * 1e-13 {
                let col = (a * v.column(k)) / s[k];
                u.set_column(k, &col);
            } else {
                for i in 0..a.nrows() {
                    u[(i, k)] = flip * u_full[(i, k)];
                }
            }
        }
        SvdSummary {
            singular_values: s,
            v,
            u,
        }
    }

    /// Ratio of the largest to the second-smallest singular value.
    pub fn condition_number(&self) -> f64 {
        ratio_s1_s8(&self.singular_values)
    }

    /// The nullspace-direction estimate, `v9`.
    pub fn v9(&self) -> SVector<f64, 9> {
        self.v.column(8).into()
    }
}

fn ratio_s1_s8(s: &[f64; 9]) -> f64 {
    if s[7] < 1e-300 {
        f64::INFINITY
    } else {
        s[0] / s[7]
    }
}

/// Condition number `s1/s8` of the stacked system.
pub fn condition_number(sys: &DltSystem) -> f64 {
    let svals = singular_values_only(&sys.a);
    ratio_s1_s8(&svals)
}

fn singular_values_only(a: &DMatrix<f64>) -> [f64; 9] {
    let rows = a.nrows().max(9);
    let mut padded = DMatrix::zeros(rows, 9);
    padded.view_mut((0, 0), (a.nrows(), 9)).copy_from(a);
    let svals = padded.singular_values();
    let mut s = [0.0; 9];
    for (k, v) in svals.iter().enumerate() {
        s[k] = *v;
    }
    s
}

/// Largest singular value of an arbitrary real matrix.
pub fn spectral_norm(a: &DMatrix<f64>) -> f64 {
    a.singular_values()
        .iter()
        .cloned()
        .fold(0.0f64, f64::max)
}

/// Translation plus isotropic scaling of the plane, as a 3x3 homogeneous
/// matrix with last row [0, 0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityTransform {
    m: Mat3,
}

impl SimilarityTransform {
    pub fn identity() -> Self {
        SimilarityTransform {
            m: Mat3::identity(),
        }
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.m
    }

    pub fn apply(&self, p: &Vec2) -> Vec2 {
        Vec2::new(
            self.m[(0, 0)] * p.x + self.m[(0, 1)] * p.y + self.m[(0, 2)],
            self.m[(1, 0)] * p.x + self.m[(1, 1)] * p.y + self.m[(1, 2)],
        )
    }

    pub fn inverse(&self) -> SimilarityTransform {
        SimilarityTransform {
            m: self.m.try_inverse().expect("similarity transforms are invertible"),
        }
    }
}

/// Translate a point set to zero centroid and scale it so the mean distance
/// from the origin is sqrt(2). Returns the transformed points and the
/// transform that maps originals onto them.
pub fn hartley_normalize(points: &[Vec2]) -> Result<(Vec<Vec2>, SimilarityTransform)> {
    if points.len() < 2 {
        return Err(Error::TooFewPoints {
            got: points.len(),
            need: 2,
        });
    }
    let n = points.len() as f64;
    let centroid = points.iter().sum::<Vec2>() / n;
    let mean_dist = points.iter().map(|p| (p - centroid).norm()).sum::<f64>() / n;
    let coord_scale = points
        .iter()
        .fold(1.0f64, |acc, p| acc.max(p.x.abs()).max(p.y.abs()));
    if mean_dist < 1e-15 * coord_scale {
        return Err(Error::DegenerateSet);
    }
    let s = 2.0f64.sqrt() / mean_dist;
    let transform = SimilarityTransform {
        m: Mat3::new(
            s,
            0.0,
            -s * centroid.x,
            0.0,
            s,
            -s * centroid.y,
            0.0,
            0.0,
            1.0,
        ),
    };
    let transformed = points.iter().map(|p| transform.apply(p)).collect();
    Ok((transformed, transform))
}

/// Linear homography estimate from point correspondences.
///
/// With `normalized` set, both point sets are Hartley-normalized before
/// stacking and the solution is mapped back afterwards; the returned
/// [`SvdSummary`] is that of the matrix actually decomposed.
pub fn solve_dlt(corrs: &[Correspondence], normalized: bool) -> Result<(Homography, SvdSummary)> {
    let (sys, t_world, t_image) = if normalized {
        let world: Vec<Vec2> = corrs.iter().map(|c| c.world).collect();
        let image: Vec<Vec2> = corrs.iter().map(|c| c.image).collect();
        let (world_n, t_world) = hartley_normalize(&world)?;
        let (image_n, t_image) = hartley_normalize(&image)?;
        let norm_corrs: Vec<Correspondence> = world_n
            .iter()
            .zip(image_n.iter())
            .map(|(w, x)| Correspondence {
                world: *w,
                image: *x,
            })
            .collect();
        (build_dlt_matrix(&norm_corrs)?, t_world, t_image)
    } else {
        (
            build_dlt_matrix(corrs)?,
            SimilarityTransform::identity(),
            SimilarityTransform::identity(),
        )
    };

    let svd = sys.svd();
    let s = &svd.singular_values;
    if s[0] < 1e-300 || s[7] / s[0] < 1e-12 {
        return Err(Error::DegenerateConfiguration);
    }
    let h_solved = Mat3::from_row_slice(svd.v9().as_slice());
    let h_mat = t_image.inverse().matrix() * h_solved * t_world.matrix();
    let h = Homography::new(h_mat)?;
    Ok((h, svd))
}

/// First-order prediction of the perturbed nullspace vector
/// `v9 - sum_k (u_k^T E v9 / s_k) v_k` for a perturbation `E` of the clean
/// system behind `clean`.
pub fn first_order_perturbation(
    clean: &SvdSummary,
    perturbation: &DMatrix<f64>,
) -> Result<SVector<f64, 9>> {
    if clean.singular_values[8] > 1e-9 {
        return Err(Error::invalid(
            "SvdSummary",
            "not the SVD of a noise-free system (s9 > 1e-9)",
        ));
    }
    if perturbation.nrows() != clean.u.nrows() || perturbation.ncols() != 9 {
        return Err(Error::invalid(
            "perturbation",
            format!(
                "expected {} x 9, got {} x {}",
                clean.u.nrows(),
                perturbation.nrows(),
                perturbation.ncols()
            ),
        ));
    }
    let v9 = clean.v9();
    let e_v9 = perturbation * v9;
    let mut prediction = v9;
    for k in 0..8 {
        let s_k = clean.singular_values[k];
        if s_k < 1e-12 {
            return Err(Error::IllConditioned {
                index: k + 1,
                value: s_k,
            });
        }
        let weight = clean.u.column(k).dot(&e_v9) / s_k;
        prediction -= weight * SVector::<f64, 9>::from(clean.v.column(k));
    }
    Ok(prediction)
}

/// Relative solution error together with its perturbation-theory bounds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorBounds {
    /// `||A_tilde (h - h_hat)|| / (||A_tilde|| ||h_hat||)`.
    pub lower: f64,
    /// `c(A) ||A - A_tilde|| / ||A||`.
    pub upper: f64,
    /// `||h - h_hat|| / ||h_hat||` after aligning the scale of `h_hat` to `h`.
    pub relative_error: f64,
}

/// Evaluate the relative error of a perturbed solution and its bounds.
///
/// The estimate is defined only up to scale, so it is first aligned to the
/// true vector by the least-squares factor `argmin_l ||h - l h_hat||`.
/// Matrix norms are spectral.
pub fn relative_error_bounds(
    clean: &DltSystem,
    perturbed: &DltSystem,
    h_true: &SVector<f64, 9>,
    h_hat: &SVector<f64, 9>,
) -> Result<ErrorBounds> {
    if clean.a.nrows() != perturbed.a.nrows() {
        return Err(Error::invalid("DltSystem", "mismatched shapes"));
    }
    let hat_norm_sq = h_hat.norm_squared();
    if hat_norm_sq <= 0.0 {
        return Err(Error::invalid("h_hat", "zero vector"));
    }
    let lambda = h_hat.dot(h_true) / hat_norm_sq;
    let aligned = h_hat * lambda;
    let aligned_norm = aligned.norm();
    if aligned_norm < 1e-300 {
        return Ok(ErrorBounds {
            lower: f64::INFINITY,
            upper: f64::INFINITY,
            relative_error: f64::INFINITY,
        });
    }
    let diff = h_true - aligned;
    let relative_error = diff.norm() / aligned_norm;
    let perturbed_norm = spectral_norm(&perturbed.a);
    let lower = (&perturbed.a * diff).norm() / (perturbed_norm * aligned_norm);
    let upper =
        condition_number(clean) * spectral_norm(&(&clean.a - &perturbed.a)) / spectral_norm(&clean.a);
    Ok(ErrorBounds {
        lower,
        upper,
        relative_error,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{pose_to_homography, Vec3};
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use crate::testutil::{inscribed_square, random_valid_pose, SQUARE_COND_AT_075};

    #[test]
    fn matrix_shape_is_2n_by_9() {
        let pose = Pose::fronto_parallel(1.0);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        assert_eq!(sys.matrix().nrows(), 8);
        assert_eq!(sys.matrix().ncols(), 9);
        assert_eq!(sys.point_count(), 4);
    }

    #[test]
    fn too_few_points_rejected() {
        let corrs: Vec<Correspondence> = correspondences_from_pose(
            &inscribed_square(0.15)[..3],
            &Pose::fronto_parallel(1.0),
        )
        .unwrap();
        assert!(matches!(
            build_dlt_matrix(&corrs),
            Err(Error::TooFewPoints { got: 3, need: 4 })
        ));
    }

    #[test]
    fn first_row_matches_hand_expansion() {
        let mut corrs = correspondences_from_pose(
            &inscribed_square(0.15),
            &Pose::fronto_parallel(1.0),
        )
        .unwrap();
        corrs[0] = Correspondence {
            world: PlanarPoint::new(1.0, 0.0),
            image: Vec2::new(0.5, 0.5),
        };
        let sys = build_dlt_matrix(&corrs).unwrap();
        let expected = [0.0, 0.0, 0.0, -1.0, 0.0, -1.0, 0.5, 0.0, 0.5];
        for j in 0..9 {
            assert_relative_eq!(sys.matrix()[(0, j)], expected[j]);
        }
        let odd = [1.0, 0.0, 1.0, 0.0, 0.0, 0.0, -0.5, 0.0, -0.5];
        for j in 0..9 {
            assert_relative_eq!(sys.matrix()[(1, j)], odd[j]);
        }
    }

    #[test]
    fn exact_homography_spans_nullspace() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let pose = random_valid_pose(&mut rng);
            let points: Vec<PlanarPoint> = (0..6)
                .map(|_| PlanarPoint::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)))
                .collect();
            let corrs = correspondences_from_pose(&points, &pose).unwrap();
            let sys = build_dlt_matrix(&corrs).unwrap();
            let h = pose_to_homography(&pose).unwrap().to_vector();
            let residual = (sys.matrix() * (h / h.norm())).norm();
            assert!(residual < 1e-9, "nullspace residual {residual}");
        }
    }

    #[test]
    fn hartley_normalization_postconditions() {
        let pts = vec![
            Vec2::new(0.0, 0.0),
            Vec2::new(2.0, 0.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(2.0, 2.0),
        ];
        let (out, t) = hartley_normalize(&pts).unwrap();
        let centroid: Vec2 = out.iter().sum::<Vec2>() / out.len() as f64;
        assert_relative_eq!(centroid, Vec2::zeros(), epsilon = 1e-12);
        let mean_r = out.iter().map(|p| p.norm()).sum::<f64>() / out.len() as f64;
        assert_relative_eq!(mean_r, 2.0f64.sqrt(), epsilon = 1e-12);
        for (orig, mapped) in pts.iter().zip(out.iter()) {
            assert_relative_eq!(t.apply(orig), *mapped, epsilon = 1e-12);
        }
    }

    #[test]
    fn hartley_fixed_point_on_normalized_set() {
        let pts = vec![
            Vec2::new(1.0, 0.0),
            Vec2::new(-1.0, 0.0),
            Vec2::new(0.0, 2.0),
            Vec2::new(0.0, -2.0),
        ];
        // centroid 0, mean radius 1.5 -> normalize once, then it is a fixed point
        let (once, _) = hartley_normalize(&pts).unwrap();
        let (twice, t) = hartley_normalize(&once).unwrap();
        assert_relative_eq!(*t.matrix(), Mat3::identity(), epsilon = 1e-12);
        for (a, b) in once.iter().zip(twice.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-12);
        }
    }

    #[test]
    fn hartley_accepts_collinear_points() {
        let pts = vec![Vec2::new(0.0, 0.0), Vec2::new(1.0, 1.0), Vec2::new(2.0, 2.0)];
        assert!(hartley_normalize(&pts).is_ok());
    }

    #[test]
    fn hartley_rejects_coincident_points() {
        let pts = vec![Vec2::new(0.5, 0.5); 4];
        assert!(matches!(hartley_normalize(&pts), Err(Error::DegenerateSet)));
    }

    #[test]
    fn solve_recovers_identity_for_square() {
        let pose = Pose::fronto_parallel(1.0);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        for normalized in [false, true] {
            let (h, _) = solve_dlt(&corrs, normalized).unwrap();
            let err = (h.matrix() - Mat3::identity()).norm();
            assert!(err < 1e-9, "identity recovery error {err}");
        }
    }

    #[test]
    fn solve_recovers_random_pose_homography() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        for _ in 0..20 {
            let pose = random_valid_pose(&mut rng);
            let points: Vec<PlanarPoint> = (0..10)
                .map(|_| PlanarPoint::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)))
                .collect();
            let corrs = correspondences_from_pose(&points, &pose).unwrap();
            let truth = pose_to_homography(&pose).unwrap();
            let (h, _) = solve_dlt(&corrs, true).unwrap();
            let err = (h.matrix() - truth.matrix()).norm();
            assert!(err < 1e-9, "canonical form error {err}");
        }
    }

    #[test]
    fn solve_rejects_collinear_points() {
        let pose = Pose::fronto_parallel(1.0);
        let points: Vec<PlanarPoint> = (0..4)
            .map(|i| PlanarPoint::new(0.03 * i as f64 - 0.05, 0.06 * i as f64 - 0.1))
            .collect();
        let corrs = correspondences_from_pose(&points, &pose).unwrap();
        assert!(matches!(
            solve_dlt(&corrs, false),
            Err(Error::DegenerateConfiguration)
        ));
    }

    #[test]
    fn condition_number_from_synthesized_singular_values() {
        // A diagonal 10 x 9 stack has exactly its diagonal as singular values.
        let mut a = DMatrix::zeros(10, 9);
        let diag = [10.0, 9.0, 8.0, 7.0, 6.0, 5.0, 4.0, 2.0, 0.5];
        for (i, d) in diag.iter().enumerate() {
            a[(i, i)] = *d;
        }
        let sys = DltSystem::from_matrix(a).unwrap();
        assert_relative_eq!(condition_number(&sys), 5.0, epsilon = 1e-12);
    }

    #[test]
    fn condition_number_is_scale_invariant() {
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let c = condition_number(&sys);
        let scaled = DltSystem::from_matrix(sys.matrix() * 17.0).unwrap();
        assert_relative_eq!(condition_number(&scaled), c, max_relative = 1e-12);
    }

    #[test]
    fn condition_number_matches_frozen_oracle() {
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        assert_relative_eq!(
            condition_number(&sys),
            SQUARE_COND_AT_075,
            max_relative = 1e-12
        );
        assert_relative_eq!(
            sys.svd().condition_number(),
            SQUARE_COND_AT_075,
            max_relative = 1e-12
        );
    }

    #[test]
    fn condition_number_at_least_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for _ in 0..50 {
            let pose = random_valid_pose(&mut rng);
            let points: Vec<PlanarPoint> = (0..5)
                .map(|_| PlanarPoint::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)))
                .collect();
            let corrs = correspondences_from_pose(&points, &pose).unwrap();
            let c = condition_number(&build_dlt_matrix(&corrs).unwrap());
            assert!(c >= 1.0);
        }
    }

    #[test]
    fn normalization_improves_conditioning() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let mut improved = 0;
        let total = 200;
        for _ in 0..total {
            let pose = random_valid_pose(&mut rng);
            let points: Vec<PlanarPoint> = (0..6)
                .map(|_| PlanarPoint::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)))
                .collect();
            let corrs = match correspondences_from_pose(&points, &pose) {
                Ok(c) => c,
                Err(_) => continue,
            };
            let raw = condition_number(&build_dlt_matrix(&corrs).unwrap());
            let (_, svd) = match solve_dlt(&corrs, true) {
                Ok(r) => r,
                Err(_) => continue,
            };
            if svd.condition_number() <= raw {
                improved += 1;
            }
        }
        assert!(
            improved as f64 >= 0.95 * total as f64,
            "normalization improved only {improved}/{total}"
        );
    }

    #[test]
    fn perturbation_of_zero_is_v9() {
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let svd = sys.svd();
        let zero = DMatrix::zeros(8, 9);
        let pred = first_order_perturbation(&svd, &zero).unwrap();
        assert_relative_eq!(pred, svd.v9(), epsilon = 1e-15);
    }

    fn random_unit_perturbation(rng: &mut ChaCha8Rng, rows: usize) -> DMatrix<f64> {
        let e = DMatrix::from_fn(rows, 9, |_, _| rng.gen_range(-1.0..1.0));
        let norm = spectral_norm(&e);
        e / norm
    }

    /// Full SVD of the perturbed matrix, sign-aligned to a reference; the
    /// oracle the first-order prediction is checked against.
    pub(crate) fn perturbed_v9_oracle(
        a: &DMatrix<f64>,
        e: &DMatrix<f64>,
        align_to: &SVector<f64, 9>,
    ) -> SVector<f64, 9> {
        let sys = DltSystem::from_matrix(a + e).unwrap();
        let mut v9 = sys.svd().v9();
        if v9.dot(align_to) < 0.0 {
            v9 = -v9;
        }
        v9
    }

    #[test]
    fn perturbation_residual_shrinks_quadratically() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let svd = sys.svd();
        for _ in 0..10 {
            let e0 = random_unit_perturbation(&mut rng, 8);
            let eps = 1e-3;
            let res = |scale: f64| {
                let e = &e0 * scale;
                let pred = first_order_perturbation(&svd, &e).unwrap();
                let pred = pred / pred.norm();
                let actual = perturbed_v9_oracle(sys.matrix(), &e, &pred);
                (pred - actual).norm()
            };
            let ratio = res(eps) / res(eps / 2.0);
            assert!(
                (3.0..=5.0).contains(&ratio),
                "halving ratio {ratio} outside [3, 5]"
            );
        }
    }

    #[test]
    fn tiny_perturbation_matches_to_machine_precision() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let svd = sys.svd();
        let e = random_unit_perturbation(&mut rng, 8) * 1e-8;
        let pred = first_order_perturbation(&svd, &e).unwrap();
        let pred = pred / pred.norm();
        let actual = perturbed_v9_oracle(sys.matrix(), &e, &pred);
        let res = (pred - actual).norm();
        assert!(res < 1e-12, "residual {res}");
    }

    #[test]
    fn perturbation_requires_clean_system() {
        // n = 5 so the stack is 10 x 9 and noise lifts s9 off zero; an
        // 8 x 9 system has s9 = 0 structurally whatever the noise.
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let pose = Pose::fronto_parallel(0.75);
        let mut points = inscribed_square(0.15);
        points.push(PlanarPoint::new(0.02, -0.04));
        let mut corrs = correspondences_from_pose(&points, &pose).unwrap();
        for c in &mut corrs {
            c.image += Vec2::new(rng.gen_range(-0.01..0.01), rng.gen_range(-0.01..0.01));
        }
        let svd = build_dlt_matrix(&corrs).unwrap().svd();
        let zero = DMatrix::zeros(10, 9);
        assert!(first_order_perturbation(&svd, &zero).is_err());
    }

    #[test]
    fn bounds_vanish_without_perturbation() {
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let h = pose_to_homography(&pose).unwrap().to_vector();
        let bounds = relative_error_bounds(&sys, &sys, &h, &(h * 0.37)).unwrap();
        assert_relative_eq!(bounds.lower, 0.0, epsilon = 1e-12);
        assert_relative_eq!(bounds.upper, 0.0, epsilon = 1e-12);
        assert_relative_eq!(bounds.relative_error, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn lower_bound_invariant_to_perturbed_scale() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let e = random_unit_perturbation(&mut rng, 8) * 1e-3;
        let perturbed = DltSystem::from_matrix(sys.matrix() + &e).unwrap();
        let doubled = DltSystem::from_matrix((sys.matrix() + &e) * 2.0).unwrap();
        let h = pose_to_homography(&pose).unwrap().to_vector();
        let h_hat = perturbed.svd().v9();
        let b1 = relative_error_bounds(&sys, &perturbed, &h, &h_hat).unwrap();
        let b2 = relative_error_bounds(&sys, &doubled, &h, &h_hat).unwrap();
        assert_relative_eq!(b1.lower, b2.lower, max_relative = 1e-12);
        assert_relative_eq!(b1.relative_error, b2.relative_error, max_relative = 1e-12);
    }

    #[test]
    fn sandwich_holds_for_small_noise() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let pose = Pose::fronto_parallel(0.75);
        let points = inscribed_square(0.15);
        let corrs = correspondences_from_pose(&points, &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let h = pose_to_homography(&pose).unwrap().to_vector();
        let sigma = 4.0 / 800.0; // 4 px at f = 800 in normalized units
        let mut hold = 0;
        let trials = 200;
        for _ in 0..trials {
            let noisy: Vec<Correspondence> = corrs
                .iter()
                .map(|c| Correspondence {
                    world: c.world,
                    image: c.image
                        + Vec2::new(
                            rng.gen_range(-sigma..sigma),
                            rng.gen_range(-sigma..sigma),
                        ),
                })
                .collect();
            let perturbed = build_dlt_matrix(&noisy).unwrap();
            let h_hat = perturbed.svd().v9();
            let b = relative_error_bounds(&sys, &perturbed, &h, &h_hat).unwrap();
            if b.lower <= b.relative_error && b.relative_error <= b.upper {
                hold += 1;
            }
        }
        assert!(
            hold as f64 >= 0.99 * trials as f64,
            "sandwich held in only {hold}/{trials}"
        );
    }

    #[test]
    fn noiseless_solve_is_exact_for_any_n() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        for n in 4..=8 {
            let pose = random_valid_pose(&mut rng);
            let points: Vec<PlanarPoint> = (0..n)
                .map(|_| PlanarPoint::new(rng.gen_range(-0.15..0.15), rng.gen_range(-0.15..0.15)))
                .collect();
            let corrs = correspondences_from_pose(&points, &pose).unwrap();
            let truth = pose_to_homography(&pose).unwrap();
            let (h, _) = solve_dlt(&corrs, true).unwrap();
            let err = (h.matrix() - truth.matrix()).norm();
            assert!(err < 1e-9, "n = {n}: canonical error {err}");
        }
    }

    #[test]
    fn svd_summary_signs_and_order() {
        let pose = Pose::fronto_parallel(0.75);
        let corrs = correspondences_from_pose(&inscribed_square(0.15), &pose).unwrap();
        let sys = build_dlt_matrix(&corrs).unwrap();
        let svd = sys.svd();
        for k in 0..8 {
            assert!(svd.singular_values[k] >= svd.singular_values[k + 1]);
        }
        for k in 0..9 {
            let col = svd.v.column(k);
            assert_relative_eq!(col.norm(), 1.0, epsilon = 1e-12);
            let max_entry = col.iter().cloned().fold(0.0, |acc: f64, v| {
                if v.abs() > acc.abs() {
                    v
                } else {
                    acc
                }
            });
            assert!(max_entry > 0.0, "column {k} sign convention violated");
        }
        // U S V^T must still reconstruct A after the sign fixes.
        let mut recon = DMatrix::zeros(8, 9);
        for k in 0..9 {
            let uk = svd.u.column(k);
            let vk = svd.v.column(k);
            for i in 0..8 {
                for j in 0..9 {
                    recon[(i, j)] += svd.singular_values[k] * uk[i] * vk[j];
                }
            }
        }
        assert!((recon - sys.matrix()).norm() < 1e-12);
    }

    #[test]
    fn vec3_alias_is_consistent() {
        // row-major flattening round trip through Homography
        let h = pose_to_homography(&Pose::new(
            crate::geometry::axis_angle_to_rotation(&crate::geometry::AxisAngle {
                axis: Vec3::new(0.0, 1.0, 0.0),
                angle: 0.4,
            }),
            Vec3::new(0.1, -0.05, 0.9),
        )
        .unwrap())
        .unwrap();
        let back = Homography::from_vector(&h.to_vector()).unwrap();
        assert_relative_eq!(*back.matrix(), *h.matrix(), epsilon = 1e-14);
    }
}
