//! The synthetic evaluation protocol: camera pose distributions on spheres
//! around the marker, pixel-noise injection, Monte-Carlo statistics of the
//! homography and pose estimators, optimization experiments, point-count
//! sweeps and configuration histograms.
//!
//! Every random draw derives from a base seed and the trial indices
//! (pose, init, run), so any experiment replays bit-exactly and trials can
//! run in parallel without coordinating RNG state.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::Serialize;

use crate::dlt::{self, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{
    self, normalized_to_pixel, pixel_to_normalized, Intrinsics, Mat3, PlanarPoint, Pose, Vec2,
    Vec3,
};
use crate::optimizer::{self, OptimizationTrace, OptimizerConfig, PlanarPointSet};
use crate::pose_est::{self, PoseEstimator, RefinerConfig};

// ---------------------------------------------------------------------------
// Seeding

/// splitmix64 finalizer; stable across platforms.
fn mix(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Derive a child seed from a base seed and trial indices.
pub fn derive_seed(base: u64, parts: &[u64]) -> u64 {
    let mut state = mix(base ^ 0x9e37_79b9_7f4a_7c15);
    for &p in parts {
        state = mix(state ^ p.wrapping_mul(0x9e37_79b9_7f4a_7c15));
    }
    state
}

/// RNG for one trial, derived as above.
pub fn derive_rng(base: u64, parts: &[u64]) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(derive_seed(base, parts))
}

// Seed-stream tags so different uses of the same indices never collide.
const STREAM_INIT: u64 = 1;
const STREAM_EVAL: u64 = 2;

// ---------------------------------------------------------------------------
// Pose distribution

/// Camera placement scheme: spheres of the given radii around the marker,
/// deterministically covered by a Fibonacci spiral.
#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PoseDistributionConfig {
    /// Sphere radii, meters; each must exceed the marker bound radius.
    pub radii: Vec<f64>,
    /// Poses per sphere.
    pub poses_per_radius: usize,
    /// Sphere center and look-at target (the marker center).
    pub look_at: [f64; 3],
    /// Restrict cameras to the marker-facing side of the plane.
    pub hemisphere: bool,
    /// Lowest camera elevation above the marker plane, degrees. Keeps the
    /// spiral away from edge-on views where every estimator degenerates.
    pub min_elevation_deg: f64,
}

impl Default for PoseDistributionConfig {
    fn default() -> Self {
        PoseDistributionConfig {
            radii: vec![0.5, 0.75, 1.0, 1.25],
            poses_per_radius: 100,
            look_at: [0.0, 0.0, 0.0],
            hemisphere: true,
            min_elevation_deg: 20.0,
        }
    }
}

impl PoseDistributionConfig {
    pub fn validate(&self, marker_radius: f64) -> Result<()> {
        if self.radii.is_empty() || self.poses_per_radius == 0 {
            return Err(Error::invalid(
                "PoseDistributionConfig",
                "need at least one radius and one pose per radius",
            ));
        }
        for &r in &self.radii {
            if !(r.is_finite() && r > marker_radius) {
                return Err(Error::invalid(
                    "PoseDistributionConfig",
                    format!("sphere radius {r} must exceed the marker radius {marker_radius}"),
                ));
            }
        }
        if !(0.0..90.0).contains(&self.min_elevation_deg) {
            return Err(Error::invalid(
                "PoseDistributionConfig",
                "min_elevation_deg must be in [0, 90)",
            ));
        }
        Ok(())
    }
}

/// World-to-camera pose of a camera at `center` whose optical axis passes
/// through `target`, rolled so the zenith view has `R = I`.
fn look_at_pose(center: &Vec3, target: &Vec3) -> Result<Pose> {
    let z_axis = (target - center).normalize();
    let e_y = Vec3::new(0.0, 1.0, 0.0);
    let x_axis = e_y.cross(&z_axis);
    let x_norm = x_axis.norm();
    if x_norm < 1e-9 {
        return Err(Error::invalid(
            "look_at",
            "optical axis parallel to the image y-axis reference",
        ));
    }
    let x_axis = x_axis / x_norm;
    let y_axis = z_axis.cross(&x_axis);
    let r = Mat3::from_rows(&[x_axis.transpose(), y_axis.transpose(), z_axis.transpose()]);
    let t = -(r * center);
    Pose::new(r, t)
}

/// 16 samples of the marker bound circle all project inside the image.
fn pose_sees_marker(pose: &Pose, k: &Intrinsics, marker_radius: f64) -> bool {
    (0..16).all(|s| {
        let a = 2.0 * std::f64::consts::PI * s as f64 / 16.0;
        let p = Vec3::new(marker_radius * a.cos(), marker_radius * a.sin(), 0.0);
        match geometry::project(pose, &p) {
            Ok(x) => {
                let px = normalized_to_pixel(k, &x);
                px.x >= 0.0 && px.x <= k.width && px.y >= 0.0 && px.y <= k.height
            }
            Err(_) => false,
        }
    })
}

/// Deterministic camera poses on spheres around the marker.
///
/// Within each sphere, directions follow a Fibonacci spiral from the zenith
/// down to the configured minimum elevation; every pose looks at the marker
/// center. A pose whose view would clip the marker bound circle is moved
/// radially outward to the nearest distance that fits.
pub fn generate_pose_distribution(
    cfg: &PoseDistributionConfig,
    k: &Intrinsics,
    marker_radius: f64,
) -> Result<Vec<Pose>> {
    cfg.validate(marker_radius)?;
    k.validate()?;
    let target = Vec3::new(cfg.look_at[0], cfg.look_at[1], cfg.look_at[2]);
    let golden_angle = std::f64::consts::PI * (3.0 - 5.0f64.sqrt());
    let z_min = cfg.min_elevation_deg.to_radians().sin();
    let count = cfg.poses_per_radius;

    let mut poses = Vec::with_capacity(cfg.radii.len() * count);
    for &radius in &cfg.radii {
        for i in 0..count {
            let frac = if count > 1 {
                i as f64 / (count - 1) as f64
            } else {
                0.0
            };
            let mut z = 1.0 - frac * (1.0 - z_min);
            if !cfg.hemisphere && i % 2 == 1 {
                z = -z;
            }
            let s = (1.0 - z * z).max(0.0).sqrt();
            let phi = golden_angle * i as f64;
            // Cameras sit on the viewing side of the plane (world z < 0 for
            // the marker-facing hemisphere), so the zenith pose is exactly
            // the fronto-parallel one.
            let direction = Vec3::new(s * phi.cos(), s * phi.sin(), -z);

            let mut scale = 1.0;
            let pose = loop {
                let center = target + direction * (radius * scale);
                let pose = look_at_pose(&center, &target)?;
                if pose_sees_marker(&pose, k, marker_radius) {
                    break pose;
                }
                scale *= 1.02;
                if scale > 1000.0 {
                    return Err(Error::InfeasibleDistribution(radius));
                }
            };
            poses.push(pose);
        }
    }
    Ok(poses)
}

// ---------------------------------------------------------------------------
// Sampling and noise

const SAMPLER_MAX_ATTEMPTS: usize = 1000;

/// Minimum s8/s1 a freshly sampled configuration must reach under a
/// reference fronto-parallel pose; rejects the nearly-collinear draws on
/// which no estimator produces meaningful output.
const SAMPLER_RANK_GAP: f64 = 1e-6;

/// Draw a uniformly distributed non-degenerate point set in the disk.
pub fn sample_initial_points(
    n: usize,
    marker_radius: f64,
    rng: &mut ChaCha8Rng,
) -> Result<PlanarPointSet> {
    if n < 4 {
        return Err(Error::TooFewPoints { got: n, need: 4 });
    }
    let reference_pose = Pose::fronto_parallel(5.0 * marker_radius);
    for _ in 0..SAMPLER_MAX_ATTEMPTS {
        let points: Vec<PlanarPoint> = (0..n)
            .map(|_| {
                let radius = marker_radius * rng.gen_range(0.0f64..1.0).sqrt();
                let angle = rng.gen_range(0.0..2.0 * std::f64::consts::PI);
                PlanarPoint::new(radius * angle.cos(), radius * angle.sin())
            })
            .collect();
        let set = match PlanarPointSet::new(points, marker_radius) {
            Ok(set) => set,
            Err(_) => continue,
        };
        let corrs = match dlt::correspondences_from_pose(set.points(), &reference_pose) {
            Ok(c) => c,
            Err(_) => continue,
        };
        let sys = match dlt::build_dlt_matrix(&corrs) {
            Ok(s) => s,
            Err(_) => continue,
        };
        let svd = sys.svd();
        if svd.singular_values[7] > SAMPLER_RANK_GAP * svd.singular_values[0] {
            return Ok(set);
        }
    }
    Err(Error::SamplerExhausted(SAMPLER_MAX_ATTEMPTS))
}

/// Isotropic i.i.d. Gaussian pixel noise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, serde::Deserialize)]
pub struct NoiseModel {
    /// Standard deviation per pixel coordinate.
    pub sigma_px: f64,
}

impl NoiseModel {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_px >= 0.0 && self.sigma_px.is_finite()) {
            return Err(Error::invalid("NoiseModel", "sigma_px must be >= 0"));
        }
        Ok(())
    }
}

/// Add Gaussian noise to pixel coordinates.
pub fn add_noise(exact_px: &[Vec2], noise: &NoiseModel, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    if noise.sigma_px == 0.0 {
        return exact_px.to_vec();
    }
    let normal = Normal::new(0.0, noise.sigma_px).expect("validated sigma");
    exact_px
        .iter()
        .map(|p| Vec2::new(p.x + normal.sample(rng), p.y + normal.sample(rng)))
        .collect()
}

// ---------------------------------------------------------------------------
// Monte-Carlo evaluation

/// Mean and standard deviation of one metric over the successful runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialStatistics {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub count: usize,
}

impl TrialStatistics {
    fn from_samples(metric: &str, samples: &[f64]) -> TrialStatistics {
        let n = samples.len();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (samples.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        TrialStatistics {
            metric: metric.to_string(),
            mean,
            std,
            count: n,
        }
    }
}

/// Rotation/translation statistics of one estimator.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PoseErrorStats {
    pub re: TrialStatistics,
    pub te: TrialStatistics,
}

/// All statistics of one Monte-Carlo evaluation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalStats {
    pub he: TrialStatistics,
    /// Keyed by estimator name in registry order.
    pub pose_errors: BTreeMap<String, PoseErrorStats>,
    pub failures: usize,
    pub runs: usize,
}

impl EvalStats {
    /// Flat metric-name view: `he`, `re:<method>`, `te:<method>`.
    pub fn metrics(&self) -> BTreeMap<String, &TrialStatistics> {
        let mut map = BTreeMap::new();
        map.insert("he".to_string(), &self.he);
        for (name, stats) in &self.pose_errors {
            map.insert(format!("re:{name}"), &stats.re);
            map.insert(format!("te:{name}"), &stats.te);
        }
        map
    }
}

/// Evenly spaced validation grid over [-1.25 r, 1.25 r]^2 (7 x 7 points).
pub fn validation_grid(marker_radius: f64) -> Vec<PlanarPoint> {
    let half = 1.25 * marker_radius;
    let step = 2.0 * half / 6.0;
    (0..7)
        .flat_map(|i| {
            (0..7).map(move |j| PlanarPoint::new(-half + i as f64 * step, -half + j as f64 * step))
        })
        .collect()
}

/// Repeated noisy estimation of the homography and each registered pose
/// method for a fixed configuration and pose.
///
/// Per run: project exactly, add pixel noise, re-normalize, solve the
/// normalized DLT for the homography error, then run every method for the
/// rotation and translation errors. Runs in which any estimator fails are
/// recorded and excluded; more than 10% failures invalidates the evaluation.
#[allow(clippy::too_many_arguments)]
pub fn monte_carlo_eval(
    points: &PlanarPointSet,
    pose: &Pose,
    k: &Intrinsics,
    noise: &NoiseModel,
    runs: usize,
    methods: &[Box<dyn PoseEstimator>],
    refiner: &RefinerConfig,
    seed: u64,
) -> Result<EvalStats> {
    noise.validate()?;
    if runs == 0 {
        return Err(Error::invalid("monte_carlo_eval", "runs must be > 0"));
    }
    let exact = dlt::correspondences_from_pose(points.points(), pose)?;
    let exact_px: Vec<Vec2> = exact
        .iter()
        .map(|c| normalized_to_pixel(k, &c.image))
        .collect();
    let grid = validation_grid(points.radius());

    let mut he_samples = Vec::with_capacity(runs);
    let mut re_samples: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut te_samples: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for m in methods {
        re_samples.insert(m.name(), Vec::with_capacity(runs));
        te_samples.insert(m.name(), Vec::with_capacity(runs));
    }
    let mut failures = 0usize;

    for run in 0..runs {
        let mut rng = derive_rng(seed, &[run as u64]);
        let noisy_px = add_noise(&exact_px, noise, &mut rng);
        let noisy: Vec<Correspondence> = exact
            .iter()
            .zip(noisy_px.iter())
            .map(|(c, px)| Correspondence {
                world: c.world,
                image: pixel_to_normalized(k, px),
            })
            .collect();

        let run_result = (|| -> Result<(f64, Vec<(f64, f64)>)> {
            let (h_hat, _) = dlt::solve_dlt(&noisy, true)?;
            let he = pose_est::homography_error(&h_hat, pose, &grid)?;
            let mut pose_errs = Vec::with_capacity(methods.len());
            for m in methods {
                let est = m.estimate(&noisy, refiner)?;
                let re = pose_est::rotation_error(est.rotation(), pose.rotation());
                let te = pose_est::translation_error(est.translation(), pose.translation())?;
                pose_errs.push((re, te));
            }
            Ok((he, pose_errs))
        })();

        match run_result {
            Ok((he, pose_errs)) => {
                he_samples.push(he);
                for (m, (re, te)) in methods.iter().zip(pose_errs) {
                    re_samples.get_mut(m.name()).unwrap().push(re);
                    te_samples.get_mut(m.name()).unwrap().push(te);
                }
            }
            Err(_) => failures += 1,
        }
    }

    if failures * 10 > runs {
        return Err(Error::TooManyFailures { failed: failures, runs });
    }
    let mut pose_errors = BTreeMap::new();
    for m in methods {
        pose_errors.insert(
            m.name().to_string(),
            PoseErrorStats {
                re: TrialStatistics::from_samples("re", &re_samples[m.name()]),
                te: TrialStatistics::from_samples("te", &te_samples[m.name()]),
            },
        );
    }
    Ok(EvalStats {
        he: TrialStatistics::from_samples("he", &he_samples),
        pose_errors,
        failures,
        runs,
    })
}

// ---------------------------------------------------------------------------
// Optimization experiment

/// Settings shared by the optimization and sweep experiments.
#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub intrinsics: Intrinsics,
    pub marker_radius: f64,
    pub optimizer: OptimizerConfig,
    pub refiner: RefinerConfig,
    pub noise: NoiseModel,
    /// Monte-Carlo runs per evaluation.
    pub runs: usize,
    /// Evaluate every k-th recorded iteration (1 = every iteration).
    pub eval_every: usize,
}

impl ExperimentSettings {
    pub fn with_defaults(marker_radius: f64) -> Self {
        ExperimentSettings {
            intrinsics: Intrinsics::default_camera(),
            marker_radius,
            optimizer: OptimizerConfig::for_radius(marker_radius),
            refiner: RefinerConfig::default(),
            noise: NoiseModel { sigma_px: 4.0 },
            runs: 1000,
            eval_every: 1,
        }
    }
}

/// One evaluated iteration of an optimization experiment. The configuration
/// evaluated at index t is the best iterate of the trace prefix [0, t], so
/// the `cond` series is non-increasing.
#[derive(Debug, Clone, Serialize)]
pub struct IterationEval {
    pub iter: usize,
    pub cond: f64,
    pub stats: EvalStats,
}

/// Trace plus per-iteration Monte-Carlo series of one optimization run.
#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub trace: OptimizationTrace,
    pub series: Vec<IterationEval>,
    pub initial: PlanarPointSet,
}

/// Optimize a random n-point initialization under one pose, evaluating the
/// estimator statistics along the descent.
pub fn run_optimization_experiment(
    pose: &Pose,
    n: usize,
    settings: &ExperimentSettings,
    base_seed: u64,
) -> Result<ExperimentResult> {
    let mut init_rng = derive_rng(base_seed, &[STREAM_INIT]);
    let initial = sample_initial_points(n, settings.marker_radius, &mut init_rng)?;
    let trace = optimizer::optimize(&initial, pose, &settings.optimizer)?;
    let methods = pose_est::builtin_methods();
    let eval_every = settings.eval_every.max(1);

    let eval_indices: Vec<usize> = (0..trace.records.len())
        .filter(|&t| t % eval_every == 0 || t == trace.records.len() - 1)
        .collect();
    let series = eval_indices
        .par_iter()
        .map(|&t| {
            let best = trace.best_index_upto(t);
            let points = PlanarPointSet::new(
                trace.records[best].points.clone(),
                settings.marker_radius,
            )?;
            let stats = monte_carlo_eval(
                &points,
                pose,
                &settings.intrinsics,
                &settings.noise,
                settings.runs,
                &methods,
                &settings.refiner,
                derive_seed(base_seed, &[STREAM_EVAL, t as u64]),
            )?;
            Ok(IterationEval {
                iter: t,
                cond: trace.records[best].cond,
                stats,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(ExperimentResult {
        trace,
        series,
        initial,
    })
}

// ---------------------------------------------------------------------------
// Point-count sweep

/// Phase of a sweep cell: the random initialization or the optimized result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Conditioning {
    /// Random initial configuration.
    Ill,
    /// Condition-number-optimized configuration.
    Well,
}

impl Conditioning {
    pub fn label(&self) -> &'static str {
        match self {
            Conditioning::Ill => "ill",
            Conditioning::Well => "well",
        }
    }
}

/// One (pose, n, init) cell of a sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepCell {
    pub pose_index: usize,
    pub n: usize,
    pub init_index: usize,
    pub initial_cond: f64,
    pub final_cond: f64,
    pub initial_eval: Option<EvalStats>,
    pub final_eval: Option<EvalStats>,
    pub final_points: Vec<[f64; 2]>,
    pub initial_points: Vec<[f64; 2]>,
    /// Set when the optimizer or both evaluations failed outright.
    pub failed: bool,
}

/// All cells of a point-count sweep.
#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
    pub n_values: Vec<usize>,
    pub marker_radius: f64,
}

/// Pooled mean/std of one metric over every successful cell of one
/// (n, conditioning) group. Metric keys follow [`EvalStats::metrics`], plus
/// `cond` for the objective itself.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepAggregate {
    pub n: usize,
    pub conditioning: Conditioning,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub cells: usize,
}

impl SweepResult {
    /// Aggregate table over cells, pooled by sample count.
    pub fn aggregates(&self) -> Vec<SweepAggregate> {
        let mut out = Vec::new();
        for &n in &self.n_values {
            for conditioning in [Conditioning::Ill, Conditioning::Well] {
                let evals: Vec<&EvalStats> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n && !c.failed)
                    .filter_map(|c| match conditioning {
                        Conditioning::Ill => c.initial_eval.as_ref(),
                        Conditioning::Well => c.final_eval.as_ref(),
                    })
                    .collect();
                if evals.is_empty() {
                    continue;
                }
                let conds: Vec<f64> = self
                    .cells
                    .iter()
                    .filter(|c| c.n == n && !c.failed)
                    .map(|c| match conditioning {
                        Conditioning::Ill => c.initial_cond,
                        Conditioning::Well => c.final_cond,
                    })
                    .collect();
                let cond_stats = TrialStatistics::from_samples("cond", &conds);
                out.push(SweepAggregate {
                    n,
                    conditioning,
                    metric: "cond".to_string(),
                    mean: cond_stats.mean,
                    std: cond_stats.std,
                    cells: conds.len(),
                });
                let metric_names: Vec<String> = evals[0].metrics().keys().cloned().collect();
                for name in metric_names {
                    let (mean, std, count) = pooled_stats(
                        evals
                            .iter()
                            .map(|e| {
                                let m = e.metrics();
                                let s = m[&name];
                                (s.mean, s.std, s.count)
                            })
                            .collect::<Vec<_>>()
                            .as_slice(),
                    );
                    out.push(SweepAggregate {
                        n,
                        conditioning,
                        metric: name,
                        mean,
                        std,
                        cells: count,
                    });
                }
            }
        }
        out
    }

    /// Pooled mean of one metric for a group, if present.
    pub fn aggregate_mean(&self, n: usize, conditioning: Conditioning, metric: &str) -> Option<f64> {
        self.aggregates()
            .into_iter()
            .find(|a| a.n == n && a.conditioning == conditioning && a.metric == metric)
            .map(|a| a.mean)
    }
}

/// Combine per-cell (mean, std, count) triples into pooled statistics over
/// all underlying samples.
fn pooled_stats(groups: &[(f64, f64, usize)]) -> (f64, f64, usize) {
    let total: usize = groups.iter().map(|g| g.2).sum();
    if total == 0 {
        return (f64::NAN, f64::NAN, 0);
    }
    let mean = groups.iter().map(|g| g.0 * g.2 as f64).sum::<f64>() / total as f64;
    // sum of squared deviations within + between groups
    let ss: f64 = groups
        .iter()
        .map(|g| {
            let within = g.1 * g.1 * (g.2.saturating_sub(1)) as f64;
            let between = g.2 as f64 * (g.0 - mean) * (g.0 - mean);
            within + between
        })
        .sum();
    let std = if total > 1 {
        (ss / (total - 1) as f64).sqrt()
    } else {
        0.0
    };
    (mean, std, total)
}

/// Optimize many random initializations for each pose and point count,
/// evaluating the estimators before and after.
pub fn sweep_n_points(
    poses: &[Pose],
    n_values: &[usize],
    inits_per_pose: usize,
    settings: &ExperimentSettings,
    base_seed: u64,
) -> Result<SweepResult> {
    if poses.is_empty() || n_values.is_empty() || inits_per_pose == 0 {
        return Err(Error::invalid("sweep", "empty pose set, n list or init count"));
    }
    let mut jobs = Vec::new();
    for (pose_index, pose) in poses.iter().enumerate() {
        for &n in n_values {
            for init_index in 0..inits_per_pose {
                jobs.push((pose_index, pose, n, init_index));
            }
        }
    }
    let methods = pose_est::builtin_methods();
    let cells: Vec<SweepCell> = jobs
        .par_iter()
        .map(|&(pose_index, pose, n, init_index)| {
            let idx = [pose_index as u64, n as u64, init_index as u64];
            let mut init_rng =
                derive_rng(base_seed, &[STREAM_INIT, idx[0], idx[1], idx[2]]);
            let initial = match sample_initial_points(n, settings.marker_radius, &mut init_rng) {
                Ok(s) => s,
                Err(_) => {
                    return SweepCell {
                        pose_index,
                        n,
                        init_index,
                        initial_cond: f64::NAN,
                        final_cond: f64::NAN,
                        initial_eval: None,
                        final_eval: None,
                        final_points: Vec::new(),
                        initial_points: Vec::new(),
                        failed: true,
                    }
                }
            };
            let eval = |points: &PlanarPointSet, phase: u64| {
                monte_carlo_eval(
                    points,
                    pose,
                    &settings.intrinsics,
                    &settings.noise,
                    settings.runs,
                    &methods,
                    &settings.refiner,
                    derive_seed(base_seed, &[STREAM_EVAL, idx[0], idx[1], idx[2], phase]),
                )
                .ok()
            };
            let initial_points: Vec<[f64; 2]> =
                initial.points().iter().map(|p| [p.x, p.y]).collect();
            match optimizer::optimize(&initial, pose, &settings.optimizer) {
                Ok(trace) => {
                    let final_set = trace.final_points();
                    let initial_eval = eval(&initial, 0);
                    let final_eval = eval(&final_set, 1);
                    let failed = initial_eval.is_none() && final_eval.is_none();
                    SweepCell {
                        pose_index,
                        n,
                        init_index,
                        initial_cond: trace.initial_cond(),
                        final_cond: trace.final_cond(),
                        initial_eval,
                        final_eval,
                        final_points: final_set.points().iter().map(|p| [p.x, p.y]).collect(),
                        initial_points,
                        failed,
                    }
                }
                Err(_) => SweepCell {
                    pose_index,
                    n,
                    init_index,
                    initial_cond: f64::NAN,
                    final_cond: f64::NAN,
                    initial_eval: None,
                    final_eval: None,
                    final_points: Vec::new(),
                    initial_points,
                    failed: true,
                },
            }
        })
        .collect();
    Ok(SweepResult {
        cells,
        n_values: n_values.to_vec(),
        marker_radius: settings.marker_radius,
    })
}

// ---------------------------------------------------------------------------
// Histogram and shape analysis

/// Counts of final point locations on a square grid over [-r, r]^2.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2D {
    pub radius: f64,
    pub bins: usize,
    /// Row-major bins x bins counts; row = y bin, column = x bin.
    pub counts: Vec<u64>,
    /// Points per contributing set.
    pub point_count: usize,
    /// Number of contributing sets.
    pub set_count: usize,
}

impl Histogram2D {
    pub fn bin_width(&self) -> f64 {
        2.0 * self.radius / self.bins as f64
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

/// Accumulate final configurations into a 2D histogram in object
/// coordinates.
pub fn aggregate_histogram(final_sets: &[PlanarPointSet], bins: usize) -> Result<Histogram2D> {
    if final_sets.is_empty() {
        return Err(Error::invalid("aggregate_histogram", "no input sets"));
    }
    if bins == 0 {
        return Err(Error::invalid("aggregate_histogram", "bins must be > 0"));
    }
    let n = final_sets[0].len();
    let radius = final_sets[0].radius();
    for set in final_sets {
        if set.len() != n {
            return Err(Error::MixedN);
        }
        if (set.radius() - radius).abs() > 1e-12 {
            return Err(Error::invalid(
                "aggregate_histogram",
                "sets disagree on the bound radius",
            ));
        }
    }
    let mut counts = vec![0u64; bins * bins];
    let width = 2.0 * radius / bins as f64;
    for set in final_sets {
        for p in set.points() {
            let col = (((p.x + radius) / width).floor() as isize).clamp(0, bins as isize - 1);
            let row = (((p.y + radius) / width).floor() as isize).clamp(0, bins as isize - 1);
            counts[row as usize * bins + col as usize] += 1;
        }
    }
    Ok(Histogram2D {
        radius,
        bins,
        counts,
        point_count: n,
        set_count: final_sets.len(),
    })
}

/// Convex hull by Andrew's monotone chain, counter-clockwise.
pub fn convex_hull(points: &[PlanarPoint]) -> Vec<PlanarPoint> {
    let mut pts = points.to_vec();
    pts.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    pts.dedup_by(|a, b| (*a - *b).norm() < 1e-15);
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: &PlanarPoint, a: &PlanarPoint, b: &PlanarPoint| {
        (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x)
    };
    let mut lower: Vec<PlanarPoint> = Vec::new();
    for p in &pts {
        while lower.len() >= 2 && cross(&lower[lower.len() - 2], &lower[lower.len() - 1], p) <= 0.0
        {
            lower.pop();
        }
        lower.push(*p);
    }
    let mut upper: Vec<PlanarPoint> = Vec::new();
    for p in pts.iter().rev() {
        while upper.len() >= 2 && cross(&upper[upper.len() - 2], &upper[upper.len() - 1], p) <= 0.0
        {
            upper.pop();
        }
        upper.push(*p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Ratio of the longest to the shortest edge of the convex hull. Returns
/// infinity when the hull collapses below three vertices.
pub fn hull_side_ratio(points: &[PlanarPoint]) -> f64 {
    let hull = convex_hull(points);
    if hull.len() < 3 {
        return f64::INFINITY;
    }
    let mut min = f64::INFINITY;
    let mut max = 0.0f64;
    for i in 0..hull.len() {
        let side = (hull[(i + 1) % hull.len()] - hull[i]).norm();
        min = min.min(side);
        max = max.max(side);
    }
    max / min
}

/// Best-fit rotation angle (mod pi/2) aligning four points to the corners of
/// the inscribed square, by the circular mean of their polar angles.
pub fn square_alignment_angle(points: &[PlanarPoint]) -> f64 {
    let (mut s, mut c) = (0.0, 0.0);
    for p in points {
        let theta = p.y.atan2(p.x);
        s += (4.0 * theta).sin();
        c += (4.0 * theta).cos();
    }
    s.atan2(c) / 4.0
}

/// Fraction of all points lying within `tolerance * r` of the nearest
/// corner of the per-set rotation-aligned inscribed square.
pub fn square_corner_mass_fraction(sets: &[PlanarPointSet], tolerance: f64) -> f64 {
    let mut near = 0usize;
    let mut total = 0usize;
    for set in sets {
        let r = set.radius();
        let theta = square_alignment_angle(set.points());
        for p in set.points() {
            total += 1;
            let within = (0..4).any(|k| {
                let corner_angle = theta + k as f64 * std::f64::consts::FRAC_PI_2;
                let corner = PlanarPoint::new(r * corner_angle.cos(), r * corner_angle.sin());
                (p - corner).norm() <= tolerance * r
            });
            if within {
                near += 1;
            }
        }
    }
    near as f64 / total as f64
}
