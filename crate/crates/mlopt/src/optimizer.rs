//! Gradient descent on control-point positions minimizing the condition
//! number of the stacked homography system, with per-coordinate step
//! adaptation and projection onto the circular marker bound.
//!
//! Steps grow by `eta_up` while a coordinate's gradient keeps its sign and
//! shrink by `eta_down` when it flips; after each full step every point is
//! radially projected back into the disk of radius `r`. The returned final
//! configuration is the best iterate of the whole run, so the objective at
//! the end never exceeds the objective anywhere along the trace.

use crate::dlt::{self, Correspondence};
use crate::error::{Error, Result};
use crate::geometry::{self, PlanarPoint, Pose};

/// Control points on the marker plane, bounded to a disk.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarPointSet {
    points: Vec<PlanarPoint>,
    radius: f64,
}

impl PlanarPointSet {
    /// Validate and wrap a set of n >= 4 pairwise-distinct points inside the
    /// disk of radius `radius`.
    pub fn new(points: Vec<PlanarPoint>, radius: f64) -> Result<Self> {
        if points.len() < 4 {
            return Err(Error::TooFewPoints {
                got: points.len(),
                need: 4,
            });
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(Error::invalid("PlanarPointSet", "radius must be positive"));
        }
        for p in &points {
            if !p.iter().all(|v| v.is_finite()) {
                return Err(Error::invalid("PlanarPointSet", "non-finite point"));
            }
            if p.norm() > radius + 1e-12 {
                return Err(Error::invalid(
                    "PlanarPointSet",
                    format!("point at |p| = {} outside disk r = {radius}", p.norm()),
                ));
            }
        }
        for i in 0..points.len() {
            for j in (i + 1)..points.len() {
                if (points[i] - points[j]).norm() < 1e-9 {
                    return Err(Error::invalid(
                        "PlanarPointSet",
                        format!("points {i} and {j} coincide"),
                    ));
                }
            }
        }
        Ok(PlanarPointSet { points, radius })
    }

    pub fn points(&self) -> &[PlanarPoint] {
        &self.points
    }

    pub fn radius(&self) -> f64 {
        self.radius
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// Mean distance over all point pairs.
    pub fn mean_pairwise_distance(&self) -> f64 {
        let n = self.points.len();
        let mut sum = 0.0;
        let mut count = 0;
        for i in 0..n {
            for j in (i + 1)..n {
                sum += (self.points[i] - self.points[j]).norm();
                count += 1;
            }
        }
        sum / count as f64
    }
}

/// Settings of the descent loop.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerConfig {
    /// Initial per-coordinate step, meters.
    pub alpha0: f64,
    /// Step growth factor on a repeated gradient sign.
    pub eta_up: f64,
    /// Step shrink factor on a gradient sign flip.
    pub eta_down: f64,
    /// Iteration cap.
    pub max_iter: usize,
    /// Convergence threshold on the relative objective change, sustained
    /// over ten consecutive iterations.
    pub rel_tol: f64,
    /// Central-difference probe distance, meters.
    pub fd_step: f64,
    /// Disk bound radius, meters.
    pub radius: f64,
}

impl OptimizerConfig {
    /// Defaults scaled to the disk radius `r`.
    pub fn for_radius(r: f64) -> Self {
        OptimizerConfig {
            alpha0: 1e-3 * r,
            eta_up: 1.05,
            eta_down: 0.5,
            max_iter: 500,
            rel_tol: 1e-8,
            fd_step: 1e-6 * r,
            radius: r,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha0 > 0.0) {
            return Err(Error::invalid("OptimizerConfig", "alpha0 must be > 0"));
        }
        if !(self.eta_up > 1.0) {
            return Err(Error::invalid("OptimizerConfig", "eta_up must be > 1"));
        }
        if !(self.eta_down > 0.0 && self.eta_down < 1.0) {
            return Err(Error::invalid("OptimizerConfig", "eta_down must be in (0, 1)"));
        }
        if !(self.fd_step > 0.0) {
            return Err(Error::invalid("OptimizerConfig", "fd_step must be > 0"));
        }
        if !(self.radius > 0.0) {
            return Err(Error::invalid("OptimizerConfig", "radius must be > 0"));
        }
        if !(self.rel_tol >= 0.0) {
            return Err(Error::invalid("OptimizerConfig", "rel_tol must be >= 0"));
        }
        Ok(())
    }

    fn step_bounds(&self) -> (f64, f64) {
        (1e-9 * self.radius, 0.1 * self.radius)
    }
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig::for_radius(0.15)
    }
}

/// Why the descent loop stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TerminationStatus {
    /// Relative objective change stayed below `rel_tol` for ten iterations.
    Converged,
    /// Iteration cap reached.
    MaxIter,
    /// Every per-coordinate step hit the lower clamp.
    Stalled,
}

/// One accepted iterate.
#[derive(Debug, Clone)]
pub struct IterationRecord {
    /// Point positions after this step (iteration 0 is the initial set).
    pub points: Vec<PlanarPoint>,
    /// Objective value at those positions.
    pub cond: f64,
    /// Euclidean norm of the gradient used for the step (0 at iteration 0).
    pub grad_norm: f64,
    /// Per-coordinate steps in effect for the step (alpha0 at iteration 0).
    pub steps: Vec<f64>,
}

/// Full history of a descent run.
#[derive(Debug, Clone)]
pub struct OptimizationTrace {
    /// Accepted iterates, starting with the initial configuration.
    pub records: Vec<IterationRecord>,
    pub status: TerminationStatus,
    /// Index of the lowest-objective iterate; the run's result.
    pub best_index: usize,
    radius: f64,
}

impl OptimizationTrace {
    /// The best configuration seen, returned as the run's final answer.
    pub fn final_points(&self) -> PlanarPointSet {
        PlanarPointSet {
            points: self.records[self.best_index].points.clone(),
            radius: self.radius,
        }
    }

    pub fn final_cond(&self) -> f64 {
        self.records[self.best_index].cond
    }

    pub fn initial_cond(&self) -> f64 {
        self.records[0].cond
    }

    /// Index of the best iterate among the first `upto + 1` records.
    pub fn best_index_upto(&self, upto: usize) -> usize {
        let mut best = 0;
        for (i, rec) in self.records.iter().enumerate().take(upto + 1) {
            if rec.cond < self.records[best].cond {
                best = i;
            }
        }
        best
    }
}

/// Condition number of the system induced by projecting `points` exactly
/// under `pose`.
pub fn objective(points: &PlanarPointSet, pose: &Pose) -> Result<f64> {
    objective_raw(points.points(), pose)
}

/// Objective on a raw slice; used for probe evaluations that may leave the
/// disk by a finite-difference step.
fn objective_raw(points: &[PlanarPoint], pose: &Pose) -> Result<f64> {
    let corrs: Vec<Correspondence> = dlt::correspondences_from_pose(points, pose)?;
    Ok(dlt::condition_number(&dlt::build_dlt_matrix(&corrs)?))
}

/// Central-difference gradient of the objective, one entry per coordinate
/// in (x0, y0, x1, y1, ...) order.
pub fn gradient(points: &PlanarPointSet, pose: &Pose, fd_step: f64) -> Result<Vec<f64>> {
    gradient_raw(points.points(), pose, fd_step)
}

fn gradient_raw(points: &[PlanarPoint], pose: &Pose, fd_step: f64) -> Result<Vec<f64>> {
    let mut grad = vec![0.0; 2 * points.len()];
    let mut probe = points.to_vec();
    for i in 0..points.len() {
        for axis in 0..2 {
            let original = probe[i][axis];
            probe[i][axis] = original + fd_step;
            let plus = objective_raw(&probe, pose).map_err(|_| Error::GradientProbeFailed)?;
            probe[i][axis] = original - fd_step;
            let minus = objective_raw(&probe, pose).map_err(|_| Error::GradientProbeFailed)?;
            probe[i][axis] = original;
            if !plus.is_finite() || !minus.is_finite() {
                return Err(Error::GradientProbeFailed);
            }
            grad[2 * i + axis] = (plus - minus) / (2.0 * fd_step);
        }
    }
    Ok(grad)
}

/// Per-coordinate adaptive step state.
#[derive(Debug, Clone)]
pub struct StepState {
    pub steps: Vec<f64>,
    pub prev_grad: Vec<f64>,
}

impl StepState {
    pub fn new(dim: usize, alpha0: f64) -> Self {
        StepState {
            steps: vec![alpha0; dim],
            prev_grad: vec![0.0; dim],
        }
    }
}

/// Adapt the per-coordinate steps from the gradient sign history: grow on a
/// repeated sign, shrink on a flip, hold when either sign is zero. Steps are
/// clamped to [1e-9 r, 0.1 r].
pub fn supersab_update(state: &mut StepState, grad: &[f64], config: &OptimizerConfig) {
    assert_eq!(state.steps.len(), grad.len(), "state dimension mismatch");
    let (lo, hi) = config.step_bounds();
    for i in 0..grad.len() {
        let s = grad[i].signum() * state.prev_grad[i].signum();
        if grad[i] == 0.0 || state.prev_grad[i] == 0.0 {
            // hold
        } else if s > 0.0 {
            state.steps[i] *= config.eta_up;
        } else {
            state.steps[i] *= config.eta_down;
        }
        state.steps[i] = state.steps[i].clamp(lo, hi);
    }
    state.prev_grad.copy_from_slice(grad);
}

/// Radially project every point outside the disk back onto its boundary.
pub fn constrain_to_disk(points: &PlanarPointSet) -> PlanarPointSet {
    let mut out = points.points.clone();
    constrain_raw(&mut out, points.radius);
    PlanarPointSet {
        points: out,
        radius: points.radius,
    }
}

fn constrain_raw(points: &mut [PlanarPoint], radius: f64) {
    for p in points.iter_mut() {
        let norm = p.norm();
        if norm > radius {
            *p *= radius / norm;
        }
    }
}

/// Run the projected descent from `initial` under `pose`.
pub fn optimize(
    initial: &PlanarPointSet,
    pose: &Pose,
    config: &OptimizerConfig,
) -> Result<OptimizationTrace> {
    config.validate()?;
    let radius = config.radius;
    let dim = 2 * initial.len();

    let c0 = match objective(initial, pose) {
        Ok(c) if c.is_finite() => c,
        _ => return Err(Error::InitialConfigurationDegenerate),
    };
    {
        let corrs = dlt::correspondences_from_pose(initial.points(), pose)
            .map_err(|_| Error::InitialConfigurationDegenerate)?;
        let sys = dlt::build_dlt_matrix(&corrs).map_err(|_| Error::InitialConfigurationDegenerate)?;
        let svd = sys.svd();
        if svd.singular_values[7] <= 1e-12 {
            return Err(Error::InitialConfigurationDegenerate);
        }
    }

    let mut state = StepState::new(dim, config.alpha0);
    let mut records = vec![IterationRecord {
        points: initial.points.clone(),
        cond: c0,
        grad_norm: 0.0,
        steps: state.steps.clone(),
    }];
    let mut current = initial.points.clone();
    let mut status = TerminationStatus::MaxIter;
    let mut quiet_iters = 0usize;
    let (step_lo, _) = config.step_bounds();

    for _ in 1..=config.max_iter {
        // A probe failure means the finite difference straddled an invalid
        // configuration; retry with a smaller probe.
        let mut fd = config.fd_step;
        let grad = loop {
            match gradient_raw(&current, pose, fd) {
                Ok(g) => break g,
                Err(_) if fd > 1e-3 * config.fd_step => fd *= 0.1,
                Err(e) => return Err(e),
            }
        };
        supersab_update(&mut state, &grad, config);

        // Take the step; if it lands on a degenerate configuration, shrink
        // all steps and retry from the same iterate.
        let mut shrink_attempts = 0;
        let (next, c_next) = loop {
            let mut candidate = current.clone();
            for i in 0..candidate.len() {
                candidate[i].x -= state.steps[2 * i] * grad[2 * i];
                candidate[i].y -= state.steps[2 * i + 1] * grad[2 * i + 1];
            }
            constrain_raw(&mut candidate, radius);
            match objective_raw(&candidate, pose) {
                Ok(c) if c.is_finite() => break (candidate, c),
                _ => {
                    shrink_attempts += 1;
                    if shrink_attempts > 60 {
                        break (current.clone(), records.last().unwrap().cond);
                    }
                    for s in &mut state.steps {
                        *s = (*s * config.eta_down).max(step_lo);
                    }
                }
            }
        };

        let c_prev = records.last().unwrap().cond;
        let grad_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
        records.push(IterationRecord {
            points: next.clone(),
            cond: c_next,
            grad_norm,
            steps: state.steps.clone(),
        });
        current = next;

        let rel_change = (c_next - c_prev).abs() / c_prev.max(f64::MIN_POSITIVE);
        if rel_change < config.rel_tol {
            quiet_iters += 1;
            if quiet_iters >= 10 {
                status = TerminationStatus::Converged;
                break;
            }
        } else {
            quiet_iters = 0;
        }
        if state.steps.iter().all(|&s| s <= step_lo) {
            status = TerminationStatus::Stalled;
            break;
        }
    }

    let mut best_index = 0;
    for (i, rec) in records.iter().enumerate() {
        if rec.cond < records[best_index].cond {
            best_index = i;
        }
    }
    Ok(OptimizationTrace {
        records,
        status,
        best_index,
        radius,
    })
}
