//! Crate-wide error type.

use thiserror::Error;

/// Errors produced by the geometry, estimation and experiment layers.
#[derive(Debug, Error)]
pub enum Error {
    /// A world point projects to or behind the camera plane.
    #[error("point behind camera (z = {z:.3e})")]
    PointBehindCamera { z: f64 },

    /// A homography is rank deficient or could not be built from a pose.
    #[error("degenerate homography")]
    DegenerateHomography,

    /// Perspective division by a near-zero homogeneous coordinate.
    #[error("mapped point at infinity")]
    PointAtInfinity,

    /// The DLT needs at least four correspondences.
    #[error("too few points: got {got}, need at least {need}")]
    TooFewPoints { got: usize, need: usize },

    /// Point normalization of a set where all points coincide.
    #[error("degenerate point set: all points coincide")]
    DegenerateSet,

    /// The stacked system does not determine the homography (rank < 8).
    #[error("degenerate configuration: homography not uniquely determined")]
    DegenerateConfiguration,

    /// A singular value required as a divisor is numerically zero.
    #[error("ill-conditioned system: s{index} = {value:.3e}")]
    IllConditioned { index: usize, value: f64 },

    /// A finite-difference probe left the valid domain of the objective.
    #[error("gradient probe left the valid domain")]
    GradientProbeFailed,

    /// The starting point set is degenerate under the working pose.
    #[error("initial configuration degenerate under the working pose")]
    InitialConfigurationDegenerate,

    /// Rejection sampling failed to produce a valid point set.
    #[error("point sampler exhausted after {0} attempts")]
    SamplerExhausted(usize),

    /// No camera placement at a requested radius can see the whole marker.
    #[error("no valid camera pose at radius {0}")]
    InfeasibleDistribution(f64),

    /// Pose refinement pushed points behind the camera and backtracking failed.
    #[error("pose refinement diverged behind the camera")]
    DivergedBehindCamera,

    /// Translation error is undefined for a zero ground-truth translation.
    #[error("zero ground-truth translation")]
    ZeroTranslation,

    /// Histogram aggregation over point sets with differing point counts.
    #[error("point sets disagree on point count")]
    MixedN,

    /// A domain type invariant was violated at construction.
    #[error("invalid {what}: {why}")]
    Invalid { what: &'static str, why: String },

    /// Too many per-run estimator failures to report meaningful statistics.
    #[error("estimator failed in {failed}/{runs} runs (> 10%)")]
    TooManyFailures { failed: usize, runs: usize },
}

impl Error {
    pub(crate) fn invalid(what: &'static str, why: impl Into<String>) -> Self {
        Error::Invalid {
            what,
            why: why.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
