use thiserror::Error;

/// Errors raised by the estimation library.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix is not skew-symmetric (asymmetry {asymmetry:.3e})")]
    NonSkewInput { asymmetry: f64 },

    #[error("matrix is not a rotation (orthogonality error {orthogonality:.3e}, det {det:.6})")]
    NotARotation { orthogonality: f64, det: f64 },

    #[error("pairwise-vector matrix is rank deficient (sigma3/sigma1 = {ratio:.3e}); feature geometry is collinear or coplanar")]
    RankDeficient { ratio: f64 },

    #[error("Wahba gain diagonal must satisfy k1 > k2 > k3 >= 1, got {0:?}")]
    BadKOrdering([f64; 3]),

    #[error("at least {required} feature points are required, got {got}")]
    TooFewPoints { required: usize, got: usize },

    #[error("frame has {got} points but the landmark set has {expected}")]
    CardinalityMismatch { expected: usize, got: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("frame contains no points")]
    EmptyFrame,

    #[error("implicit rotation solve did not converge (residual {residual:.3e} after {iterations} iterations)")]
    ImplicitSolveFailed { residual: f64, iterations: usize },

    #[error("attitude profile matrix is degenerate (sigma2/sigma1 = {ratio:.3e})")]
    DegenerateProfile { ratio: f64 },

    #[error("invalid gains: {0}")]
    InvalidGains(String),

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("estimator `{estimator}` failed at step {step}: {source}")]
    Estimator {
        estimator: String,
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
