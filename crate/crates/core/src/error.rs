use thiserror::Error;

/// Every failure the toolkit can report.
#[derive(Debug, Error)]
pub enum Error {
    #[error("coefficient is not symmetric: defect {defect:.3e} at grid point {point}")]
    NotSymmetric { defect: f64, point: usize },

    #[error("coefficient is not uniformly elliptic: smallest eigenvalue {alpha:.3e}")]
    NotElliptic { alpha: f64 },

    #[error("dimension mismatch: {0}")]
    BadDimension(String),

    #[error("invalid grid: {0}")]
    BadGrid(String),

    #[error("invalid coefficient description: {0}")]
    BadDescription(String),

    #[error("quasimomentum {eta:?} lies outside [-1/2, 1/2]^d")]
    EtaOutOfCell { eta: Vec<f64> },

    #[error("Garding inequality violated: slack {slack:.3e}")]
    GardingViolation { slack: f64 },

    #[error("eigensolver failure: {0}")]
    EigensolverFailure(String),

    #[error("constant-mode amplitude {amplitude:.3e} too small to fix the gauge")]
    DegenerateGauge { amplitude: f64 },

    #[error("singular system: {0}")]
    SingularSystem(String),

    #[error("right-hand side for {beta} has mean {mean:.3e}")]
    CompatibilityViolation { beta: String, mean: f64 },

    #[error("finite-difference step too large: Richardson disagreement {disagreement:.3e}")]
    StepTooLarge { disagreement: f64 },

    #[error("grid of {got} samples is incommensurate with the supercell ({expected} expected)")]
    IncommensurateGrid { expected: usize, got: usize },

    #[error("regime mismatch: {0}")]
    RegimeMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
