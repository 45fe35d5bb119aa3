use thiserror::Error;

/// Errors surfaced by estimators, trainers, and I/O.
#[derive(Debug, Error)]
pub enum Error {
    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("rank-deficient input, supply eps")]
    RankDeficient,

    #[error("degenerate bandwidth: all rows identical")]
    DegenerateBandwidth,

    #[error("column {0} is constant")]
    ConstantColumn(usize),

    #[error("kernel matrix is not symmetric (max asymmetry {0:.3e})")]
    AsymmetricKernel(f64),

    #[error("kernel matrix is not positive semi-definite")]
    NotPsd,

    #[error("sample size below 2d: N = {n}, d = {d}")]
    SampleSizeBelowTwiceD { n: usize, d: usize },

    #[error("lemma premise violated: columns must have equal variance (max spread {0:.3e})")]
    LemmaPremiseViolated(f64),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("mixing matrix persistently ill-conditioned after {0} draws")]
    IllConditionedMixing(usize),

    #[error("training diverged (non-finite loss) at step {step}")]
    Diverged { step: usize },

    #[error("stale tape: projector was resampled since the forward pass")]
    StaleTape,

    #[error("empty checkpoint list")]
    EmptyCheckpoints,

    #[error("csv parse error at line {line}: {msg}")]
    CsvParse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
