use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at data row {row}, column `{column}`: {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation failed: {message} (rows {rows:?})")]
    Validation { message: String, rows: Vec<usize> },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("perfect separation: log-likelihood unbounded along direction {direction:?}")]
    Separation { direction: Vec<f64> },

    #[error("rank-deficient design: {0}")]
    Rank(String),

    #[error("too few units: need at least {needed}, found {found}")]
    SampleSize { needed: usize, found: usize },

    #[error("insufficient kernel support at x = {x0}: {distinct} distinct in-support point(s)")]
    InsufficientSupport { x0: f64, distinct: usize },

    #[error("ill-conditioned local design at x = {x0} (condition estimate {condition:.3e})")]
    Conditioning { x0: f64, condition: f64 },

    #[error("bandwidth {h} infeasible: every leave-one-out fit failed")]
    BandwidthInfeasible { h: f64 },

    #[error("bandwidth selection failed: no feasible bandwidth on the grid ({0})")]
    Selection(String),

    #[error("alignment error: {0}")]
    Alignment(String),

    #[error("density estimate {density:.3e} at x = {x} is below the floor")]
    DensityFloor { x: f64, density: f64 },

    #[error("degenerate sample: {0}")]
    DegenerateSample(String),

    #[error("unreliable integrated squared error: {absent} of {total} grid values absent")]
    UnreliableIse { absent: usize, total: usize },
}
