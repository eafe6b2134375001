use thiserror::Error;

/// Errors raised anywhere in the estimation and simulation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("track `{id}` has {count} point(s); at least 2 are required")]
    TooFewPoints { id: String, count: usize },

    #[error("track `{id}` has zero path length")]
    DegenerateTrack { id: String },

    #[error("track `{id}`: {message}")]
    InvalidTrack { id: String, message: String },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("stationary distribution vanishes at index {index}")]
    SingularStationary { index: usize },

    #[error("eigenvalue {index} has magnitude {value:e}, too small to extend")]
    IllConditionedExtension { index: usize, value: f64 },

    #[error("model invariant violated: {0}")]
    Invariant(String),

    #[error("zero bandwidth: {count} points coincide with point {index}")]
    ZeroBandwidth { index: usize, count: usize },

    #[error("point ({lon}, {lat}) lies outside the field grid")]
    Extrapolation { lon: f64, lat: f64 },

    #[error("field value missing at grid node ({time}, {lon}, {lat})")]
    MissingValue { time: i64, lon: f64, lat: f64 },

    #[error("value {value} outside basis support [{lo}, {hi}]")]
    OutsideSupport { value: f64, lo: f64, hi: f64 },

    #[error("predictor density below floor at {} point(s), first x = {}", .0.len(), .0.first().copied().unwrap_or(f64::NAN))]
    DensityFloor(Vec<f64>),

    #[error("sampler failed on replicate {replicate}: {source}")]
    Sampler {
        replicate: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("id mismatch: {0}")]
    IdMismatch(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse classification used by the command-line driver to pick exit codes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Input,
    Numerical,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::NonFinite(_)
            | Error::SingularStationary { .. }
            | Error::IllConditionedExtension { .. }
            | Error::Invariant(_)
            | Error::ZeroBandwidth { .. }
            | Error::DensityFloor(_) => ErrorClass::Numerical,
            Error::Sampler { source, .. } => source.class(),
            _ => ErrorClass::Input,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
