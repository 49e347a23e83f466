use std::path::PathBuf;

use thiserror::Error;

/// Where in an input file a parse failure happened.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Location {
    Line(usize),
    Byte(u64),
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Location::Line(n) => write!(f, "line {n}"),
            Location::Byte(n) => write!(f, "byte {n}"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at {location}: {message}")]
    Parse { location: Location, message: String },

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("need more than {k} points for a {k}-nearest-neighbour graph, got {n}")]
    TooFewPoints { n: usize, k: usize },

    #[error("node {0} has no incident edges")]
    IsolatedNode(usize),

    #[error("eigensolver did not converge: residual {residual:e} after {iterations} iterations")]
    EigensolverNoConvergence { residual: f64, iterations: usize },

    #[error("cell center {0:?} is not an occupied voxel")]
    CenterNotOccupied([usize; 3]),

    #[error("training set is degenerate: {0}")]
    DegenerateTrainingSet(String),

    #[error("forest is incompatible: {0}")]
    IncompatibleForest(String),

    #[error("model {0} has no class label")]
    UnlabeledModel(String),

    #[error("duplicate model id {0}")]
    DuplicateModel(String),

    #[error("class {0} has no models")]
    ClassWithNoModels(u32),

    #[error("KKT system is singular (estimated reciprocal condition {rcond:e})")]
    SingularKkt { rcond: f64 },

    #[error("problem too large for the reference solver: {0} variables")]
    SizeExceeded(usize),

    #[error("quadratic program is not convex")]
    NonConvex,

    #[error("could not place objects after {0} attempts")]
    PlacementFailure(usize),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }

    /// Short machine-readable tag for the error variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Io { .. } => "io-error",
            Error::Parse { .. } => "parse-error",
            Error::EmptyCloud => "empty-cloud",
            Error::InvalidParameter(_) => "invalid-parameter",
            Error::TooFewPoints { .. } => "too-few-points",
            Error::IsolatedNode(_) => "isolated-node",
            Error::EigensolverNoConvergence { .. } => "eigensolver-no-convergence",
            Error::CenterNotOccupied(_) => "center-not-occupied",
            Error::DegenerateTrainingSet(_) => "degenerate-training-set",
            Error::IncompatibleForest(_) => "incompatible-forest",
            Error::UnlabeledModel(_) => "unlabeled-model",
            Error::DuplicateModel(_) => "duplicate-model",
            Error::ClassWithNoModels(_) => "class-with-no-models",
            Error::SingularKkt { .. } => "singular-kkt-system",
            Error::SizeExceeded(_) => "size-exceeded",
            Error::NonConvex => "non-convex",
            Error::PlacementFailure(_) => "placement-failure",
            Error::InvalidConfig(_) => "invalid-config",
            Error::Json(_) => "json-error",
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
