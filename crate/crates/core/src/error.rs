use std::io;

use thiserror::Error;

/// Errors produced by the localization and clustering pipelines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("ray origin ({x}, {y}) lies in an occupied cell")]
    OriginOccupied { x: f64, y: f64 },
    #[error("ray origin ({x}, {y}) lies outside the floorplan")]
    OriginOutOfBounds { x: f64, y: f64 },
    #[error("invalid scene spec: {0}")]
    InvalidSpec(String),
    #[error("parse error at {location}: {message}")]
    Parse { location: String, message: String },
    #[error("io error: {0}")]
    Io(#[from] io::Error),
    #[error("map has no positive entry")]
    AllZero,
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("length mismatch: expected {expected}, found {found}")]
    LengthMismatch { expected: usize, found: usize },
    #[error("duplicate image id {0:?}")]
    DuplicateId(String),
    #[error("zero feature vector for {0:?}")]
    ZeroVector(String),
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("cluster {0} has no members")]
    EmptyCluster(usize),
    #[error("centroid of cluster {0} has vanishing norm")]
    NormalizationUnderflow(usize),
    #[error("label {label} out of range for {k} clusters")]
    BadLabel { label: usize, k: usize },
    #[error("empty input")]
    EmptyInput,
    #[error("inconsistent config: {0}")]
    InconsistentConfig(String),
    #[error("step {step}: {source}")]
    Step {
        step: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn parse(location: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Parse {
            location: location.into(),
            message: message.into(),
        }
    }

    pub(crate) fn at_step(self, step: usize) -> Self {
        Error::Step {
            step,
            source: Box::new(self),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
