use thiserror::Error;

/// Every failure the samplers, generators and I/O helpers can report.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix of dimension {dim} is not positive definite after jitter")]
    NotPositiveDefinite { dim: usize },
    #[error("matrix is not symmetric (max asymmetry {asymmetry:e})")]
    NotSymmetric { asymmetry: f64 },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("inverse-Wishart degrees of freedom {df} must exceed dim - 1 = {}", *dim as f64 - 1.0)]
    InvalidDegreesOfFreedom { df: f64, dim: usize },
    #[error("Dirichlet concentration at index {index} is {value}, must be > 0")]
    NonPositiveConcentration { index: usize, value: f64 },
    #[error("empty truncation interval [{lo}, {hi}]")]
    EmptyInterval { lo: f64, hi: f64 },
    #[error("invalid scale parameter {0}")]
    InvalidScale(f64),
    #[error("x = {x} lies outside the spline support [{lo}, {hi}]")]
    OutOfSupport { x: f64, lo: f64, hi: f64 },
    #[error("second-difference penalty needs at least 3 coefficients, got {0}")]
    TooFewCoefficients(usize),
    #[error("invalid knot specification: {0}")]
    InvalidKnots(String),
    #[error("label {label} out of range for {k} components")]
    LabelOutOfRange { label: usize, k: usize },
    #[error("all component responsibilities underflowed for observation {index}")]
    AllResponsibilitiesUnderflow { index: usize },
    #[error("closing component {index} has weight {weight:e} < 1e-12")]
    DegenerateWeight { index: usize, weight: f64 },
    #[error("scale s = {value:e} below 1e-8 at subject {subject}, coordinate {coord}")]
    ScaleUnderflow { subject: usize, coord: usize, value: f64 },
    #[error("every subject has a single replicate; variance functions are not identifiable")]
    InsufficientReplicates,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("unknown covariance structure `{0}`")]
    UnknownStructure(String),
    #[error("importance density vanishes at a sampled point")]
    ZeroImportanceDensity,
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("data error: {0}")]
    Data(String),
}

pub type Result<T> = std::result::Result<T, Error>;
