use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("value {value} does not fit in {width} bits")]
    Range { value: u64, width: u32 },
    #[error("word width {0} outside supported range 1..=32")]
    Width(u32),
    #[error("width mismatch: expected {expected}, got {got}")]
    WidthMismatch { expected: usize, got: usize },
    #[error("invalid permutation pattern: {0}")]
    Pattern(String),
    #[error("invalid pattern weights: {0}")]
    Weights(String),
    #[error("LFSR seed must be non-zero")]
    ZeroSeed,
    #[error("no maximal-length tap set for a {0}-bit register")]
    LfsrWidth(u32),
    #[error("invalid cell calibration: {0}")]
    Calibration(String),
    #[error("voltage {voltage} V outside calibrated range [{min}, {max}] V")]
    Voltage { voltage: f64, min: f64, max: f64 },
    #[error("word index {index} out of range (chip has {words} words)")]
    WordIndex { index: usize, words: usize },
    #[error("probability {0} outside [0, 1]")]
    Probability(f64),
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("position {0} is failure-prone but has zero failure rate: privacy loss is unbounded")]
    UnboundedEpsilon(usize),
    #[error("drift factor {0} must exceed 1/2 for the droop bound to be defined")]
    DriftFactor(f64),
    #[error("size guard: {what} = {size} exceeds limit {limit}")]
    SizeGuard {
        what: &'static str,
        size: usize,
        limit: usize,
    },
    #[error("candidate set is empty")]
    EmptyCandidates,
    #[error("invalid candidate set: {0}")]
    Candidates(String),
    #[error("prior has no support")]
    EmptySupport,
    #[error("observation has zero likelihood under every candidate with prior mass")]
    ZeroEvidence,
    #[error("no observations supplied")]
    NoObservations,
    #[error("constraints are infeasible: {0}")]
    Infeasible(String),
    #[error("unknown failure pattern {0:?} (expected F1, F2 or F3)")]
    UnknownPattern(String),
}

pub type Result<T> = std::result::Result<T, Error>;
