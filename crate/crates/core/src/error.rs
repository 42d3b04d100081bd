use std::fmt;

use serde::Serialize;
use thiserror::Error;

/// One violated invariant found while validating a game description.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationIssue {
    pub kind: IssueKind,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum IssueKind {
    NegativeProbability,
    RowSumMismatch,
    ZeroStopProbability,
    RewardOutOfRange,
    EmptySupportInitialDist,
    ShapeMismatch,
}

impl IssueKind {
    pub fn code(self) -> &'static str {
        match self {
            IssueKind::NegativeProbability => "NEGATIVE_PROBABILITY",
            IssueKind::RowSumMismatch => "ROW_SUM_MISMATCH",
            IssueKind::ZeroStopProbability => "ZERO_STOP_PROBABILITY",
            IssueKind::RewardOutOfRange => "REWARD_OUT_OF_RANGE",
            IssueKind::EmptySupportInitialDist => "EMPTY_SUPPORT_INITIAL_DIST",
            IssueKind::ShapeMismatch => "SHAPE_MISMATCH",
        }
    }
}

impl fmt::Display for ValidationIssue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.kind.code(), self.detail)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid game ({} issue(s)): {}", .0.len(), join_issues(.0))]
    InvalidGame(Vec<ValidationIssue>),

    #[error("parse error in {context}: {message}")]
    Parse { context: String, message: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("unknown builtin game `{0}`")]
    UnknownName(String),

    #[error("bad parameters: {0}")]
    BadParams(String),

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("linear system (I - M) is singular: {0}")]
    SingularSystem(String),

    #[error("policy too close to the boundary for finite differences: {0}")]
    BoundaryPolicy(String),

    #[error("non-finite input")]
    NonFiniteInput,

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("episode exceeded {limit} steps")]
    MaxLengthExceeded { limit: usize },

    #[error("trajectory action has zero probability (player {player}, state {state}, action {action})")]
    ZeroProbabilityAction {
        player: usize,
        state: usize,
        action: usize,
    },

    #[error("exploration parameter {0} outside [0, 1]")]
    EpsOutOfRange(f64),

    #[error("inadmissible schedule: {}", .0.join("; "))]
    InadmissibleSchedule(Vec<String>),

    #[error("non-finite gradient signal at iteration {0}")]
    NonFiniteSignal(usize),

    #[error("enumeration too large: {count} deterministic profiles (cap {cap})")]
    TooLarge { count: u128, cap: u128 },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("target policy is not deterministic")]
    NotDeterministicTarget,
}

fn join_issues(issues: &[ValidationIssue]) -> String {
    issues
        .iter()
        .map(|i| i.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}

/// Whether an error reflects bad input (exit code 2) or a broken runtime
/// invariant (exit code 3).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Runtime,
}

impl Error {
    pub fn code(&self) -> &'static str {
        match self {
            Error::InvalidGame(issues) => issues
                .first()
                .map(|i| i.kind.code())
                .unwrap_or("INVALID_GAME"),
            Error::Parse { .. } => "PARSE_ERROR",
            Error::Io { .. } => "IO_ERROR",
            Error::UnknownName(_) => "UNKNOWN_NAME",
            Error::BadParams(_) => "BAD_PARAMS",
            Error::InvalidPolicy(_) => "INVALID_POLICY",
            Error::SingularSystem(_) => "SINGULAR_SYSTEM",
            Error::BoundaryPolicy(_) => "BOUNDARY_POLICY",
            Error::NonFiniteInput => "NON_FINITE_INPUT",
            Error::DimensionMismatch { .. } => "DIMENSION_MISMATCH",
            Error::MaxLengthExceeded { .. } => "MAX_LENGTH_EXCEEDED",
            Error::ZeroProbabilityAction { .. } => "ZERO_PROBABILITY_ACTION",
            Error::EpsOutOfRange(_) => "EPS_OUT_OF_RANGE",
            Error::InadmissibleSchedule(_) => "INADMISSIBLE_SCHEDULE",
            Error::NonFiniteSignal(_) => "NON_FINITE_SIGNAL",
            Error::TooLarge { .. } => "TOO_LARGE",
            Error::InsufficientData(_) => "INSUFFICIENT_DATA",
            Error::NotDeterministicTarget => "NOT_DETERMINISTIC_TARGET",
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::SingularSystem(_)
            | Error::MaxLengthExceeded { .. }
            | Error::ZeroProbabilityAction { .. }
            | Error::NonFiniteSignal(_) => ErrorClass::Runtime,
            _ => ErrorClass::Config,
        }
    }

    /// All validation issue codes carried by this error, if any.
    pub fn issue_codes(&self) -> Vec<&'static str> {
        match self {
            Error::InvalidGame(issues) => issues.iter().map(|i| i.kind.code()).collect(),
            _ => Vec::new(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
