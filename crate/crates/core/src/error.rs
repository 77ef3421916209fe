use thiserror::Error;

use crate::utility::Family;

/// Errors raised while evaluating utilities and lotteries.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum UtilityError {
    #[error("outcome {x} is outside the domain of the {family} utility")]
    Domain { family: Family, x: f64 },
    #[error("the {0} utility is only defined for whole lotteries")]
    LotteryOnly(Family),
    #[error("probability {0} is outside [0, 1]")]
    Probability(f64),
    #[error("invalid lottery: {0}")]
    InvalidLottery(String),
    #[error("invalid parameters for {family}: {reason}")]
    InvalidParams { family: Family, reason: String },
    #[error("non-finite utility for outcome {x}")]
    NonFinite { x: f64 },
}

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Utility(#[from] UtilityError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("questionnaire error: {0}")]
    Questionnaire(String),
    #[error("prompt error: {0}")]
    Prompt(String),
    #[error("diagnostics need at least two chains, got {0}")]
    TooFewChains(usize),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
