//! Risk-preference profiling: lottery questionnaires, utility models,
//! Bayesian fitting and alignment data.

pub mod ad;
pub mod agents;
pub mod align;
pub mod choice;
pub mod error;
pub mod inference;
pub mod lottery;
pub mod questionnaire;
pub mod utility;

pub use error::{Error, Result, UtilityError};
pub use lottery::{ChoiceQuestion, GeneratorConfig, Moments, QuestionMode};
pub use utility::{Family, Lottery, Outcome, UtilityModel, WeightingScheme};
