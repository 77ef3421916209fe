//! Choice agents: a synthetic utility-driven agent and an external
//! chat-completion agent, plus prompt assembly and survey sessions.

mod external;
mod prompt;
mod session;
mod synthetic;

pub use external::{external_query, ExternalClient, ExternalConfig, GenerationConfig, QueryOutcome, DEFAULT_TOKEN_ENV};
pub use prompt::{
    build_prompt, letter_list, sft_prompt, IclExample, Message, PromptPayload, PromptSpec, PromptTag, PromptTarget, Tone,
    CHAT_SYSTEM, VARIANTS,
};
pub use session::{lottery_records, run_lottery, run_survey, LotteryAnswer, SessionOptions};
pub use synthetic::{answer_choice_items, item_question, likert_from_level, risk_level, synthetic_answer};

use serde::{Deserialize, Serialize};

use crate::choice::ChoiceModelSpec;
use crate::error::{Error, Result};
use crate::questionnaire::{grable_lytton_items, QuestionnaireItem};
use crate::utility::OutcomeDomain;

pub const DEFAULT_MAX_RETRIES: usize = 5;
/// Attempt cap for Likert items.
pub const LIKERT_MAX_RETRIES: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum AgentKind {
    Synthetic { spec: ChoiceModelSpec },
    External(ExternalConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentConfig {
    #[serde(default)]
    pub id: Option<String>,
    #[serde(flatten)]
    pub kind: AgentKind,
    #[serde(default)]
    pub generation: GenerationConfig,
    /// Total attempts per query.
    #[serde(default = "default_retries")]
    pub max_retries: usize,
    #[serde(default)]
    pub seed: u64,
}

fn default_retries() -> usize {
    DEFAULT_MAX_RETRIES
}

impl AgentConfig {
    pub fn synthetic(spec: ChoiceModelSpec, seed: u64) -> Self {
        Self { id: None, kind: AgentKind::Synthetic { spec }, generation: GenerationConfig::default(), max_retries: DEFAULT_MAX_RETRIES, seed }
    }

    pub fn external(config: ExternalConfig) -> Self {
        Self { id: None, kind: AgentKind::External(config), generation: GenerationConfig::default(), max_retries: DEFAULT_MAX_RETRIES, seed: 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_retries == 0 {
            return Err(Error::Config("max_retries must be at least 1".into()));
        }
        self.generation.validate()?;
        match &self.kind {
            AgentKind::Synthetic { spec } => spec.validate(&OutcomeDomain::default()),
            AgentKind::External(c) => c.validate(),
        }
    }
}

pub enum Agent {
    Synthetic { id: String, spec: ChoiceModelSpec, seed: u64, anchors: Vec<QuestionnaireItem> },
    External { id: String, client: ExternalClient, max_retries: usize },
}

impl Agent {
    pub fn from_config(config: &AgentConfig) -> Result<Self> {
        config.validate()?;
        Ok(match &config.kind {
            AgentKind::Synthetic { spec } => Agent::Synthetic {
                id: config.id.clone().unwrap_or_else(|| format!("synthetic-{}", spec.utility.family())),
                spec: spec.clone(),
                seed: config.seed,
                anchors: grable_lytton_items(),
            },
            AgentKind::External(c) => Agent::External {
                id: config.id.clone().unwrap_or_else(|| c.model.clone()),
                client: ExternalClient::new(c.clone(), config.generation.clone())?,
                max_retries: config.max_retries,
            },
        })
    }

    pub fn id(&self) -> &str {
        match self {
            Agent::Synthetic { id, .. } | Agent::External { id, .. } => id,
        }
    }

    /// Parallel requests allowed in flight.
    pub fn concurrency(&self) -> usize {
        match self {
            Agent::Synthetic { .. } => rayon::current_num_threads(),
            Agent::External { client, .. } => client.config().concurrency,
        }
    }
}
