//! Aggregation (G1/G2) and policy improvement contracts with a deterministic
//! symbolic implementation and a chat-model implementation.

mod llm;
mod symbolic;

use nlrl_gateway::GatewayError;
use serde::{Deserialize, Serialize};

pub use llm::{
    action_value_prompt, parse_action_choice, state_value_prompt, LlmAggregator, LlmImprover, LlmSettings,
    CORRECTIVE_SUFFIX,
};
pub use symbolic::{
    concept_fuse, concept_join, improve_policy_deterministic, parse_path, score_concepts,
    select_best, ConceptRank, ConceptScore, DeterministicAggregator, DeterministicImprover,
    FusedItem, PathShape, RiskEntry,
};

use crate::language::{LanguageValue, OneStepOutcome, RenderedTrajectory, StateContext, ValueContent};
use crate::mdp::ActionId;
use crate::textify::TextError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AggregatorKind {
    Deterministic,
    Llm,
}

impl std::str::FromStr for AggregatorKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "deterministic" => Ok(Self::Deterministic),
            "llm" => Ok(Self::Llm),
            other => Err(format!("unknown aggregator '{other}' (expected deterministic or llm)")),
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("deterministic aggregation needs concept documents: {0}")]
    ModeMismatch(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("evaluation failed after {} attempts: {last_error}", responses.len())]
    StateEvaluationFailed { responses: Vec<String>, last_error: String },
    #[error("improvement failed after {} attempts: {last_error}", responses.len())]
    ImprovementFailed { responses: Vec<String>, last_error: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Text(#[from] TextError),
}

/// Aggregated value text plus a format-conformance flag.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Estimate {
    pub content: ValueContent,
    pub non_conforming: bool,
}

impl Estimate {
    pub fn new(content: ValueContent) -> Self {
        Self { content, non_conforming: false }
    }
}

/// Q^L(s, a) of one legal action, with the current policy's probability of it.
#[derive(Debug, Clone, PartialEq)]
pub struct ActionEval {
    pub action: ActionId,
    pub action_index: usize,
    pub action_name: String,
    pub policy_prob: f64,
    pub value: LanguageValue,
}

pub trait Aggregator: Send + Sync {
    fn kind(&self) -> AggregatorKind;

    /// Q^L from the outcomes of one action, weighted by transition probability.
    fn action_value(&self, ctx: &StateContext, outcomes: &[OneStepOutcome]) -> Result<Estimate, AggregateError>;

    /// V^L from policy-weighted outcomes. `action_values` holds this sweep's
    /// Q^L entries when they were computed, and is empty otherwise.
    fn state_value(
        &self,
        ctx: &StateContext,
        outcomes: &[OneStepOutcome],
        action_values: &[ActionEval],
    ) -> Result<Estimate, AggregateError>;

    /// V^L from complete episodes starting at the state.
    fn trajectory_value(
        &self,
        ctx: &StateContext,
        trajectories: &[RenderedTrajectory],
    ) -> Result<Estimate, AggregateError>;
}

/// A new action distribution for one state, aligned with the given actions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Improvement {
    pub distribution: Vec<f64>,
    pub thought: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ConceptScore>>,
}

pub trait Improver: Send + Sync {
    fn improve(&self, ctx: &StateContext, per_action: &[ActionEval]) -> Result<Improvement, AggregateError>;
}
