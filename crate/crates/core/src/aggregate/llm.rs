use std::sync::Arc;

use nlrl_gateway::{ChatRequest, Gateway};
use serde::{Deserialize, Serialize};

use super::{ActionEval, AggregateError, Aggregator, AggregatorKind, Estimate, Improvement, Improver};
use crate::language::{OneStepOutcome, RenderedTrajectory, StateContext, ValueContent};
use crate::textify::{
    assemble_frozenlake_q_prompt, assemble_frozenlake_v_prompt, assemble_gridworld_eval_prompt,
    assemble_improvement_prompt, assemble_trajectory_prompt, parse_concept_document,
    parse_freeform_evaluation, PromptBundle, TextStyle,
};

/// Appended to the prompt when a response could not be used.
pub const CORRECTIVE_SUFFIX: &str = "\n\nYour previous answer could not be used: {problem}. Please answer again and follow the required format exactly.";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmSettings {
    pub model: String,
    /// Defaults to 1.0 for the gridworld and 0.0 for the frozen lake.
    pub temperature: Option<f64>,
    pub max_tokens: Option<u32>,
    /// Attempts per call before giving up, the first one included.
    pub attempts: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self { model: "gpt-4-1106-preview".into(), temperature: None, max_tokens: None, attempts: 2 }
    }
}

impl LlmSettings {
    pub fn temperature_for(&self, style: TextStyle) -> f64 {
        self.temperature.unwrap_or(match style {
            TextStyle::Gridworld => 1.0,
            TextStyle::FrozenLake => 0.0,
        })
    }
}

struct Caller {
    gateway: Arc<Gateway>,
    settings: LlmSettings,
    temperature: f64,
}

impl Caller {
    fn request(&self, bundle: &PromptBundle, tag: &str) -> ChatRequest {
        ChatRequest {
            model: self.settings.model.clone(),
            temperature: self.temperature,
            messages: bundle.messages(),
            response_format: bundle.response_format,
            request_tag: tag.to_string(),
            max_tokens: self.settings.max_tokens,
        }
    }

    /// Sends `bundle`, re-asking with a corrective note while `parse` rejects the answer.
    fn ask<T>(
        &self,
        bundle: &PromptBundle,
        tag: &str,
        parse: impl Fn(&str) -> Result<T, String>,
    ) -> Result<T, AggregateError> {
        let attempts = self.settings.attempts.max(1);
        let mut responses = Vec::new();
        let mut current = bundle.clone();
        let mut last_error = String::new();
        for _ in 0..attempts {
            let reply = self.gateway.chat(&self.request(&current, tag))?;
            match parse(&reply) {
                Ok(v) => return Ok(v),
                Err(problem) => {
                    log::warn!("{tag}: unusable response ({problem})");
                    responses.push(reply);
                    current = bundle.clone();
                    current.trigger_text.push_str(&CORRECTIVE_SUFFIX.replace("{problem}", &problem));
                    last_error = problem;
                }
            }
        }
        Err(AggregateError::StateEvaluationFailed { responses, last_error })
    }
}

/// G1/G2 realised by chat calls with the verbatim evaluation prompts.
pub struct LlmAggregator {
    caller: Caller,
    style: TextStyle,
}

impl LlmAggregator {
    pub fn new(gateway: Arc<Gateway>, settings: LlmSettings, style: TextStyle) -> Self {
        let temperature = settings.temperature_for(style);
        Self { caller: Caller { gateway, settings, temperature }, style }
    }

    fn concepts(&self, bundle: &PromptBundle, tag: &str) -> Result<Estimate, AggregateError> {
        self.caller
            .ask(bundle, tag, |text| parse_concept_document(text).map_err(|e| e.to_string()))
            .map(|c| Estimate::new(ValueContent::Concepts(c)))
    }

    fn freeform(&self, bundle: &PromptBundle, tag: &str) -> Result<Estimate, AggregateError> {
        let text = self
            .caller
            .ask(bundle, tag, |text| Ok::<_, String>(text.to_string()))?;
        let parsed = parse_freeform_evaluation(&text);
        Ok(Estimate { content: ValueContent::free(parsed.text), non_conforming: parsed.non_conforming })
    }
}

fn rollouts(outcomes: &[OneStepOutcome]) -> Vec<(String, String)> {
    outcomes.iter().map(|o| (o.description.clone(), o.next_value.content.render())).collect()
}

/// The prompt sent for Q^L(s, a); `outcomes` are those of a single action.
pub fn action_value_prompt(
    style: TextStyle,
    ctx: &StateContext,
    outcomes: &[OneStepOutcome],
) -> Result<PromptBundle, AggregateError> {
    let action = outcomes.first().map(|o| o.action_name.clone()).unwrap_or_default();
    Ok(match style {
        TextStyle::Gridworld => assemble_gridworld_eval_prompt(&ctx.state_name, &rollouts(outcomes))?,
        TextStyle::FrozenLake => assemble_frozenlake_q_prompt(&ctx.state_name, &action, &rollouts(outcomes))?,
    })
}

/// The prompt sent for V^L(s).
pub fn state_value_prompt(
    style: TextStyle,
    ctx: &StateContext,
    outcomes: &[OneStepOutcome],
    action_values: &[ActionEval],
) -> Result<PromptBundle, AggregateError> {
    match style {
        TextStyle::Gridworld => Ok(assemble_gridworld_eval_prompt(&ctx.state_name, &rollouts(outcomes))?),
        TextStyle::FrozenLake => {
            let evals: Vec<(String, String)> = action_values
                .iter()
                .filter(|e| e.policy_prob > 0.0)
                .map(|e| (e.action_name.clone(), e.value.content.render()))
                .collect();
            if evals.is_empty() {
                return Err(AggregateError::Usage(format!(
                    "state value at {} needs action values for the policy's actions",
                    ctx.state_name
                )));
            }
            Ok(assemble_frozenlake_v_prompt(&ctx.state_name, &evals)?)
        }
    }
}

impl LlmAggregator {
    fn run(&self, bundle: &PromptBundle, tag: &str) -> Result<Estimate, AggregateError> {
        match self.style {
            TextStyle::Gridworld => self.freeform(bundle, tag),
            TextStyle::FrozenLake => self.concepts(bundle, tag),
        }
    }
}

impl Aggregator for LlmAggregator {
    fn kind(&self) -> AggregatorKind {
        AggregatorKind::Llm
    }

    fn action_value(&self, ctx: &StateContext, outcomes: &[OneStepOutcome]) -> Result<Estimate, AggregateError> {
        let action = outcomes.first().map(|o| o.action_name.clone()).unwrap_or_default();
        let tag = format!("q {} {action}", ctx.state_name);
        self.run(&action_value_prompt(self.style, ctx, outcomes)?, &tag)
    }

    fn state_value(
        &self,
        ctx: &StateContext,
        outcomes: &[OneStepOutcome],
        action_values: &[ActionEval],
    ) -> Result<Estimate, AggregateError> {
        let tag = format!("v {}", ctx.state_name);
        self.run(&state_value_prompt(self.style, ctx, outcomes, action_values)?, &tag)
    }

    fn trajectory_value(
        &self,
        ctx: &StateContext,
        trajectories: &[RenderedTrajectory],
    ) -> Result<Estimate, AggregateError> {
        let texts: Vec<String> = trajectories.iter().map(RenderedTrajectory::text).collect();
        let tag = format!("mc {}", ctx.state_name);
        match self.style {
            TextStyle::Gridworld => self.freeform(&assemble_trajectory_prompt(&ctx.state_name, &texts, false)?, &tag),
            TextStyle::FrozenLake => self.concepts(&assemble_trajectory_prompt(&ctx.state_name, &texts, true)?, &tag),
        }
    }
}

/// Finds the action named on the last `Action:` line of a response.
pub fn parse_action_choice(response: &str, legal: &[String]) -> Option<usize> {
    let line = response.lines().rev().find(|l| l.to_lowercase().contains("action:"))?;
    let lower = line.to_lowercase();
    let at = lower.rfind("action:")? + "action:".len();
    let name = lower[at..]
        .trim()
        .trim_matches(|c: char| c == '*' || c == '`' || c == '"' || c == '\'' || c == '.' || c.is_whitespace());
    legal.iter().position(|l| l.to_lowercase() == name)
}

/// Policy improvement by asking the model to pick one action.
pub struct LlmImprover {
    caller: Caller,
}

impl LlmImprover {
    pub fn new(gateway: Arc<Gateway>, settings: LlmSettings, style: TextStyle) -> Self {
        let temperature = settings.temperature_for(style);
        Self { caller: Caller { gateway, settings, temperature } }
    }
}

impl Improver for LlmImprover {
    fn improve(&self, ctx: &StateContext, per_action: &[ActionEval]) -> Result<Improvement, AggregateError> {
        let evals: Vec<(String, String)> =
            per_action.iter().map(|e| (e.action_name.clone(), e.value.content.render())).collect();
        let legal: Vec<String> = evals.iter().map(|(a, _)| a.clone()).collect();
        let bundle = assemble_improvement_prompt(&ctx.state_name, ctx.task.text(), &evals)?;
        let tag = format!("improve {}", ctx.state_name);
        let (choice, thought) = self
            .caller
            .ask(&bundle, &tag, |text| {
                parse_action_choice(text, &legal)
                    .map(|i| (i, text.to_string()))
                    .ok_or_else(|| format!("the answer must end with 'Action: <name>' naming one of: {}", legal.join(", ")))
            })
            .map_err(|e| match e {
                AggregateError::StateEvaluationFailed { responses, last_error } => {
                    AggregateError::ImprovementFailed { responses, last_error }
                }
                other => other,
            })?;
        let mut distribution = vec![0.0; per_action.len()];
        distribution[choice] = 1.0;
        Ok(Improvement { distribution, thought, scores: None })
    }
}
