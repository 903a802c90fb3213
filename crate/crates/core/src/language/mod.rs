//! Language values, value tables and the TD / MC language estimates.

use std::ops::Deref;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::aggregate::{ActionEval, AggregateError, Aggregator, Estimate};
use crate::mdp::{
    ActionId, EnvKind, Environment, MdpError, PolicyTable, StateId, StateKind, TrajectorySample,
};
use crate::textify::{
    render_transition, terminal_description, ConceptEvaluation, StateLexicon, TextError,
    NO_EVALUATION, TRUNCATION_SENTENCE,
};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum ValueContent {
    FreeText { text: String },
    Concepts(ConceptEvaluation),
}

impl ValueContent {
    pub fn free(text: impl Into<String>) -> Self {
        ValueContent::FreeText { text: text.into() }
    }

    /// Text shown to a model or a reader: free text as is, concepts as JSON.
    pub fn render(&self) -> String {
        match self {
            ValueContent::FreeText { text } => text.clone(),
            ValueContent::Concepts(c) => c.to_json(),
        }
    }

    pub fn concepts(&self) -> Option<&ConceptEvaluation> {
        match self {
            ValueContent::Concepts(c) => Some(c),
            ValueContent::FreeText { .. } => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Initial,
    TdUpdate,
    McUpdate,
}

fn is_false(b: &bool) -> bool {
    !*b
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LanguageValue {
    #[serde(flatten)]
    pub content: ValueContent,
    pub provenance: Provenance,
    pub iteration: usize,
    /// The model ignored the requested answer format.
    #[serde(default, skip_serializing_if = "is_false")]
    pub non_conforming: bool,
}

impl LanguageValue {
    pub fn initial(text: &str) -> Self {
        Self {
            content: ValueContent::free(text),
            provenance: Provenance::Initial,
            iteration: 0,
            non_conforming: false,
        }
    }

    pub fn is_uninformed(&self) -> bool {
        matches!(&self.content, ValueContent::FreeText { text } if text == NO_EVALUATION)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LanguageValueTable {
    entries: Vec<LanguageValue>,
    terminal: Vec<bool>,
    iteration: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum TableError {
    #[error("state {0} is terminal; its value is fixed")]
    TerminalWrite(usize),
    #[error("state {0} is not in the table")]
    UnknownState(usize),
    #[error("malformed value table: {0}")]
    Malformed(String),
}

/// Terminal descriptions everywhere terminal, "No evaluation information" elsewhere.
pub fn init_value_table(env: &Environment) -> LanguageValueTable {
    let mdp = &env.mdp;
    let style = env.lexicon.style();
    let entries = mdp
        .states()
        .map(|s| match mdp.kind(s) {
            StateKind::NonTerminal => LanguageValue::initial(NO_EVALUATION),
            kind => LanguageValue::initial(terminal_description(style, kind)),
        })
        .collect();
    let terminal = mdp.states().map(|s| mdp.is_terminal(s)).collect();
    LanguageValueTable { entries, terminal, iteration: 0 }
}

impl LanguageValueTable {
    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn get(&self, s: StateId) -> &LanguageValue {
        &self.entries[s.0]
    }

    pub fn entries(&self) -> &[LanguageValue] {
        &self.entries
    }

    /// Writes a sweep's results at once and advances the table iteration.
    pub fn commit(
        &mut self,
        updates: Vec<(StateId, LanguageValue)>,
        iteration: usize,
    ) -> Result<(), TableError> {
        for (s, _) in &updates {
            match self.terminal.get(s.0) {
                None => return Err(TableError::UnknownState(s.0)),
                Some(true) => return Err(TableError::TerminalWrite(s.0)),
                Some(false) => {}
            }
        }
        for (s, v) in updates {
            self.entries[s.0] = v;
        }
        self.iteration = self.iteration.max(iteration);
        Ok(())
    }

    /// `{state_name: value}` in state order.
    pub fn to_json(&self, lexicon: &StateLexicon) -> serde_json::Value {
        let map = self
            .entries
            .iter()
            .enumerate()
            .map(|(s, v)| {
                (lexicon.render(StateId(s)), serde_json::to_value(v).expect("value serializes"))
            })
            .collect::<serde_json::Map<_, _>>();
        serde_json::Value::Object(map)
    }

    pub fn from_json(
        env: &Environment,
        value: &serde_json::Value,
        iteration: usize,
    ) -> Result<Self, TableError> {
        let map = value.as_object().ok_or_else(|| TableError::Malformed("expected an object".into()))?;
        let mut table = init_value_table(env);
        for (name, v) in map {
            let s = env
                .lexicon
                .lookup(name)
                .ok_or_else(|| TableError::Malformed(format!("unknown state name {name}")))?;
            table.entries[s.0] = serde_json::from_value(v.clone())
                .map_err(|e| TableError::Malformed(format!("{name}: {e}")))?;
        }
        table.iteration = iteration;
        Ok(table)
    }

    /// Rendered value text of every cell, row by row.
    pub fn text_grid(&self, env: &Environment) -> Option<Vec<Vec<String>>> {
        let shape = env.mdp.grid()?;
        Some(
            (0..shape.rows)
                .map(|r| {
                    (0..shape.cols).map(|c| self.get(shape.state(r, c)).content.render()).collect()
                })
                .collect(),
        )
    }
}

/// Immutable view of a value table, cheap to clone and share across threads.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValueSnapshot(Arc<LanguageValueTable>);

pub fn snapshot(table: &LanguageValueTable) -> ValueSnapshot {
    ValueSnapshot(Arc::new(table.clone()))
}

impl ValueSnapshot {
    pub fn snapshot(&self) -> ValueSnapshot {
        self.clone()
    }
}

impl Deref for ValueSnapshot {
    type Target = LanguageValueTable;

    fn deref(&self) -> &LanguageValueTable {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskInstruction(String);

impl TaskInstruction {
    pub fn new(text: impl Into<String>) -> Result<Self, MdpError> {
        let text = text.into();
        if text.trim().is_empty() {
            return Err(MdpError::Config("task instruction must not be empty".into()));
        }
        Ok(Self(text))
    }

    pub fn default_for(kind: EnvKind) -> Self {
        match kind {
            EnvKind::Gridworld => Self("find the shortest path to a terminal state".into()),
            EnvKind::Frozenlake => Self("reach the goal while avoiding all holes".into()),
        }
    }

    pub fn text(&self) -> &str {
        &self.0
    }
}

/// Everything an aggregator may know about the state under evaluation.
#[derive(Debug, Clone)]
pub struct StateContext {
    pub state: StateId,
    pub state_name: String,
    pub env_kind: EnvKind,
    pub task: TaskInstruction,
}

impl StateContext {
    pub fn new(env: &Environment, s: StateId, task: &TaskInstruction) -> Self {
        Self {
            state: s,
            state_name: env.lexicon.render(s),
            env_kind: env.kind,
            task: task.clone(),
        }
    }
}

/// One narrated transition together with the successor's current evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct OneStepOutcome {
    pub action: ActionId,
    /// Position of `action` in the state's legal-action list.
    pub action_index: usize,
    pub action_name: String,
    pub reward: f64,
    pub next_state: StateId,
    pub next_name: String,
    pub next_kind: StateKind,
    pub probability: f64,
    /// Aggregation weight: `probability` for Q, `π(a|s) · probability` for V.
    pub weight: f64,
    pub description: String,
    pub next_value: LanguageValue,
    pub snapshot_iteration: usize,
}

/// Every outcome of every legal action of `s`, weighted by its transition probability.
pub fn one_step_outcomes(
    env: &Environment,
    s: StateId,
    values: &ValueSnapshot,
) -> Result<Vec<OneStepOutcome>, TextError> {
    let mdp = &env.mdp;
    let mut out = Vec::new();
    for (k, &a) in mdp.actions(s).iter().enumerate() {
        let name = mdp.action_name(a);
        for o in mdp.outcomes_at(s, k) {
            let next_kind = mdp.kind(o.next);
            out.push(OneStepOutcome {
                action: a,
                action_index: k,
                action_name: name.to_string(),
                reward: o.reward,
                next_state: o.next,
                next_name: env.lexicon.render(o.next),
                next_kind,
                probability: o.probability,
                weight: o.probability,
                description: render_transition(&env.lexicon, name, o.reward, o.next, next_kind)?,
                next_value: values.get(o.next).clone(),
                snapshot_iteration: values.iteration(),
            });
        }
    }
    Ok(out)
}

/// Keeps outcomes of actions the policy plays and reweights them by `π(a|s)`.
pub fn policy_weighted(outcomes: &[OneStepOutcome], row: &[f64]) -> Vec<OneStepOutcome> {
    outcomes
        .iter()
        .filter(|o| row[o.action_index] > 0.0)
        .map(|o| OneStepOutcome { weight: row[o.action_index] * o.probability, ..o.clone() })
        .collect()
}

#[derive(Debug, thiserror::Error)]
#[error("state {state}: {source}")]
pub struct EstimateError {
    pub state: String,
    #[source]
    pub source: AggregateError,
}

fn fail(ctx: &StateContext, source: AggregateError) -> EstimateError {
    EstimateError { state: ctx.state_name.clone(), source }
}

fn stamp(est: Estimate, provenance: Provenance, iteration: usize) -> LanguageValue {
    LanguageValue { content: est.content, provenance, iteration, non_conforming: est.non_conforming }
}

fn check_outcomes(ctx: &StateContext, outcomes: &[OneStepOutcome]) -> Result<usize, EstimateError> {
    let first = outcomes
        .first()
        .ok_or_else(|| fail(ctx, AggregateError::Usage("no outcomes to aggregate".into())))?;
    if outcomes.iter().any(|o| o.snapshot_iteration != first.snapshot_iteration) {
        return Err(fail(ctx, AggregateError::Usage("outcomes read from different snapshots".into())));
    }
    Ok(first.snapshot_iteration)
}

/// V^L(s) from one-step outcomes already weighted by the policy.
pub fn td_language_estimate(
    ctx: &StateContext,
    outcomes: &[OneStepOutcome],
    action_values: &[ActionEval],
    agg: &dyn Aggregator,
) -> Result<LanguageValue, EstimateError> {
    let iteration = check_outcomes(ctx, outcomes)?;
    let est = agg.state_value(ctx, outcomes, action_values).map_err(|e| fail(ctx, e))?;
    Ok(stamp(est, Provenance::TdUpdate, iteration + 1))
}

/// Q^L(s, a) from the outcomes of a single action.
pub fn language_q_estimate(
    ctx: &StateContext,
    outcomes: &[OneStepOutcome],
    agg: &dyn Aggregator,
) -> Result<LanguageValue, EstimateError> {
    let iteration = check_outcomes(ctx, outcomes)?;
    if outcomes.iter().any(|o| o.action != outcomes[0].action) {
        return Err(fail(ctx, AggregateError::Usage("outcomes mix several actions".into())));
    }
    let est = agg.action_value(ctx, outcomes).map_err(|e| fail(ctx, e))?;
    Ok(stamp(est, Provenance::TdUpdate, iteration + 1))
}

/// One narrated step of a sampled episode.
#[derive(Debug, Clone, PartialEq)]
pub struct RenderedStep {
    pub action: ActionId,
    pub action_name: String,
    pub reward: f64,
    pub next_state: StateId,
    pub next_name: String,
    pub next_kind: StateKind,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedTrajectory {
    pub start_name: String,
    pub steps: Vec<RenderedStep>,
    pub terminated: bool,
}

impl RenderedTrajectory {
    pub fn text(&self) -> String {
        let mut lines: Vec<String> = self.steps.iter().map(|s| s.description.clone()).collect();
        if !self.terminated {
            lines.push(TRUNCATION_SENTENCE.to_string());
        }
        lines.join("\n")
    }
}

pub fn render_trajectory(
    env: &Environment,
    t: &TrajectorySample,
) -> Result<RenderedTrajectory, TextError> {
    let mdp = &env.mdp;
    let steps = t
        .steps
        .iter()
        .map(|st| {
            let name = mdp.action_name(st.action);
            let kind = mdp.kind(st.next);
            Ok(RenderedStep {
                action: st.action,
                action_name: name.to_string(),
                reward: st.reward,
                next_state: st.next,
                next_name: env.lexicon.render(st.next),
                next_kind: kind,
                description: render_transition(&env.lexicon, name, st.reward, st.next, kind)?,
            })
        })
        .collect::<Result<_, TextError>>()?;
    Ok(RenderedTrajectory { start_name: env.lexicon.render(t.start), steps, terminated: t.terminated })
}

/// V^L(s) from complete episodes; reads no value table.
pub fn mc_language_estimate(
    env: &Environment,
    ctx: &StateContext,
    trajectories: &[TrajectorySample],
    iteration: usize,
    agg: &dyn Aggregator,
) -> Result<LanguageValue, EstimateError> {
    if trajectories.is_empty() {
        return Err(fail(ctx, AggregateError::Usage("no trajectories to aggregate".into())));
    }
    if let Some(t) = trajectories.iter().find(|t| t.start != ctx.state) {
        return Err(fail(
            ctx,
            AggregateError::Usage(format!("trajectory starts at state {}", t.start.0)),
        ));
    }
    let rendered = trajectories
        .iter()
        .map(|t| render_trajectory(env, t))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| fail(ctx, e.into()))?;
    let est = agg.trajectory_value(ctx, &rendered).map_err(|e| fail(ctx, e))?;
    Ok(stamp(est, Provenance::McUpdate, iteration))
}

/// Per-action Q^L values paired with the policy's probability of each action.
pub fn action_evals(
    env: &Environment,
    s: StateId,
    q_row: &[LanguageValue],
    policy: &PolicyTable,
) -> Vec<ActionEval> {
    env.mdp
        .actions(s)
        .iter()
        .zip(q_row)
        .enumerate()
        .map(|(k, (&a, v))| ActionEval {
            action: a,
            action_index: k,
            action_name: env.mdp.action_name(a).to_string(),
            policy_prob: policy.row(s).get(k).copied().unwrap_or(0.0),
            value: v.clone(),
        })
        .collect()
}
