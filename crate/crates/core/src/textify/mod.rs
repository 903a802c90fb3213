//! Text rendering of states and transitions, prompt assembly, and parsing of
//! model responses.

mod concepts;
mod prompts;

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

pub use concepts::{
    parse_concept_document, parse_freeform_evaluation, ConceptEvaluation, FreeformEvaluation,
    is_none_text, ParseError, FREEFORM_MARKER, NONE_TEXT,
};
pub use prompts::{
    assemble_frozenlake_q_prompt, assemble_frozenlake_v_prompt, assemble_gridworld_eval_prompt,
    assemble_improvement_prompt, assemble_trajectory_prompt, has_unsubstituted_placeholder,
    PromptBundle, FROZENLAKE_Q_SYSTEM, FROZENLAKE_V_SYSTEM, GRIDWORLD_ROLLOUT, GRIDWORLD_SYSTEM,
    GRIDWORLD_TRIGGER,
};

use crate::mdp::{GridShape, GridWorldSpec, MdpError, StateId, StateKind};

/// Initial evaluation of every non-terminal state.
pub const NO_EVALUATION: &str = "No evaluation information";

/// Fixed evaluation of gridworld terminal states.
pub const TERMINAL_DESCRIPTION: &str = "The state is the terminal state. Your move ends here so you will not receive any negative path cost anymore in the future.";

pub const HOLE_DESCRIPTION: &str = "This state is a hole. The episode ends here in failure.";
pub const GOAL_DESCRIPTION: &str = "This state is the goal. The episode ends here in success.";

pub const TRUNCATION_SENTENCE: &str = "The episode was truncated at the step limit.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextStyle {
    /// Letter names, deterministic step-penalty narration.
    Gridworld,
    /// `(row,col)` names, slippery-lake narration.
    FrozenLake,
}

#[derive(Debug, thiserror::Error)]
pub enum TextError {
    #[error("unknown state {0}")]
    UnknownState(usize),
    #[error("usage error: {0}")]
    Usage(String),
}

/// Bijection from states to display names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateLexicon {
    names: Vec<String>,
    style: TextStyle,
}

impl StateLexicon {
    pub fn new(names: Vec<String>, style: TextStyle) -> Result<Self, MdpError> {
        let mut seen = HashSet::new();
        if let Some(dup) = names.iter().find(|n| !seen.insert(n.as_str())) {
            return Err(MdpError::Config(format!("state name '{dup}' is not unique")));
        }
        Ok(Self { names, style })
    }

    pub fn gridworld(spec: &GridWorldSpec) -> Result<Self, MdpError> {
        Self::new(spec.lexicon.clone(), TextStyle::Gridworld)
    }

    /// `row,col` names for every cell of a grid.
    pub fn coordinates(shape: GridShape) -> Self {
        let names = (0..shape.rows * shape.cols)
            .map(|s| {
                let (r, c) = shape.cell(StateId(s));
                format!("{r},{c}")
            })
            .collect();
        Self { names, style: TextStyle::FrozenLake }
    }

    pub fn style(&self) -> TextStyle {
        self.style
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn raw_name(&self, s: StateId) -> Option<&str> {
        self.names.get(s.0).map(String::as_str)
    }

    pub fn lookup(&self, rendered: &str) -> Option<StateId> {
        let bare = rendered.trim().trim_start_matches('(').trim_end_matches(')');
        self.names.iter().position(|n| n == bare).map(StateId)
    }

    pub fn render(&self, s: StateId) -> String {
        format!("({})", self.names[s.0])
    }
}

pub fn render_state(lexicon: &StateLexicon, s: StateId) -> Result<String, TextError> {
    lexicon.raw_name(s).map(|n| format!("({n})")).ok_or(TextError::UnknownState(s.0))
}

/// Fixed evaluation held by a terminal state.
pub fn terminal_description(style: TextStyle, kind: StateKind) -> &'static str {
    match (style, kind) {
        (TextStyle::Gridworld, _) => TERMINAL_DESCRIPTION,
        (TextStyle::FrozenLake, StateKind::Hole) => HOLE_DESCRIPTION,
        (TextStyle::FrozenLake, _) => GOAL_DESCRIPTION,
    }
}

fn fmt_reward(r: f64) -> String {
    format!("{r}")
}

/// Narrates one transition `s --a--> s_next` with reward `r`.
pub fn render_transition(
    lexicon: &StateLexicon,
    action: &str,
    reward: f64,
    next: StateId,
    next_kind: StateKind,
) -> Result<String, TextError> {
    let name = lexicon.raw_name(next).ok_or(TextError::UnknownState(next.0))?;
    let text = match lexicon.style {
        TextStyle::Gridworld => {
            let mut t = format!(
                "You choose the {action} action. You receive a negative reward {} as the path penalty. Now you are at a new state ({name}).",
                fmt_reward(reward)
            );
            if next_kind.is_terminal() {
                t.push(' ');
                t.push_str(TERMINAL_DESCRIPTION);
            }
            t
        }
        TextStyle::FrozenLake => {
            let mut t = format!(
                "You choose the {action} action and arrive at state ({name}). You receive a reward of {}.",
                fmt_reward(reward)
            );
            match next_kind {
                StateKind::Hole => {
                    t.push_str(&format!(" State ({name}) is a hole, so the episode ends in failure."))
                }
                StateKind::Goal => {
                    t.push_str(&format!(" State ({name}) is the goal, so the episode ends in success."))
                }
                StateKind::NonTerminal => {}
            }
            t
        }
    };
    Ok(text)
}
