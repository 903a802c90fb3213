use nlrl_gateway::{Message, ResponseFormat};

use super::TextError;

pub const GRIDWORLD_SYSTEM: &str = include_str!("assets/gridworld_system.txt");
pub const GRIDWORLD_ROLLOUT: &str = "The current grid state is {current_state}. And here are several one-step rollout results starting from the current state {current_state}:\n\n";
pub const GRIDWORLD_TRIGGER: &str = "By aggregating the above rollout results, please concisely generate your evaluation of the current state {current_state}. Start your answer with the sentence 'Final evaluation of the current state:'.";

pub const FROZENLAKE_Q_SYSTEM: &str = include_str!("assets/frozenlake_q_system.txt");
pub const FROZENLAKE_V_SYSTEM: &str = include_str!("assets/frozenlake_v_system.txt");
const FROZENLAKE_Q_INPUT: &str = "State: {state}\nAction: {action}\nPossible outcomes:\n{agg_str}";
const FROZENLAKE_V_INPUT: &str = "State: {state}\nPossible actions and evaluations:\n\n{agg_str}";

const IMPROVE_SYSTEM: &str = "You are a careful planner choosing moves for a player in a text-based grid environment. \
You will be given the current state, the task, the list of legal actions and an evaluation of each action. \
Compare the evaluations, explain your reasoning briefly, and pick exactly one action. \
A good action should not result in immediate risk when a safer alternative exists.";

const TRAJECTORY_SYSTEM: &str = "You are a helpful assistant that strictly follows the user's instructions. \
We are evaluating a state of a grid environment from complete episodes that start in that state. \
Each episode is a sequence of moves with the reward received and the state reached after every move. \
Summarize what these episodes reveal about the state: which moves lead to success, which lead to failure, and how far the goal is.";

/// The three text parts of a chat prompt. The user message is
/// `user_text` immediately followed by `trigger_text`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBundle {
    pub system_text: String,
    pub user_text: String,
    pub trigger_text: String,
    pub response_format: ResponseFormat,
}

impl PromptBundle {
    pub fn messages(&self) -> Vec<Message> {
        vec![
            Message::system(self.system_text.clone()),
            Message::user(format!("{}{}", self.user_text, self.trigger_text)),
        ]
    }

    /// System, user and trigger text concatenated.
    pub fn full_text(&self) -> String {
        format!("{}{}{}", self.system_text, self.user_text, self.trigger_text)
    }
}

/// True when a `{name}` template slot survived substitution.
pub fn has_unsubstituted_placeholder(text: &str) -> bool {
    ["{current_state}", "{state}", "{action}", "{agg_str}"].iter().any(|p| text.contains(p))
}

pub fn assemble_gridworld_eval_prompt(
    state_name: &str,
    rollouts: &[(String, String)],
) -> Result<PromptBundle, TextError> {
    if rollouts.is_empty() {
        return Err(TextError::Usage(format!("no rollouts given for state {state_name}")));
    }
    let mut user = GRIDWORLD_ROLLOUT.replace("{current_state}", state_name);
    for (i, (transition, value)) in rollouts.iter().enumerate() {
        user.push_str(&format!(
            "Rollout {i}: {transition}\nThe evaluation of the new state: {value}\n\n"
        ));
    }
    Ok(PromptBundle {
        system_text: GRIDWORLD_SYSTEM.to_string(),
        user_text: user,
        trigger_text: GRIDWORLD_TRIGGER.replace("{current_state}", state_name),
        response_format: ResponseFormat::Text,
    })
}

pub fn assemble_frozenlake_q_prompt(
    state_name: &str,
    action_name: &str,
    outcomes: &[(String, String)],
) -> Result<PromptBundle, TextError> {
    if outcomes.is_empty() {
        return Err(TextError::Usage(format!(
            "no outcomes given for state {state_name}, action {action_name}"
        )));
    }
    let agg = outcomes
        .iter()
        .enumerate()
        .map(|(i, (transition, eval))| {
            format!(
                "Outcome {}:\nIntermediate change: {transition}\nEvaluation of the new state: {eval}\n",
                i + 1
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let user = FROZENLAKE_Q_INPUT
        .replace("{state}", state_name)
        .replace("{action}", action_name)
        .replacen("{agg_str}", &agg, 1);
    Ok(PromptBundle {
        system_text: FROZENLAKE_Q_SYSTEM.to_string(),
        user_text: user,
        trigger_text: String::new(),
        response_format: ResponseFormat::JsonObject,
    })
}

pub fn assemble_frozenlake_v_prompt(
    state_name: &str,
    per_action_evals: &[(String, String)],
) -> Result<PromptBundle, TextError> {
    if per_action_evals.is_empty() {
        return Err(TextError::Usage(format!("no action evaluations given for state {state_name}")));
    }
    let agg = per_action_evals
        .iter()
        .map(|(action, eval)| format!("Action: {action}\nEvaluation: {eval}\n"))
        .collect::<Vec<_>>()
        .join("\n");
    let user = FROZENLAKE_V_INPUT.replace("{state}", state_name).replacen("{agg_str}", &agg, 1);
    Ok(PromptBundle {
        system_text: FROZENLAKE_V_SYSTEM.to_string(),
        user_text: user,
        trigger_text: String::new(),
        response_format: ResponseFormat::JsonObject,
    })
}

/// Prompt asking the model to pick one legal action given per-action evaluations.
pub fn assemble_improvement_prompt(
    state_name: &str,
    task: &str,
    per_action_evals: &[(String, String)],
) -> Result<PromptBundle, TextError> {
    if per_action_evals.is_empty() {
        return Err(TextError::Usage(format!("no actions given for state {state_name}")));
    }
    let menu = per_action_evals.iter().map(|(a, _)| a.as_str()).collect::<Vec<_>>().join(", ");
    let mut user = format!("Task: {task}\nState: {state_name}\nLegal actions: {menu}\n\n");
    for (action, eval) in per_action_evals {
        user.push_str(&format!("Action: {action}\nEvaluation: {eval}\n\n"));
    }
    Ok(PromptBundle {
        system_text: IMPROVE_SYSTEM.to_string(),
        user_text: user,
        trigger_text: format!(
            "Think step by step about which action is best, then finish with a last line of the form 'Action: <name>' where <name> is one of: {menu}."
        ),
        response_format: ResponseFormat::Text,
    })
}

/// Prompt summarising complete episodes that start in one state.
pub fn assemble_trajectory_prompt(
    state_name: &str,
    episodes: &[String],
    json_output: bool,
) -> Result<PromptBundle, TextError> {
    if episodes.is_empty() {
        return Err(TextError::Usage(format!("no episodes given for state {state_name}")));
    }
    let mut user = format!("The current state is {state_name}. Here are complete episodes starting from it:\n\n");
    for (i, ep) in episodes.iter().enumerate() {
        user.push_str(&format!("Episode {i}:\n{ep}\n\n"));
    }
    let (trigger, format) = if json_output {
        (
            "Answer with one JSON object with the keys \"Important states\", \"Immediate Risk\", \"Future Risk\", \"Safest\" and \"Final evaluation\".".to_string(),
            ResponseFormat::JsonObject,
        )
    } else {
        (
            format!("Please concisely generate your evaluation of the current state {state_name}. Start your answer with the sentence 'Final evaluation of the current state:'."),
            ResponseFormat::Text,
        )
    };
    Ok(PromptBundle {
        system_text: TRAJECTORY_SYSTEM.to_string(),
        user_text: user,
        trigger_text: trigger,
        response_format: format,
    })
}
