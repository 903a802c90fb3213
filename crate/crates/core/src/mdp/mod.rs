//! Finite MDPs, the two grid environments, and the dynamic-programming oracle.

mod dp;
mod envspec;
mod frozenlake;
mod gridworld;
mod sample;

pub use dp::{
    exact_policy_evaluation, policy_value_metrics, q_value, value_iteration, MetricsReport,
    DP_SWEEP_CAP, METRICS_TOL,
};
pub use envspec::{EnvKind, EnvSpec, Environment};
pub use frozenlake::{
    build_frozenlake, FrozenLakeSpec, SlipModel, Tile, DEFAULT_MAP, FROZENLAKE_ACTIONS,
};
pub use gridworld::{build_gridworld, GridWorldSpec, GRIDWORLD_ACTIONS};
pub(crate) use sample::pick;
pub use sample::{derive_seed, sample_trajectory, Step, TrajectorySample};

use serde::{Deserialize, Serialize};

/// Probability mass tolerance for outcome lists and policy rows.
pub const PROB_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ActionId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateKind {
    NonTerminal,
    /// Terminal state the task wants to reach.
    Goal,
    /// Terminal failure state.
    Hole,
}

impl StateKind {
    pub fn is_terminal(self) -> bool {
        !matches!(self, StateKind::NonTerminal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub next: StateId,
    pub probability: f64,
    pub reward: f64,
    pub terminal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridShape {
    pub rows: usize,
    pub cols: usize,
}

impl GridShape {
    pub fn cell(&self, s: StateId) -> (usize, usize) {
        (s.0 / self.cols, s.0 % self.cols)
    }

    pub fn state(&self, row: usize, col: usize) -> StateId {
        StateId(row * self.cols + col)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum MdpError {
    #[error("outcome probabilities for state {state} action {action} sum to {sum}")]
    BadProbabilities { state: usize, action: usize, sum: f64 },
    #[error("state {state} action {action} leads to unknown state {next}")]
    UnknownNextState { state: usize, action: usize, next: usize },
    #[error("terminal state {0} is not absorbing with zero reward")]
    TerminalNotAbsorbing(usize),
    #[error("discount {0} outside [0, 1]")]
    BadDiscount(f64),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("no convergence within {cap} sweeps (residual {residual:e})")]
    Divergence { cap: usize, residual: f64 },
}

/// Raw parts of a [`TabularMdp`], validated by [`TabularMdp::new`].
#[derive(Debug, Clone)]
pub struct MdpParts {
    pub kinds: Vec<StateKind>,
    pub action_names: Vec<String>,
    /// Legal actions per state.
    pub actions: Vec<Vec<ActionId>>,
    /// `outcomes[s][k]` belongs to `actions[s][k]`.
    pub outcomes: Vec<Vec<Vec<Outcome>>>,
    pub gamma: f64,
    pub start_states: Vec<StateId>,
    pub grid: Option<GridShape>,
    pub step_limit: usize,
}

/// Finite MDP with an explicit outcome table. Immutable once built.
#[derive(Debug, Clone)]
pub struct TabularMdp {
    parts: MdpParts,
}

impl TabularMdp {
    pub fn new(parts: MdpParts) -> Result<Self, MdpError> {
        let n = parts.kinds.len();
        if !(0.0..=1.0).contains(&parts.gamma) {
            return Err(MdpError::BadDiscount(parts.gamma));
        }
        if parts.actions.len() != n || parts.outcomes.len() != n {
            return Err(MdpError::Config("per-state tables do not match the state count".into()));
        }
        for s in 0..n {
            if parts.actions[s].len() != parts.outcomes[s].len() {
                return Err(MdpError::Config(format!("state {s}: actions and outcomes differ")));
            }
            for (k, (a, outs)) in parts.actions[s].iter().zip(&parts.outcomes[s]).enumerate() {
                if a.0 >= parts.action_names.len() {
                    return Err(MdpError::Config(format!("state {s}: unknown action id {}", a.0)));
                }
                let sum: f64 = outs.iter().map(|o| o.probability).sum();
                if (sum - 1.0).abs() > PROB_TOL || outs.iter().any(|o| o.probability < 0.0) {
                    return Err(MdpError::BadProbabilities { state: s, action: k, sum });
                }
                if let Some(o) = outs.iter().find(|o| o.next.0 >= n) {
                    return Err(MdpError::UnknownNextState { state: s, action: k, next: o.next.0 });
                }
                if parts.kinds[s].is_terminal()
                    && outs.iter().any(|o| o.next.0 != s || o.reward != 0.0)
                {
                    return Err(MdpError::TerminalNotAbsorbing(s));
                }
            }
        }
        if let Some(s) = parts.start_states.iter().find(|s| s.0 >= n) {
            return Err(MdpError::Config(format!("start state {} out of range", s.0)));
        }
        Ok(Self { parts })
    }

    pub fn num_states(&self) -> usize {
        self.parts.kinds.len()
    }

    pub fn states(&self) -> impl Iterator<Item = StateId> + '_ {
        (0..self.num_states()).map(StateId)
    }

    pub fn non_terminal_states(&self) -> impl Iterator<Item = StateId> + '_ {
        self.states().filter(|s| !self.is_terminal(*s))
    }

    pub fn kind(&self, s: StateId) -> StateKind {
        self.parts.kinds[s.0]
    }

    pub fn is_terminal(&self, s: StateId) -> bool {
        self.kind(s).is_terminal()
    }

    pub fn actions(&self, s: StateId) -> &[ActionId] {
        &self.parts.actions[s.0]
    }

    pub fn action_names(&self) -> &[String] {
        &self.parts.action_names
    }

    pub fn action_name(&self, a: ActionId) -> &str {
        &self.parts.action_names[a.0]
    }

    pub fn action_by_name(&self, name: &str) -> Option<ActionId> {
        self.parts.action_names.iter().position(|n| n == name).map(ActionId)
    }

    /// Position of `a` in the legal-action list of `s`.
    pub fn action_index(&self, s: StateId, a: ActionId) -> Option<usize> {
        self.actions(s).iter().position(|x| *x == a)
    }

    /// Outcomes by action position, terminals included.
    pub fn outcomes_at(&self, s: StateId, k: usize) -> &[Outcome] {
        &self.parts.outcomes[s.0][k]
    }

    /// Exhaustive outcome list of a non-terminal `(s, a)`.
    pub fn enumerate_outcomes(&self, s: StateId, a: ActionId) -> Result<&[Outcome], MdpError> {
        if s.0 >= self.num_states() {
            return Err(MdpError::Usage(format!("unknown state {}", s.0)));
        }
        if self.is_terminal(s) {
            return Err(MdpError::Usage(format!("state {} is terminal", s.0)));
        }
        let k = self
            .action_index(s, a)
            .ok_or_else(|| MdpError::Usage(format!("action {} is not legal in state {}", a.0, s.0)))?;
        Ok(self.outcomes_at(s, k))
    }

    pub fn gamma(&self) -> f64 {
        self.parts.gamma
    }

    pub fn start_states(&self) -> &[StateId] {
        &self.parts.start_states
    }

    pub fn grid(&self) -> Option<GridShape> {
        self.parts.grid
    }

    pub fn step_limit(&self) -> usize {
        self.parts.step_limit
    }

    pub fn parts(&self) -> &MdpParts {
        &self.parts
    }

    /// Same MDP with state `s` renamed to `perm[s]`. Grid layout is dropped.
    pub fn relabeled(&self, perm: &[usize]) -> Result<Self, MdpError> {
        let n = self.num_states();
        let mut seen = vec![false; n];
        if perm.len() != n || perm.iter().any(|&p| p >= n || std::mem::replace(&mut seen[p], true)) {
            return Err(MdpError::Usage("relabeling is not a permutation".into()));
        }
        let p = &self.parts;
        let mut kinds = vec![StateKind::NonTerminal; n];
        let mut actions = vec![Vec::new(); n];
        let mut outcomes = vec![Vec::new(); n];
        for s in 0..n {
            kinds[perm[s]] = p.kinds[s];
            actions[perm[s]] = p.actions[s].clone();
            outcomes[perm[s]] = p.outcomes[s]
                .iter()
                .map(|outs| {
                    outs.iter().map(|o| Outcome { next: StateId(perm[o.next.0]), ..*o }).collect()
                })
                .collect();
        }
        TabularMdp::new(MdpParts {
            kinds,
            action_names: p.action_names.clone(),
            actions,
            outcomes,
            gamma: p.gamma,
            start_states: p.start_states.iter().map(|s| StateId(perm[s.0])).collect(),
            grid: None,
            step_limit: p.step_limit,
        })
    }
}

/// Per-state action distribution, aligned with [`TabularMdp::actions`].
/// Terminal states carry an empty row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable {
    dist: Vec<Vec<f64>>,
}

impl PolicyTable {
    pub fn new(mdp: &TabularMdp, dist: Vec<Vec<f64>>) -> Result<Self, MdpError> {
        if dist.len() != mdp.num_states() {
            return Err(MdpError::Usage("policy does not cover every state".into()));
        }
        for s in mdp.states() {
            let row = &dist[s.0];
            if mdp.is_terminal(s) {
                if !row.is_empty() {
                    return Err(MdpError::Usage(format!("terminal state {} has a policy row", s.0)));
                }
                continue;
            }
            if row.len() != mdp.actions(s).len() {
                return Err(MdpError::Usage(format!("state {}: row length mismatch", s.0)));
            }
            let sum: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0 || !p.is_finite()) || (sum - 1.0).abs() > PROB_TOL {
                return Err(MdpError::Usage(format!("state {}: row is not a distribution", s.0)));
            }
        }
        Ok(Self { dist })
    }

    pub fn uniform(mdp: &TabularMdp) -> Self {
        let dist = mdp
            .states()
            .map(|s| {
                if mdp.is_terminal(s) {
                    Vec::new()
                } else {
                    let k = mdp.actions(s).len();
                    vec![1.0 / k as f64; k]
                }
            })
            .collect();
        Self { dist }
    }

    /// Point mass on `choice[s]` (an action position) at every non-terminal state.
    pub fn deterministic(mdp: &TabularMdp, choice: &[usize]) -> Result<Self, MdpError> {
        let dist = mdp
            .states()
            .map(|s| {
                if mdp.is_terminal(s) {
                    Vec::new()
                } else {
                    let mut row = vec![0.0; mdp.actions(s).len()];
                    if let Some(p) = row.get_mut(choice[s.0]) {
                        *p = 1.0;
                    }
                    row
                }
            })
            .collect();
        Self::new(mdp, dist)
    }

    /// Uniform over the given action positions per state (empty set → uniform over all).
    pub fn uniform_over(mdp: &TabularMdp, support: &[Vec<usize>]) -> Result<Self, MdpError> {
        let dist = mdp
            .states()
            .map(|s| {
                if mdp.is_terminal(s) {
                    return Vec::new();
                }
                let k = mdp.actions(s).len();
                let chosen = &support[s.0];
                if chosen.is_empty() {
                    return vec![1.0 / k as f64; k];
                }
                let mut row = vec![0.0; k];
                for &c in chosen {
                    row[c] = 1.0 / chosen.len() as f64;
                }
                row
            })
            .collect();
        Self::new(mdp, dist)
    }

    pub fn row(&self, s: StateId) -> &[f64] {
        &self.dist[s.0]
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.dist
    }

    /// Action positions carrying positive mass.
    pub fn support(&self, s: StateId) -> Vec<usize> {
        self.dist[s.0].iter().enumerate().filter(|(_, p)| **p > 0.0).map(|(k, _)| k).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericValueTable {
    pub values: Vec<f64>,
}

impl NumericValueTable {
    pub fn get(&self, s: StateId) -> f64 {
        self.values[s.0]
    }
}
