use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{ActionId, GridShape, MdpError, MdpParts, Outcome, StateId, StateKind, TabularMdp};

/// Action names in id order. The order also fixes rollout order in prompts.
pub const GRIDWORLD_ACTIONS: [&str; 4] = ["Go Up", "Move Left", "Go Down", "Move Right"];
const MOVES: [(isize, isize); 4] = [(-1, 0), (0, -1), (1, 0), (0, 1)];

const DEFAULT_LEXICON: [&str; 16] =
    ["f", "b", "k", "g", "z", "t", "m", "w", "r", "y", "q", "n", "j", "d", "e", "x"];

/// Deterministic shortest-path grid with a per-step penalty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridWorldSpec {
    pub width: usize,
    pub height: usize,
    pub terminal_cells: Vec<(usize, usize)>,
    pub step_penalty: f64,
    /// Row-major cell names.
    pub lexicon: Vec<String>,
    pub step_limit: usize,
}

impl Default for GridWorldSpec {
    fn default() -> Self {
        Self {
            width: 4,
            height: 4,
            terminal_cells: vec![(0, 0), (3, 3)],
            step_penalty: -1.0,
            lexicon: DEFAULT_LEXICON.iter().map(|s| s.to_string()).collect(),
            step_limit: 200,
        }
    }
}

impl GridWorldSpec {
    pub fn validate(&self) -> Result<(), MdpError> {
        if self.width == 0 || self.height == 0 {
            return Err(MdpError::Config("grid must have at least one cell".into()));
        }
        if self.step_penalty.is_nan() || self.step_penalty >= 0.0 {
            return Err(MdpError::Config(format!(
                "step penalty must be negative, got {}",
                self.step_penalty
            )));
        }
        let cells = self.width * self.height;
        if self.lexicon.len() != cells {
            return Err(MdpError::Config(format!(
                "lexicon has {} names for {cells} cells",
                self.lexicon.len()
            )));
        }
        let mut seen = HashSet::new();
        for name in &self.lexicon {
            if name.is_empty() || !seen.insert(name) {
                return Err(MdpError::Config(format!("lexicon name '{name}' is empty or repeated")));
            }
        }
        if let Some(c) = self.terminal_cells.iter().find(|(r, c)| *r >= self.height || *c >= self.width) {
            return Err(MdpError::Config(format!("terminal cell {c:?} is off the grid")));
        }
        Ok(())
    }
}

pub fn build_gridworld(spec: &GridWorldSpec) -> Result<TabularMdp, MdpError> {
    spec.validate()?;
    let shape = GridShape { rows: spec.height, cols: spec.width };
    let n = spec.width * spec.height;
    let terminal: HashSet<(usize, usize)> = spec.terminal_cells.iter().copied().collect();
    let mut kinds = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    for s in 0..n {
        let (row, col) = shape.cell(StateId(s));
        let is_terminal = terminal.contains(&(row, col));
        kinds.push(if is_terminal { StateKind::Goal } else { StateKind::NonTerminal });
        let per_action = MOVES
            .iter()
            .map(|&(dr, dc)| {
                if is_terminal {
                    return vec![Outcome { next: StateId(s), probability: 1.0, reward: 0.0, terminal: true }];
                }
                let r = row as isize + dr;
                let c = col as isize + dc;
                let (nr, nc) = if r < 0 || c < 0 || r >= spec.height as isize || c >= spec.width as isize {
                    (row, col)
                } else {
                    (r as usize, c as usize)
                };
                vec![Outcome {
                    next: shape.state(nr, nc),
                    probability: 1.0,
                    reward: spec.step_penalty,
                    terminal: terminal.contains(&(nr, nc)),
                }]
            })
            .collect();
        outcomes.push(per_action);
    }
    let start_states = (0..n).map(StateId).filter(|s| !kinds[s.0].is_terminal()).collect();
    TabularMdp::new(MdpParts {
        kinds,
        action_names: GRIDWORLD_ACTIONS.iter().map(|s| s.to_string()).collect(),
        actions: vec![(0..4).map(ActionId).collect(); n],
        outcomes,
        gamma: 1.0,
        start_states,
        grid: Some(shape),
        step_limit: spec.step_limit,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_grid_has_fourteen_live_states() {
        let mdp = build_gridworld(&GridWorldSpec::default()).unwrap();
        assert_eq!(mdp.num_states(), 16);
        assert_eq!(mdp.non_terminal_states().count(), 14);
        assert!(mdp.states().all(|s| mdp.actions(s).len() == 4));
        assert_eq!(mdp.gamma(), 1.0);
    }

    #[test]
    fn single_terminal_cell() {
        let spec = GridWorldSpec {
            width: 1,
            height: 1,
            terminal_cells: vec![(0, 0)],
            lexicon: vec!["a".into()],
            ..Default::default()
        };
        let mdp = build_gridworld(&spec).unwrap();
        assert_eq!(mdp.non_terminal_states().count(), 0);
    }

    #[test]
    fn up_from_top_row_stays_put() {
        let mdp = build_gridworld(&GridWorldSpec::default()).unwrap();
        let k = StateId(2); // (0,2)
        let outs = mdp.enumerate_outcomes(k, ActionId(0)).unwrap();
        assert_eq!(outs, &[Outcome { next: k, probability: 1.0, reward: -1.0, terminal: false }]);
    }

    #[test]
    fn left_from_b_reaches_terminal() {
        let mdp = build_gridworld(&GridWorldSpec::default()).unwrap();
        let outs = mdp.enumerate_outcomes(StateId(1), ActionId(1)).unwrap();
        assert_eq!(outs, &[Outcome { next: StateId(0), probability: 1.0, reward: -1.0, terminal: true }]);
    }

    #[test]
    fn rejects_malformed_specs() {
        let mut s = GridWorldSpec::default();
        s.step_penalty = 0.0;
        assert!(build_gridworld(&s).is_err());
        let mut s = GridWorldSpec::default();
        s.lexicon[3] = "f".into();
        assert!(build_gridworld(&s).is_err());
        let mut s = GridWorldSpec::default();
        s.lexicon.pop();
        assert!(build_gridworld(&s).is_err());
    }
}
