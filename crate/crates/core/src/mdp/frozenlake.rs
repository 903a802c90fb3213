use serde::{Deserialize, Serialize};

use super::{
    ActionId, GridShape, MdpError, MdpParts, Outcome, StateId, StateKind, TabularMdp, PROB_TOL,
};

/// Action names in id order (left, down, right, up).
pub const FROZENLAKE_ACTIONS: [&str; 4] = ["Move left", "Move down", "Move right", "Move up"];
const MOVES: [(isize, isize); 4] = [(0, -1), (1, 0), (0, 1), (-1, 0)];

pub const DEFAULT_MAP: &str = "SFFF\nFHFH\nFFFH\nHFFG";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Tile {
    Start,
    Frozen,
    Hole,
    Goal,
}

/// Probability of moving as intended and of slipping to each perpendicular side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlipModel {
    pub forward: f64,
    pub perpendicular: f64,
}

impl Default for SlipModel {
    fn default() -> Self {
        Self { forward: 1.0 / 3.0, perpendicular: 1.0 / 3.0 }
    }
}

impl SlipModel {
    pub const DETERMINISTIC: SlipModel = SlipModel { forward: 1.0, perpendicular: 0.0 };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FrozenLakeSpec {
    /// One row per line (`/` is also accepted as a row separator) over `S F H G`.
    pub map: String,
    pub slip: SlipModel,
    pub goal_reward: f64,
    pub gamma: f64,
    pub step_limit: usize,
}

impl Default for FrozenLakeSpec {
    fn default() -> Self {
        Self {
            map: DEFAULT_MAP.to_string(),
            slip: SlipModel::default(),
            goal_reward: 1.0,
            gamma: 1.0,
            step_limit: 200,
        }
    }
}

impl FrozenLakeSpec {
    /// Parses the map into rows of tiles, naming the first offending row on error.
    pub fn tiles(&self) -> Result<Vec<Vec<Tile>>, MdpError> {
        let rows: Vec<&str> = self
            .map
            .split(['\n', '/'])
            .map(str::trim)
            .filter(|r| !r.is_empty())
            .collect();
        if rows.is_empty() {
            return Err(MdpError::Config("map is empty".into()));
        }
        let width = rows[0].chars().count();
        let mut grid = Vec::with_capacity(rows.len());
        for (i, row) in rows.iter().enumerate() {
            if row.chars().count() != width {
                return Err(MdpError::Config(format!(
                    "map row {i} ('{row}') has {} cells, expected {width}",
                    row.chars().count()
                )));
            }
            let tiles = row
                .chars()
                .map(|ch| match ch {
                    'S' => Ok(Tile::Start),
                    'F' => Ok(Tile::Frozen),
                    'H' => Ok(Tile::Hole),
                    'G' => Ok(Tile::Goal),
                    other => Err(MdpError::Config(format!(
                        "map row {i} ('{row}') has unknown tile '{other}'"
                    ))),
                })
                .collect::<Result<Vec<_>, _>>()?;
            grid.push(tiles);
        }
        let count = |t: Tile| grid.iter().flatten().filter(|x| **x == t).count();
        if count(Tile::Start) != 1 {
            return Err(MdpError::Config(format!(
                "map needs exactly one start tile, found {}",
                count(Tile::Start)
            )));
        }
        if count(Tile::Goal) == 0 {
            return Err(MdpError::Config("map has no goal tile".into()));
        }
        Ok(grid)
    }

    pub fn validate(&self) -> Result<Vec<Vec<Tile>>, MdpError> {
        let SlipModel { forward, perpendicular } = self.slip;
        if forward < 0.0 || perpendicular < 0.0 || (forward + 2.0 * perpendicular - 1.0).abs() > PROB_TOL {
            return Err(MdpError::Config(format!(
                "slip probabilities {forward} + 2 x {perpendicular} do not sum to 1"
            )));
        }
        if self.step_limit == 0 {
            return Err(MdpError::Config("step limit must be positive".into()));
        }
        self.tiles()
    }
}

pub fn build_frozenlake(spec: &FrozenLakeSpec) -> Result<TabularMdp, MdpError> {
    let tiles = spec.validate()?;
    let shape = GridShape { rows: tiles.len(), cols: tiles[0].len() };
    let n = shape.rows * shape.cols;
    let tile = |s: StateId| {
        let (r, c) = shape.cell(s);
        tiles[r][c]
    };
    let kind = |t: Tile| match t {
        Tile::Hole => StateKind::Hole,
        Tile::Goal => StateKind::Goal,
        Tile::Start | Tile::Frozen => StateKind::NonTerminal,
    };
    let step = |s: StateId, dir: usize| {
        let (r, c) = shape.cell(s);
        let (dr, dc) = MOVES[dir];
        let (nr, nc) = (r as isize + dr, c as isize + dc);
        if nr < 0 || nc < 0 || nr >= shape.rows as isize || nc >= shape.cols as isize {
            s
        } else {
            shape.state(nr as usize, nc as usize)
        }
    };

    let mut kinds = Vec::with_capacity(n);
    let mut outcomes = Vec::with_capacity(n);
    let mut start = StateId(0);
    for s in (0..n).map(StateId) {
        let k = kind(tile(s));
        kinds.push(k);
        if tile(s) == Tile::Start {
            start = s;
        }
        let per_action = (0..4)
            .map(|dir| {
                if k.is_terminal() {
                    return vec![Outcome { next: s, probability: 1.0, reward: 0.0, terminal: true }];
                }
                // perpendicular directions are the neighbours in the cyclic order
                let weighted = [
                    ((dir + 3) % 4, spec.slip.perpendicular),
                    (dir, spec.slip.forward),
                    ((dir + 1) % 4, spec.slip.perpendicular),
                ];
                let mut outs: Vec<Outcome> = Vec::with_capacity(3);
                for (d, p) in weighted {
                    if p == 0.0 {
                        continue;
                    }
                    let next = step(s, d);
                    if let Some(existing) = outs.iter_mut().find(|o| o.next == next) {
                        existing.probability += p;
                        continue;
                    }
                    let nk = kind(tile(next));
                    outs.push(Outcome {
                        next,
                        probability: p,
                        reward: if nk == StateKind::Goal { spec.goal_reward } else { 0.0 },
                        terminal: nk.is_terminal(),
                    });
                }
                outs
            })
            .collect();
        outcomes.push(per_action);
    }
    TabularMdp::new(MdpParts {
        kinds,
        action_names: FROZENLAKE_ACTIONS.iter().map(|s| s.to_string()).collect(),
        actions: vec![(0..4).map(ActionId).collect(); n],
        outcomes,
        gamma: spec.gamma,
        start_states: vec![start],
        grid: Some(shape),
        step_limit: spec.step_limit,
    })
}
