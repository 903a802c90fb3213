use serde::{Deserialize, Serialize};

use super::{build_frozenlake, build_gridworld, FrozenLakeSpec, GridWorldSpec, MdpError, TabularMdp};
use crate::textify::StateLexicon;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvKind {
    Gridworld,
    Frozenlake,
}

/// Environment description as loaded from JSON: `{"kind": "gridworld" | "frozenlake", ...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum EnvSpec {
    Gridworld(GridWorldSpec),
    Frozenlake(FrozenLakeSpec),
}

impl EnvSpec {
    pub fn kind(&self) -> EnvKind {
        match self {
            EnvSpec::Gridworld(_) => EnvKind::Gridworld,
            EnvSpec::Frozenlake(_) => EnvKind::Frozenlake,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        serde_json::from_str(text).map_err(|e| MdpError::Config(format!("bad environment spec: {e}")))
    }

    pub fn build(&self) -> Result<Environment, MdpError> {
        let (mdp, lexicon) = match self {
            EnvSpec::Gridworld(spec) => {
                let mdp = build_gridworld(spec)?;
                (mdp, StateLexicon::gridworld(spec)?)
            }
            EnvSpec::Frozenlake(spec) => {
                let mdp = build_frozenlake(spec)?;
                let shape = mdp.grid().expect("frozen lake is a grid");
                (mdp, StateLexicon::coordinates(shape))
            }
        };
        Ok(Environment { kind: self.kind(), mdp, lexicon })
    }
}

/// A built MDP together with its text rendering.
#[derive(Debug, Clone)]
pub struct Environment {
    pub kind: EnvKind,
    pub mdp: TabularMdp,
    pub lexicon: StateLexicon,
}
