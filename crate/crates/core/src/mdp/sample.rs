use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{ActionId, MdpError, PolicyTable, StateId, TabularMdp};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: StateId,
    pub action: ActionId,
    pub reward: f64,
    pub next: StateId,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySample {
    pub start: StateId,
    pub steps: Vec<Step>,
    /// Ended in a terminal state (as opposed to hitting the length cap).
    pub terminated: bool,
}

impl TrajectorySample {
    pub fn truncated(&self) -> bool {
        !self.terminated
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.steps.iter().rev().fold(0.0, |acc, st| st.reward + gamma * acc)
    }

    pub fn final_state(&self) -> StateId {
        self.steps.last().map_or(self.start, |s| s.next)
    }
}

pub(crate) fn pick(rng: &mut ChaCha8Rng, weights: impl Iterator<Item = f64>) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w <= 0.0 {
            continue;
        }
        acc += w;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Mixes a base seed with indices (iteration, state, ...) into an independent stream seed.
pub fn derive_seed(seed: u64, parts: &[u64]) -> u64 {
    // splitmix64 finalizer over each part
    parts.iter().fold(seed, |acc, &p| {
        let mut z = acc ^ p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    })
}

/// Rolls out `policy` from `s0` until a terminal state or `max_len` steps.
/// The same seed always yields the same trajectory.
pub fn sample_trajectory(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    s0: StateId,
    seed: u64,
    max_len: usize,
) -> Result<TrajectorySample, MdpError> {
    if s0.0 >= mdp.num_states() {
        return Err(MdpError::Usage(format!("unknown start state {}", s0.0)));
    }
    if max_len == 0 {
        return Err(MdpError::Usage("max_len must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut steps = Vec::new();
    let mut s = s0;
    while !mdp.is_terminal(s) && steps.len() < max_len {
        let k = pick(&mut rng, policy.row(s).iter().copied());
        let outs = mdp.outcomes_at(s, k);
        let o = outs[pick(&mut rng, outs.iter().map(|o| o.probability))];
        steps.push(Step { state: s, action: mdp.actions(s)[k], reward: o.reward, next: o.next });
        s = o.next;
    }
    Ok(TrajectorySample { start: s0, steps, terminated: mdp.is_terminal(s) })
}
