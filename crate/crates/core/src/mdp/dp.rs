use serde::{Deserialize, Serialize};

use super::{MdpError, NumericValueTable, PolicyTable, StateId, TabularMdp};

/// Sweep cap shared by every DP loop. Hitting it is an error.
pub const DP_SWEEP_CAP: usize = 100_000;

/// `r + γ V(s')` in expectation over the outcomes of action position `k`.
pub fn q_value(mdp: &TabularMdp, values: &[f64], s: StateId, k: usize) -> f64 {
    mdp.outcomes_at(s, k)
        .iter()
        .map(|o| o.probability * (o.reward + mdp.gamma() * values[o.next.0]))
        .sum()
}

/// Iterates the Bellman expectation backup from zero until the sup-norm
/// residual drops below `tol`.
pub fn exact_policy_evaluation(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tol: f64,
) -> Result<NumericValueTable, MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::Usage(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..DP_SWEEP_CAP {
        residual = 0.0;
        for s in mdp.states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let v: f64 = policy
                .row(s)
                .iter()
                .enumerate()
                .filter(|(_, p)| **p > 0.0)
                .map(|(k, p)| p * q_value(mdp, &values, s, k))
                .sum();
            residual = residual.max((v - values[s.0]).abs());
            next[s.0] = v;
        }
        if residual < tol {
            return Ok(NumericValueTable { values });
        }
        if !residual.is_finite() {
            break;
        }
        std::mem::swap(&mut values, &mut next);
    }
    Err(MdpError::Divergence { cap: DP_SWEEP_CAP, residual })
}

/// Value iteration with a greedy policy that spreads mass uniformly over
/// actions tied (within `max(tol, 1e-9)`) at the maximum.
pub fn value_iteration(
    mdp: &TabularMdp,
    tol: f64,
) -> Result<(NumericValueTable, PolicyTable), MdpError> {
    if !(tol > 0.0) {
        return Err(MdpError::Usage(format!("tolerance must be positive, got {tol}")));
    }
    let n = mdp.num_states();
    let mut values = vec![0.0; n];
    let mut next = vec![0.0; n];
    let mut converged = false;
    let mut delta = f64::INFINITY;
    for _ in 0..DP_SWEEP_CAP {
        delta = 0.0;
        for s in mdp.states() {
            if mdp.is_terminal(s) {
                continue;
            }
            let best = (0..mdp.actions(s).len())
                .map(|k| q_value(mdp, &values, s, k))
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((best - values[s.0]).abs());
            next[s.0] = best;
        }
        std::mem::swap(&mut values, &mut next);
        if delta < tol {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(MdpError::Divergence { cap: DP_SWEEP_CAP, residual: delta });
    }
    let tie = tol.max(1e-9);
    let support: Vec<Vec<usize>> = mdp
        .states()
        .map(|s| {
            if mdp.is_terminal(s) {
                return Vec::new();
            }
            let qs: Vec<f64> =
                (0..mdp.actions(s).len()).map(|k| q_value(mdp, &values, s, k)).collect();
            let best = qs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            qs.iter().enumerate().filter(|(_, q)| **q >= best - tie).map(|(k, _)| k).collect()
        })
        .collect();
    let policy = PolicyTable::uniform_over(mdp, &support)?;
    Ok((NumericValueTable { values }, policy))
}

/// Per-state policy values plus their mean over all states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_state_value: Vec<f64>,
    pub average_value: f64,
    pub iteration_index: usize,
}

pub const METRICS_TOL: f64 = 1e-10;

pub fn policy_value_metrics(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    iteration_index: usize,
) -> Result<MetricsReport, MdpError> {
    let table = exact_policy_evaluation(mdp, policy, METRICS_TOL)?;
    let average_value = if table.values.is_empty() {
        0.0
    } else {
        table.values.iter().sum::<f64>() / table.values.len() as f64
    };
    Ok(MetricsReport { per_state_value: table.values, average_value, iteration_index })
}
