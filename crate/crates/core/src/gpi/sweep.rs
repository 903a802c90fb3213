use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::EstimateMode;
use crate::aggregate::{AggregateError, Aggregator, ConceptScore, Improver};
use crate::exec::map_bounded;
use crate::language::{
    action_evals, language_q_estimate, mc_language_estimate, one_step_outcomes, policy_weighted,
    td_language_estimate, EstimateError, LanguageValue, LanguageValueTable, OneStepOutcome,
    StateContext, TaskInstruction, ValueSnapshot,
};
use crate::mdp::{derive_seed, pick, sample_trajectory, Environment, MdpError, PolicyTable, StateId};

/// Q^L per state, aligned with the state's legal actions; empty for terminals.
pub type QTable = Vec<Vec<LanguageValue>>;

#[derive(Debug, Clone)]
pub struct SweepOptions {
    pub estimate: EstimateMode,
    pub compute_action_values: bool,
    pub parallelism: usize,
    /// Shuffles the order in which states are processed.
    pub visit_order_seed: Option<u64>,
    pub task: TaskInstruction,
}

#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub table: LanguageValueTable,
    pub q_values: Option<QTable>,
}

#[derive(Debug, thiserror::Error)]
#[error("{source}")]
pub struct SweepError {
    pub state: String,
    #[source]
    pub source: EstimateError,
    /// The input table with every state that did succeed updated.
    pub partial: LanguageValueTable,
}

fn visit_order(env: &Environment, seed: Option<u64>, iteration: usize) -> Vec<StateId> {
    let mut states: Vec<StateId> = env.mdp.non_terminal_states().collect();
    if let Some(seed) = seed {
        states.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(seed, &[iteration as u64])));
    }
    states
}

fn sampled_outcomes(
    all: &[OneStepOutcome],
    row: &[f64],
    k: usize,
    seed: u64,
) -> Vec<OneStepOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..k)
        .map(|_| {
            let a = pick(&mut rng, row.iter().copied());
            let outs: Vec<&OneStepOutcome> = all.iter().filter(|o| o.action_index == a).collect();
            let o = outs[pick(&mut rng, outs.iter().map(|o| o.probability))];
            OneStepOutcome { weight: 1.0 / k as f64, ..o.clone() }
        })
        .collect()
}

type StateResult = Result<(LanguageValue, Option<Vec<LanguageValue>>), EstimateError>;

fn evaluate_state(
    env: &Environment,
    policy: &PolicyTable,
    snap: &ValueSnapshot,
    agg: &dyn Aggregator,
    opts: &SweepOptions,
    s: StateId,
) -> StateResult {
    let ctx = StateContext::new(env, s, &opts.task);
    let wrap = |e: crate::textify::TextError| EstimateError {
        state: ctx.state_name.clone(),
        source: AggregateError::Text(e),
    };
    let all = one_step_outcomes(env, s, snap).map_err(wrap)?;
    let next_iteration = snap.iteration() + 1;
    let q = if opts.compute_action_values {
        let row = (0..env.mdp.actions(s).len())
            .map(|k| {
                let outs: Vec<OneStepOutcome> = all.iter().filter(|o| o.action_index == k).cloned().collect();
                language_q_estimate(&ctx, &outs, agg)
            })
            .collect::<Result<Vec<_>, _>>()?;
        Some(row)
    } else {
        None
    };
    let evals = q.as_ref().map(|row| action_evals(env, s, row, policy)).unwrap_or_default();
    let v = match &opts.estimate {
        EstimateMode::TdExhaustive => {
            td_language_estimate(&ctx, &policy_weighted(&all, policy.row(s)), &evals, agg)?
        }
        EstimateMode::TdSampled { k, seed } => {
            let seed = derive_seed(*seed, &[next_iteration as u64, s.0 as u64]);
            td_language_estimate(&ctx, &sampled_outcomes(&all, policy.row(s), *k, seed), &evals, agg)?
        }
        EstimateMode::Mc { k, seed } => {
            let trajectories = (0..*k)
                .map(|i| {
                    let seed = derive_seed(*seed, &[next_iteration as u64, s.0 as u64, i as u64]);
                    sample_trajectory(&env.mdp, policy, s, seed, env.mdp.step_limit())
                })
                .collect::<Result<Vec<_>, MdpError>>()
                .map_err(|e| EstimateError {
                    state: ctx.state_name.clone(),
                    source: AggregateError::Usage(e.to_string()),
                })?;
            mc_language_estimate(env, &ctx, &trajectories, next_iteration, agg)?
        }
    };
    Ok((v, q))
}

/// One synchronous evaluation sweep: every non-terminal state is re-estimated
/// from `snap`, and the results replace the table at once.
pub fn evaluation_sweep(
    env: &Environment,
    policy: &PolicyTable,
    snap: &ValueSnapshot,
    agg: &dyn Aggregator,
    opts: &SweepOptions,
) -> Result<SweepOutput, SweepError> {
    let next_iteration = snap.iteration() + 1;
    let order = visit_order(env, opts.visit_order_seed, next_iteration);
    let results = map_bounded(&order, opts.parallelism, |&s| (s, evaluate_state(env, policy, snap, agg, opts, s)));

    let mut results = results;
    results.sort_by_key(|(s, _)| *s);
    let mut table = (**snap).clone();
    let mut updates = Vec::with_capacity(results.len());
    let mut q_values: Option<QTable> =
        opts.compute_action_values.then(|| vec![Vec::new(); env.mdp.num_states()]);
    let mut failure = None;
    for (s, r) in results {
        match r {
            Ok((v, q)) => {
                updates.push((s, v));
                if let (Some(table), Some(row)) = (q_values.as_mut(), q) {
                    table[s.0] = row;
                }
            }
            Err(e) if failure.is_none() => failure = Some(e),
            Err(e) => log::warn!("{e}"),
        }
    }
    table.commit(updates, next_iteration).expect("sweep only writes non-terminal states");
    if let Some(source) = failure {
        return Err(SweepError { state: source.state.clone(), source, partial: table });
    }
    Ok(SweepOutput { table, q_values })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThoughtRecord {
    pub thought: String,
    pub distribution: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scores: Option<Vec<ConceptScore>>,
}

#[derive(Debug, thiserror::Error)]
#[error("state {state}: {source}")]
pub struct ImprovementError {
    pub state: String,
    #[source]
    pub source: AggregateError,
}

fn checked_distribution(d: Vec<f64>, n: usize) -> Result<Vec<f64>, String> {
    if d.len() != n {
        return Err(format!("distribution has {} entries for {n} actions", d.len()));
    }
    let sum: f64 = d.iter().sum();
    if d.iter().any(|p| !p.is_finite() || *p < 0.0) || !(sum > 0.0) {
        return Err("distribution is not on the simplex".into());
    }
    Ok(d.into_iter().map(|p| p / sum).collect())
}

/// Applies the improver at every non-terminal state.
pub fn improvement_sweep(
    env: &Environment,
    q: &QTable,
    policy: &PolicyTable,
    improver: &dyn Improver,
    task: &TaskInstruction,
    parallelism: usize,
) -> Result<(PolicyTable, Vec<Option<ThoughtRecord>>), ImprovementError> {
    let states: Vec<StateId> = env.mdp.non_terminal_states().collect();
    let results = map_bounded(&states, parallelism, |&s| {
        let ctx = StateContext::new(env, s, task);
        let fail = |source| ImprovementError { state: ctx.state_name.clone(), source };
        if q[s.0].len() != env.mdp.actions(s).len() {
            return Err(fail(AggregateError::Usage("action values missing".into())));
        }
        let evals = action_evals(env, s, &q[s.0], policy);
        let imp = improver.improve(&ctx, &evals).map_err(fail)?;
        let distribution = checked_distribution(imp.distribution, evals.len())
            .map_err(|e| fail(AggregateError::Usage(e)))?;
        Ok((s, ThoughtRecord { thought: imp.thought, distribution, scores: imp.scores }))
    });
    let mut rows = vec![Vec::new(); env.mdp.num_states()];
    let mut thoughts = vec![None; env.mdp.num_states()];
    for r in results {
        let (s, rec) = r?;
        rows[s.0] = rec.distribution.clone();
        thoughts[s.0] = Some(rec);
    }
    let policy = PolicyTable::new(&env.mdp, rows).map_err(|e| ImprovementError {
        state: "-".into(),
        source: AggregateError::Usage(e.to_string()),
    })?;
    Ok((policy, thoughts))
}
