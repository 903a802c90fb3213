mod common;

use common::*;
use nlrl_core::aggregate::{score_concepts, select_best, ConceptRank, DeterministicAggregator};
use nlrl_core::gpi::{evaluation_sweep, EstimateMode, QTable, SweepOptions, SweepOutput};
use nlrl_core::language::{init_value_table, snapshot, LanguageValueTable, TaskInstruction};
use nlrl_core::mdp::{value_iteration, Environment, PolicyTable, StateId};
use nlrl_core::textify::is_none_text;

fn options(env: &Environment, estimate: EstimateMode, parallelism: usize, seed: Option<u64>) -> SweepOptions {
    SweepOptions {
        estimate,
        compute_action_values: true,
        parallelism,
        visit_order_seed: seed,
        task: TaskInstruction::default_for(env.kind),
    }
}

fn sweeps(env: &Environment, n: usize, opts: &SweepOptions) -> Vec<SweepOutput> {
    let policy = PolicyTable::uniform(&env.mdp);
    let mut table = init_value_table(env);
    let mut out = Vec::new();
    for _ in 0..n {
        let step = evaluation_sweep(env, &policy, &snapshot(&table), &DeterministicAggregator, opts).unwrap();
        table = step.table.clone();
        out.push(step);
    }
    out
}

fn argmax_set(q: &QTable, s: StateId) -> Vec<usize> {
    let scores: Vec<_> = q[s.0]
        .iter()
        .map(|v| score_concepts(v.content.concepts().expect("concept evaluation")))
        .collect();
    select_best(&scores, ConceptRank::ordinal)
}

fn same_content(env: &Environment, a: &LanguageValueTable, b: &LanguageValueTable) -> bool {
    env.mdp.states().all(|s| a.get(s).content == b.get(s).content)
}

#[test]
fn four_sweeps_recover_the_greedy_action_sets() {
    let env = gridworld();
    let (_, greedy) = value_iteration(&env.mdp, 1e-12).unwrap();
    let out = sweeps(&env, 6, &options(&env, EstimateMode::TdExhaustive, 1, None));
    let q = out[3].q_values.as_ref().unwrap();
    for s in env.mdp.non_terminal_states() {
        assert_eq!(argmax_set(q, s), greedy.support(s), "state {}", env.lexicon.render(s));
    }
    assert!(same_content(&env, &out[3].table, &out[4].table));
    assert!(same_content(&env, &out[4].table, &out[5].table));
}

#[test]
fn goal_information_spreads_one_step_per_sweep() {
    let env = gridworld();
    let dist = grid_bfs(4, 4, &[(0, 0), (3, 3)]);
    let out = sweeps(&env, 3, &options(&env, EstimateMode::TdExhaustive, 1, None));
    for (k, step) in out.iter().enumerate() {
        for s in env.mdp.non_terminal_states() {
            let c = step.table.get(s).content.concepts().unwrap();
            assert_eq!(!is_none_text(&c.safest_path), dist[s.0] <= k + 1, "sweep {} state {}", k + 1, env.lexicon.render(s));
        }
    }
}

#[test]
fn state_g_finds_both_optimal_moves() {
    let env = gridworld();
    let out = sweeps(&env, 3, &options(&env, EstimateMode::TdExhaustive, 1, None));
    let g = env.lexicon.lookup("(g)").unwrap();
    let c = out[2].table.get(g).content.concepts().unwrap().clone();
    assert!(c.final_evaluation.contains("Move Left and Go Down"), "{}", c.final_evaluation);
}

#[test]
fn visit_order_and_parallelism_do_not_change_results() {
    for env in [gridworld(), frozenlake()] {
        let base = sweeps(&env, 4, &options(&env, EstimateMode::TdExhaustive, 1, None));
        for (par, seed) in [(4, None), (1, Some(7)), (8, Some(99))] {
            let other = sweeps(&env, 4, &options(&env, EstimateMode::TdExhaustive, par, seed));
            for (a, b) in base.iter().zip(&other) {
                assert_eq!(a.table.to_json(&env.lexicon), b.table.to_json(&env.lexicon));
            }
        }
    }
}

#[test]
fn sampled_modes_are_reproducible() {
    let env = gridworld();
    for mode in [EstimateMode::TdSampled { k: 3, seed: 5 }, EstimateMode::Mc { k: 4, seed: 5 }] {
        let a = sweeps(&env, 2, &options(&env, mode.clone(), 1, None));
        let b = sweeps(&env, 2, &options(&env, mode.clone(), 4, Some(3)));
        assert_eq!(a[1].table.to_json(&env.lexicon), b[1].table.to_json(&env.lexicon), "{mode:?}");
    }
}

#[test]
fn monte_carlo_estimates_mention_the_goal_for_neighbours() {
    let env = gridworld();
    let out = sweeps(&env, 1, &options(&env, EstimateMode::Mc { k: 8, seed: 1 }, 2, None));
    let b = env.lexicon.lookup("(b)").unwrap();
    let c = out[0].table.get(b).content.concepts().unwrap();
    assert!(!is_none_text(&c.safest_path), "{c:?}");
}

#[test]
fn terminal_entries_never_change() {
    let env = frozenlake();
    let init = init_value_table(&env);
    let out = sweeps(&env, 3, &options(&env, EstimateMode::TdExhaustive, 2, None));
    for s in env.mdp.states().filter(|s| env.mdp.is_terminal(*s)) {
        assert_eq!(out[2].table.get(s), init.get(s));
    }
}
