use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use nlrl_core::aggregate::DeterministicAggregator;
use nlrl_core::gpi::{evaluation_sweep, EstimateMode, SweepOptions};
use nlrl_core::language::{init_value_table, snapshot, TaskInstruction};
use nlrl_core::mdp::{EnvSpec, Environment, FrozenLakeSpec, GridWorldSpec, PolicyTable};

fn sweeps(env: &Environment, estimate: &EstimateMode, parallelism: usize, n: usize) {
    let policy = PolicyTable::uniform(&env.mdp);
    let opts = SweepOptions {
        estimate: estimate.clone(),
        compute_action_values: true,
        parallelism,
        visit_order_seed: None,
        task: TaskInstruction::default_for(env.kind),
    };
    let mut table = init_value_table(env);
    for _ in 0..n {
        table = evaluation_sweep(env, &policy, &snapshot(&table), &DeterministicAggregator, &opts).unwrap().table;
    }
}

fn bench(c: &mut Criterion) {
    let envs = [
        ("gridworld", EnvSpec::Gridworld(GridWorldSpec::default()).build().unwrap()),
        ("frozenlake", EnvSpec::Frozenlake(FrozenLakeSpec::default()).build().unwrap()),
    ];
    let modes = [("td", EstimateMode::TdExhaustive), ("mc16", EstimateMode::Mc { k: 16, seed: 1 })];
    for (mode_name, mode) in &modes {
        let mut group = c.benchmark_group(format!("four_sweeps_{mode_name}"));
        for (env_name, env) in &envs {
            for (label, parallelism) in [("sequential", 1), ("parallel", 4)] {
                group.bench_with_input(BenchmarkId::new(label, env_name), env, |b, env| {
                    b.iter(|| sweeps(env, mode, parallelism, 4))
                });
            }
        }
        group.finish();
    }
}

criterion_group! {
    name = benches;
    config = Criterion::default().sample_size(20);
    targets = bench
}
criterion_main!(benches);
