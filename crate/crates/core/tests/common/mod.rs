#![allow(dead_code)]

use std::collections::VecDeque;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use nlrl_core::mdp::{
    ActionId, EnvSpec, Environment, FrozenLakeSpec, GridWorldSpec, MdpParts, Outcome, PolicyTable,
    StateId, StateKind, TabularMdp,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn gridworld() -> Environment {
    EnvSpec::Gridworld(GridWorldSpec::default()).build().unwrap()
}

pub fn frozenlake() -> Environment {
    EnvSpec::Frozenlake(FrozenLakeSpec::default()).build().unwrap()
}

/// Solves `(I - γ P_π) v = r_π` over the non-terminal states directly.
pub fn linear_solve(mdp: &TabularMdp, policy: &PolicyTable) -> Vec<f64> {
    let live: Vec<StateId> = mdp.non_terminal_states().collect();
    let index = |s: StateId| live.iter().position(|t| *t == s);
    let n = live.len();
    let mut a = DMatrix::<f64>::identity(n, n);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &s) in live.iter().enumerate() {
        for (k, p) in policy.row(s).iter().enumerate() {
            for o in mdp.outcomes_at(s, k) {
                b[i] += p * o.probability * o.reward;
                if let Some(j) = index(o.next) {
                    a[(i, j)] -= mdp.gamma() * p * o.probability;
                }
            }
        }
    }
    let x = a.lu().solve(&b).expect("policy terminates");
    let mut v = vec![0.0; mdp.num_states()];
    for (i, s) in live.iter().enumerate() {
        v[s.0] = x[i];
    }
    v
}

/// Shortest number of moves to any terminal cell of the default 4x4 gridworld,
/// walking on the grid itself.
pub fn grid_bfs(width: usize, height: usize, terminals: &[(usize, usize)]) -> Vec<usize> {
    let mut dist = vec![usize::MAX; width * height];
    let mut queue = VecDeque::new();
    for &(r, c) in terminals {
        dist[r * width + c] = 0;
        queue.push_back((r, c));
    }
    while let Some((r, c)) = queue.pop_front() {
        let d = dist[r * width + c];
        let mut next = Vec::new();
        if r > 0 {
            next.push((r - 1, c));
        }
        if c > 0 {
            next.push((r, c - 1));
        }
        if r + 1 < height {
            next.push((r + 1, c));
        }
        if c + 1 < width {
            next.push((r, c + 1));
        }
        for (nr, nc) in next {
            if dist[nr * width + nc] == usize::MAX {
                dist[nr * width + nc] = d + 1;
                queue.push_back((nr, nc));
            }
        }
    }
    dist
}

/// Random MDP with `live` non-terminal states, one absorbing terminal and
/// up to `max_actions` actions per state.
pub fn random_mdp(seed: u64, live: usize, max_actions: usize) -> TabularMdp {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = live + 1;
    let terminal = StateId(live);
    let mut kinds = vec![StateKind::NonTerminal; live];
    kinds.push(StateKind::Goal);
    let mut actions = Vec::new();
    let mut outcomes = Vec::new();
    for s in 0..n {
        if s == live {
            actions.push(vec![ActionId(0)]);
            outcomes.push(vec![vec![Outcome { next: terminal, probability: 1.0, reward: 0.0, terminal: true }]]);
            continue;
        }
        let na = rng.random_range(1..=max_actions);
        actions.push((0..na).map(ActionId).collect());
        let per_action = (0..na)
            .map(|_| {
                let targets: Vec<usize> = (0..rng.random_range(1..=3)).map(|_| rng.random_range(0..n)).collect();
                let weights: Vec<f64> = targets.iter().map(|_| rng.random_range(0.1..1.0)).collect();
                let total: f64 = weights.iter().sum();
                let mut outs: Vec<Outcome> = Vec::new();
                for (t, w) in targets.into_iter().zip(weights) {
                    let reward = rng.random_range(-1.0..1.0);
                    match outs.iter_mut().find(|o| o.next.0 == t) {
                        Some(o) => o.probability += w / total,
                        None => outs.push(Outcome { next: StateId(t), probability: w / total, reward, terminal: t == live }),
                    }
                }
                outs
            })
            .collect();
        outcomes.push(per_action);
    }
    TabularMdp::new(MdpParts {
        kinds,
        action_names: (0..max_actions).map(|a| format!("a{a}")).collect(),
        actions,
        outcomes,
        gamma: 0.9,
        start_states: vec![StateId(0)],
        grid: None,
        step_limit: 100,
    })
    .unwrap()
}

/// State-wise maximum of the value over every deterministic policy.
pub fn brute_force_optimum(mdp: &TabularMdp) -> Vec<f64> {
    let counts: Vec<usize> = mdp.states().map(|s| mdp.actions(s).len()).collect();
    let mut choice = vec![0usize; counts.len()];
    let mut best = vec![f64::NEG_INFINITY; counts.len()];
    loop {
        let policy = PolicyTable::deterministic(mdp, &choice).unwrap();
        for (b, v) in best.iter_mut().zip(linear_solve(mdp, &policy)) {
            *b = b.max(v);
        }
        let mut i = 0;
        loop {
            if i == choice.len() {
                return best;
            }
            choice[i] += 1;
            if choice[i] < counts[i] {
                break;
            }
            choice[i] = 0;
            i += 1;
        }
    }
}

pub fn read(path: &Path) -> String {
    std::fs::read_to_string(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

pub fn golden(name: &str) -> String {
    read(&Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name))
}

pub mod llm {
    use std::path::Path;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    use nlrl_core::aggregate::{state_value_prompt, LlmSettings};
    use nlrl_core::language::{
        init_value_table, one_step_outcomes, policy_weighted, snapshot, LanguageValue, LanguageValueTable,
        Provenance, StateContext, TaskInstruction, ValueContent,
    };
    use nlrl_core::mdp::{Environment, PolicyTable, StateId};
    use nlrl_gateway::{
        ChatRequest, ChatTransport, TranscriptEntry, TransportError, TransportReply, TRANSCRIPT_FILE,
    };

    /// Answers every request with `reply(request, call_number)`.
    pub struct ScriptedTransport<F> {
        pub reply: F,
        pub calls: Arc<AtomicUsize>,
    }

    impl<F: Fn(&ChatRequest, usize) -> String + Send + Sync> ScriptedTransport<F> {
        pub fn new(reply: F) -> (Self, Arc<AtomicUsize>) {
            let calls = Arc::new(AtomicUsize::new(0));
            (Self { reply, calls: calls.clone() }, calls)
        }
    }

    impl<F: Fn(&ChatRequest, usize) -> String + Send + Sync> ChatTransport for ScriptedTransport<F> {
        fn send(&self, req: &ChatRequest) -> Result<TransportReply, TransportError> {
            let n = self.calls.fetch_add(1, Ordering::SeqCst);
            let content = (self.reply)(req, n);
            let body = serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
            Ok(TransportReply { status: 200, body: body.to_string() })
        }
    }

    pub fn user_text(req: &ChatRequest) -> &str {
        &req.messages.last().unwrap().content
    }

    /// A well-formed concept document naming the state in the request tag.
    pub fn concept_reply(req: &ChatRequest) -> String {
        serde_json::json!({
            "Important state": "(3,3) goal",
            "Immediate risk": "None",
            "Future risk": "None",
            "Safest path": "None",
            "Final evaluation": format!("Evaluation for {}", req.request_tag),
        })
        .to_string()
    }

    pub struct Fixture {
        /// `grids[k]` holds iteration `k + 1`, row by row.
        pub grids: Vec<Vec<Vec<String>>>,
    }

    pub fn load_fixture() -> Fixture {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/gridworld_transcripts.json");
        let doc: serde_json::Value = serde_json::from_str(&super::read(&path)).unwrap();
        let grids = doc["iterations"]
            .as_array()
            .unwrap()
            .iter()
            .map(|it| serde_json::from_value(it["grid"].clone()).unwrap())
            .collect();
        Fixture { grids }
    }

    pub fn table_from_grid(env: &Environment, grid: &[Vec<String>], iteration: usize) -> LanguageValueTable {
        let shape = env.mdp.grid().unwrap();
        let mut table = init_value_table(env);
        let updates = env
            .mdp
            .non_terminal_states()
            .map(|s| {
                let (r, c) = shape.cell(s);
                let v = LanguageValue {
                    content: ValueContent::free(grid[r][c].clone()),
                    provenance: Provenance::TdUpdate,
                    iteration,
                    non_conforming: false,
                };
                (s, v)
            })
            .collect();
        table.commit(updates, iteration).unwrap();
        table
    }

    /// Writes a transcript cache answering each iteration-`k` state prompt
    /// (built from the iteration `k - 1` grid) with the recorded iteration-`k` text.
    pub fn write_fixture_cache(env: &Environment, fixture: &Fixture, dir: &Path) -> usize {
        let settings = LlmSettings::default();
        let policy = PolicyTable::uniform(&env.mdp);
        let task = TaskInstruction::default_for(env.kind);
        let shape = env.mdp.grid().unwrap();
        let mut lines = String::new();
        let mut count = 0;
        for (k, grid) in fixture.grids.iter().enumerate() {
            let previous = if k == 0 { init_value_table(env) } else { table_from_grid(env, &fixture.grids[k - 1], k) };
            let snap = snapshot(&previous);
            for s in env.mdp.non_terminal_states() {
                let ctx = StateContext::new(env, s, &task);
                let outcomes = policy_weighted(&one_step_outcomes(env, s, &snap).unwrap(), policy.row(s));
                let bundle = state_value_prompt(env.lexicon.style(), &ctx, &outcomes, &[]).unwrap();
                let request = ChatRequest {
                    model: settings.model.clone(),
                    temperature: settings.temperature_for(env.lexicon.style()),
                    messages: bundle.messages(),
                    response_format: bundle.response_format,
                    request_tag: format!("fixture {}", ctx.state_name),
                    max_tokens: None,
                };
                let (r, c) = shape.cell(StateId(s.0));
                let entry = TranscriptEntry::new(request, grid[r][c].clone(), 0, 1);
                lines.push_str(&serde_json::to_string(&entry).unwrap());
                lines.push('\n');
                count += 1;
            }
        }
        std::fs::create_dir_all(dir).unwrap();
        std::fs::write(dir.join(TRANSCRIPT_FILE), lines).unwrap();
        count
    }
}
