mod common;

use std::path::Path;
use std::sync::atomic::Ordering;
use std::sync::Arc;

use common::llm::*;
use common::*;
use nlrl_core::aggregate::{AggregateError, AggregatorKind, LlmAggregator, LlmSettings};
use nlrl_core::gpi::*;
use nlrl_core::mdp::{EnvSpec, FrozenLakeSpec, GridWorldSpec};
use nlrl_core::report::write_report;
use nlrl_gateway::{CacheMode, ChatTransport, GatewayError};

fn llm_config(env: EnvSpec, out: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::new(env);
    cfg.aggregator = AggregatorKind::Llm;
    cfg.output_dir = Some(out.to_path_buf());
    cfg
}

fn run_with(cfg: &ExperimentConfig, transport: Option<Box<dyn ChatTransport>>) -> Result<RunArtifacts, RunError> {
    let env = cfg.env.build().unwrap();
    let gateway = Arc::new(open_gateway(cfg, transport)?);
    run_experiment(cfg, &Backend::llm(gateway, &cfg.llm, &env))
}

#[test]
fn recorded_gridworld_transcripts_replay_exactly() {
    let tmp = tempfile::tempdir().unwrap();
    let env = gridworld();
    let fixture = load_fixture();
    assert_eq!(write_fixture_cache(&env, &fixture, &tmp.path().join("cache")), 4 * 14);

    let mut cfg = llm_config(EnvSpec::Gridworld(GridWorldSpec::default()), &tmp.path().join("run"));
    cfg.cache.mode = CacheMode::ReplayOnly;
    cfg.cache.dir = Some(tmp.path().join("cache"));
    assert!(!cfg.compute_action_values());
    let run = run_with(&cfg, None).unwrap();

    for (k, record) in run.records.iter().enumerate() {
        let grid = record.values.text_grid(&env).unwrap();
        assert_eq!(grid, fixture.grids[k], "iteration {}", k + 1);
        let stored: Vec<Vec<String>> =
            serde_json::from_str(&read(&tmp.path().join(format!("run/evaluations_iter_{}.json", k + 1)))).unwrap();
        assert_eq!(stored, fixture.grids[k]);
    }
    let g = env.lexicon.lookup("(g)").unwrap();
    let text = run.records[3].values.get(g).content.render();
    assert!(text.starts_with("From state (g), the agent has two equally efficient paths"), "{text}");
    assert!(text.contains("Move Left") && text.contains("Go Down"));
}

#[test]
fn replay_miss_is_reported() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = llm_config(EnvSpec::Gridworld(GridWorldSpec::default()), tmp.path());
    cfg.cache.mode = CacheMode::ReplayOnly;
    let err = run_with(&cfg, None).unwrap_err();
    match err {
        RunError::Sweep { iteration: 1, error } => {
            assert!(matches!(error.source.source, AggregateError::Gateway(GatewayError::ReplayMiss { .. })));
            assert!(tmp.path().join("values_iter_1.partial.json").exists());
        }
        other => panic!("unexpected {other}"),
    }
}

fn frozen_reply(req: &nlrl_gateway::ChatRequest, _: usize) -> String {
    if req.request_tag.starts_with("improve") {
        let legal = user_text(req).lines().find(|l| l.starts_with("Legal actions: ")).unwrap();
        let first = legal.trim_start_matches("Legal actions: ").split(", ").last().unwrap();
        format!("Moving up keeps the player away from holes.\nAction: {first}")
    } else {
        concept_reply(req)
    }
}

#[test]
fn replaying_a_finished_run_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let original = tmp.path().join("original");
    let mut cfg = llm_config(EnvSpec::Frozenlake(FrozenLakeSpec::default()), &original);
    cfg.improvement_enabled = true;
    cfg.iterations = 2;
    let (transport, calls) = ScriptedTransport::new(frozen_reply);
    let run = run_with(&cfg, Some(Box::new(transport))).unwrap();
    assert!(calls.load(Ordering::SeqCst) > 0);
    assert_eq!(run.records.len(), 2);
    write_report(&original).unwrap();

    let mut dirs = Vec::new();
    for name in ["replay_a", "replay_b"] {
        let out = tmp.path().join(name);
        let cfg = replay_config(&original, &out).unwrap();
        assert_eq!(cfg.cache.mode, CacheMode::ReplayOnly);
        run_with(&cfg, None).unwrap();
        write_report(&out).unwrap();
        dirs.push(out);
    }
    let mut files = vec!["metrics.json".to_string(), "report.md".to_string()];
    files.extend((0..=2).map(|k| format!("values_iter_{k}.json")));
    files.extend((1..=2).map(|k| format!("policy_iter_{k}.json")));
    for f in &files {
        let a = read(&dirs[0].join(f));
        assert_eq!(a, read(&dirs[1].join(f)), "{f}");
        assert_eq!(a, read(&original.join(f)), "{f}");
    }
}

#[test]
fn unusable_answers_get_one_corrective_retry() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = llm_config(EnvSpec::Frozenlake(FrozenLakeSpec::default()), tmp.path());
    let (transport, _) = ScriptedTransport::new(|req: &nlrl_gateway::ChatRequest, _| {
        if user_text(req).contains("Your previous answer could not be used") {
            concept_reply(req)
        } else {
            "I am not sure.".to_string()
        }
    });
    let run = run_with(&ExperimentConfig { iterations: 1, ..cfg }, Some(Box::new(transport))).unwrap();
    assert_eq!(run.records.len(), 1);
}

#[test]
fn exhausted_retries_fail_the_sweep_and_keep_responses() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = llm_config(EnvSpec::Frozenlake(FrozenLakeSpec::default()), tmp.path());
    let (transport, calls) = ScriptedTransport::new(|_: &nlrl_gateway::ChatRequest, _| "no json".to_string());
    let err = run_with(&cfg, Some(Box::new(transport))).unwrap_err();
    let RunError::Sweep { error, .. } = err else { panic!("expected a sweep failure") };
    match error.source.source {
        AggregateError::StateEvaluationFailed { responses, .. } => assert_eq!(responses, ["no json", "no json"]),
        other => panic!("unexpected {other}"),
    }
    assert!(calls.load(Ordering::SeqCst) >= 2);
    assert!(!read(&tmp.path().join("transcripts.jsonl")).is_empty());
}

#[test]
fn freeform_answers_without_the_marker_are_kept_and_flagged() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        iterations: 1,
        ..llm_config(EnvSpec::Gridworld(GridWorldSpec::default()), tmp.path())
    };
    let (transport, _) = ScriptedTransport::new(|req: &nlrl_gateway::ChatRequest, _| format!("Plain answer for {}", req.request_tag));
    let run = run_with(&cfg, Some(Box::new(transport))).unwrap();
    let env = gridworld();
    let g = env.lexicon.lookup("(g)").unwrap();
    let v = run.records[0].values.get(g);
    assert_eq!(v.content.render(), "Plain answer for v (g)");
    assert!(v.non_conforming);
}

#[test]
fn aggregator_reports_its_kind() {
    use nlrl_core::aggregate::Aggregator;
    let tmp = tempfile::tempdir().unwrap();
    let cfg = llm_config(EnvSpec::Gridworld(GridWorldSpec::default()), tmp.path());
    let gateway = Arc::new(open_gateway(&cfg, None).unwrap());
    let agg = LlmAggregator::new(gateway, LlmSettings::default(), nlrl_core::textify::TextStyle::Gridworld);
    assert_eq!(agg.kind(), AggregatorKind::Llm);
}
