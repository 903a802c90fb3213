//! Experiment configuration and the evaluation / improvement loop.

mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use nlrl_gateway::{
    CacheMode, CachePolicy, ChatTransport, Gateway, GatewayError, HttpTransport, RetryPolicy,
    TRANSCRIPT_FILE,
};
use serde::{Deserialize, Serialize};

pub use sweep::{
    evaluation_sweep, improvement_sweep, ImprovementError, QTable, SweepError, SweepOptions,
    SweepOutput, ThoughtRecord,
};

use crate::aggregate::{
    Aggregator, AggregatorKind, DeterministicAggregator, DeterministicImprover, Improver,
    LlmAggregator, LlmImprover, LlmSettings,
};
use crate::language::{init_value_table, snapshot, LanguageValueTable, TableError, TaskInstruction};
use crate::mdp::{
    policy_value_metrics, value_iteration, EnvKind, EnvSpec, Environment, GridShape, MdpError,
    MetricsReport, PolicyTable, METRICS_TOL,
};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum EstimateMode {
    /// Every `(a, s')` weighted by `π(a|s) · P(s'|s, a)`.
    #[default]
    TdExhaustive,
    /// `k` one-step samples drawn from the policy and the dynamics.
    TdSampled { k: usize, seed: u64 },
    /// `k` complete episodes per state.
    Mc { k: usize, seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CacheSettings {
    pub mode: CacheMode,
    /// Transcript store; the run directory when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
}

impl Default for CacheSettings {
    fn default() -> Self {
        Self { mode: CacheMode::CacheFirst, dir: None }
    }
}

fn default_iterations() -> usize {
    4
}

fn default_parallelism() -> usize {
    4
}

fn default_aggregator() -> AggregatorKind {
    AggregatorKind::Deterministic
}

/// A full experiment, loaded from one JSON document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub schema_version: u32,
    pub env: EnvSpec,
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_aggregator")]
    pub aggregator: AggregatorKind,
    #[serde(default)]
    pub estimate: EstimateMode,
    #[serde(default)]
    pub improvement_enabled: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task: Option<String>,
    /// Compute Q^L for every action during evaluation. Defaults to on except
    /// for evaluation-only gridworld runs with the chat aggregator.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub action_values: Option<bool>,
    #[serde(default)]
    pub cache: CacheSettings,
    #[serde(default)]
    pub llm: LlmSettings,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Start every evaluation phase from a freshly initialised table.
    #[serde(default)]
    pub fresh_table_each_iteration: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub visit_order_seed: Option<u64>,
}

impl ExperimentConfig {
    pub fn new(env: EnvSpec) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            env,
            iterations: default_iterations(),
            aggregator: default_aggregator(),
            estimate: EstimateMode::default(),
            improvement_enabled: false,
            task: None,
            action_values: None,
            cache: CacheSettings::default(),
            llm: LlmSettings::default(),
            parallelism: default_parallelism(),
            output_dir: None,
            fresh_table_each_iteration: false,
            visit_order_seed: None,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, MdpError> {
        let cfg: Self =
            serde_json::from_str(text).map_err(|e| MdpError::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, MdpError> {
        let text = fs::read_to_string(path)
            .map_err(|e| MdpError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<(), MdpError> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(MdpError::Config(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        if self.iterations == 0 {
            return Err(MdpError::Config("iterations must be at least 1".into()));
        }
        if self.parallelism == 0 {
            return Err(MdpError::Config("parallelism must be at least 1".into()));
        }
        match self.estimate {
            EstimateMode::TdSampled { k: 0, .. } | EstimateMode::Mc { k: 0, .. } => {
                return Err(MdpError::Config("sample count k must be at least 1".into()))
            }
            _ => {}
        }
        if self.action_values == Some(false) && self.improvement_enabled {
            return Err(MdpError::Config("policy improvement needs action values".into()));
        }
        if self.action_values == Some(false)
            && self.aggregator == AggregatorKind::Llm
            && self.env.kind() == EnvKind::Frozenlake
            && !matches!(self.estimate, EstimateMode::Mc { .. })
        {
            return Err(MdpError::Config(
                "frozen-lake state values are aggregated from action values".into(),
            ));
        }
        if let Some(t) = &self.task {
            TaskInstruction::new(t.clone())?;
        }
        self.env.build()?;
        Ok(())
    }

    pub fn compute_action_values(&self) -> bool {
        self.action_values.unwrap_or(
            self.improvement_enabled
                || self.aggregator == AggregatorKind::Deterministic
                || self.env.kind() == EnvKind::Frozenlake,
        )
    }

    pub fn task_instruction(&self) -> TaskInstruction {
        match &self.task {
            Some(t) => TaskInstruction::new(t.clone()).expect("validated"),
            None => TaskInstruction::default_for(self.env.kind()),
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| PathBuf::from("runs/latest"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Mdp(#[from] MdpError),
    #[error("evaluation sweep {iteration} failed at {}: {}", .error.state, .error.source)]
    Sweep { iteration: usize, error: SweepError },
    #[error("improvement {iteration} failed: {error}")]
    Improvement { iteration: usize, error: ImprovementError },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Table(#[from] TableError),
    #[error("cannot write {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl RunError {
    /// Problems with the configuration rather than with the run itself.
    pub fn is_config(&self) -> bool {
        matches!(self, RunError::Mdp(MdpError::Config(_) | MdpError::Usage(_)))
    }
}

#[derive(Debug, Clone)]
pub struct IterationRecord {
    pub iteration: usize,
    pub values: LanguageValueTable,
    pub q_values: Option<QTable>,
    pub policy_before: PolicyTable,
    pub policy_after: PolicyTable,
    pub metrics: MetricsReport,
    pub thoughts: Option<Vec<Option<ThoughtRecord>>>,
    /// Non-terminal states whose value content changed in this sweep.
    pub changed_states: usize,
    pub elapsed: Duration,
}

impl IterationRecord {
    pub fn converged(&self) -> bool {
        self.changed_states == 0
    }
}

/// Contents of `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsFile {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grid: Option<GridShape>,
    pub optimal: MetricsReport,
    pub iterations: Vec<MetricsReport>,
}

#[derive(Debug, Clone)]
pub struct RunArtifacts {
    pub config: ExperimentConfig,
    pub output_dir: PathBuf,
    pub initial_metrics: MetricsReport,
    pub optimal: MetricsReport,
    pub records: Vec<IterationRecord>,
    /// Transcript entries available to the gateway at the end of the run.
    pub transcript_entries: usize,
}

fn write_text(path: &Path, text: &str) -> Result<(), RunError> {
    fs::write(path, text).map_err(|source| RunError::Io { path: path.to_path_buf(), source })
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), RunError> {
    let mut text = serde_json::to_string_pretty(value).expect("artifacts serialize");
    text.push('\n');
    write_text(path, &text)
}

fn policy_json(env: &Environment, policy: &PolicyTable) -> serde_json::Value {
    let mdp = &env.mdp;
    let map = mdp
        .non_terminal_states()
        .map(|s| {
            let row = mdp
                .actions(s)
                .iter()
                .zip(policy.row(s))
                .map(|(a, p)| (mdp.action_name(*a).to_string(), serde_json::json!(p)))
                .collect::<serde_json::Map<_, _>>();
            (env.lexicon.render(s), serde_json::Value::Object(row))
        })
        .collect::<serde_json::Map<_, _>>();
    serde_json::Value::Object(map)
}

fn q_json(env: &Environment, q: &QTable) -> serde_json::Value {
    let mdp = &env.mdp;
    let map = mdp
        .non_terminal_states()
        .map(|s| {
            let row = mdp
                .actions(s)
                .iter()
                .zip(&q[s.0])
                .map(|(a, v)| (mdp.action_name(*a).to_string(), serde_json::to_value(v).expect("value")))
                .collect::<serde_json::Map<_, _>>();
            (env.lexicon.render(s), serde_json::Value::Object(row))
        })
        .collect::<serde_json::Map<_, _>>();
    serde_json::Value::Object(map)
}

fn thoughts_json(env: &Environment, thoughts: &[Option<ThoughtRecord>]) -> serde_json::Value {
    let map = thoughts
        .iter()
        .enumerate()
        .filter_map(|(s, t)| {
            t.as_ref().map(|t| {
                (env.lexicon.render(crate::mdp::StateId(s)), serde_json::to_value(t).expect("thought"))
            })
        })
        .collect::<serde_json::Map<_, _>>();
    serde_json::Value::Object(map)
}

fn changed_states(env: &Environment, a: &LanguageValueTable, b: &LanguageValueTable) -> usize {
    env.mdp.non_terminal_states().filter(|s| a.get(*s).content != b.get(*s).content).count()
}

/// Aggregator, improver and gateway for one run.
pub struct Backend {
    pub aggregator: Box<dyn Aggregator>,
    pub improver: Box<dyn Improver>,
    pub gateway: Option<Arc<Gateway>>,
}

impl Backend {
    pub fn deterministic() -> Self {
        Self {
            aggregator: Box::new(DeterministicAggregator),
            improver: Box::new(DeterministicImprover),
            gateway: None,
        }
    }

    pub fn llm(gateway: Arc<Gateway>, settings: &LlmSettings, env: &Environment) -> Self {
        let style = env.lexicon.style();
        Self {
            aggregator: Box::new(LlmAggregator::new(gateway.clone(), settings.clone(), style)),
            improver: Box::new(LlmImprover::new(gateway.clone(), settings.clone(), style)),
            gateway: Some(gateway),
        }
    }

    /// Builds the backend the config asks for. Network access is set up from
    /// the environment unless the cache mode is replay-only.
    pub fn from_config(config: &ExperimentConfig, env: &Environment) -> Result<Self, RunError> {
        match config.aggregator {
            AggregatorKind::Deterministic => Ok(Self::deterministic()),
            AggregatorKind::Llm => {
                let transport: Option<Box<dyn ChatTransport>> = match config.cache.mode {
                    CacheMode::ReplayOnly => None,
                    _ => Some(Box::new(HttpTransport::from_env().map_err(|e| {
                        MdpError::Config(format!("chat aggregator needs API access: {e}"))
                    })?)),
                };
                let gateway = open_gateway(config, transport)?;
                Ok(Self::llm(Arc::new(gateway), &config.llm, env))
            }
        }
    }
}

/// Opens the transcript cache for `config`, logging every exchange of the run
/// into the run directory.
pub fn open_gateway(
    config: &ExperimentConfig,
    transport: Option<Box<dyn ChatTransport>>,
) -> Result<Gateway, RunError> {
    let out = config.output_dir();
    fs::create_dir_all(&out).map_err(|source| RunError::Io { path: out.clone(), source })?;
    let cache_dir = config.cache.dir.clone().unwrap_or_else(|| out.clone());
    let policy = CachePolicy { mode: config.cache.mode, cache_dir };
    Ok(Gateway::open(policy, transport, RetryPolicy::default())?.with_session_log(&out.join(TRANSCRIPT_FILE))?)
}

pub fn compute_iteration_metrics(
    env: &Environment,
    policy: &PolicyTable,
    iteration: usize,
) -> Result<MetricsReport, MdpError> {
    policy_value_metrics(&env.mdp, policy, iteration)
}

/// Value of the optimal policy, reported next to the per-iteration metrics.
pub fn optimal_metrics(env: &Environment) -> Result<MetricsReport, MdpError> {
    let (_, greedy) = value_iteration(&env.mdp, METRICS_TOL)?;
    policy_value_metrics(&env.mdp, &greedy, 0)
}

/// Runs the configured experiment, persisting artifacts after every iteration.
pub fn run_experiment(config: &ExperimentConfig, backend: &Backend) -> Result<RunArtifacts, RunError> {
    config.validate()?;
    let env = config.env.build()?;
    let out = config.output_dir();
    fs::create_dir_all(&out).map_err(|source| RunError::Io { path: out.clone(), source })?;
    write_json(&out.join("config.json"), config)?;

    let task = config.task_instruction();
    let opts = SweepOptions {
        estimate: config.estimate.clone(),
        compute_action_values: config.compute_action_values() || config.improvement_enabled,
        parallelism: config.parallelism,
        visit_order_seed: config.visit_order_seed,
        task: task.clone(),
    };

    let mut table = init_value_table(&env);
    let mut policy = PolicyTable::uniform(&env.mdp);
    write_json(&out.join("values_iter_0.json"), &table.to_json(&env.lexicon))?;
    write_json(&out.join("policy_iter_0.json"), &policy_json(&env, &policy))?;
    if let Some(grid) = table.text_grid(&env) {
        write_json(&out.join("evaluations_iter_0.json"), &grid)?;
    }

    let initial_metrics = compute_iteration_metrics(&env, &policy, 0)?;
    let optimal = optimal_metrics(&env)?;
    let mut metrics_file =
        MetricsFile { grid: env.mdp.grid(), optimal: optimal.clone(), iterations: vec![initial_metrics.clone()] };
    write_json(&out.join("metrics.json"), &metrics_file)?;

    let mut records = Vec::with_capacity(config.iterations);
    for k in 1..=config.iterations {
        let started = Instant::now();
        let previous = table.clone();
        if config.fresh_table_each_iteration && k > 1 {
            table = init_value_table(&env);
        }
        let mut snap_table = table;
        // the table iteration counts sweeps of the whole run
        if snap_table.iteration() != k - 1 {
            snap_table.commit(Vec::new(), k - 1)?;
        }
        let snap = snapshot(&snap_table);
        let sweep = match evaluation_sweep(&env, &policy, &snap, backend.aggregator.as_ref(), &opts) {
            Ok(s) => s,
            Err(error) => {
                write_json(&out.join(format!("values_iter_{k}.partial.json")), &error.partial.to_json(&env.lexicon))?;
                return Err(RunError::Sweep { iteration: k, error });
            }
        };
        table = sweep.table;
        write_json(&out.join(format!("values_iter_{k}.json")), &table.to_json(&env.lexicon))?;
        if let Some(grid) = table.text_grid(&env) {
            write_json(&out.join(format!("evaluations_iter_{k}.json")), &grid)?;
        }
        if let Some(q) = &sweep.q_values {
            write_json(&out.join(format!("qvalues_iter_{k}.json")), &q_json(&env, q))?;
        }

        let policy_before = policy.clone();
        let thoughts = if config.improvement_enabled {
            let q = sweep.q_values.as_ref().expect("improvement computes action values");
            let (next, thoughts) = improvement_sweep(&env, q, &policy, backend.improver.as_ref(), &task, config.parallelism)
                .map_err(|error| RunError::Improvement { iteration: k, error })?;
            write_json(&out.join(format!("thoughts_iter_{k}.json")), &thoughts_json(&env, &thoughts))?;
            policy = next;
            Some(thoughts)
        } else {
            None
        };
        write_json(&out.join(format!("policy_iter_{k}.json")), &policy_json(&env, &policy))?;

        let metrics = compute_iteration_metrics(&env, &policy, k)?;
        metrics_file.iterations.push(metrics.clone());
        write_json(&out.join("metrics.json"), &metrics_file)?;

        let record = IterationRecord {
            iteration: k,
            changed_states: changed_states(&env, &previous, &table),
            values: table.clone(),
            q_values: sweep.q_values,
            policy_before,
            policy_after: policy.clone(),
            metrics,
            thoughts,
            elapsed: started.elapsed(),
        };
        log::info!(
            "iteration {k}: {} states changed, average value {:.3}, {:?}",
            record.changed_states,
            record.metrics.average_value,
            record.elapsed
        );
        records.push(record);
    }

    Ok(RunArtifacts {
        config: config.clone(),
        output_dir: out,
        initial_metrics,
        optimal,
        records,
        transcript_entries: backend.gateway.as_ref().map_or(0, |g| g.cached_entries()),
    })
}

/// The stored configuration of `run_dir`, set up to rerun offline into `out`
/// from the transcripts the original run used.
pub fn replay_config(run_dir: &Path, out: &Path) -> Result<ExperimentConfig, RunError> {
    let mut config = ExperimentConfig::load(&run_dir.join("config.json"))?;
    config.cache.dir = Some(config.cache.dir.clone().unwrap_or_else(|| run_dir.to_path_buf()));
    config.cache.mode = CacheMode::ReplayOnly;
    config.output_dir = Some(out.to_path_buf());
    Ok(config)
}

/// Evaluation only, under the fixed uniform policy.
pub fn run_policy_evaluation_experiment(config: &ExperimentConfig, backend: &Backend) -> Result<RunArtifacts, RunError> {
    if config.improvement_enabled {
        return Err(MdpError::Config("policy evaluation runs keep the policy fixed; disable improvement".into()).into());
    }
    run_experiment(config, backend)
}

/// Evaluation followed by improvement, repeated.
pub fn run_language_gpi(config: &ExperimentConfig, backend: &Backend) -> Result<RunArtifacts, RunError> {
    if !config.improvement_enabled {
        return Err(MdpError::Config("policy iteration needs improvement_enabled".into()).into());
    }
    run_experiment(config, backend)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::GridWorldSpec;

    #[test]
    fn config_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"schema_version": 1, "env": {"kind": "gridworld"}}"#).unwrap();
        assert_eq!(cfg.iterations, 4);
        assert_eq!(cfg.aggregator, AggregatorKind::Deterministic);
        assert_eq!(cfg.estimate, EstimateMode::TdExhaustive);
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 2, "env": {"kind": "gridworld"}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "env": {"kind": "gridworld"}, "iterations": 0}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "env": {"kind": "gridworld"}, "bogus": 0}"#).is_err());
        let sampled = r#"{"schema_version": 1, "env": {"kind": "gridworld"}, "estimate": {"mode": "mc", "k": 3, "seed": 7}}"#;
        assert_eq!(ExperimentConfig::from_json(sampled).unwrap().estimate, EstimateMode::Mc { k: 3, seed: 7 });
        assert!(ExperimentConfig::from_json(r#"{"schema_version": 1, "env": {"kind": "gridworld"}, "estimate": {"mode": "mc", "k": 3}}"#).is_err());
    }

    #[test]
    fn config_round_trips() {
        let mut cfg = ExperimentConfig::new(EnvSpec::Gridworld(GridWorldSpec::default()));
        cfg.visit_order_seed = Some(3);
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
    }
}
