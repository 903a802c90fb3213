use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use nlrl_core::aggregate::AggregatorKind;
use nlrl_core::gpi::{
    replay_config, run_experiment, run_language_gpi, run_policy_evaluation_experiment, Backend,
    EstimateMode, ExperimentConfig, RunArtifacts, RunError,
};
use nlrl_core::mdp::{
    exact_policy_evaluation, policy_value_metrics, value_iteration, EnvSpec, Environment, FrozenLakeSpec,
    GridWorldSpec, MdpError, PolicyTable, METRICS_TOL,
};
use nlrl_core::report::{format_3dp, write_report, ReportError};
use nlrl_gateway::CacheMode;

#[derive(Parser)]
#[command(name = "nlrl", version, about = "Language-valued policy evaluation and iteration on tabular MDPs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Exact optimal values, greedy ties and the uniform-policy evaluation.
    Oracle {
        #[arg(long, value_enum, default_value_t = EnvArg::Gridworld)]
        env: EnvArg,
        #[command(flatten)]
        overrides: Overrides,
    },
    /// Language policy evaluation of the uniform policy on the gridworld.
    EvalGrid(Overrides),
    /// Language policy iteration on the frozen lake.
    GpiLake(Overrides),
    /// Markdown table and heatmap CSVs for a finished run.
    Report { run_dir: PathBuf },
    /// Re-runs a finished run from its transcript cache only.
    Replay {
        run_dir: PathBuf,
        /// Output directory [default: RUN_DIR/replay]
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// Experiment config (JSON with schema_version)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for visit order and sampled estimates
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_enum)]
    aggregator: Option<AggregatorArg>,
    #[arg(long, value_enum)]
    cache: Option<CacheArg>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    Gridworld,
    Frozenlake,
}

#[derive(Clone, Copy, ValueEnum)]
enum AggregatorArg {
    Deterministic,
    Llm,
}

#[derive(Clone, Copy, ValueEnum)]
enum CacheArg {
    Live,
    #[value(name = "cache_first")]
    CacheFirst,
    #[value(name = "replay_only")]
    ReplayOnly,
}

#[derive(Debug, thiserror::Error)]
enum CliError {
    #[error(transparent)]
    Run(#[from] RunError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("cannot write {}: {source}", .path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Run(e) if e.is_config() => 2,
            CliError::Report(ReportError::Missing { .. }) => 2,
            _ => 1,
        }
    }
}

impl From<MdpError> for CliError {
    fn from(e: MdpError) -> Self {
        CliError::Run(e.into())
    }
}

impl Overrides {
    fn config(&self, default_env: EnvSpec) -> Result<ExperimentConfig, MdpError> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::new(default_env),
        };
        if let Some(seed) = self.seed {
            cfg.visit_order_seed = Some(seed);
            match &mut cfg.estimate {
                EstimateMode::TdSampled { seed: s, .. } | EstimateMode::Mc { seed: s, .. } => *s = seed,
                EstimateMode::TdExhaustive => {}
            }
        }
        if let Some(a) = self.aggregator {
            cfg.aggregator = match a {
                AggregatorArg::Deterministic => AggregatorKind::Deterministic,
                AggregatorArg::Llm => AggregatorKind::Llm,
            };
        }
        if let Some(c) = self.cache {
            cfg.cache.mode = match c {
                CacheArg::Live => CacheMode::Live,
                CacheArg::CacheFirst => CacheMode::CacheFirst,
                CacheArg::ReplayOnly => CacheMode::ReplayOnly,
            };
        }
        if let Some(out) = &self.out {
            cfg.output_dir = Some(out.clone());
        }
        if let Some(n) = self.iterations {
            cfg.iterations = n;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn print_grid(env: &Environment, values: &[f64]) {
    let Some(grid) = env.mdp.grid() else { return };
    for r in 0..grid.rows {
        let row: Vec<String> =
            (0..grid.cols).map(|c| format!("{:>8}", format_3dp(values[grid.state(r, c).0]))).collect();
        println!("  {}", row.join(""));
    }
}

fn cmd_oracle(env_arg: EnvArg, overrides: &Overrides) -> Result<(), CliError> {
    let default_env = match env_arg {
        EnvArg::Gridworld => EnvSpec::Gridworld(GridWorldSpec::default()),
        EnvArg::Frozenlake => EnvSpec::Frozenlake(FrozenLakeSpec::default()),
    };
    let cfg = overrides.config(default_env)?;
    let env = cfg.env.build()?;
    let mdp = &env.mdp;
    let (optimal, greedy) = value_iteration(mdp, METRICS_TOL)?;
    let uniform_policy = PolicyTable::uniform(mdp);
    let uniform = exact_policy_evaluation(mdp, &uniform_policy, METRICS_TOL)?;
    let optimal_avg = policy_value_metrics(mdp, &greedy, 0)?.average_value;
    let uniform_avg = policy_value_metrics(mdp, &uniform_policy, 0)?.average_value;

    println!("optimal values:");
    print_grid(&env, &optimal.values);
    println!("uniform policy values:");
    print_grid(&env, &uniform.values);
    let mut ties = Vec::new();
    for s in mdp.states() {
        let names: Vec<String> =
            greedy.support(s).iter().map(|&k| mdp.action_name(mdp.actions(s)[k]).to_string()).collect();
        if !mdp.is_terminal(s) {
            let cell = mdp.grid().map(|g| g.cell(s)).unwrap_or((0, s.0));
            let label = env.lexicon.render(s);
            println!(
                "V*({},{}) = {}  greedy {{{}}}  uniform {}  {label}",
                cell.0,
                cell.1,
                format_3dp(optimal.get(s)),
                names.join(", "),
                format_3dp(uniform.get(s)),
            );
        }
        ties.push(names);
    }
    println!("average value: optimal {}, uniform {}", format_3dp(optimal_avg), format_3dp(uniform_avg));

    let out = cfg.output_dir();
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    let doc = serde_json::json!({
        "env": cfg.env,
        "optimal_values": optimal.values,
        "greedy_actions": ties,
        "uniform_values": uniform.values,
        "optimal_average": optimal_avg,
        "uniform_average": uniform_avg,
    });
    let path = out.join("oracle.json");
    let text = serde_json::to_string_pretty(&doc).expect("oracle document serializes");
    std::fs::write(&path, text + "\n").map_err(|source| CliError::Io { path: path.clone(), source })?;
    println!("wrote {}", path.display());
    Ok(())
}

fn print_summary(run: &RunArtifacts) {
    if run.config.improvement_enabled {
        println!("iteration 0: average value {}", format_3dp(run.initial_metrics.average_value));
        for r in &run.records {
            println!("iteration {}: average value {}", r.iteration, format_3dp(r.metrics.average_value));
        }
        println!("optimal: average value {}", format_3dp(run.optimal.average_value));
    } else {
        for r in &run.records {
            if r.converged() {
                println!("iteration {}: converged", r.iteration);
            } else {
                println!("iteration {}: {} states changed", r.iteration, r.changed_states);
            }
        }
    }
}

fn execute(cfg: &ExperimentConfig) -> Result<(), CliError> {
    let env = cfg.env.build()?;
    let backend = Backend::from_config(cfg, &env)?;
    let run = run_experiment(cfg, &backend);
    finish(cfg, run)
}

fn finish(cfg: &ExperimentConfig, run: Result<RunArtifacts, RunError>) -> Result<(), CliError> {
    let run = run?;
    print_summary(&run);
    write_report(&cfg.output_dir())?;
    println!("run directory: {}", cfg.output_dir().display());
    Ok(())
}

fn cmd_eval_grid(overrides: &Overrides) -> Result<(), CliError> {
    let cfg = overrides.config(EnvSpec::Gridworld(GridWorldSpec::default()))?;
    let env = cfg.env.build()?;
    let backend = Backend::from_config(&cfg, &env)?;
    finish(&cfg, run_policy_evaluation_experiment(&cfg, &backend))
}

fn cmd_gpi_lake(overrides: &Overrides) -> Result<(), CliError> {
    let mut cfg = overrides.config(EnvSpec::Frozenlake(FrozenLakeSpec::default()))?;
    if overrides.config.is_none() {
        cfg.improvement_enabled = true;
    }
    let env = cfg.env.build()?;
    let backend = Backend::from_config(&cfg, &env)?;
    finish(&cfg, run_language_gpi(&cfg, &backend))
}

fn cmd_report(run_dir: &Path) -> Result<(), CliError> {
    for path in write_report(run_dir)? {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_replay(run_dir: &Path, out: Option<PathBuf>) -> Result<(), CliError> {
    let out = out.unwrap_or_else(|| run_dir.join("replay"));
    let cfg = replay_config(run_dir, &out)?;
    execute(&cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Oracle { env, overrides } => cmd_oracle(*env, overrides),
        Command::EvalGrid(o) => cmd_eval_grid(o),
        Command::GpiLake(o) => cmd_gpi_lake(o),
        Command::Report { run_dir } => cmd_report(run_dir),
        Command::Replay { run_dir, out } => cmd_replay(run_dir, out.clone()),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
