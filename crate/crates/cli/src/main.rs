//! `tvd`: train source policies, collect demonstrations, learn undo maps and
//! render the results.
//!
//! Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

mod oracle;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use tvd_core::config::ExperimentConfig;
use tvd_core::exec::Exec;
use tvd_core::gridworld::{rollout_batch, GridState, StateTransform, Trajectory};
use tvd_core::io::TrajectoryFile;
use tvd_core::metrics::{metrics_csv, TrajectoryHeatmap};
use tvd_core::policy::{
    edge_following_action, evaluate_policy, train_source, Composed, Policy, Regime, StateMap, GATE_EVAL_EPISODES,
};
use tvd_core::rng::{derive_seed, Rng, STREAM_DEMOS, STREAM_ROLLOUTS};
use tvd_core::tvd::{SourceData, TvDRun, TvDState, UndoMap};

#[derive(Debug, Parser)]
#[command(name = "tvd", version, about = "Undo-map transfer between gridworld domains")]
struct Cli {
    /// Experiment config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a config key, e.g. `--set tvd.outer_iterations=100`.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Disable data-parallel rollouts and cost evaluation.
    #[arg(long, global = true)]
    sequential: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train a source policy for a behavior regime and check its gate.
    TrainSource {
        /// low-entropy-optimal, high-entropy-optimal or high-entropy-suboptimal.
        #[arg(long, value_parser = parse_regime)]
        regime: Option<Regime>,
        /// Checkpoint path (default `<output_dir>/<regime>.policy`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Record source-domain episodes to a trajectory file.
    CollectDemos {
        #[command(flatten)]
        expert: Expert,
        #[arg(short, long, value_parser = clap::value_parser!(u64).range(1..))]
        n: u64,
        /// Output path (default `<output_dir>/demos.jsonl`).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Learn an undo map (and optionally the policy) by distribution matching.
    RunTvd {
        #[command(flatten)]
        source: TvdSource,
        /// Continue from `<output_dir>/tvd_state.bin`.
        #[arg(long)]
        resume: bool,
    },
    /// Goal rate, return and entropy of a policy in the configured domain.
    Evaluate {
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        view: View,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
    },
    /// Trajectory heatmap (SVG) and visit counts (CSV) of a policy.
    Render {
        #[arg(long)]
        policy: PathBuf,
        #[command(flatten)]
        view: View,
        #[arg(long, default_value_t = 200)]
        episodes: usize,
    },
    /// Exact reference solvers; print JSON reports.
    Oracle {
        #[command(subcommand)]
        tool: oracle::OracleTool,
    },
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct Expert {
    /// Policy checkpoint to roll out.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Deterministic edge-following expert.
    #[arg(long)]
    edge_follower: bool,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false)]
struct TvdSource {
    /// Frozen source policy checkpoint.
    #[arg(long)]
    policy: Option<PathBuf>,
    /// Demonstration file; the policy is learned.
    #[arg(long)]
    demos: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Domain {
    Source,
    Target,
}

#[derive(Debug, Args)]
struct View {
    #[arg(long, value_enum, default_value_t = Domain::Target)]
    domain: Domain,
    /// Compose with the undo map stored in a TvD checkpoint.
    #[arg(long)]
    tvd_state: Option<PathBuf>,
}

/// Error that maps to exit code 2.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_regime(s: &str) -> Result<Regime, String> {
    s.parse().map_err(|e: tvd_core::Error| e.to_string())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<tvd_core::Error>() {
        Some(tvd_core::Error::Config(_) | tvd_core::Error::InstanceTooLarge { .. }) => 2,
        Some(tvd_core::Error::Format { what: "config", .. }) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<ExperimentConfig> {
    let cfg = match &cli.config {
        Some(path) => {
            require_file(path)?;
            ExperimentConfig::load(path, &cli.overrides)?
        }
        None => {
            let mut cfg = ExperimentConfig::from_toml_str("version = 1\n", &cli.overrides)?;
            if let Some(dir) = std::env::var_os(tvd_core::config::OUTPUT_DIR_ENV).filter(|d| !d.is_empty()) {
                cfg.output_dir = PathBuf::from(dir);
            }
            cfg
        }
    };
    Ok(cfg)
}

fn require_file(path: &Path) -> anyhow::Result<()> {
    if !path.is_file() {
        return Err(usage(format!("file not found: {}", path.display())));
    }
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if let Command::Oracle { tool } = &cli.command {
        return oracle::run(tool, &load_config(&cli)?);
    }
    let cfg = load_config(&cli)?;
    let exec = if cli.sequential { Exec::Sequential } else { Exec::default() };
    fs::create_dir_all(&cfg.output_dir).with_context(|| format!("creating {}", cfg.output_dir.display()))?;
    match &cli.command {
        Command::TrainSource { regime, out } => cmd_train_source(&cfg, regime.unwrap_or(cfg.source_regime), out.clone()),
        Command::CollectDemos { expert, n, out } => cmd_collect_demos(&cfg, expert, *n as usize, out.clone(), exec),
        Command::RunTvd { source, resume } => cmd_run_tvd(&cfg, source, *resume, exec),
        Command::Evaluate { policy, view, episodes } => cmd_evaluate(&cfg, policy, view, *episodes, exec),
        Command::Render { policy, view, episodes } => cmd_render(&cfg, policy, view, *episodes, exec),
        Command::Oracle { .. } => unreachable!("handled above"),
    }
}

fn print_json(value: &impl serde::Serialize) -> anyhow::Result<()> {
    let mut out = std::io::stdout().lock();
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    Ok(())
}

/// Writes via a temporary sibling so readers never see a partial file.
fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn load_policy(path: &Path) -> anyhow::Result<Policy> {
    require_file(path)?;
    let bytes = fs::read(path)?;
    let (policy, _) = Policy::read_checkpoint(&mut &bytes[..]).with_context(|| format!("reading {}", path.display()))?;
    Ok(policy)
}

fn load_tvd_state(cfg: &ExperimentConfig, path: &Path) -> anyhow::Result<TvDState> {
    require_file(path)?;
    let bytes = fs::read(path)?;
    TvDState::read_from(&mut &bytes[..], &cfg.gridworld).with_context(|| format!("reading {}", path.display()))
}

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "policy".into())
}

fn cmd_train_source(cfg: &ExperimentConfig, regime: Regime, out: Option<PathBuf>) -> anyhow::Result<()> {
    let out = out.unwrap_or_else(|| cfg.output_dir.join(format!("{regime}.policy")));
    let (policy, report) = train_source(&cfg.gridworld, regime, cfg.seed)?;
    let mut bytes = Vec::new();
    policy.write_checkpoint(&mut bytes, cfg.seed)?;
    write_atomic(&out, &bytes)?;
    write_atomic(&out.with_extension("report.json"), serde_json::to_string_pretty(&report)?.as_bytes())?;
    print_json(&report)
}

fn cmd_collect_demos(cfg: &ExperimentConfig, expert: &Expert, n: usize, out: Option<PathBuf>, exec: Exec) -> anyhow::Result<()> {
    let out = out.unwrap_or_else(|| cfg.output_dir.join("demos.jsonl"));
    let grid = &cfg.gridworld;
    let master = derive_seed(cfg.seed, STREAM_DEMOS, 0);
    let id = StateTransform::Identity;
    let (source, trajectories) = match &expert.policy {
        Some(path) => {
            let policy = load_policy(path)?;
            (stem(path), rollout_batch(grid, &id, &policy, master, STREAM_ROLLOUTS, 0, n, exec))
        }
        None => {
            let expert = |s: GridState, _: &mut Rng| edge_following_action(grid, s);
            ("edge-follower".to_string(), rollout_batch(grid, &id, &expert, master, STREAM_ROLLOUTS, 0, n, exec))
        }
    };
    let file = TrajectoryFile::new(grid.clone(), id, source, cfg.seed, trajectories);
    let mut bytes = Vec::new();
    file.write_to(&mut bytes)?;
    write_atomic(&out, &bytes)?;
    let goal = file.trajectories.iter().filter(|t| t.reached_goal).count();
    let mean_return = file.trajectories.iter().map(Trajectory::total_return).sum::<f64>() / n as f64;
    print_json(&serde_json::json!({
        "path": out,
        "episodes": n,
        "goal_reached": goal,
        "mean_return": mean_return,
    }))
}

/// Writes `heatmap_{domain}_{name}.svg` and `counts_{domain}_{name}.csv`.
fn write_heatmap(
    cfg: &ExperimentConfig,
    transform: &StateTransform,
    domain: &str,
    name: &str,
    episodes: &[Trajectory],
) -> anyhow::Result<()> {
    let grid = &cfg.gridworld;
    let map = TrajectoryHeatmap::from_episodes(grid, episodes, transform.apply(grid.start), transform.apply(grid.goal))?;
    let dir = &cfg.output_dir;
    write_atomic(&dir.join(format!("heatmap_{domain}_{name}.svg")), map.to_svg(&format!("{name} ({domain})")).as_bytes())?;
    write_atomic(&dir.join(format!("counts_{domain}_{name}.csv")), map.counts_csv().as_bytes())?;
    Ok(())
}

fn domain_transform(cfg: &ExperimentConfig, domain: Domain) -> StateTransform {
    match domain {
        Domain::Source => StateTransform::Identity,
        Domain::Target => cfg.transform(),
    }
}

fn cmd_run_tvd(cfg: &ExperimentConfig, source: &TvdSource, resume: bool, exec: Exec) -> anyhow::Result<()> {
    let grid = &cfg.gridworld;
    let transform = cfg.transform();
    let mut tvd_cfg = cfg.tvd_config();
    let (policy, demos, name) = match (&source.policy, &source.demos) {
        (Some(p), _) => (Some(load_policy(p)?), None, stem(p)),
        (None, Some(d)) => {
            require_file(d)?;
            let file = TrajectoryFile::load(d).with_context(|| format!("reading {}", d.display()))?;
            if file.header.gridworld != *grid {
                return Err(usage("demonstrations were recorded on a different grid"));
            }
            (None, Some(file.demo_set()?), stem(d))
        }
        (None, None) => unreachable!("clap requires one source"),
    };
    tvd_cfg.freeze_policy = policy.is_some();
    let data = match (&policy, &demos) {
        (Some(p), _) => SourceData::Policy(p),
        (None, Some(d)) => SourceData::Demos(d),
        _ => unreachable!(),
    };
    let run = TvDRun::new(grid, &transform, &tvd_cfg, data, exec)?;
    let dir = cfg.output_dir.clone();
    let ckpt = dir.join("tvd_state.bin");
    let state = if resume {
        load_tvd_state(cfg, &ckpt)?
    } else {
        run.initial_state()?
    };
    write_atomic(&dir.join("config.toml"), cfg.to_toml_string()?.as_bytes())?;
    let save = |s: &TvDState| -> anyhow::Result<()> {
        let mut bytes = Vec::new();
        s.write_to(&mut bytes)?;
        write_atomic(&ckpt, &bytes)?;
        write_atomic(&dir.join("metrics.csv"), metrics_csv(&s.history).as_bytes())?;
        Ok(())
    };
    let every = cfg.checkpoint_every;
    let mut pending: Option<anyhow::Error> = None;
    let result = run.run_from(state, |s| {
        if s.iteration % every == 0 {
            if let Err(e) = save(s) {
                pending = Some(e);
                return Err(tvd_core::Error::Io(std::io::Error::other("checkpoint failed")));
            }
            let last = s.history.last().expect("non-empty after a step");
            eprintln!(
                "iteration {}: estimate {:.4} target return {:.2} undo error {:.4}",
                s.iteration, last.wasserstein_estimate, last.target_return, last.undo_map_error
            );
        }
        Ok(())
    });
    let final_state = match (result, pending) {
        (_, Some(e)) => return Err(e),
        (r, None) => r?,
    };
    save(&final_state)?;

    let eval_seed = derive_seed(cfg.seed, "evaluate", 0);
    let episodes = 200;
    let undo: &(dyn StateMap + Sync) = &final_state.undo;
    let composed = Composed {
        policy: &final_state.policy,
        undo: Some(undo),
    };
    let target_eps = rollout_batch(grid, &transform, &composed, eval_seed, STREAM_ROLLOUTS, 0, episodes, exec);
    let source_eps = match &demos {
        Some(d) => d.trajectories().to_vec(),
        None => rollout_batch(grid, &StateTransform::Identity, &final_state.policy, eval_seed, STREAM_ROLLOUTS, 0, episodes, exec),
    };
    write_heatmap(cfg, &StateTransform::Identity, "source", &name, &source_eps)?;
    write_heatmap(cfg, &transform, "target", &name, &target_eps)?;
    let stats = evaluate_policy(grid, &transform, &final_state.policy, Some(undo), GATE_EVAL_EPISODES, eval_seed, exec);
    let summary = serde_json::json!({
        "iterations": final_state.iteration,
        "undo_params": final_state.undo.params(),
        "undo_map_error": run.undo_error(&final_state.undo),
        "final_estimate": final_state.history.last().map(|r| r.wasserstein_estimate),
        "composed": stats,
    });
    write_atomic(&dir.join("summary.json"), serde_json::to_string_pretty(&summary)?.as_bytes())?;
    print_json(&summary)
}

fn view_undo(cfg: &ExperimentConfig, view: &View) -> anyhow::Result<Option<UndoMap>> {
    view.tvd_state.as_deref().map(|p| load_tvd_state(cfg, p).map(|s| s.undo)).transpose()
}

fn cmd_evaluate(cfg: &ExperimentConfig, policy: &Path, view: &View, episodes: usize, exec: Exec) -> anyhow::Result<()> {
    if episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let p = load_policy(policy)?;
    let undo = view_undo(cfg, view)?;
    let transform = domain_transform(cfg, view.domain);
    let stats = evaluate_policy(
        &cfg.gridworld,
        &transform,
        &p,
        undo.as_ref().map(|u| u as &(dyn StateMap + Sync)),
        episodes,
        derive_seed(cfg.seed, "evaluate", 0),
        exec,
    );
    print_json(&stats)
}

fn cmd_render(cfg: &ExperimentConfig, policy: &Path, view: &View, episodes: usize, exec: Exec) -> anyhow::Result<()> {
    if episodes == 0 {
        return Err(usage("--episodes must be positive"));
    }
    let p = load_policy(policy)?;
    let undo = view_undo(cfg, view)?;
    let transform = domain_transform(cfg, view.domain);
    let composed = Composed {
        policy: &p,
        undo: undo.as_ref().map(|u| u as &(dyn StateMap + Sync)),
    };
    let eps = rollout_batch(
        &cfg.gridworld,
        &transform,
        &composed,
        derive_seed(cfg.seed, "render", 0),
        STREAM_ROLLOUTS,
        0,
        episodes,
        exec,
    );
    let domain = match view.domain {
        Domain::Source => "source",
        Domain::Target => "target",
    };
    let name = stem(policy);
    write_heatmap(cfg, &transform, domain, &name, &eps)?;
    print_json(&serde_json::json!({
        "svg": cfg.output_dir.join(format!("heatmap_{domain}_{name}.svg")),
        "counts": cfg.output_dir.join(format!("counts_{domain}_{name}.csv")),
        "episodes": episodes,
    }))
}
