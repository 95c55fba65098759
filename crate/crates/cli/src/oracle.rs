use clap::{Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde_json::json;
use tvd_core::config::ExperimentConfig;
use tvd_core::costs::dtw;
use tvd_core::divergences::FDivKind;
use tvd_core::gridworld::{GridState, StateTransform};
use tvd_core::oracle::{
    bfs_shortest_path, dtw_brute_force, enumerate_trajectories, exact_f_divergence, exact_ot_points, toy_mdp,
};

use crate::{print_json, usage};

#[derive(Debug, Subcommand)]
pub enum OracleTool {
    /// Exact optimal transport between weighted points, Euclidean cost.
    OtLp {
        /// JSON list of `[x, y, weight]`.
        #[arg(long)]
        p: String,
        #[arg(long)]
        q: String,
    },
    /// DTW by enumerating every warping path (lengths up to 10).
    DtwBrute {
        /// JSON list of `[x, y]`.
        #[arg(long)]
        a: String,
        #[arg(long)]
        b: String,
    },
    /// Shortest start-to-goal path length on the configured grid.
    Bfs,
    /// Closed-form f-divergence between probability vectors.
    FdivExact {
        #[arg(long, value_enum)]
        kind: Kind,
        /// JSON list of probabilities.
        #[arg(long)]
        p: String,
        #[arg(long)]
        q: String,
    },
    /// Every trajectory of the two-cell toy MDP with its probability.
    EnumMdp {
        /// JSON `[left, right, up, down]` action probabilities (default uniform).
        #[arg(long)]
        probs: Option<String>,
        /// Observe states without the half-turn transform.
        #[arg(long)]
        no_transform: bool,
    },
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum Kind {
    Chi2,
    Tv,
    Kl,
}

impl From<Kind> for FDivKind {
    fn from(k: Kind) -> Self {
        match k {
            Kind::Chi2 => FDivKind::Chi2,
            Kind::Tv => FDivKind::Tv,
            Kind::Kl => FDivKind::Kl,
        }
    }
}

fn parse<T: DeserializeOwned>(name: &str, text: &str) -> anyhow::Result<T> {
    serde_json::from_str(text).map_err(|e| usage(format!("--{name}: {e}")))
}

fn points(name: &str, text: &str) -> anyhow::Result<Vec<(GridState, f64)>> {
    let raw: Vec<[f64; 3]> = parse(name, text)?;
    Ok(raw.into_iter().map(|[x, y, w]| (GridState::new(x, y), w)).collect())
}

fn states(name: &str, text: &str) -> anyhow::Result<Vec<GridState>> {
    let raw: Vec<[f64; 2]> = parse(name, text)?;
    Ok(raw.into_iter().map(|[x, y]| GridState::new(x, y)).collect())
}

pub fn run(tool: &OracleTool, cfg: &ExperimentConfig) -> anyhow::Result<()> {
    match tool {
        OracleTool::OtLp { p, q } => {
            let value = exact_ot_points(&points("p", p)?, &points("q", q)?)?;
            print_json(&json!({ "oracle": "ot-lp", "value": value }))
        }
        OracleTool::DtwBrute { a, b } => {
            let (a, b) = (states("a", a)?, states("b", b)?);
            let brute = dtw_brute_force(&a, &b)?;
            let dp = dtw(&a, &b)?;
            print_json(&json!({
                "oracle": "dtw-brute",
                "distance": brute.distance,
                "paths": brute.paths,
                "dp_distance": dp.distance,
                "agrees": brute.distance == dp.distance,
            }))
        }
        OracleTool::Bfs => {
            let len = bfs_shortest_path(&cfg.gridworld)?;
            print_json(&json!({ "oracle": "bfs", "shortest_path": len }))
        }
        OracleTool::FdivExact { kind, p, q } => {
            let value = exact_f_divergence((*kind).into(), &parse::<Vec<f64>>("p", p)?, &parse::<Vec<f64>>("q", q)?)?;
            // JSON has no infinity; unbounded divergences print as null.
            let value = value.is_finite().then_some(value);
            print_json(&json!({ "oracle": "fdiv-exact", "value": value }))
        }
        OracleTool::EnumMdp { probs, no_transform } => {
            let pa: [f64; 4] = match probs {
                Some(text) => parse("probs", text)?,
                None => [0.25; 4],
            };
            if pa.iter().any(|p| !(*p >= 0.0)) || (pa.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return Err(usage("--probs must be a probability vector"));
            }
            let (spec, half_turn) = toy_mdp();
            let t = if *no_transform { StateTransform::Identity } else { half_turn };
            let all = enumerate_trajectories(&spec, &t, &|_| pa)?;
            let total: f64 = all.iter().map(|w| w.probability).sum();
            let goal: f64 = all.iter().filter(|w| w.trajectory.reached_goal).map(|w| w.probability).sum();
            let rows: Vec<_> = all
                .iter()
                .map(|w| {
                    json!({
                        "states": w.trajectory.states.iter().map(|s| [s.x, s.y]).collect::<Vec<_>>(),
                        "actions": w.trajectory.actions,
                        "probability": w.probability,
                    })
                })
                .collect();
            print_json(&json!({
                "oracle": "enum-mdp",
                "trajectories": rows,
                "total_probability": total,
                "goal_probability": goal,
            }))
        }
    }
}
