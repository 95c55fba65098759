//! Learns a policy from edge-following demonstrations in the untransformed
//! grid and prints the matching curve.
//!
//! `cargo run --release --example imitation -- <seed> [key=value ...]` with keys
//! `policy_lr`, `iters`, `inner`, `alpha`, `warmup`, `batch`, `rollouts`,
//! `mode` (dtw|state), `optimizer` (sgd|adam).

use std::time::Instant;

use tvd_core::costs::CostMode;
use tvd_core::exec::Exec;
use tvd_core::gridworld::{rollout_batch, GridState, GridWorldSpec, StateTransform};
use tvd_core::nn::OptimizerKind;
use tvd_core::policy::{edge_following_action, evaluate_policy, DemoSet};
use tvd_core::rng::{Rng, STREAM_DEMOS};
use tvd_core::tvd::{SourceData, TvDConfig, TvDRun};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 2 {
        eprintln!("usage: imitation <seed> [key=value ...]");
        std::process::exit(2);
    }
    let seed: u64 = args[1].parse().expect("seed");
    let spec = GridWorldSpec::default();
    let id = StateTransform::Identity;
    let mut cfg = TvDConfig {
        seed,
        freeze_policy: false,
        learn_undo: false,
        outer_iterations: 300,
        ..TvDConfig::default()
    };
    for kv in &args[2..] {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k {
            "policy_lr" => cfg.policy_lr = v.parse().expect("number"),
            "iters" => cfg.outer_iterations = v.parse().expect("integer"),
            "inner" => cfg.divergence.inner_steps = v.parse().expect("integer"),
            "alpha" => cfg.divergence.alpha = v.parse().expect("number"),
            "warmup" => cfg.warmup_steps = v.parse().expect("integer"),
            "batch" => cfg.divergence.batch_size = v.parse().expect("integer"),
            "rollouts" => cfg.rollout_batch = v.parse().expect("integer"),
            "mode" => cfg.divergence.cost.mode = if v == "state" { CostMode::StateL2 } else { CostMode::TrajectoryDtw },
            "optimizer" => cfg.outer_optimizer = if v == "adam" { OptimizerKind::Adam } else { OptimizerKind::Sgd },
            _ => panic!("unknown key {k}"),
        }
    }
    let t0 = Instant::now();
    let expert = |s: GridState, _: &mut Rng| edge_following_action(&spec, s);
    let demos = DemoSet::new(&spec, rollout_batch(&spec, &id, &expert, seed, STREAM_DEMOS, 0, 10, Exec::default()))
        .expect("demonstrations");
    let run = TvDRun::new(&spec, &id, &cfg, SourceData::Demos(&demos), Exec::default()).expect("config");
    let state = run
        .run_from(run.initial_state().expect("initial state"), |s| {
            let r = s.history.last().expect("history");
            if r.iteration % 25 == 0 {
                let st = evaluate_policy(&spec, &id, &s.policy, None, 200, seed, Exec::default());
                println!(
                    "it {:4} W {:9.3} return {:7.2} goal {:.3} entropy {:.3} ({:.0}s)",
                    r.iteration,
                    r.wasserstein_estimate,
                    r.target_return,
                    st.goal_rate,
                    st.mean_entropy,
                    t0.elapsed().as_secs_f64()
                );
            }
            Ok(())
        })
        .expect("run");
    let stats = evaluate_policy(&spec, &id, &state.policy, None, 1000, seed, Exec::default());
    let first = state.history.first().expect("history").wasserstein_estimate;
    let last = state.history.last().expect("history").wasserstein_estimate;
    println!(
        "W {first:.3} -> {last:.3} goal {:.3} ({:.1}s)",
        stats.goal_rate,
        t0.elapsed().as_secs_f64()
    );
}
