//! Trains a source policy, learns an undo map for the quarter-turn target and
//! prints the adaptation curves.
//!
//! `cargo run --release --example transfer -- <regime> <seed> [key=value ...]`
//! with keys `outer_lr`, `alpha`, `inner`, `iters`, `potential_lr`, `value_scale`,
//! `optimizer` (sgd|adam), `mode` (dtw|state), `warmup`, `batch`, `rollouts`.

use std::f64::consts::FRAC_PI_2;
use std::time::Instant;

use tvd_core::costs::CostMode;
use tvd_core::exec::Exec;
use tvd_core::gridworld::{GridWorldSpec, StateTransform};
use tvd_core::metrics::trend;
use tvd_core::nn::OptimizerKind;
use tvd_core::policy::{evaluate_policy, train_source, Regime};
use tvd_core::tvd::{SourceData, TvDConfig, TvDRun};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    if args.len() < 3 {
        eprintln!("usage: transfer <regime> <seed> [key=value ...]");
        std::process::exit(2);
    }
    let regime: Regime = args[1].parse().expect("regime");
    let seed: u64 = args[2].parse().expect("seed");
    let spec = GridWorldSpec::default();
    let transform = StateTransform::rotation(&spec, FRAC_PI_2);
    let mut cfg = TvDConfig {
        seed,
        ..TvDConfig::default()
    };
    for kv in &args[3..] {
        let (k, v) = kv.split_once('=').expect("key=value");
        match k {
            "outer_lr" => cfg.outer_lr = v.parse().expect("number"),
            "alpha" => cfg.divergence.alpha = v.parse().expect("number"),
            "inner" => cfg.divergence.inner_steps = v.parse().expect("integer"),
            "iters" => cfg.outer_iterations = v.parse().expect("integer"),
            "potential_lr" => cfg.divergence.potential_lr = v.parse().expect("number"),
            "value_scale" => cfg.divergence.value_scale = v.parse().expect("number"),
            "optimizer" => cfg.outer_optimizer = if v == "adam" { OptimizerKind::Adam } else { OptimizerKind::Sgd },
            "mode" => cfg.divergence.cost.mode = if v == "state" { CostMode::StateL2 } else { CostMode::TrajectoryDtw },
            "warmup" => cfg.warmup_steps = v.parse().expect("integer"),
            "batch" => cfg.divergence.batch_size = v.parse().expect("integer"),
            "rollouts" => cfg.rollout_batch = v.parse().expect("integer"),
            _ => panic!("unknown key {k}"),
        }
    }
    let t0 = Instant::now();
    let (source, report) = train_source(&spec, regime, seed).expect("source training");
    println!(
        "source {regime}: goal {:.3} entropy {:.3} gate passed {} ({:.1}s)",
        report.stats.goal_rate,
        report.stats.mean_entropy,
        report.passed,
        t0.elapsed().as_secs_f64()
    );
    let run = TvDRun::new(&spec, &transform, &cfg, SourceData::Policy(&source), Exec::default()).expect("config");
    let state = run
        .run_from(run.initial_state().expect("initial state"), |s| {
            let r = s.history.last().expect("history");
            if r.iteration % 25 == 0 {
                println!(
                    "it {:4} W {:9.3} return {:7.2} error {:7.3} ({:.0}s)",
                    r.iteration,
                    r.wasserstein_estimate,
                    r.target_return,
                    r.undo_map_error,
                    t0.elapsed().as_secs_f64()
                );
            }
            Ok(())
        })
        .expect("run");
    let stats = evaluate_policy(&spec, &transform, &source, Some(&state.undo), 1000, seed, Exec::default());
    let curve: Vec<f64> = state.history.iter().map(|r| r.wasserstein_estimate).collect();
    println!(
        "final error {:.4} goal {:.3} W trend {:?} ({:.1}s)",
        run.undo_error(&state.undo),
        stats.goal_rate,
        trend(&curve),
        t0.elapsed().as_secs_f64()
    );
}
