use std::collections::{HashMap, HashSet};
use std::f64::consts::FRAC_PI_2;

use tvd_core::exec::Exec;
use tvd_core::gridworld::{rollout_batch, GridWorldSpec, StateTransform};
use tvd_core::oracle::bfs_shortest_path;
use tvd_core::policy::{evaluate_policy, train_source, Regime, StateMap};
use tvd_core::tvd::UndoMap;

const SEED: u64 = 1;

#[test]
fn low_entropy_modal_return_is_the_shortest_path() {
    let spec = GridWorldSpec::default();
    let shortest = bfs_shortest_path(&spec).unwrap().unwrap() as i64;
    let (policy, _) = train_source(&spec, Regime::LowEntropyOptimal, SEED).unwrap();
    let episodes = rollout_batch(&spec, &StateTransform::Identity, &policy, 5, "modal", 0, 200, Exec::default());
    let mut counts: HashMap<i64, usize> = HashMap::new();
    for t in &episodes {
        *counts.entry(t.total_return().round() as i64).or_default() += 1;
    }
    let (modal, _) = counts.into_iter().max_by_key(|&(r, n)| (n, r)).unwrap();
    assert_eq!(modal, -shortest);
    assert_eq!(modal, -14);
}

#[test]
fn high_entropy_source_uses_many_goal_paths() {
    let spec = GridWorldSpec::default();
    let (policy, _) = train_source(&spec, Regime::HighEntropyOptimal, SEED).unwrap();
    let episodes = rollout_batch(&spec, &StateTransform::Identity, &policy, 5, "paths", 0, 200, Exec::default());
    let paths: HashSet<Vec<(i64, i64)>> = episodes
        .iter()
        .filter(|t| t.reached_goal)
        .map(|t| t.states.iter().map(|s| (s.x as i64, s.y as i64)).collect())
        .collect();
    assert!(paths.len() >= 30, "{} distinct goal paths", paths.len());
}

#[test]
fn suboptimal_source_sometimes_misses_the_goal() {
    let spec = GridWorldSpec::default();
    let (policy, _) = train_source(&spec, Regime::HighEntropySuboptimal, SEED).unwrap();
    let episodes = rollout_batch(&spec, &StateTransform::Identity, &policy, 5, "misses", 0, 200, Exec::default());
    assert!(episodes.iter().any(|t| !t.reached_goal));
    assert!(episodes.iter().all(|t| t.len() <= spec.horizon));
}

#[test]
fn training_is_reproducible() {
    let spec = GridWorldSpec::default();
    let (a, ra) = train_source(&spec, Regime::HighEntropyOptimal, 3).unwrap();
    let (b, rb) = train_source(&spec, Regime::HighEntropyOptimal, 3).unwrap();
    assert_eq!(a.params(), b.params());
    assert_eq!(ra, rb);
}

#[test]
fn optimal_policy_across_domains() {
    let spec = GridWorldSpec::default();
    let t = StateTransform::rotation(&spec, FRAC_PI_2);
    let (policy, _) = train_source(&spec, Regime::LowEntropyOptimal, SEED).unwrap();
    let eval = |transform: &StateTransform, undo: Option<&(dyn StateMap + Sync)>| {
        evaluate_policy(&spec, transform, &policy, undo, 500, 9, Exec::default()).goal_rate
    };
    assert_eq!(eval(&StateTransform::Identity, None), 1.0);
    assert_eq!(eval(&t, None), 0.0);
    let exact = UndoMap::linear(&spec, t.inverse().matrix());
    assert_eq!(eval(&t, Some(&exact)), 1.0);
}
