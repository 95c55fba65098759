use std::f64::consts::PI;

use super::dtw_brute::dtw_brute_force;
use crate::costs::{state_cost, CostMode};
use crate::divergences::{DualPotentials, FDivKind, FPotential, Featurizer};
use crate::error::{Error, Result};
use crate::gridworld::{step, Action, GridState, GridWorldSpec, StateTransform, Trajectory};
use crate::policy::NUM_ACTIONS;

/// Longest horizon accepted by [`enumerate_trajectories`].
pub const ENUM_MAX_HORIZON: usize = 8;

/// A trajectory and its exact probability.
#[derive(Debug, Clone, PartialEq)]
pub struct Weighted {
    pub trajectory: Trajectory,
    pub probability: f64,
}

/// Two-cell corridor (start `(0, 0)`, goal `(1, 0)`, horizon 3) and the half
/// turn about its center, which swaps the two cells.
pub fn toy_mdp() -> (GridWorldSpec, StateTransform) {
    let spec = GridWorldSpec {
        width: 2,
        height: 1,
        start: GridState::new(0.0, 0.0),
        goal: GridState::new(1.0, 0.0),
        horizon: 3,
        step_reward: -1.0,
    };
    let t = StateTransform::rotation(&spec, PI);
    (spec, t)
}

/// Every episode of the sampler whose action probabilities at an observed
/// state are `probs(observed)`, with its probability. Zero-probability
/// branches are dropped.
pub fn enumerate_trajectories(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    probs: &dyn Fn(GridState) -> [f64; NUM_ACTIONS],
) -> Result<Vec<Weighted>> {
    spec.validate()?;
    if spec.horizon > ENUM_MAX_HORIZON {
        return Err(Error::InstanceTooLarge {
            oracle: "enum-mdp",
            detail: format!("horizon {}, limit {ENUM_MAX_HORIZON}", spec.horizon),
        });
    }
    let mut out = Vec::new();
    let mut prefix = Trajectory {
        states: vec![transform.apply(spec.start)],
        actions: Vec::new(),
        rewards: Vec::new(),
        reached_goal: false,
    };
    expand(spec, transform, probs, spec.start, 1.0, &mut prefix, &mut out)?;
    Ok(out)
}

fn expand(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    probs: &dyn Fn(GridState) -> [f64; NUM_ACTIONS],
    s: GridState,
    prob: f64,
    prefix: &mut Trajectory,
    out: &mut Vec<Weighted>,
) -> Result<()> {
    let pa = probs(*prefix.states.last().expect("non-empty"));
    for a in Action::ALL {
        let p = prob * pa[a.index()];
        if p == 0.0 {
            continue;
        }
        let (next, r, done) = step(spec, s, a)?;
        prefix.states.push(transform.apply(next));
        prefix.actions.push(a);
        prefix.rewards.push(r);
        if done || prefix.actions.len() == spec.horizon {
            let mut t = prefix.clone();
            t.reached_goal = done;
            out.push(Weighted {
                trajectory: t,
                probability: p,
            });
        } else {
            expand(spec, transform, probs, next, p, prefix, out)?;
        }
        prefix.states.pop();
        prefix.actions.pop();
        prefix.rewards.pop();
    }
    Ok(())
}

/// Weighted items (features, weight, states-or-state) for one side.
struct Items {
    features: Vec<Vec<f64>>,
    weights: Vec<f64>,
    seqs: Vec<Vec<GridState>>,
}

fn items(featurizer: &Featurizer, side: &[Weighted]) -> Items {
    let mut it = Items {
        features: Vec::new(),
        weights: Vec::new(),
        seqs: Vec::new(),
    };
    for w in side {
        let states = &w.trajectory.states;
        match featurizer.mode {
            CostMode::TrajectoryDtw => {
                it.features.push(featurizer.trajectory(states));
                it.weights.push(w.probability);
                it.seqs.push(states.clone());
            }
            CostMode::StateL2 => {
                for s in states {
                    it.features.push(featurizer.state(*s));
                    it.weights.push(w.probability / states.len() as f64);
                    it.seqs.push(vec![*s]);
                }
            }
        }
    }
    it
}

/// Population value of `E_p1 h + E_p2 g - α E_{p1⊗p2} (h + g - c)_+` over
/// enumerated distributions; `second` holds already-undone trajectories.
pub fn exact_wasserstein_objective(
    featurizer: &Featurizer,
    first: &[Weighted],
    second: &[Weighted],
    pot: &DualPotentials,
    alpha: f64,
) -> Result<f64> {
    let (a, b) = (items(featurizer, first), items(featurizer, second));
    let h: Vec<f64> = a.features.iter().map(|x| pot.h(x)).collect();
    let g: Vec<f64> = b.features.iter().map(|x| pot.g(x)).collect();
    let mut value = 0.0;
    for (hi, wi) in h.iter().zip(&a.weights) {
        value += wi * hi;
    }
    for (gk, wk) in g.iter().zip(&b.weights) {
        value += wk * gk;
    }
    for (i, sa) in a.seqs.iter().enumerate() {
        for (k, sb) in b.seqs.iter().enumerate() {
            let c = match featurizer.mode {
                CostMode::TrajectoryDtw => dtw_brute_force(sa, sb)?.distance,
                CostMode::StateL2 => state_cost(sa[0], sb[0]),
            };
            value -= alpha * a.weights[i] * b.weights[k] * (h[i] + g[k] - c).max(0.0);
        }
    }
    Ok(value)
}

/// Population value of `E_p1 g - E_p2 f*(g)` over enumerated distributions.
pub fn exact_f_div_objective(featurizer: &Featurizer, first: &[Weighted], second: &[Weighted], pot: &FPotential, kind: FDivKind) -> f64 {
    let (a, b) = (items(featurizer, first), items(featurizer, second));
    let pos: f64 = a.features.iter().zip(&a.weights).map(|(x, w)| w * kind.link(pot.raw(x))).sum();
    let neg: f64 = b
        .features
        .iter()
        .zip(&b.weights)
        .map(|(x, w)| w * kind.conjugate(kind.link(pot.raw(x))))
        .sum();
    pos - neg
}

/// Central difference `(f(x + hv) - f(x - hv)) / 2h`.
pub fn directional_derivative(f: impl Fn(&[f64]) -> f64, x: &[f64], v: &[f64], h: f64) -> f64 {
    let up: Vec<f64> = x.iter().zip(v).map(|(a, b)| a + h * b).collect();
    let dn: Vec<f64> = x.iter().zip(v).map(|(a, b)| a - h * b).collect();
    (f(&up) - f(&dn)) / (2.0 * h)
}
