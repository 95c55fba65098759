//! Softmax policies over normalized grid coordinates and the source-domain trainer.

use std::collections::HashMap;
use std::io::{Read, Write};

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{rollout_batch, Action, ActionSampler, GridState, GridWorldSpec, StateTransform, Trajectory};
use crate::nn::{self, Adam, Architecture, Mlp};
use crate::rng::{substream, Rng, STREAM_ROLLOUTS, STREAM_SOURCE_TRAINING};

pub const NUM_ACTIONS: usize = 4;

/// Anything that maps observed states to states a policy understands.
pub trait StateMap {
    fn map_state(&self, s: GridState) -> GridState;
}

impl StateMap for StateTransform {
    fn map_state(&self, s: GridState) -> GridState {
        self.apply(s)
    }
}

pub fn reference_architecture() -> Architecture {
    Architecture::new(2, &[32, 32], NUM_ACTIONS)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    net: Mlp,
    /// Coordinate scales mapping `[0, side-1]` onto `[-1, 1]`.
    scale: [f64; 2],
}

pub fn softmax(logits: &[f64]) -> [f64; NUM_ACTIONS] {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut p = [0.0; NUM_ACTIONS];
    let mut z = 0.0;
    for (pi, l) in p.iter_mut().zip(logits) {
        *pi = (l - max).exp();
        z += *pi;
    }
    p.iter_mut().for_each(|pi| *pi /= z);
    p
}

pub fn entropy(p: &[f64; NUM_ACTIONS]) -> f64 {
    -p.iter().filter(|&&q| q > 0.0).map(|q| q * q.ln()).sum::<f64>()
}

impl Policy {
    pub fn new(spec: &GridWorldSpec, net: Mlp) -> Self {
        assert_eq!(net.input_dim(), 2);
        assert_eq!(net.output_dim(), NUM_ACTIONS);
        Policy {
            net,
            scale: [spec.norm_x_scale(), spec.norm_y_scale()],
        }
    }

    pub fn random(spec: &GridWorldSpec, rng: &mut Rng) -> Self {
        Policy::new(spec, Mlp::new(reference_architecture(), rng))
    }

    /// Uniform over actions everywhere (zero output layer).
    pub fn uniform(spec: &GridWorldSpec, rng: &mut Rng) -> Self {
        Policy::new(spec, Mlp::new_zero_output(reference_architecture(), rng))
    }

    pub fn net(&self) -> &Mlp {
        &self.net
    }

    pub fn params(&self) -> &[f64] {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        self.net.params_mut()
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    fn input(&self, s: GridState) -> [f64; 2] {
        [self.scale[0] * s.x - 1.0, self.scale[1] * s.y - 1.0]
    }

    pub fn logits(&self, s: GridState) -> Vec<f64> {
        self.net.forward(&self.input(s))
    }

    pub fn action_distribution(&self, s: GridState) -> [f64; NUM_ACTIONS] {
        softmax(&self.logits(s))
    }

    pub fn entropy_at(&self, s: GridState) -> f64 {
        entropy(&self.action_distribution(s))
    }

    pub fn sample(&self, s: GridState, rng: &mut Rng) -> Action {
        sample_from(&self.action_distribution(s), rng)
    }

    /// Adds `scale * d/dθ log π(a|s)` into `grad` and returns `d/ds log π(a|s)`.
    pub fn log_prob_grad_into(&self, s: GridState, a: Action, grad: &mut [f64], scale: f64) -> [f64; 2] {
        let trace = self.net.forward_trace(&self.input(s));
        let p = softmax(trace.output());
        let mut dy = [0.0; NUM_ACTIONS];
        for (k, d) in dy.iter_mut().enumerate() {
            *d = if k == a.index() { 1.0 } else { 0.0 } - p[k];
        }
        let dx = self.net.backward_into(&trace, &dy, grad, scale);
        [dx[0] * self.scale[0], dx[1] * self.scale[1]]
    }

    /// Gradient of `log π(a|s)` with respect to the parameters and to the state.
    pub fn log_prob_grad(&self, s: GridState, a: Action) -> (Vec<f64>, [f64; 2]) {
        let mut g = vec![0.0; self.num_params()];
        let ds = self.log_prob_grad_into(s, a, &mut g, 1.0);
        (g, ds)
    }

    pub fn log_prob(&self, s: GridState, a: Action) -> f64 {
        self.action_distribution(s)[a.index()].ln()
    }

    /// Adds `scale * dH(π(·|s))/dθ` into `grad`; returns the entropy.
    pub fn entropy_grad_into(&self, s: GridState, grad: &mut [f64], scale: f64) -> f64 {
        let trace = self.net.forward_trace(&self.input(s));
        let p = softmax(trace.output());
        let h = entropy(&p);
        let mut dy = [0.0; NUM_ACTIONS];
        for k in 0..NUM_ACTIONS {
            dy[k] = if p[k] > 0.0 { -p[k] * (p[k].ln() + h) } else { 0.0 };
        }
        self.net.backward_into(&trace, &dy, grad, scale);
        h
    }

    pub fn write_checkpoint<W: Write>(&self, w: &mut W, training_seed: u64) -> Result<()> {
        w.write_all(POLICY_MAGIC)?;
        nn::write_u64(w, training_seed)?;
        nn::write_f64s(w, &self.scale)?;
        self.net.write_to(w)
    }

    /// Returns the policy and the seed it was trained with.
    pub fn read_checkpoint<R: Read>(r: &mut R) -> Result<(Policy, u64)> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != POLICY_MAGIC {
            return Err(Error::format("policy checkpoint", "bad magic"));
        }
        let seed = nn::read_u64(r)?;
        let scale = nn::read_f64s(r)?;
        if scale.len() != 2 {
            return Err(Error::format("policy checkpoint", "bad coordinate scale"));
        }
        let net = Mlp::read_from(r)?;
        if net.input_dim() != 2 || net.output_dim() != NUM_ACTIONS {
            return Err(Error::format("policy checkpoint", "network is not a 2->4 policy"));
        }
        Ok((
            Policy {
                net,
                scale: [scale[0], scale[1]],
            },
            seed,
        ))
    }
}

const POLICY_MAGIC: &[u8; 8] = b"TVDPOL01";

pub fn sample_from(p: &[f64; NUM_ACTIONS], rng: &mut Rng) -> Action {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (k, q) in p.iter().enumerate() {
        acc += q;
        if u < acc {
            return Action::from_index(k);
        }
    }
    // rounding left u above the last cumulative sum
    Action::from_index(p.iter().rposition(|&q| q > 0.0).unwrap_or(NUM_ACTIONS - 1))
}

impl ActionSampler for Policy {
    fn sample(&self, observed: GridState, rng: &mut Rng) -> Action {
        Policy::sample(self, observed, rng)
    }
}

/// Samples `a ~ π(·|u(s))`.
pub struct Composed<'a> {
    pub policy: &'a Policy,
    pub undo: Option<&'a (dyn StateMap + Sync)>,
}

impl Composed<'_> {
    pub fn view(&self, s: GridState) -> GridState {
        match self.undo {
            Some(u) => u.map_state(s),
            None => s,
        }
    }
}

impl ActionSampler for Composed<'_> {
    fn sample(&self, observed: GridState, rng: &mut Rng) -> Action {
        self.policy.sample(self.view(observed), rng)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyStats {
    pub goal_rate: f64,
    pub mean_return: f64,
    /// Mean entropy of π over every state where an action was taken.
    pub mean_entropy: f64,
}

pub fn stats_of(policy: &Policy, undo: Option<&(dyn StateMap + Sync)>, episodes: &[Trajectory]) -> PolicyStats {
    let n = episodes.len().max(1) as f64;
    let goal_rate = episodes.iter().filter(|t| t.reached_goal).count() as f64 / n;
    let mean_return = episodes.iter().map(Trajectory::total_return).sum::<f64>() / n;
    let composed = Composed { policy, undo };
    let (mut h, mut steps) = (0.0, 0usize);
    for t in episodes {
        for s in &t.states[..t.len()] {
            h += policy.entropy_at(composed.view(*s));
            steps += 1;
        }
    }
    PolicyStats {
        goal_rate,
        mean_return,
        mean_entropy: if steps > 0 { h / steps as f64 } else { 0.0 },
    }
}

pub fn evaluate_policy(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    policy: &Policy,
    undo: Option<&(dyn StateMap + Sync)>,
    episodes: usize,
    seed: u64,
    exec: Exec,
) -> PolicyStats {
    assert!(episodes >= 1, "evaluate_policy needs at least one episode");
    let sampler = Composed { policy, undo };
    let trajs = rollout_batch(spec, transform, &sampler, seed, STREAM_ROLLOUTS, 0, episodes, exec);
    stats_of(policy, undo, &trajs)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    LowEntropyOptimal,
    HighEntropyOptimal,
    HighEntropySuboptimal,
}

impl std::str::FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "LowEntropyOptimal" | "low-entropy-optimal" => Ok(Regime::LowEntropyOptimal),
            "HighEntropyOptimal" | "high-entropy-optimal" => Ok(Regime::HighEntropyOptimal),
            "HighEntropySuboptimal" | "high-entropy-suboptimal" => Ok(Regime::HighEntropySuboptimal),
            other => Err(Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

impl std::fmt::Display for Regime {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Regime::LowEntropyOptimal => "low-entropy-optimal",
            Regime::HighEntropyOptimal => "high-entropy-optimal",
            Regime::HighEntropySuboptimal => "high-entropy-suboptimal",
        };
        f.write_str(s)
    }
}

/// Acceptance window for a trained regime.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegimeGate {
    pub goal_rate_min: f64,
    pub goal_rate_max: f64,
    pub entropy_min: f64,
    pub entropy_max: f64,
}

impl RegimeGate {
    pub fn for_regime(regime: Regime) -> Self {
        match regime {
            Regime::LowEntropyOptimal => RegimeGate {
                goal_rate_min: 0.95,
                goal_rate_max: 1.0,
                entropy_min: 0.0,
                entropy_max: 0.3,
            },
            Regime::HighEntropyOptimal => RegimeGate {
                goal_rate_min: 0.95,
                goal_rate_max: 1.0,
                entropy_min: 0.7,
                entropy_max: f64::INFINITY,
            },
            Regime::HighEntropySuboptimal => RegimeGate {
                goal_rate_min: 0.1,
                goal_rate_max: 0.8,
                entropy_min: 0.7,
                entropy_max: f64::INFINITY,
            },
        }
    }

    pub fn accepts(&self, s: &PolicyStats) -> bool {
        s.goal_rate >= self.goal_rate_min
            && s.goal_rate <= self.goal_rate_max
            && s.mean_entropy >= self.entropy_min
            && s.mean_entropy <= self.entropy_max
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainerConfig {
    /// Entropy bonus coefficient.
    pub beta: f64,
    pub lr: f64,
    pub episodes_per_update: usize,
    pub max_updates: usize,
    pub eval_every: usize,
    pub eval_episodes: usize,
    /// Training stops early once this tighter window is met.
    pub stop: RegimeGate,
    /// Optional cap on mean return for stopping (used to demand shortest paths).
    pub stop_min_return: Option<f64>,
    /// Exponential-averaging rate of the per-cell return baseline.
    pub baseline_rate: f64,
    pub warm_start: WarmStart,
}

/// Initial policy before policy-gradient training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WarmStart {
    /// Uniform action distribution everywhere.
    Uniform,
    /// Cross-entropy fit of [`edge_following_action`].
    EdgeFollower,
}

impl TrainerConfig {
    pub fn for_regime(regime: Regime) -> Self {
        let base = TrainerConfig {
            beta: 0.0,
            lr: 0.01,
            episodes_per_update: 16,
            max_updates: 3000,
            eval_every: 25,
            eval_episodes: 200,
            stop: RegimeGate::for_regime(regime),
            stop_min_return: None,
            baseline_rate: 0.1,
            warm_start: WarmStart::Uniform,
        };
        match regime {
            Regime::LowEntropyOptimal => TrainerConfig {
                beta: 0.0,
                stop: RegimeGate {
                    goal_rate_min: 0.99,
                    goal_rate_max: 1.0,
                    entropy_min: 0.0,
                    entropy_max: 0.15,
                },
                stop_min_return: Some(-14.5),
                warm_start: WarmStart::EdgeFollower,
                ..base
            },
            Regime::HighEntropyOptimal => TrainerConfig {
                beta: 0.6,
                stop: RegimeGate {
                    goal_rate_min: 0.985,
                    goal_rate_max: 1.0,
                    entropy_min: 0.8,
                    entropy_max: f64::INFINITY,
                },
                ..base
            },
            Regime::HighEntropySuboptimal => TrainerConfig {
                beta: 0.6,
                lr: 0.003,
                eval_every: 5,
                stop: RegimeGate {
                    goal_rate_min: 0.3,
                    goal_rate_max: 0.6,
                    entropy_min: 0.9,
                    entropy_max: f64::INFINITY,
                },
                ..base
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub regime: Regime,
    pub seed: u64,
    pub updates: usize,
    pub stats: PolicyStats,
    pub gate: RegimeGate,
    pub passed: bool,
}

/// Seed offset of the held-out evaluation that decides the regime gate.
const GATE_EVAL_STREAM: u64 = 0x005e_ed0f_9a7e;
pub const GATE_EVAL_EPISODES: usize = 1000;

/// Entropy-regularized episodic policy gradient in the source domain.
///
/// Uses soft returns `G_t = Σ_{k≥t} (r_k + β H_k)` with a per-cell running
/// baseline, plus the direct entropy gradient `β ∇H(s_t)`.
pub fn train_source(spec: &GridWorldSpec, regime: Regime, seed: u64) -> Result<(Policy, TrainingReport)> {
    train_source_with(spec, regime, seed, &TrainerConfig::for_regime(regime), Exec::default())
}

pub fn train_source_with(
    spec: &GridWorldSpec,
    regime: Regime,
    seed: u64,
    cfg: &TrainerConfig,
    exec: Exec,
) -> Result<(Policy, TrainingReport)> {
    spec.validate()?;
    let mut init_rng = substream(seed, STREAM_SOURCE_TRAINING, u64::MAX);
    let mut policy = match cfg.warm_start {
        WarmStart::Uniform => Policy::uniform(spec, &mut init_rng),
        WarmStart::EdgeFollower => fit_edge_follower(spec, seed),
    };
    let mut opt = Adam::new(policy.num_params(), cfg.lr);
    let mut baseline: HashMap<(i64, i64), f64> = HashMap::new();
    let mut updates = 0;
    let identity = StateTransform::Identity;

    while updates < cfg.max_updates {
        let batch = rollout_batch(
            spec,
            &identity,
            &policy,
            seed,
            STREAM_SOURCE_TRAINING,
            (updates * cfg.episodes_per_update) as u64,
            cfg.episodes_per_update,
            exec,
        );
        let mut grad = vec![0.0; policy.num_params()];
        let scale = 1.0 / batch.len() as f64;
        for traj in &batch {
            let entropies: Vec<f64> = traj.states[..traj.len()].iter().map(|&s| policy.entropy_at(s)).collect();
            let mut soft_return = 0.0;
            for t in (0..traj.len()).rev() {
                soft_return += traj.rewards[t] + cfg.beta * entropies[t];
                let s = traj.states[t];
                let key = (s.x as i64, s.y as i64);
                let b = baseline.entry(key).or_insert(soft_return);
                let advantage = soft_return - *b;
                *b += cfg.baseline_rate * (soft_return - *b);
                policy.log_prob_grad_into(s, traj.actions[t], &mut grad, scale * advantage);
                if cfg.beta != 0.0 {
                    policy.entropy_grad_into(s, &mut grad, scale * cfg.beta);
                }
            }
        }
        opt.step(policy.params_mut(), &grad, true);
        updates += 1;
        if !policy.net().is_finite() {
            return Err(Error::Diverged {
                tensor: "policy".into(),
                iteration: updates,
            });
        }
        if updates % cfg.eval_every == 0 {
            let stats = evaluate_policy(spec, &identity, &policy, None, cfg.eval_episodes, seed ^ updates as u64, exec);
            let return_ok = cfg.stop_min_return.is_none_or(|m| stats.mean_return >= m);
            if cfg.stop.accepts(&stats) && return_ok {
                break;
            }
        }
    }

    let stats = evaluate_policy(
        spec,
        &identity,
        &policy,
        None,
        GATE_EVAL_EPISODES,
        seed ^ GATE_EVAL_STREAM,
        exec,
    );
    let gate = RegimeGate::for_regime(regime);
    let passed = gate.accepts(&stats);
    let report = TrainingReport {
        regime,
        seed,
        updates,
        stats,
        gate,
        passed,
    };
    if !passed {
        return Err(Error::RegimeNotMet {
            regime: regime.to_string(),
            detail: format!(
                "after {updates} updates: goal rate {:.3}, mean entropy {:.3} (gate {:?})",
                stats.goal_rate, stats.mean_entropy, gate
            ),
        });
    }
    Ok((policy, report))
}

/// Deterministic action of the edge-following expert: along the top edge,
/// then down the right edge; off-path cells head back up to the top edge.
pub fn edge_following_action(spec: &GridWorldSpec, s: GridState) -> Action {
    let right_edge = spec.width as f64 - 1.0;
    if s.x >= right_edge {
        Action::Down
    } else if s.y <= 0.0 {
        Action::Right
    } else {
        Action::Up
    }
}

/// Fits a low-entropy policy network to [`edge_following_action`] on every
/// cell by cross-entropy minimisation.
pub fn fit_edge_follower(spec: &GridWorldSpec, seed: u64) -> Policy {
    let mut rng = substream(seed, STREAM_SOURCE_TRAINING, 0xed9e);
    let mut policy = Policy::random(spec, &mut rng);
    let mut opt = Adam::new(policy.num_params(), 0.01);
    let cells: Vec<(GridState, Action)> = spec.cells().map(|s| (s, edge_following_action(spec, s))).collect();
    for _ in 0..5000 {
        let mut grad = vec![0.0; policy.num_params()];
        let mut worst: f64 = 1.0;
        for &(s, a) in &cells {
            worst = worst.min(policy.action_distribution(s)[a.index()]);
            policy.log_prob_grad_into(s, a, &mut grad, 1.0 / cells.len() as f64);
        }
        if worst > 0.995 {
            break;
        }
        opt.step(policy.params_mut(), &grad, true);
    }
    policy
}

#[derive(Debug, Clone, PartialEq)]
pub struct DemoSet {
    trajectories: Vec<Trajectory>,
}

impl DemoSet {
    pub fn new(spec: &GridWorldSpec, trajectories: Vec<Trajectory>) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(Error::Config("demonstration set is empty".into()));
        }
        for t in &trajectories {
            for &s in &t.states {
                spec.check_cell(s)?;
            }
        }
        Ok(DemoSet { trajectories })
    }

    pub fn trajectories(&self) -> &[Trajectory] {
        &self.trajectories
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    /// Minibatch drawn with replacement.
    pub fn sample(&self, n: usize, rng: &mut Rng) -> Vec<Trajectory> {
        (0..n)
            .map(|_| self.trajectories[rng.gen_range(0..self.trajectories.len())].clone())
            .collect()
    }
}
