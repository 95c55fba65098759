use crate::costs::{alignment_gradient, dtw, state_cost, state_cost_grad, CostMode};
use crate::divergences::{
    f_div_objective, wasserstein_objective_from_values, CostMatrix, DualPotentials, DualProblem, FDivKind,
    FPotential, Featurizer, Samples,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{rollout_batch, GridState, GridWorldSpec, StateTransform, Trajectory};
use crate::policy::{Composed, Policy};
use crate::rng::STREAM_ROLLOUTS;

use super::undo::UndoMap;

/// A target-domain episode and its image under the undo map.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetPair {
    pub observed: Trajectory,
    pub undone: Trajectory,
}

/// Rolls `a ~ π(·|u(s))` in the target domain and undoes every observed state.
#[allow(clippy::too_many_arguments)]
pub fn undone_rollout_batch(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    policy: &Policy,
    undo: &UndoMap,
    master_seed: u64,
    first_index: u64,
    episodes: usize,
    exec: Exec,
) -> Vec<TargetPair> {
    let sampler = Composed {
        policy,
        undo: Some(undo),
    };
    let observed = rollout_batch(spec, transform, &sampler, master_seed, STREAM_ROLLOUTS, first_index, episodes, exec);
    observed
        .into_iter()
        .map(|o| TargetPair {
            undone: o.map_states(|s| undo.apply(s)),
            observed: o,
        })
        .collect()
}

/// Source and undone-target samples with their ground costs, laid out for
/// both potential training and the outer gradient.
#[derive(Debug, Clone)]
pub struct MatchingBatch {
    pub mode: CostMode,
    pub problem: DualProblem,
    source_states: Vec<Vec<GridState>>,
    undone_states: Vec<Vec<GridState>>,
    /// `(trajectory, state index)` of every target item.
    target_owner: Vec<(usize, usize)>,
    source_owner: Vec<(usize, usize)>,
    /// Row-major DTW alignments (trajectory mode only).
    alignments: Vec<Vec<(usize, usize)>>,
}

fn items(featurizer: &Featurizer, mode: CostMode, seqs: &[Vec<GridState>]) -> (Samples, Vec<(usize, usize)>) {
    let n = seqs.len() as f64;
    match mode {
        CostMode::TrajectoryDtw => (
            Samples::uniform(seqs.iter().map(|s| featurizer.trajectory(s)).collect()),
            (0..seqs.len()).map(|j| (j, 0)).collect(),
        ),
        CostMode::StateL2 => {
            let mut features = Vec::new();
            let mut weights = Vec::new();
            let mut owner = Vec::new();
            for (j, seq) in seqs.iter().enumerate() {
                for (t, s) in seq.iter().enumerate() {
                    features.push(featurizer.state(*s));
                    weights.push(1.0 / (n * seq.len() as f64));
                    owner.push((j, t));
                }
            }
            (Samples { features, weights }, owner)
        }
    }
}

impl MatchingBatch {
    pub fn build(
        featurizer: &Featurizer,
        source: &[Trajectory],
        undone: &[Trajectory],
        exec: Exec,
    ) -> Result<Self> {
        let source_states: Vec<Vec<GridState>> = source.iter().map(|t| t.states.clone()).collect();
        let undone_states: Vec<Vec<GridState>> = undone.iter().map(|t| t.states.clone()).collect();
        MatchingBatch::from_states(featurizer, source_states, undone_states, exec)
    }

    pub fn from_states(
        featurizer: &Featurizer,
        source_states: Vec<Vec<GridState>>,
        undone_states: Vec<Vec<GridState>>,
        exec: Exec,
    ) -> Result<Self> {
        if source_states.is_empty() || undone_states.is_empty() {
            return Err(Error::EmptySequence("matching batch"));
        }
        if source_states.iter().chain(&undone_states).any(|s| s.is_empty()) {
            return Err(Error::EmptySequence("trajectory states"));
        }
        let mode = featurizer.mode;
        let (first, source_owner) = items(featurizer, mode, &source_states);
        let (second, target_owner) = items(featurizer, mode, &undone_states);
        let (cost, alignments) = match mode {
            CostMode::TrajectoryDtw => {
                let n2 = undone_states.len();
                let rows = exec.map(&source_states, |a| {
                    undone_states
                        .iter()
                        .map(|b| dtw(a, b).expect("non-empty sequences"))
                        .collect::<Vec<_>>()
                });
                let mut values = Vec::with_capacity(rows.len() * n2);
                let mut alignments = Vec::with_capacity(rows.len() * n2);
                for r in rows.into_iter().flatten() {
                    values.push(r.distance);
                    alignments.push(r.alignment);
                }
                (
                    CostMatrix {
                        rows: source_states.len(),
                        cols: n2,
                        values,
                    },
                    alignments,
                )
            }
            CostMode::StateL2 => {
                let a: Vec<GridState> = source_owner.iter().map(|&(j, t)| source_states[j][t]).collect();
                let b: Vec<GridState> = target_owner.iter().map(|&(j, t)| undone_states[j][t]).collect();
                (
                    CostMatrix::from_fn(a.len(), b.len(), exec, |i, k| state_cost(a[i], b[k])),
                    Vec::new(),
                )
            }
        };
        Ok(MatchingBatch {
            mode,
            problem: DualProblem::new(first, second, cost)?,
            source_states,
            undone_states,
            target_owner,
            source_owner,
            alignments,
        })
    }

    pub fn num_target_trajectories(&self) -> usize {
        self.undone_states.len()
    }

    fn target_traj_weight(&self) -> f64 {
        1.0 / self.undone_states.len() as f64
    }

    /// Adds `coef * ∇_{undone states} c(source item i, target item k)` into `cot`.
    fn add_cost_cotangent(&self, i: usize, k: usize, coef: f64, cot: &mut [Vec<[f64; 2]>]) {
        match self.mode {
            CostMode::TrajectoryDtw => {
                let n2 = self.problem.cost.cols;
                let g = alignment_gradient(&self.source_states[i], &self.undone_states[k], &self.alignments[i * n2 + k]);
                for (c, v) in cot[k].iter_mut().zip(g) {
                    c[0] += coef * v[0];
                    c[1] += coef * v[1];
                }
            }
            CostMode::StateL2 => {
                let (si, ti) = self.source_owner[i];
                let (j, t) = self.target_owner[k];
                let g = state_cost_grad(self.source_states[si][ti], self.undone_states[j][t]);
                cot[j][t][0] += coef * g[0];
                cot[j][t][1] += coef * g[1];
            }
        }
    }

    /// Adds `coef * ∇_{undone states}` of a target feature cotangent `dfeat`.
    fn add_feature_cotangent(&self, featurizer: &Featurizer, k: usize, dfeat: &[f64], coef: f64, cot: &mut [Vec<[f64; 2]>]) {
        let (j, t) = self.target_owner[k];
        match self.mode {
            CostMode::TrajectoryDtw => {
                let pulled = featurizer.trajectory_pullback(self.undone_states[j].len(), dfeat);
                for (c, v) in cot[j].iter_mut().zip(pulled) {
                    c[0] += coef * v[0];
                    c[1] += coef * v[1];
                }
            }
            CostMode::StateL2 => {
                cot[j][t][0] += coef * dfeat[0] * featurizer.scale[0];
                cot[j][t][1] += coef * dfeat[1] * featurizer.scale[1];
            }
        }
    }
}

/// What the outer step differentiates and how.
#[derive(Debug, Clone, Copy)]
pub struct GradContext<'a> {
    pub policy: &'a Policy,
    pub undo: &'a UndoMap,
    pub alpha: f64,
    /// Weight of the target-return term subtracted from the objective.
    pub lambda: f64,
    pub want_theta: bool,
    /// Leave-one-out baseline on the per-trajectory score weights.
    pub baseline: bool,
    pub exec: Exec,
}

/// Outer-step gradients of the objective being minimized, split by estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Score-function estimate for θ (empty unless requested).
    pub theta: Vec<f64>,
    /// Score-function part for ω: the policy's input gradient chained through `u`.
    pub omega_score: Vec<f64>,
    /// Pathwise part for ω: potentials and costs differentiated through `u`.
    pub omega_pathwise: Vec<f64>,
    /// Objective value on this batch.
    pub objective: f64,
    pub hinge_violation_rate: f64,
}

impl Gradients {
    pub fn omega(&self) -> Vec<f64> {
        self.omega_score.iter().zip(&self.omega_pathwise).map(|(a, b)| a + b).collect()
    }
}

/// Chains per-trajectory score weights and per-state cotangents into θ and ω.
fn assemble(
    ctx: &GradContext<'_>,
    target: &[TargetPair],
    score_weights: &[f64],
    path_cot: &[Vec<[f64; 2]>],
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n_theta = ctx.policy.num_params();
    let n_omega = ctx.undo.num_params();
    let parts = ctx.exec.map_range(target.len(), |j| {
        let pair = &target[j];
        let w = score_weights[j];
        let mut theta = vec![0.0; if ctx.want_theta { n_theta } else { 0 }];
        let mut scratch = vec![0.0; if ctx.want_theta { 0 } else { n_theta }];
        let mut omega_score = vec![0.0; n_omega];
        let mut omega_path = vec![0.0; n_omega];
        for t in 0..pair.observed.len() {
            let view = pair.undone.states[t];
            let a = pair.observed.actions[t];
            let ds = if ctx.want_theta {
                ctx.policy.log_prob_grad_into(view, a, &mut theta, w)
            } else if w != 0.0 {
                ctx.policy.log_prob_grad_into(view, a, &mut scratch, 0.0)
            } else {
                [0.0; 2]
            };
            ctx.undo
                .param_vjp_into(pair.observed.states[t], [w * ds[0], w * ds[1]], &mut omega_score, 1.0);
        }
        for (t, v) in path_cot[j].iter().enumerate() {
            ctx.undo.param_vjp_into(pair.observed.states[t], *v, &mut omega_path, 1.0);
        }
        (theta, omega_score, omega_path)
    });
    let mut theta = vec![0.0; if ctx.want_theta { n_theta } else { 0 }];
    let mut omega_score = vec![0.0; n_omega];
    let mut omega_path = vec![0.0; n_omega];
    for (t, s, p) in parts {
        theta.iter_mut().zip(t).for_each(|(a, b)| *a += b);
        omega_score.iter_mut().zip(s).for_each(|(a, b)| *a += b);
        omega_path.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    (theta, omega_score, omega_path)
}

/// Per-trajectory score weights `W_j (R_j - b_j)` from per-item rewards.
fn score_weights(ctx: &GradContext<'_>, batch: &MatchingBatch, target: &[TargetPair], item_reward: &[f64]) -> Vec<f64> {
    let wj = batch.target_traj_weight();
    let mut r = vec![0.0; target.len()];
    for (k, phi) in item_reward.iter().enumerate() {
        let (j, _) = batch.target_owner[k];
        r[j] += batch.problem.second.weights[k] / wj * phi;
    }
    for (rj, pair) in r.iter_mut().zip(target) {
        *rj -= ctx.lambda * pair.observed.total_return();
    }
    if ctx.baseline && r.len() > 1 {
        let total: f64 = r.iter().sum();
        let n = r.len() as f64;
        r = r.iter().map(|rj| rj - (total - rj) / (n - 1.0)).collect();
    }
    r.into_iter().map(|rj| wj * rj).collect()
}

fn check_batch(batch: &MatchingBatch, target: &[TargetPair]) -> Result<()> {
    if batch.num_target_trajectories() != target.len() {
        return Err(Error::Config("matching batch was built from a different target batch".into()));
    }
    Ok(())
}

/// Gradients of the regularized Wasserstein dual with respect to θ and ω,
/// holding the potentials fixed.
///
/// Each undone target trajectory earns the score weight
/// `g(uτ') - α E_τ (h(τ) + g(uτ') - c(τ, uτ'))_+` (minus `λ R(τ')`), applied to
/// `Σ_t ∇ log π(a_t | u(s_t))`; ω additionally receives the pathwise term
/// `(1 - α E_τ A) ∇_ω g(uτ') + α E_τ [A ∇_ω c(τ, uτ')]` with `A` the active-hinge indicator.
pub fn wasserstein_gradients(
    ctx: &GradContext<'_>,
    batch: &MatchingBatch,
    target: &[TargetPair],
    pot: &DualPotentials,
) -> Result<Gradients> {
    check_batch(batch, target)?;
    let p = &batch.problem;
    let h: Vec<f64> = p.first.features.iter().map(|x| pot.h(x)).collect();
    let g_with_grad: Vec<(f64, Vec<f64>)> = ctx.exec.map(&p.second.features, |x| pot.g_input_grad(x));
    let g: Vec<f64> = g_with_grad.iter().map(|(v, _)| *v).collect();
    let est = wasserstein_objective_from_values(p, &h, &g, ctx.alpha);

    let (n1, n2) = (p.first.len(), p.second.len());
    let mut item_reward = g.clone();
    let mut active_mass = vec![0.0; n2];
    let mut cot: Vec<Vec<[f64; 2]>> = target.iter().map(|t| vec![[0.0; 2]; t.undone.states.len()]).collect();
    for i in 0..n1 {
        let w1 = p.first.weights[i];
        for k in 0..n2 {
            let slack = h[i] + g[k] - p.cost.get(i, k);
            if slack > 0.0 {
                item_reward[k] -= ctx.alpha * w1 * slack;
                active_mass[k] += w1;
                batch.add_cost_cotangent(i, k, ctx.alpha * w1 * p.second.weights[k], &mut cot);
            }
        }
    }
    for (k, (_, dx)) in g_with_grad.iter().enumerate() {
        let coef = p.second.weights[k] * (1.0 - ctx.alpha * active_mass[k]);
        if coef != 0.0 {
            batch.add_feature_cotangent(&pot.featurizer, k, dx, coef, &mut cot);
        }
    }
    let weights = score_weights(ctx, batch, target, &item_reward);
    let (theta, omega_score, omega_pathwise) = assemble(ctx, target, &weights, &cot);
    Ok(Gradients {
        theta,
        omega_score,
        omega_pathwise,
        objective: est.value,
        hinge_violation_rate: est.hinge_violation_rate,
    })
}

/// Gradients of `E_p1[g] - E_p2[f*(g)]` with respect to θ and ω, where the
/// second distribution is the undone target: each target trajectory earns the
/// score weight `-f*(g(uτ'))`, and ω receives `-∇_ω f*(g(uτ'))` pathwise.
pub fn f_div_gradients(
    ctx: &GradContext<'_>,
    batch: &MatchingBatch,
    target: &[TargetPair],
    pot: &FPotential,
    kind: FDivKind,
) -> Result<Gradients> {
    check_batch(batch, target)?;
    let p = &batch.problem;
    let objective = f_div_objective(&p.first, &p.second, pot, kind);
    let scratch_len = pot.net.num_params();
    let evals: Vec<(f64, Vec<f64>)> = ctx.exec.map(&p.second.features, |x| {
        let trace = pot.net.forward_trace(x);
        let mut scratch = vec![0.0; scratch_len];
        let dx = pot.net.backward_into(&trace, &[1.0], &mut scratch, 0.0);
        (trace.output()[0], dx)
    });
    let mut item_reward = Vec::with_capacity(evals.len());
    let mut cot: Vec<Vec<[f64; 2]>> = target.iter().map(|t| vec![[0.0; 2]; t.undone.states.len()]).collect();
    for (k, (raw, dx)) in evals.iter().enumerate() {
        let linked = kind.link(*raw);
        item_reward.push(-kind.conjugate(linked));
        let coef = -p.second.weights[k] * kind.conjugate_grad(linked) * kind.link_grad(*raw);
        if coef != 0.0 {
            batch.add_feature_cotangent(&pot.featurizer, k, dx, coef, &mut cot);
        }
    }
    let weights = score_weights(ctx, batch, target, &item_reward);
    let (theta, omega_score, omega_pathwise) = assemble(ctx, target, &weights, &cot);
    Ok(Gradients {
        theta,
        omega_score,
        omega_pathwise,
        objective,
        hinge_violation_rate: 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::divergences::{DivergenceSpec, Featurizer};
    use crate::gridworld::StateTransform;
    use crate::policy::Policy;
    use crate::rng::substream;
    use crate::tvd::undo::UndoFamily;
    use rand::Rng as _;
    use std::f64::consts::FRAC_PI_2;

    fn spec() -> GridWorldSpec {
        GridWorldSpec::default()
    }

    fn jittered_undo(seed: u64) -> UndoMap {
        let mut rng = substream(seed, "t", 0);
        let mut u = UndoMap::identity(&spec(), UndoFamily::Linear, &mut rng);
        for p in u.params_mut() {
            *p += rng.gen_range(-0.2..0.2);
        }
        u
    }

    #[test]
    fn exact_inverse_reproduces_source_rollouts() {
        let s = spec();
        let mut rng = substream(1, "t", 1);
        let policy = Policy::random(&s, &mut rng);
        let t = StateTransform::rotation(&s, FRAC_PI_2);
        let u = UndoMap::linear(&s, t.inverse().matrix());
        let pairs = undone_rollout_batch(&s, &t, &policy, &u, 5, 0, 8, Exec::Sequential);
        let source = rollout_batch(&s, &StateTransform::Identity, &policy, 5, STREAM_ROLLOUTS, 0, 8, Exec::Sequential);
        for (p, src) in pairs.iter().zip(&source) {
            assert_eq!(p.undone.actions, p.observed.actions);
            assert_eq!(p.undone.actions, src.actions);
            for (a, b) in p.undone.states.iter().zip(&src.states) {
                assert!(a.dist(*b) < 1e-9);
            }
        }
    }

    #[test]
    fn identity_undo_on_identity_transform_keeps_observations() {
        let s = spec();
        let mut rng = substream(2, "t", 1);
        let policy = Policy::random(&s, &mut rng);
        let u = UndoMap::identity(&s, UndoFamily::Linear, &mut rng);
        for p in undone_rollout_batch(&s, &StateTransform::Identity, &policy, &u, 3, 0, 4, Exec::Sequential) {
            assert_eq!(p.observed, p.undone);
        }
    }

    fn setup(mode: CostMode) -> (Policy, UndoMap, Vec<Trajectory>, Vec<TargetPair>, Featurizer) {
        let s = spec();
        let mut rng = substream(4, "t", 2);
        let policy = Policy::random(&s, &mut rng);
        let u = jittered_undo(4);
        let t = StateTransform::rotation(&s, FRAC_PI_2);
        let target = undone_rollout_batch(&s, &t, &policy, &u, 7, 0, 4, Exec::Sequential);
        let source = rollout_batch(&s, &StateTransform::Identity, &policy, 7, "src", 0, 5, Exec::Sequential);
        (policy, u, source, target, Featurizer::new(&s, mode))
    }

    fn ctx<'a>(policy: &'a Policy, undo: &'a UndoMap) -> GradContext<'a> {
        GradContext {
            policy,
            undo,
            alpha: 10.0,
            lambda: 0.0,
            want_theta: true,
            baseline: false,
            exec: Exec::Sequential,
        }
    }

    #[test]
    fn zero_potentials_with_inactive_hinge_give_zero_weights() {
        let (policy, u, source, target, f) = setup(CostMode::TrajectoryDtw);
        let undone: Vec<_> = target.iter().map(|p| p.undone.clone()).collect();
        let batch = MatchingBatch::build(&f, &source, &undone, Exec::Sequential).unwrap();
        let pot = DualPotentials::new(f, &DivergenceSpec::default(), &mut substream(0, "p", 0));
        let g = wasserstein_gradients(&ctx(&policy, &u), &batch, &target, &pot).unwrap();
        assert!(g.theta.iter().all(|v| *v == 0.0));
        assert!(g.omega().iter().all(|v| *v == 0.0));
        assert_eq!(g.objective, 0.0);
    }

    #[test]
    fn lambda_term_is_reinforce_on_returns() {
        let (policy, u, source, target, f) = setup(CostMode::StateL2);
        let undone: Vec<_> = target.iter().map(|p| p.undone.clone()).collect();
        let batch = MatchingBatch::build(&f, &source, &undone, Exec::Sequential).unwrap();
        let pot = DualPotentials::new(f, &DivergenceSpec::default(), &mut substream(0, "p", 0));
        let mut c = ctx(&policy, &u);
        c.lambda = 0.5;
        let g = wasserstein_gradients(&c, &batch, &target, &pot).unwrap();
        let mut expected = vec![0.0; policy.num_params()];
        for p in &target {
            let w = -0.5 * p.observed.total_return() / target.len() as f64;
            for t in 0..p.observed.len() {
                policy.log_prob_grad_into(p.undone.states[t], p.observed.actions[t], &mut expected, w);
            }
        }
        for (a, b) in g.theta.iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    fn trained_pot(f: Featurizer, batch: &MatchingBatch) -> DualPotentials {
        let ds = DivergenceSpec {
            potential_hidden: vec![16, 16],
            potential_lr: 1e-2,
            ..DivergenceSpec::default()
        };
        let mut pot = DualPotentials::new(f, &ds, &mut substream(3, "p", 0));
        crate::divergences::update_potentials(&batch.problem, &mut pot, 10.0, 100).unwrap();
        pot
    }

    /// Frozen-trajectory objective as a function of the undo parameters.
    fn frozen_objective(f: &Featurizer, source: &[Trajectory], target: &[TargetPair], u: &UndoMap, pot: &DualPotentials) -> f64 {
        let undone: Vec<_> = target.iter().map(|p| p.observed.map_states(|s| u.apply(s))).collect();
        let batch = MatchingBatch::build(f, source, &undone, Exec::Sequential).unwrap();
        crate::divergences::wasserstein_objective(&batch.problem, pot, 10.0).value
    }

    fn check_pathwise(mode: CostMode) {
        let (policy, u, source, target, f) = setup(mode);
        let undone: Vec<_> = target.iter().map(|p| p.undone.clone()).collect();
        let batch = MatchingBatch::build(&f, &source, &undone, Exec::Sequential).unwrap();
        let pot = trained_pot(f, &batch);
        let g = wasserstein_gradients(&ctx(&policy, &u), &batch, &target, &pot).unwrap();
        assert!(g.hinge_violation_rate > 0.0, "test should exercise the hinge");
        let h = 1e-6;
        for i in 0..u.num_params() {
            let mut up = u.clone();
            up.params_mut()[i] += h;
            let mut dn = u.clone();
            dn.params_mut()[i] -= h;
            let fd = (frozen_objective(&f, &source, &target, &up, &pot) - frozen_objective(&f, &source, &target, &dn, &pot)) / (2.0 * h);
            let an = g.omega_pathwise[i];
            assert!((fd - an).abs() <= 1e-3 * fd.abs().max(an.abs()).max(1e-3), "{mode:?} param {i}: fd {fd} an {an}");
        }
    }

    #[test]
    fn pathwise_matches_finite_differences_dtw() {
        check_pathwise(CostMode::TrajectoryDtw);
    }

    #[test]
    fn pathwise_matches_finite_differences_state() {
        check_pathwise(CostMode::StateL2);
    }

    #[test]
    fn zero_tv_potential_gives_zero_theta() {
        let (policy, u, source, target, f) = setup(CostMode::TrajectoryDtw);
        let undone: Vec<_> = target.iter().map(|p| p.undone.clone()).collect();
        let batch = MatchingBatch::build(&f, &source, &undone, Exec::Sequential).unwrap();
        let pot = FPotential::new(f, &DivergenceSpec::default(), &mut substream(0, "p", 0));
        let g = f_div_gradients(&ctx(&policy, &u), &batch, &target, &pot, FDivKind::Tv).unwrap();
        assert!(g.theta.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn sequential_and_parallel_agree() {
        let (policy, u, source, target, f) = setup(CostMode::TrajectoryDtw);
        let undone: Vec<_> = target.iter().map(|p| p.undone.clone()).collect();
        let b1 = MatchingBatch::build(&f, &source, &undone, Exec::Sequential).unwrap();
        let b2 = MatchingBatch::build(&f, &source, &undone, Exec::Parallel).unwrap();
        assert_eq!(b1.problem, b2.problem);
        let pot = trained_pot(f, &b1);
        let g1 = wasserstein_gradients(&ctx(&policy, &u), &b1, &target, &pot).unwrap();
        let mut c = ctx(&policy, &u);
        c.exec = Exec::Parallel;
        let g2 = wasserstein_gradients(&c, &b2, &target, &pot).unwrap();
        assert_eq!(g1, g2);
    }
}
