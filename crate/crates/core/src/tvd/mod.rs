//! Alternating min-max optimization of the undo map (and optionally the
//! source policy) against trained divergence potentials.

mod grad;
mod undo;

pub use grad::{f_div_gradients, undone_rollout_batch, wasserstein_gradients, GradContext, Gradients, MatchingBatch, TargetPair};
pub use undo::{mlp_undo_architecture, UndoFamily, UndoMap};

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::divergences::{
    f_div_estimate, update_f_potential, update_potentials, wasserstein_objective, DivergenceSpec, DualPotentials,
    FPotential, Featurizer,
};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{rollout_batch, GridWorldSpec, StateTransform, Trajectory};
use crate::metrics::{metrics_csv, parse_metrics_csv, sample_visited_states, undo_map_error, MetricRow};
use crate::nn::{clip_norm, read_u64, write_u64, Optimizer, OptimizerKind};
use crate::policy::{DemoSet, Policy};
use crate::rng::{derive_seed, substream, STREAM_DEMOS, STREAM_POTENTIALS, STREAM_ROLLOUTS};
use crate::gridworld::GridState;

/// Outer-loop settings. In experiment files `divergence` and `seed` live at
/// the top level and are filled in when the file is loaded.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TvDConfig {
    #[serde(skip)]
    pub divergence: DivergenceSpec,
    /// Keep θ fixed at the supplied source policy.
    pub freeze_policy: bool,
    pub learn_undo: bool,
    pub undo_family: UndoFamily,
    pub outer_iterations: usize,
    /// Step size for ω.
    pub outer_lr: f64,
    /// Step size for θ.
    pub policy_lr: f64,
    pub outer_optimizer: OptimizerKind,
    pub clip_norm: f64,
    /// Target episodes per outer iteration.
    pub rollout_batch: usize,
    /// Weight of the target-return term.
    pub lambda: f64,
    /// Extra potential steps before the first outer step.
    pub warmup_steps: usize,
    /// Leave-one-out baseline on score-function weights.
    pub baseline: bool,
    /// Episodes per side of the held-out batches used for logging.
    pub eval_episodes: usize,
    /// Source states sampled for the undo-map error.
    pub error_states: usize,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TvDConfig {
    fn default() -> Self {
        TvDConfig {
            divergence: DivergenceSpec::default(),
            freeze_policy: true,
            learn_undo: true,
            undo_family: UndoFamily::Linear,
            outer_iterations: 500,
            outer_lr: 2e-3,
            policy_lr: 1e-2,
            outer_optimizer: OptimizerKind::Sgd,
            clip_norm: 10.0,
            rollout_batch: 16,
            lambda: 0.0,
            warmup_steps: 500,
            baseline: true,
            eval_episodes: 16,
            error_states: 1000,
            seed: 0,
        }
    }
}

impl TvDConfig {
    pub fn validate(&self) -> Result<()> {
        self.divergence.validate()?;
        if self.rollout_batch == 0 || self.eval_episodes == 0 {
            return Err(Error::Config("rollout_batch and eval_episodes must be positive".into()));
        }
        if !(self.outer_lr >= 0.0) || !(self.policy_lr >= 0.0) || !(self.clip_norm > 0.0) || !(self.lambda >= 0.0) {
            return Err(Error::Config("outer_lr, policy_lr, lambda must be nonnegative and clip_norm positive".into()));
        }
        Ok(())
    }
}

/// Where source-domain trajectories come from.
#[derive(Debug, Clone, Copy)]
pub enum SourceData<'a> {
    Policy(&'a Policy),
    Demos(&'a DemoSet),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Potentials {
    Dual(DualPotentials),
    F(FPotential),
}

impl Potentials {
    fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            Potentials::Dual(p) => {
                w.write_all(&[0])?;
                p.write_to(w)
            }
            Potentials::F(p) => {
                w.write_all(&[1])?;
                p.write_to(w)
            }
        }
    }

    fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut tag = [0u8];
        r.read_exact(&mut tag)?;
        match tag[0] {
            0 => Ok(Potentials::Dual(DualPotentials::read_from(r)?)),
            1 => Ok(Potentials::F(FPotential::read_from(r)?)),
            t => Err(Error::format("tvd checkpoint", format!("unknown potential tag {t}"))),
        }
    }
}

/// Everything needed to continue a run bit-for-bit.
#[derive(Debug, Clone, PartialEq)]
pub struct TvDState {
    pub undo: UndoMap,
    pub policy: Policy,
    pub potentials: Potentials,
    pub iteration: usize,
    pub history: Vec<MetricRow>,
    omega_opt: Optimizer,
    theta_opt: Optimizer,
}

const STATE_MAGIC: &[u8; 8] = b"TVDSTAT1";

impl TvDState {
    pub fn new(spec: &GridWorldSpec, cfg: &TvDConfig, source: SourceData<'_>) -> Result<Self> {
        cfg.validate()?;
        spec.validate()?;
        let mut rng = substream(cfg.seed, STREAM_POTENTIALS, 0);
        let policy = match (cfg.freeze_policy, source) {
            (true, SourceData::Policy(p)) => p.clone(),
            (true, SourceData::Demos(_)) => {
                return Err(Error::Config("freeze_policy requires a source policy".into()));
            }
            (false, SourceData::Demos(_)) => Policy::random(spec, &mut rng),
            (false, SourceData::Policy(_)) => {
                return Err(Error::Config("learning the policy requires a demonstration set".into()));
            }
        };
        let undo = UndoMap::identity(spec, cfg.undo_family, &mut rng);
        let featurizer = Featurizer::new(spec, cfg.divergence.cost.mode);
        let potentials = match cfg.divergence.kind.f_kind() {
            None => Potentials::Dual(DualPotentials::new(featurizer, &cfg.divergence, &mut rng)),
            Some(_) => Potentials::F(FPotential::new(featurizer, &cfg.divergence, &mut rng)),
        };
        Ok(TvDState {
            omega_opt: Optimizer::new(cfg.outer_optimizer, undo.num_params(), cfg.outer_lr),
            theta_opt: Optimizer::new(cfg.outer_optimizer, policy.num_params(), cfg.policy_lr),
            undo,
            policy,
            potentials,
            iteration: 0,
            history: Vec::new(),
        })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(STATE_MAGIC)?;
        write_u64(w, self.iteration as u64)?;
        w.write_all(&[match self.undo.family() {
            UndoFamily::Linear => 0,
            UndoFamily::Affine => 1,
            UndoFamily::Mlp => 2,
        }])?;
        crate::nn::write_f64s(w, self.undo.params())?;
        self.policy.write_checkpoint(w, 0)?;
        self.potentials.write_to(w)?;
        self.omega_opt.write_to(w)?;
        self.theta_opt.write_to(w)?;
        let csv = metrics_csv(&self.history);
        write_u64(w, csv.len() as u64)?;
        w.write_all(csv.as_bytes())?;
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, spec: &GridWorldSpec) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != STATE_MAGIC {
            return Err(Error::format("tvd checkpoint", "bad magic"));
        }
        let iteration = read_u64(r)? as usize;
        let mut fam = [0u8];
        r.read_exact(&mut fam)?;
        let family = match fam[0] {
            0 => UndoFamily::Linear,
            1 => UndoFamily::Affine,
            2 => UndoFamily::Mlp,
            t => return Err(Error::format("tvd checkpoint", format!("unknown undo family {t}"))),
        };
        let undo = UndoMap::from_params(spec, family, crate::nn::read_f64s(r)?)?;
        let (policy, _) = Policy::read_checkpoint(r)?;
        let potentials = Potentials::read_from(r)?;
        let omega_opt = Optimizer::read_from(r)?;
        let theta_opt = Optimizer::read_from(r)?;
        let len = read_u64(r)? as usize;
        let mut csv = vec![0u8; len];
        r.read_exact(&mut csv)?;
        let csv = String::from_utf8(csv).map_err(|_| Error::format("tvd checkpoint", "metrics block is not UTF-8"))?;
        let history = parse_metrics_csv(&csv)?;
        if history.len() != iteration {
            return Err(Error::format("tvd checkpoint", "history length does not match iteration"));
        }
        Ok(TvDState {
            undo,
            policy,
            potentials,
            iteration,
            history,
            omega_opt,
            theta_opt,
        })
    }
}

/// A configured experiment: environment pair, source data and settings.
#[derive(Debug, Clone)]
pub struct TvDRun<'a> {
    pub spec: &'a GridWorldSpec,
    pub transform: &'a StateTransform,
    pub cfg: &'a TvDConfig,
    pub source: SourceData<'a>,
    pub exec: Exec,
    featurizer: Featurizer,
    error_sample: Vec<GridState>,
}

impl<'a> TvDRun<'a> {
    pub fn new(
        spec: &'a GridWorldSpec,
        transform: &'a StateTransform,
        cfg: &'a TvDConfig,
        source: SourceData<'a>,
        exec: Exec,
    ) -> Result<Self> {
        cfg.validate()?;
        let mut rng = substream(cfg.seed, "undo-error", 0);
        let pool: Vec<Trajectory> = match source {
            SourceData::Policy(p) => rollout_batch(
                spec,
                &StateTransform::Identity,
                p,
                derive_seed(cfg.seed, "undo-error", 1),
                STREAM_ROLLOUTS,
                0,
                100,
                exec,
            ),
            SourceData::Demos(d) => d.trajectories().to_vec(),
        };
        Ok(TvDRun {
            spec,
            transform,
            cfg,
            source,
            exec,
            featurizer: Featurizer::new(spec, cfg.divergence.cost.mode),
            error_sample: sample_visited_states(&pool, cfg.error_states, &mut rng),
        })
    }

    pub fn initial_state(&self) -> Result<TvDState> {
        TvDState::new(self.spec, self.cfg, self.source)
    }

    /// Source states the undo-map error is averaged over.
    pub fn error_sample(&self) -> &[GridState] {
        &self.error_sample
    }

    pub fn undo_error(&self, undo: &UndoMap) -> f64 {
        undo_map_error(&self.error_sample, undo, self.transform)
    }

    fn source_batch(&self, tag: &str, iteration: usize, n: usize) -> Vec<Trajectory> {
        match self.source {
            SourceData::Policy(p) => rollout_batch(
                self.spec,
                &StateTransform::Identity,
                p,
                derive_seed(self.cfg.seed, tag, iteration as u64),
                STREAM_ROLLOUTS,
                0,
                n,
                self.exec,
            ),
            SourceData::Demos(d) => {
                let mut rng = substream(derive_seed(self.cfg.seed, tag, iteration as u64), STREAM_DEMOS, 0);
                d.sample(n, &mut rng)
            }
        }
    }

    fn target_batch(&self, state: &TvDState, tag: &str, n: usize) -> Vec<TargetPair> {
        undone_rollout_batch(
            self.spec,
            self.transform,
            &state.policy,
            &state.undo,
            derive_seed(self.cfg.seed, tag, state.iteration as u64),
            0,
            n,
            self.exec,
        )
    }

    fn matching(&self, source: &[Trajectory], target: &[TargetPair]) -> Result<MatchingBatch> {
        let undone: Vec<Trajectory> = target.iter().map(|p| p.undone.clone()).collect();
        MatchingBatch::build(&self.featurizer, source, &undone, self.exec)
    }

    /// Runs one outer iteration and appends its metric row.
    pub fn step(&self, state: &mut TvDState) -> Result<MetricRow> {
        let t = state.iteration;
        let cfg = self.cfg;
        let source = self.source_batch("source", t, cfg.divergence.batch_size);
        let target = self.target_batch(state, "target", cfg.rollout_batch);
        let batch = self.matching(&source, &target)?;
        let eval_source = self.source_batch("eval-source", t, cfg.eval_episodes);
        let eval_target = self.target_batch(state, "eval-target", cfg.eval_episodes);
        let eval_batch = self.matching(&eval_source, &eval_target)?;

        let steps = cfg.divergence.inner_steps + if t == 0 { cfg.warmup_steps } else { 0 };
        let diverged = |e: Error| match e {
            Error::Diverged { tensor, .. } => Error::Diverged { tensor, iteration: t },
            other => other,
        };
        let ctx = GradContext {
            policy: &state.policy,
            undo: &state.undo,
            alpha: cfg.divergence.alpha,
            lambda: cfg.lambda,
            want_theta: !cfg.freeze_policy,
            baseline: cfg.baseline,
            exec: self.exec,
        };
        let (estimate, grads) = match &mut state.potentials {
            Potentials::Dual(pot) => {
                update_potentials(&batch.problem, pot, cfg.divergence.alpha, steps).map_err(diverged)?;
                let est = wasserstein_objective(&eval_batch.problem, pot, cfg.divergence.alpha).value;
                (est, wasserstein_gradients(&ctx, &batch, &target, pot)?)
            }
            Potentials::F(pot) => {
                let kind = cfg.divergence.kind.f_kind().expect("f-divergence potentials");
                for _ in 0..steps {
                    update_f_potential(&batch.problem.first, &batch.problem.second, pot, kind).map_err(diverged)?;
                }
                let est = f_div_estimate(&eval_batch.problem.first, &eval_batch.problem.second, pot, kind);
                (est, f_div_gradients(&ctx, &batch, &target, pot, kind)?)
            }
        };
        let row = MetricRow {
            iteration: t,
            wasserstein_estimate: estimate,
            target_return: eval_target.iter().map(|p| p.observed.total_return()).sum::<f64>() / eval_target.len() as f64,
            undo_map_error: self.undo_error(&state.undo),
        };

        if cfg.learn_undo {
            let mut g = grads.omega();
            clip_norm(&mut g, cfg.clip_norm);
            state.omega_opt.step(state.undo.params_mut(), &g, false);
            if !state.undo.is_finite() {
                return Err(Error::Diverged {
                    tensor: "undo map".into(),
                    iteration: t,
                });
            }
        }
        if !cfg.freeze_policy {
            let mut g = grads.theta;
            clip_norm(&mut g, cfg.clip_norm);
            state.theta_opt.step(state.policy.params_mut(), &g, false);
            if !state.policy.net().is_finite() {
                return Err(Error::Diverged {
                    tensor: "policy".into(),
                    iteration: t,
                });
            }
        }
        state.history.push(row);
        state.iteration += 1;
        Ok(row)
    }

    /// Continues `state` until `outer_iterations`, calling `on_iteration`
    /// after every step.
    pub fn run_from(&self, mut state: TvDState, mut on_iteration: impl FnMut(&TvDState) -> Result<()>) -> Result<TvDState> {
        while state.iteration < self.cfg.outer_iterations {
            self.step(&mut state)?;
            on_iteration(&state)?;
        }
        Ok(state)
    }
}

/// Runs a full experiment from scratch.
pub fn run_tvd(
    spec: &GridWorldSpec,
    transform: &StateTransform,
    cfg: &TvDConfig,
    source: SourceData<'_>,
    exec: Exec,
) -> Result<TvDState> {
    let run = TvDRun::new(spec, transform, cfg, source, exec)?;
    run.run_from(run.initial_state()?, |_| Ok(()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::costs::CostMode;
    use crate::divergences::DivergenceKind;
    use crate::gridworld::GridWorldSpec;
    use crate::policy::fit_edge_follower;
    use std::f64::consts::FRAC_PI_2;

    fn small_cfg() -> TvDConfig {
        let mut cfg = TvDConfig {
            outer_iterations: 3,
            rollout_batch: 4,
            eval_episodes: 4,
            error_states: 50,
            seed: 11,
            ..TvDConfig::default()
        };
        cfg.divergence.batch_size = 4;
        cfg.divergence.inner_steps = 3;
        cfg.divergence.potential_hidden = vec![8, 8];
        cfg
    }

    fn source_policy(spec: &GridWorldSpec) -> Policy {
        Policy::random(spec, &mut substream(3, "t", 0))
    }

    #[test]
    fn config_consistency_is_enforced() {
        let spec = GridWorldSpec::default();
        let p = source_policy(&spec);
        let demos = DemoSet::new(&spec, vec![crate::gridworld::rollout(&spec, &StateTransform::Identity, &p, 1)]).unwrap();
        let mut cfg = small_cfg();
        assert!(TvDState::new(&spec, &cfg, SourceData::Demos(&demos)).is_err());
        cfg.freeze_policy = false;
        assert!(TvDState::new(&spec, &cfg, SourceData::Policy(&p)).is_err());
        assert!(TvDState::new(&spec, &cfg, SourceData::Demos(&demos)).is_ok());
    }

    #[test]
    fn frozen_policy_is_untouched_and_history_grows() {
        let spec = GridWorldSpec::default();
        let t = StateTransform::rotation(&spec, FRAC_PI_2);
        let p = source_policy(&spec);
        let cfg = small_cfg();
        let state = run_tvd(&spec, &t, &cfg, SourceData::Policy(&p), Exec::Sequential).unwrap();
        assert_eq!(state.policy.params(), p.params());
        assert_eq!(state.history.len(), 3);
        assert_eq!(state.iteration, 3);
        assert!(state.history.iter().enumerate().all(|(i, r)| r.iteration == i));
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let spec = GridWorldSpec::default();
        let t = StateTransform::rotation(&spec, FRAC_PI_2);
        let p = source_policy(&spec);
        let mut cfg = small_cfg();
        cfg.outer_iterations = 4;
        let full = run_tvd(&spec, &t, &cfg, SourceData::Policy(&p), Exec::Sequential).unwrap();

        let run = TvDRun::new(&spec, &t, &cfg, SourceData::Policy(&p), Exec::Sequential).unwrap();
        let mut state = run.initial_state().unwrap();
        run.step(&mut state).unwrap();
        run.step(&mut state).unwrap();
        let mut bytes = Vec::new();
        state.write_to(&mut bytes).unwrap();
        let restored = TvDState::read_from(&mut bytes.as_slice(), &spec).unwrap();
        assert_eq!(restored, state);
        let resumed = run.run_from(restored, |_| Ok(())).unwrap();
        assert_eq!(resumed, full);
    }

    #[test]
    fn f_divergence_and_demo_modes_run() {
        let spec = GridWorldSpec::default();
        let expert = fit_edge_follower(&spec, 2);
        let demos: Vec<_> = (0..4).map(|k| crate::gridworld::rollout(&spec, &StateTransform::Identity, &expert, k)).collect();
        let demos = DemoSet::new(&spec, demos).unwrap();
        let mut cfg = small_cfg();
        cfg.freeze_policy = false;
        cfg.learn_undo = false;
        cfg.divergence.kind = DivergenceKind::Chi2;
        cfg.divergence.cost.mode = CostMode::StateL2;
        let state = run_tvd(&spec, &StateTransform::Identity, &cfg, SourceData::Demos(&demos), Exec::Sequential).unwrap();
        assert_eq!(state.history.len(), 3);
        assert!(state.history.iter().all(|r| r.undo_map_error == 0.0));
    }

    #[test]
    fn non_finite_undo_aborts_with_tensor_name() {
        let spec = GridWorldSpec::default();
        let p = source_policy(&spec);
        let cfg = small_cfg();
        let t = StateTransform::rotation(&spec, FRAC_PI_2);
        let run = TvDRun::new(&spec, &t, &cfg, SourceData::Policy(&p), Exec::Sequential).unwrap();
        let mut state = run.initial_state().unwrap();
        if let Potentials::Dual(pot) = &mut state.potentials {
            pot.g_net.params_mut()[0] = f64::INFINITY;
        }
        let err = run.step(&mut state).unwrap_err();
        assert!(matches!(err, Error::Diverged { iteration: 0, .. }), "{err}");
    }
}
