//! Distribution distances estimated through trained test functions.
//!
//! Two families share the same sample representation ([`Samples`]: weighted
//! feature vectors plus a cost matrix between the two sides):
//!
//! * the hinge-regularized Wasserstein dual
//!   `E_p1[h] + E_p2[g] - α E_{p1⊗p2}[(h(x) + g(x') - c(x, x'))_+]`
//!   with neural potentials `h`, `g`;
//! * variational f-divergences `E_p1[g] - E_p2[f*(g)]` for χ², TV and KL.

use serde::{Deserialize, Serialize};

use crate::costs::{state_cost, CostMode, CostSpec};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::gridworld::{GridState, GridWorldSpec};
use crate::nn::{Activation, Architecture, Mlp, Optimizer, OptimizerKind};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    Wasserstein,
    Chi2,
    Tv,
    Kl,
}

impl DivergenceKind {
    pub fn f_kind(self) -> Option<FDivKind> {
        match self {
            DivergenceKind::Wasserstein => None,
            DivergenceKind::Chi2 => Some(FDivKind::Chi2),
            DivergenceKind::Tv => Some(FDivKind::Tv),
            DivergenceKind::Kl => Some(FDivKind::Kl),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DivergenceSpec {
    pub kind: DivergenceKind,
    /// Hinge penalty weight of the regularized dual.
    pub alpha: f64,
    pub cost: CostSpec,
    pub potential_lr: f64,
    pub inner_steps: usize,
    pub batch_size: usize,
    #[serde(default = "default_ascent")]
    pub ascent: OptimizerKind,
    /// Potentials are `value_scale * F(x, ξ)`; keeps network outputs O(1)
    /// when costs are large.
    #[serde(default = "default_value_scale")]
    pub value_scale: f64,
    #[serde(default = "default_potential_hidden")]
    pub potential_hidden: Vec<usize>,
    pub potential_activation: Activation,
}

fn default_ascent() -> OptimizerKind {
    OptimizerKind::Adam
}
fn default_value_scale() -> f64 {
    10.0
}
fn default_potential_hidden() -> Vec<usize> {
    vec![64, 64]
}

impl Default for DivergenceSpec {
    fn default() -> Self {
        DivergenceSpec {
            kind: DivergenceKind::Wasserstein,
            alpha: 10.0,
            cost: CostSpec::default(),
            potential_lr: 1e-3,
            inner_steps: 50,
            batch_size: 32,
            ascent: default_ascent(),
            value_scale: default_value_scale(),
            potential_hidden: default_potential_hidden(),
            potential_activation: Activation::Tanh,
        }
    }
}

impl DivergenceSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) {
            return Err(Error::Config("alpha must be positive".into()));
        }
        if !(self.potential_lr > 0.0) || self.inner_steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("potential_lr, inner_steps and batch_size must be positive".into()));
        }
        if !(self.value_scale > 0.0) {
            return Err(Error::Config("value_scale must be positive".into()));
        }
        Ok(())
    }
}

/// Fixed-dimension encoding of a sample for the potentials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Featurizer {
    pub mode: CostMode,
    pub horizon: usize,
    /// Per-axis scale onto `[-1, 1]`.
    pub scale: [f64; 2],
}

impl Featurizer {
    pub fn new(spec: &GridWorldSpec, mode: CostMode) -> Self {
        Featurizer {
            mode,
            horizon: spec.horizon,
            scale: [spec.norm_x_scale(), spec.norm_y_scale()],
        }
    }

    pub fn dim(&self) -> usize {
        match self.mode {
            CostMode::StateL2 => 2,
            CostMode::TrajectoryDtw => 2 * self.horizon + 1,
        }
    }

    pub fn state(&self, s: GridState) -> Vec<f64> {
        vec![self.scale[0] * s.x - 1.0, self.scale[1] * s.y - 1.0]
    }

    /// Frame `k` of the padded encoding reads state `frame_source(len, k)`.
    ///
    /// The encoding uses the `L` post-transition states `s_1..s_L`, repeats
    /// `s_L` up to `H` frames and appends `L / H`.
    fn frame_source(&self, num_states: usize, k: usize) -> usize {
        if num_states == 1 {
            0
        } else {
            (k + 1).min(num_states - 1).min(self.horizon)
        }
    }

    pub fn trajectory(&self, states: &[GridState]) -> Vec<f64> {
        assert!(!states.is_empty());
        let mut f = Vec::with_capacity(self.dim());
        for k in 0..self.horizon {
            let s = states[self.frame_source(states.len(), k)];
            f.push(self.scale[0] * s.x - 1.0);
            f.push(self.scale[1] * s.y - 1.0);
        }
        let steps = states.len().saturating_sub(1).max(1).min(self.horizon);
        f.push(steps as f64 / self.horizon as f64);
        f
    }

    /// Maps a feature cotangent back onto the trajectory's states.
    pub fn trajectory_pullback(&self, num_states: usize, dfeat: &[f64]) -> Vec<[f64; 2]> {
        let mut out = vec![[0.0; 2]; num_states];
        for k in 0..self.horizon {
            let t = self.frame_source(num_states, k);
            out[t][0] += dfeat[2 * k] * self.scale[0];
            out[t][1] += dfeat[2 * k + 1] * self.scale[1];
        }
        out
    }
}

/// Weighted feature vectors for one side of a divergence estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct Samples {
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<f64>,
}

impl Samples {
    pub fn uniform(features: Vec<Vec<f64>>) -> Self {
        let n = features.len();
        Samples {
            features,
            weights: vec![1.0 / n as f64; n],
        }
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }
}

/// Row-major `n1 x n2` ground-cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub rows: usize,
    pub cols: usize,
    pub values: Vec<f64>,
}

impl CostMatrix {
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn from_fn(rows: usize, cols: usize, exec: Exec, f: impl Fn(usize, usize) -> f64 + Sync + Send) -> Self {
        let values = exec
            .map_range(rows, |i| (0..cols).map(|j| f(i, j)).collect::<Vec<_>>())
            .into_iter()
            .flatten()
            .collect();
        CostMatrix { rows, cols, values }
    }
}

/// Two weighted sample sets and their cost matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DualProblem {
    pub first: Samples,
    pub second: Samples,
    pub cost: CostMatrix,
}

impl DualProblem {
    pub fn new(first: Samples, second: Samples, cost: CostMatrix) -> Result<Self> {
        if first.is_empty() || second.is_empty() {
            return Err(Error::EmptySequence("divergence batch"));
        }
        if cost.rows != first.len() || cost.cols != second.len() {
            return Err(Error::Config("cost matrix shape does not match batches".into()));
        }
        Ok(DualProblem { first, second, cost })
    }

    /// Discrete distributions on points with Euclidean cost.
    pub fn from_points(featurizer: &Featurizer, p: &[(GridState, f64)], q: &[(GridState, f64)]) -> Result<Self> {
        let first = Samples {
            features: p.iter().map(|(s, _)| featurizer.state(*s)).collect(),
            weights: p.iter().map(|(_, w)| *w).collect(),
        };
        let second = Samples {
            features: q.iter().map(|(s, _)| featurizer.state(*s)).collect(),
            weights: q.iter().map(|(_, w)| *w).collect(),
        };
        let cost = CostMatrix::from_fn(p.len(), q.len(), Exec::Sequential, |i, j| state_cost(p[i].0, q[j].0));
        DualProblem::new(first, second, cost)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DivergenceEstimate {
    pub value: f64,
    /// Product-measure mass where `h + g > c` (Wasserstein only).
    pub hinge_violation_rate: f64,
}

/// Test-function pair `(h, g)` of the regularized Wasserstein dual.
#[derive(Debug, Clone, PartialEq)]
pub struct DualPotentials {
    pub h_net: Mlp,
    pub g_net: Mlp,
    pub featurizer: Featurizer,
    pub value_scale: f64,
    h_opt: Optimizer,
    g_opt: Optimizer,
}

/// Potential values and traces over a [`Samples`] set.
struct Evaluated {
    values: Vec<f64>,
    traces: Vec<crate::nn::Trace>,
}

fn evaluate(net: &Mlp, scale: f64, samples: &Samples) -> Evaluated {
    let traces: Vec<_> = samples.features.iter().map(|x| net.forward_trace(x)).collect();
    let values = traces.iter().map(|t| scale * t.output()[0]).collect();
    Evaluated { values, traces }
}

/// Per-sample hinge-active mass: `row[i] = Σ_j w2_j 1[h_i + g_j > c_ij]` and
/// `col[j] = Σ_i w1_i 1[...]`, plus the hinge penalty and violation rate.
struct HingeStats {
    row: Vec<f64>,
    col: Vec<f64>,
    penalty: f64,
    violation: f64,
}

fn hinge_stats(problem: &DualProblem, h: &[f64], g: &[f64]) -> HingeStats {
    let (n1, n2) = (problem.first.len(), problem.second.len());
    let (w1, w2) = (&problem.first.weights, &problem.second.weights);
    let mut row = vec![0.0; n1];
    let mut col = vec![0.0; n2];
    let mut penalty = 0.0;
    let mut violation = 0.0;
    for i in 0..n1 {
        for j in 0..n2 {
            let slack = h[i] + g[j] - problem.cost.get(i, j);
            if slack > 0.0 {
                let w = w1[i] * w2[j];
                penalty += w * slack;
                violation += w;
                row[i] += w2[j];
                col[j] += w1[i];
            }
        }
    }
    HingeStats {
        row,
        col,
        penalty,
        violation,
    }
}

fn weighted_mean(values: &[f64], weights: &[f64]) -> f64 {
    values.iter().zip(weights).map(|(v, w)| v * w).sum()
}

impl DualPotentials {
    pub fn new(featurizer: Featurizer, spec: &DivergenceSpec, rng: &mut Rng) -> Self {
        let arch = Architecture {
            activation: spec.potential_activation,
            ..Architecture::new(featurizer.dim(), &spec.potential_hidden, 1)
        };
        let h_net = Mlp::new_zero_output(arch.clone(), rng);
        let g_net = Mlp::new_zero_output(arch, rng);
        let n = h_net.num_params();
        DualPotentials {
            h_opt: Optimizer::new(spec.ascent, n, spec.potential_lr),
            g_opt: Optimizer::new(spec.ascent, n, spec.potential_lr),
            h_net,
            g_net,
            featurizer,
            value_scale: spec.value_scale,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.h_opt.lr()
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.h_opt.set_lr(lr);
        self.g_opt.set_lr(lr);
    }

    pub fn h(&self, x: &[f64]) -> f64 {
        self.value_scale * self.h_net.forward(x)[0]
    }

    pub fn g(&self, x: &[f64]) -> f64 {
        self.value_scale * self.g_net.forward(x)[0]
    }

    /// `d g / d x` for a feature vector `x`.
    pub fn g_input_grad(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let trace = self.g_net.forward_trace(x);
        let mut scratch = vec![0.0; self.g_net.num_params()];
        let dx = self.g_net.backward_into(&trace, &[self.value_scale], &mut scratch, 0.0);
        (self.value_scale * trace.output()[0], dx)
    }

    pub fn is_finite(&self) -> bool {
        self.h_net.is_finite() && self.g_net.is_finite()
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        crate::nn::write_f64s(w, &[self.value_scale])?;
        w.write_all(&[match self.featurizer.mode {
            CostMode::TrajectoryDtw => 0,
            CostMode::StateL2 => 1,
        }])?;
        crate::nn::write_u64(w, self.featurizer.horizon as u64)?;
        crate::nn::write_f64s(w, &self.featurizer.scale)?;
        self.h_net.write_to(w)?;
        self.g_net.write_to(w)?;
        self.h_opt.write_to(w)?;
        self.g_opt.write_to(w)
    }

    pub fn read_from<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let vs = crate::nn::read_f64s(r)?;
        let mut mode = [0u8];
        r.read_exact(&mut mode)?;
        let horizon = crate::nn::read_u64(r)? as usize;
        let scale = crate::nn::read_f64s(r)?;
        if vs.len() != 1 || scale.len() != 2 || mode[0] > 1 {
            return Err(Error::format("potential checkpoint", "bad header"));
        }
        let featurizer = Featurizer {
            mode: if mode[0] == 0 { CostMode::TrajectoryDtw } else { CostMode::StateL2 },
            horizon,
            scale: [scale[0], scale[1]],
        };
        Ok(DualPotentials {
            value_scale: vs[0],
            featurizer,
            h_net: Mlp::read_from(r)?,
            g_net: Mlp::read_from(r)?,
            h_opt: Optimizer::read_from(r)?,
            g_opt: Optimizer::read_from(r)?,
        })
    }
}

pub fn wasserstein_objective(problem: &DualProblem, pot: &DualPotentials, alpha: f64) -> DivergenceEstimate {
    let h = evaluate(&pot.h_net, pot.value_scale, &problem.first).values;
    let g = evaluate(&pot.g_net, pot.value_scale, &problem.second).values;
    wasserstein_objective_from_values(problem, &h, &g, alpha)
}

pub fn wasserstein_objective_from_values(problem: &DualProblem, h: &[f64], g: &[f64], alpha: f64) -> DivergenceEstimate {
    let hs = hinge_stats(problem, h, g);
    DivergenceEstimate {
        value: weighted_mean(h, &problem.first.weights) + weighted_mean(g, &problem.second.weights) - alpha * hs.penalty,
        hinge_violation_rate: hs.violation,
    }
}

/// One ascent step on both potentials; returns the objective before the step.
pub fn potential_step(problem: &DualProblem, pot: &mut DualPotentials, alpha: f64) -> DivergenceEstimate {
    let eh = evaluate(&pot.h_net, pot.value_scale, &problem.first);
    let eg = evaluate(&pot.g_net, pot.value_scale, &problem.second);
    let hs = hinge_stats(problem, &eh.values, &eg.values);
    let before = DivergenceEstimate {
        value: weighted_mean(&eh.values, &problem.first.weights) + weighted_mean(&eg.values, &problem.second.weights)
            - alpha * hs.penalty,
        hinge_violation_rate: hs.violation,
    };

    let mut grad_h = vec![0.0; pot.h_net.num_params()];
    for (i, trace) in eh.traces.iter().enumerate() {
        let coef = problem.first.weights[i] * (1.0 - alpha * hs.row[i]);
        if coef != 0.0 {
            pot.h_net.backward_into(trace, &[pot.value_scale], &mut grad_h, coef);
        }
    }
    let mut grad_g = vec![0.0; pot.g_net.num_params()];
    for (j, trace) in eg.traces.iter().enumerate() {
        let coef = problem.second.weights[j] * (1.0 - alpha * hs.col[j]);
        if coef != 0.0 {
            pot.g_net.backward_into(trace, &[pot.value_scale], &mut grad_g, coef);
        }
    }
    pot.h_opt.step(pot.h_net.params_mut(), &grad_h, true);
    pot.g_opt.step(pot.g_net.params_mut(), &grad_g, true);
    before
}

/// Runs `steps` ascent steps on the regularized dual. Aborts if any potential
/// parameter becomes non-finite.
pub fn update_potentials(problem: &DualProblem, pot: &mut DualPotentials, alpha: f64, steps: usize) -> Result<DivergenceEstimate> {
    for step in 0..steps {
        potential_step(problem, pot, alpha);
        if !pot.is_finite() {
            return Err(Error::Diverged {
                tensor: "dual potentials".into(),
                iteration: step,
            });
        }
    }
    Ok(wasserstein_objective(problem, pot, alpha))
}

/// [`update_potentials`] with the step size annealed geometrically from its
/// current value down to `final_lr` over the run; the original step size is
/// restored afterwards.
pub fn fit_potentials(
    problem: &DualProblem,
    pot: &mut DualPotentials,
    alpha: f64,
    steps: usize,
    final_lr: f64,
) -> Result<DivergenceEstimate> {
    let start = pot.learning_rate();
    let ratio = final_lr / start;
    for step in 0..steps {
        let frac = if steps > 1 { step as f64 / (steps - 1) as f64 } else { 1.0 };
        pot.set_learning_rate(start * ratio.powf(frac));
        potential_step(problem, pot, alpha);
        if !pot.is_finite() {
            pot.set_learning_rate(start);
            return Err(Error::Diverged {
                tensor: "dual potentials".into(),
                iteration: step,
            });
        }
    }
    pot.set_learning_rate(start);
    Ok(wasserstein_objective(problem, pot, alpha))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FDivKind {
    Chi2,
    Tv,
    Kl,
}

/// Upper clamp applied to `g` before exponentiation.
pub const KL_EXP_CLAMP: f64 = 20.0;

/// The KL conjugate used here is `e^y`, whose variational optimum is
/// `KL - 1`; estimates add this back.
pub const KL_CONJUGATE_OFFSET: f64 = 1.0;

impl FDivKind {
    /// Test-function value actually used (TV clamps to `[-1/2, 1/2]`).
    pub fn link(self, raw: f64) -> f64 {
        match self {
            FDivKind::Tv => raw.clamp(-0.5, 0.5),
            _ => raw,
        }
    }

    pub fn link_grad(self, raw: f64) -> f64 {
        match self {
            FDivKind::Tv if raw.abs() > 0.5 => 0.0,
            _ => 1.0,
        }
    }

    /// Convex conjugate `f*` evaluated at the linked value.
    pub fn conjugate(self, g: f64) -> f64 {
        match self {
            FDivKind::Chi2 => g + g * g / 4.0,
            FDivKind::Tv => g,
            FDivKind::Kl => g.min(KL_EXP_CLAMP).exp(),
        }
    }

    pub fn conjugate_grad(self, g: f64) -> f64 {
        match self {
            FDivKind::Chi2 => 1.0 + g / 2.0,
            FDivKind::Tv => 1.0,
            FDivKind::Kl => {
                if g > KL_EXP_CLAMP {
                    0.0
                } else {
                    g.exp()
                }
            }
        }
    }

    pub fn estimate_offset(self) -> f64 {
        match self {
            FDivKind::Kl => KL_CONJUGATE_OFFSET,
            _ => 0.0,
        }
    }
}

/// Test function `g = F(x, ξ)` of a variational f-divergence.
#[derive(Debug, Clone, PartialEq)]
pub struct FPotential {
    pub net: Mlp,
    pub featurizer: Featurizer,
    opt: Optimizer,
}

impl FPotential {
    pub fn new(featurizer: Featurizer, spec: &DivergenceSpec, rng: &mut Rng) -> Self {
        let arch = Architecture {
            activation: spec.potential_activation,
            ..Architecture::new(featurizer.dim(), &spec.potential_hidden, 1)
        };
        let net = Mlp::new_zero_output(arch, rng);
        FPotential {
            opt: Optimizer::new(spec.ascent, net.num_params(), spec.potential_lr),
            net,
            featurizer,
        }
    }

    pub fn raw(&self, x: &[f64]) -> f64 {
        self.net.forward(x)[0]
    }

    pub fn is_finite(&self) -> bool {
        self.net.is_finite()
    }

    pub fn write_to<W: std::io::Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(&[match self.featurizer.mode {
            CostMode::TrajectoryDtw => 0,
            CostMode::StateL2 => 1,
        }])?;
        crate::nn::write_u64(w, self.featurizer.horizon as u64)?;
        crate::nn::write_f64s(w, &self.featurizer.scale)?;
        self.net.write_to(w)?;
        self.opt.write_to(w)
    }

    pub fn read_from<R: std::io::Read>(r: &mut R) -> Result<Self> {
        let mut mode = [0u8];
        r.read_exact(&mut mode)?;
        let horizon = crate::nn::read_u64(r)? as usize;
        let scale = crate::nn::read_f64s(r)?;
        if scale.len() != 2 || mode[0] > 1 {
            return Err(Error::format("potential checkpoint", "bad header"));
        }
        Ok(FPotential {
            featurizer: Featurizer {
                mode: if mode[0] == 0 { CostMode::TrajectoryDtw } else { CostMode::StateL2 },
                horizon,
                scale: [scale[0], scale[1]],
            },
            net: Mlp::read_from(r)?,
            opt: Optimizer::read_from(r)?,
        })
    }
}

/// `E_p1[g] - E_p2[f*(g)]` with `g` linked per kind.
pub fn f_div_objective(first: &Samples, second: &Samples, pot: &FPotential, kind: FDivKind) -> f64 {
    let a: f64 = first
        .features
        .iter()
        .zip(&first.weights)
        .map(|(x, w)| w * kind.link(pot.raw(x)))
        .sum();
    let b: f64 = second
        .features
        .iter()
        .zip(&second.weights)
        .map(|(x, w)| w * kind.conjugate(kind.link(pot.raw(x))))
        .sum();
    a - b
}

/// Objective plus the conjugate offset, comparable to the closed-form divergence.
pub fn f_div_estimate(first: &Samples, second: &Samples, pot: &FPotential, kind: FDivKind) -> f64 {
    f_div_objective(first, second, pot, kind) + kind.estimate_offset()
}

/// Gradient of [`f_div_objective`] with respect to the potential parameters.
pub fn f_div_param_grad(first: &Samples, second: &Samples, pot: &FPotential, kind: FDivKind) -> Vec<f64> {
    let mut grad = vec![0.0; pot.net.num_params()];
    for (x, w) in first.features.iter().zip(&first.weights) {
        let trace = pot.net.forward_trace(x);
        let coef = w * kind.link_grad(trace.output()[0]);
        if coef != 0.0 {
            pot.net.backward_into(&trace, &[1.0], &mut grad, coef);
        }
    }
    for (x, w) in second.features.iter().zip(&second.weights) {
        let trace = pot.net.forward_trace(x);
        let raw = trace.output()[0];
        let coef = -w * kind.conjugate_grad(kind.link(raw)) * kind.link_grad(raw);
        if coef != 0.0 {
            pot.net.backward_into(&trace, &[1.0], &mut grad, coef);
        }
    }
    grad
}

/// One ascent step `ξ ← ξ + η [∇F(x1) - ∇f*(F(x2))]`.
pub fn update_f_potential(first: &Samples, second: &Samples, pot: &mut FPotential, kind: FDivKind) -> Result<()> {
    let grad = f_div_param_grad(first, second, pot, kind);
    pot.opt.step(pot.net.params_mut(), &grad, true);
    if !pot.is_finite() {
        return Err(Error::Diverged {
            tensor: "f-divergence potential".into(),
            iteration: 0,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn spec() -> GridWorldSpec {
        GridWorldSpec::default()
    }

    fn gs(x: f64, y: f64) -> GridState {
        GridState::new(x, y)
    }

    #[test]
    fn featurize_full_length_and_single_step() {
        let f = Featurizer::new(&spec(), CostMode::TrajectoryDtw);
        assert_eq!(f.dim(), 101);
        let full: Vec<_> = (0..=50).map(|k| gs((k % 8) as f64, 0.0)).collect();
        let v = f.trajectory(&full);
        assert_eq!(v[100], 1.0);
        assert_eq!(v[98], f.scale[0] * 2.0 - 1.0); // frame 49 reads s_50 = (50 % 8, 0)
        let short = [gs(0.0, 0.0), gs(1.0, 0.0)];
        let v = f.trajectory(&short);
        assert!((v[100] - 0.02).abs() < 1e-15);
        for k in 0..50 {
            assert_eq!(&v[2 * k..2 * k + 2], &f.state(gs(1.0, 0.0))[..]);
        }
        assert_eq!(f.trajectory(&short), f.trajectory(&short.clone()));
    }

    #[test]
    fn pullback_is_transpose_of_featurization() {
        let f = Featurizer::new(&spec(), CostMode::TrajectoryDtw);
        let states: Vec<_> = (0..9).map(|k| gs(k as f64 * 0.7, 7.0 - k as f64)).collect();
        let dfeat: Vec<f64> = (0..f.dim()).map(|k| (k as f64 * 0.37).sin()).collect();
        let pulled = f.trajectory_pullback(states.len(), &dfeat);
        // featurization is affine in the states, so the directional derivative is exact
        let dir: Vec<[f64; 2]> = (0..states.len()).map(|k| [(k as f64).cos(), (k as f64 * 1.3).sin()]).collect();
        let moved: Vec<_> = states.iter().zip(&dir).map(|(s, d)| gs(s.x + d[0], s.y + d[1])).collect();
        let lhs: f64 = f
            .trajectory(&moved)
            .iter()
            .zip(f.trajectory(&states))
            .zip(&dfeat)
            .map(|((a, b), d)| (a - b) * d)
            .sum();
        let rhs: f64 = pulled.iter().zip(&dir).map(|(p, d)| p[0] * d[0] + p[1] * d[1]).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    fn problem(points1: &[(f64, f64)], points2: &[(f64, f64)]) -> DualProblem {
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let p: Vec<_> = points1.iter().map(|&(x, y)| (gs(x, y), 1.0 / points1.len() as f64)).collect();
        let q: Vec<_> = points2.iter().map(|&(x, y)| (gs(x, y), 1.0 / points2.len() as f64)).collect();
        DualProblem::from_points(&f, &p, &q).unwrap()
    }

    #[test]
    fn zero_and_cancelling_potentials_give_zero() {
        let pr = problem(&[(0.0, 0.0), (3.0, 1.0)], &[(5.0, 5.0), (2.0, 7.0), (1.0, 1.0)]);
        let n1 = pr.first.len();
        let n2 = pr.second.len();
        assert_eq!(wasserstein_objective_from_values(&pr, &vec![0.0; n1], &vec![0.0; n2], 10.0).value, 0.0);
        let est = wasserstein_objective_from_values(&pr, &vec![2.5; n1], &vec![-2.5; n2], 10.0);
        assert!(est.value.abs() < 1e-12);
        assert_eq!(est.hinge_violation_rate, 0.0);
    }

    #[test]
    fn potentials_start_at_zero() {
        let pr = problem(&[(1.0, 2.0)], &[(4.0, 6.0)]);
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let pot = DualPotentials::new(f, &DivergenceSpec::default(), &mut substream(0, "t", 0));
        assert_eq!(wasserstein_objective(&pr, &pot, 10.0).value, 0.0);
    }

    fn trained(pr: &DualProblem, steps: usize, alpha: f64, lr: f64, value_scale: f64) -> (DualPotentials, f64) {
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let ds = DivergenceSpec {
            potential_lr: lr,
            value_scale,
            ..DivergenceSpec::default()
        };
        let mut pot = DualPotentials::new(f, &ds, &mut substream(1, "t", 1));
        let est = update_potentials(pr, &mut pot, alpha, steps).unwrap();
        (pot, est.value)
    }

    #[test]
    fn same_point_dual_optimum_is_zero() {
        let pr = problem(&[(2.0, 3.0)], &[(2.0, 3.0)]);
        let (_, v) = trained(&pr, 1000, 10.0, 1e-3, 1.0);
        assert!(v.abs() <= 1e-3, "{v}");
    }

    #[test]
    fn dirac_pair_converges_to_distance() {
        let pr = problem(&[(1.0, 1.0)], &[(4.0, 5.0)]);
        let (_, v) = trained(&pr, 2000, 10.0, 1e-2, 10.0);
        assert!((v - 5.0).abs() <= 0.5, "{v}");
    }

    #[test]
    fn annealed_relu_fit_matches_split_mass_transport() {
        // Half the mass at (0,0) goes to (3,4), the other half stays: W = 2.5.
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let pr = DualProblem::from_points(
            &f,
            &[(gs(0.0, 0.0), 1.0)],
            &[(gs(0.0, 0.0), 0.5), (gs(3.0, 4.0), 0.5)],
        )
        .unwrap();
        let ds = DivergenceSpec {
            potential_lr: 3e-3,
            potential_activation: Activation::Relu,
            ..DivergenceSpec::default()
        };
        let mut pot = DualPotentials::new(f, &ds, &mut substream(1, "t", 4));
        let est = fit_potentials(&pr, &mut pot, 50.0, 2000, 3e-4).unwrap();
        assert!((est.value - 2.5).abs() <= 0.25, "{}", est.value);
        assert_eq!(pot.learning_rate(), 3e-3);
        assert_eq!(pot.h_net.architecture().activation, Activation::Relu);
    }

    #[test]
    fn small_ascent_step_increases_objective() {
        let pr = problem(&[(0.0, 0.0), (6.0, 2.0), (3.0, 3.0)], &[(5.0, 5.0), (1.0, 6.0)]);
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let ds = DivergenceSpec {
            ascent: OptimizerKind::Sgd,
            potential_lr: 1e-4,
            ..DivergenceSpec::default()
        };
        let mut pot = DualPotentials::new(f, &ds, &mut substream(3, "t", 3));
        let mut prev = wasserstein_objective(&pr, &pot, 10.0).value;
        for _ in 0..20 {
            potential_step(&pr, &mut pot, 10.0);
            let now = wasserstein_objective(&pr, &pot, 10.0).value;
            assert!(now >= prev - 1e-12, "{now} < {prev}");
            prev = now;
        }
    }

    #[test]
    fn non_finite_parameters_abort() {
        let pr = problem(&[(0.0, 0.0)], &[(5.0, 5.0)]);
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let mut pot = DualPotentials::new(f, &DivergenceSpec::default(), &mut substream(4, "t", 4));
        pot.h_net.params_mut()[0] = f64::NAN;
        assert!(matches!(update_potentials(&pr, &mut pot, 10.0, 1), Err(Error::Diverged { .. })));
    }

    fn f_pot(kind_spec: OptimizerKind, lr: f64) -> FPotential {
        let f = Featurizer::new(&spec(), CostMode::StateL2);
        let ds = DivergenceSpec {
            ascent: kind_spec,
            potential_lr: lr,
            potential_hidden: vec![16, 16],
            ..DivergenceSpec::default()
        };
        FPotential::new(f, &ds, &mut substream(5, "t", 5))
    }

    #[test]
    fn f_div_at_zero_potential() {
        let pr = problem(&[(0.0, 0.0), (2.0, 0.0)], &[(1.0, 1.0)]);
        let pot = f_pot(OptimizerKind::Adam, 1e-3);
        assert_eq!(f_div_objective(&pr.first, &pr.second, &pot, FDivKind::Chi2), 0.0);
        assert_eq!(f_div_objective(&pr.first, &pr.second, &pot, FDivKind::Tv), 0.0);
        assert_eq!(f_div_objective(&pr.first, &pr.second, &pot, FDivKind::Kl), -1.0);
        assert_eq!(f_div_estimate(&pr.first, &pr.second, &pot, FDivKind::Kl), 0.0);
    }

    #[test]
    fn saturated_tv_on_identical_batches_does_not_move() {
        let pr = problem(&[(0.0, 0.0), (2.0, 5.0)], &[(0.0, 0.0), (2.0, 5.0)]);
        let mut pot = f_pot(OptimizerKind::Sgd, 0.1);
        let last = pot.net.num_params() - 1;
        pot.net.params_mut()[last] = 3.0; // output bias: saturate the clamp everywhere
        let before = pot.net.params().to_vec();
        update_f_potential(&pr.first, &pr.second, &mut pot, FDivKind::Tv).unwrap();
        assert_eq!(before, pot.net.params());
    }

    #[test]
    fn kl_on_identical_distributions_trains_towards_zero() {
        let pr = problem(&[(0.0, 0.0), (2.0, 5.0)], &[(0.0, 0.0), (2.0, 5.0)]);
        let mut pot = f_pot(OptimizerKind::Adam, 1e-2);
        let last = pot.net.num_params() - 1;
        pot.net.params_mut()[last] = 0.8;
        for _ in 0..500 {
            update_f_potential(&pr.first, &pr.second, &mut pot, FDivKind::Kl).unwrap();
        }
        let est = f_div_estimate(&pr.first, &pr.second, &pot, FDivKind::Kl);
        assert!(est <= 1e-12 && est > -1e-3, "{est}");
    }
}
