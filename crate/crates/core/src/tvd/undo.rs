use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gridworld::{GridState, GridWorldSpec};
use crate::nn::{Architecture, Mlp};
use crate::policy::StateMap;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndoFamily {
    /// `u(s) = c + M (s - c)` about the grid center `c`; 4 parameters.
    Linear,
    /// `u(s) = A s + b`; 6 parameters.
    Affine,
    /// `u(s) = s + D net(n(s))`, with `n` the `[-1, 1]` normalization and
    /// `D` its inverse scale.
    Mlp,
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Flat(Vec<f64>),
    Net(Mlp),
}

/// Parametric map from target-domain states to source-domain states.
#[derive(Debug, Clone, PartialEq)]
pub struct UndoMap {
    family: UndoFamily,
    center: [f64; 2],
    norm: [f64; 2],
    params: Params,
}

pub fn mlp_undo_architecture() -> Architecture {
    Architecture::new(2, &[16], 2)
}

impl UndoMap {
    /// Identity map of the given family.
    pub fn identity(spec: &GridWorldSpec, family: UndoFamily, rng: &mut Rng) -> Self {
        let params = match family {
            UndoFamily::Linear => Params::Flat(vec![1.0, 0.0, 0.0, 1.0]),
            UndoFamily::Affine => Params::Flat(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0]),
            UndoFamily::Mlp => Params::Net(Mlp::new_zero_output(mlp_undo_architecture(), rng)),
        };
        UndoMap::with_params_unchecked(spec, family, params)
    }

    fn with_params_unchecked(spec: &GridWorldSpec, family: UndoFamily, params: Params) -> Self {
        let c = spec.center();
        UndoMap {
            family,
            center: [c.x, c.y],
            norm: [spec.norm_x_scale(), spec.norm_y_scale()],
            params,
        }
    }

    pub fn from_params(spec: &GridWorldSpec, family: UndoFamily, params: Vec<f64>) -> Result<Self> {
        let p = match family {
            UndoFamily::Linear | UndoFamily::Affine => {
                let want = if family == UndoFamily::Linear { 4 } else { 6 };
                if params.len() != want {
                    return Err(Error::Config(format!("{family:?} undo map takes {want} parameters, got {}", params.len())));
                }
                Params::Flat(params)
            }
            UndoFamily::Mlp => Params::Net(Mlp::from_params(mlp_undo_architecture(), params)?),
        };
        Ok(UndoMap::with_params_unchecked(spec, family, p))
    }

    /// Linear-family map with matrix `m` (row-major).
    pub fn linear(spec: &GridWorldSpec, m: [f64; 4]) -> Self {
        UndoMap::with_params_unchecked(spec, UndoFamily::Linear, Params::Flat(m.to_vec()))
    }

    pub fn family(&self) -> UndoFamily {
        self.family
    }

    pub fn params(&self) -> &[f64] {
        match &self.params {
            Params::Flat(p) => p,
            Params::Net(n) => n.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match &mut self.params {
            Params::Flat(p) => p,
            Params::Net(n) => n.params_mut(),
        }
    }

    pub fn num_params(&self) -> usize {
        self.params().len()
    }

    pub fn is_finite(&self) -> bool {
        self.params().iter().all(|p| p.is_finite())
    }

    pub fn apply(&self, s: GridState) -> GridState {
        match &self.params {
            Params::Flat(p) if self.family == UndoFamily::Linear => {
                let (dx, dy) = (s.x - self.center[0], s.y - self.center[1]);
                GridState::new(
                    self.center[0] + p[0] * dx + p[1] * dy,
                    self.center[1] + p[2] * dx + p[3] * dy,
                )
            }
            Params::Flat(p) => GridState::new(p[0] * s.x + p[1] * s.y + p[4], p[2] * s.x + p[3] * s.y + p[5]),
            Params::Net(net) => {
                let out = net.forward(&self.normalized(s));
                GridState::new(s.x + out[0] / self.norm[0], s.y + out[1] / self.norm[1])
            }
        }
    }

    fn normalized(&self, s: GridState) -> [f64; 2] {
        [self.norm[0] * s.x - 1.0, self.norm[1] * s.y - 1.0]
    }

    /// Adds `scale * v^T du(s)/dω` into `grad`.
    pub fn param_vjp_into(&self, s: GridState, v: [f64; 2], grad: &mut [f64], scale: f64) {
        if v == [0.0, 0.0] || scale == 0.0 {
            return;
        }
        match &self.params {
            Params::Flat(_) if self.family == UndoFamily::Linear => {
                let (dx, dy) = (s.x - self.center[0], s.y - self.center[1]);
                grad[0] += scale * v[0] * dx;
                grad[1] += scale * v[0] * dy;
                grad[2] += scale * v[1] * dx;
                grad[3] += scale * v[1] * dy;
            }
            Params::Flat(_) => {
                grad[0] += scale * v[0] * s.x;
                grad[1] += scale * v[0] * s.y;
                grad[2] += scale * v[1] * s.x;
                grad[3] += scale * v[1] * s.y;
                grad[4] += scale * v[0];
                grad[5] += scale * v[1];
            }
            Params::Net(net) => {
                let trace = net.forward_trace(&self.normalized(s));
                net.backward_into(&trace, &[v[0] / self.norm[0], v[1] / self.norm[1]], grad, scale);
            }
        }
    }

    pub fn param_vjp(&self, s: GridState, v: [f64; 2]) -> Vec<f64> {
        let mut g = vec![0.0; self.num_params()];
        self.param_vjp_into(s, v, &mut g, 1.0);
        g
    }

    /// Row-major Jacobian `du/ds`.
    pub fn input_jacobian(&self, s: GridState) -> [f64; 4] {
        match &self.params {
            Params::Flat(p) => [p[0], p[1], p[2], p[3]],
            Params::Net(net) => {
                let x = self.normalized(s);
                let mut j = [1.0, 0.0, 0.0, 1.0];
                for row in 0..2 {
                    let mut dy = [0.0; 2];
                    dy[row] = 1.0 / self.norm[row];
                    let (_, dx) = net.vjp(&x, &dy);
                    j[2 * row] += dx[0] * self.norm[0];
                    j[2 * row + 1] += dx[1] * self.norm[1];
                }
                j
            }
        }
    }
}

impl StateMap for UndoMap {
    fn map_state(&self, s: GridState) -> GridState {
        self.apply(s)
    }
}
