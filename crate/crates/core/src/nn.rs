//! Small dense networks with a hand-written backward pass.
//!
//! [`Mlp`] is the single differentiable-function type used for policies,
//! MLP undo maps and dual potentials. Parameters live in one flat vector so
//! optimizers, checkpoints and finite-difference checks can treat every
//! network uniformly.
//!
//! Layout: for each layer, the weight matrix `(out, in)` row-major followed by
//! the bias `(out)`. Hidden layers apply the activation; the output layer is
//! linear.

use std::io::{Read, Write};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output `a`.
    fn derivative(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    fn code(self) -> u8 {
        match self {
            Activation::Tanh => 0,
            Activation::Relu => 1,
        }
    }

    fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(Activation::Tanh),
            1 => Ok(Activation::Relu),
            other => Err(Error::format("network checkpoint", format!("unknown activation code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input: usize,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub activation: Activation,
}

impl Architecture {
    pub fn new(input: usize, hidden: &[usize], output: usize) -> Self {
        Architecture {
            input,
            hidden: hidden.to_vec(),
            output,
            activation: Activation::Tanh,
        }
    }

    fn widths(&self) -> Vec<usize> {
        let mut w = Vec::with_capacity(self.hidden.len() + 2);
        w.push(self.input);
        w.extend_from_slice(&self.hidden);
        w.push(self.output);
        w
    }

    pub fn num_params(&self) -> usize {
        self.widths().windows(2).map(|p| p[0] * p[1] + p[1]).sum()
    }
}

/// Per-layer activations recorded by [`Mlp::forward_trace`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `layers[0]` is the input, `layers.last()` the network output.
    layers: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.layers.last().expect("trace has at least an input")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    arch: Architecture,
    widths: Vec<usize>,
    params: Vec<f64>,
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let widths = arch.widths();
        let mut params = Vec::with_capacity(arch.num_params());
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.gen_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Mlp { arch, widths, params }
    }

    /// Random hidden layers, all-zero output layer: the network starts as the zero function.
    pub fn new_zero_output<R: Rng + ?Sized>(arch: Architecture, rng: &mut R) -> Self {
        let mut net = Self::new(arch, rng);
        let range = net.layer_ranges().pop().expect("at least one layer");
        net.params[range.0..range.2].iter_mut().for_each(|p| *p = 0.0);
        net
    }

    pub fn from_params(arch: Architecture, params: Vec<f64>) -> Result<Self> {
        if params.len() != arch.num_params() {
            return Err(Error::Config(format!(
                "architecture expects {} parameters, got {}",
                arch.num_params(),
                params.len()
            )));
        }
        let widths = arch.widths();
        Ok(Mlp { arch, widths, params })
    }

    pub fn architecture(&self) -> &Architecture {
        &self.arch
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    pub fn input_dim(&self) -> usize {
        self.arch.input
    }

    pub fn output_dim(&self) -> usize {
        self.arch.output
    }

    /// `(weight_start, bias_start, end)` offsets for each layer.
    fn layer_ranges(&self) -> Vec<(usize, usize, usize)> {
        let mut offset = 0;
        self.widths
            .windows(2)
            .map(|p| {
                let w = offset;
                let b = w + p[0] * p[1];
                offset = b + p[1];
                (w, b, offset)
            })
            .collect()
    }

    pub fn forward(&self, x: &[f64]) -> Vec<f64> {
        self.forward_trace(x).layers.pop().expect("non-empty")
    }

    pub fn forward_trace(&self, x: &[f64]) -> Trace {
        assert_eq!(x.len(), self.arch.input, "input dimension mismatch");
        let ranges = self.layer_ranges();
        let last = ranges.len() - 1;
        let mut layers = Vec::with_capacity(ranges.len() + 1);
        layers.push(x.to_vec());
        for (l, &(w, b, _)) in ranges.iter().enumerate() {
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            let input = &layers[l];
            let mut out = Vec::with_capacity(n_out);
            for o in 0..n_out {
                let row = &self.params[w + o * n_in..w + (o + 1) * n_in];
                let z = self.params[b + o] + row.iter().zip(input).map(|(a, b)| a * b).sum::<f64>();
                out.push(if l == last { z } else { self.arch.activation.apply(z) });
            }
            layers.push(out);
        }
        Trace { layers }
    }

    /// Backpropagates the output cotangent `dy`, adding `scale * dL/dparams`
    /// into `grad`, and returns `dL/dx`.
    pub fn backward_into(&self, trace: &Trace, dy: &[f64], grad: &mut [f64], scale: f64) -> Vec<f64> {
        assert_eq!(dy.len(), self.arch.output);
        assert_eq!(grad.len(), self.params.len());
        let ranges = self.layer_ranges();
        let last = ranges.len() - 1;
        let mut delta = dy.to_vec();
        for l in (0..ranges.len()).rev() {
            let (w, b, _) = ranges[l];
            let n_in = self.widths[l];
            let n_out = self.widths[l + 1];
            if l != last {
                let act = &trace.layers[l + 1];
                for (d, a) in delta.iter_mut().zip(act) {
                    *d *= self.arch.activation.derivative(*a);
                }
            }
            let input = &trace.layers[l];
            let mut d_input = vec![0.0; n_in];
            for o in 0..n_out {
                let d = delta[o];
                if d == 0.0 {
                    continue;
                }
                grad[b + o] += scale * d;
                let row = w + o * n_in;
                for i in 0..n_in {
                    grad[row + i] += scale * d * input[i];
                    d_input[i] += d * self.params[row + i];
                }
            }
            delta = d_input;
        }
        delta
    }

    /// Vector-Jacobian product: `(dy^T dF/dparams, dy^T dF/dx)`.
    pub fn vjp(&self, x: &[f64], dy: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let trace = self.forward_trace(x);
        let mut grad = vec![0.0; self.params.len()];
        let dx = self.backward_into(&trace, dy, &mut grad, 1.0);
        (grad, dx)
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    /// Portable flat encoding: architecture descriptor then little-endian f64 parameters.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_u32(w, self.arch.input as u32)?;
        write_u32(w, self.arch.hidden.len() as u32)?;
        for &h in &self.arch.hidden {
            write_u32(w, h as u32)?;
        }
        write_u32(w, self.arch.output as u32)?;
        w.write_all(&[self.arch.activation.code()])?;
        write_f64s(w, &self.params)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let input = read_u32(r)? as usize;
        let n_hidden = read_u32(r)? as usize;
        if n_hidden > 64 {
            return Err(Error::format("network checkpoint", "implausible layer count"));
        }
        let hidden = (0..n_hidden).map(|_| read_u32(r).map(|h| h as usize)).collect::<Result<Vec<_>>>()?;
        let output = read_u32(r)? as usize;
        let mut code = [0u8];
        r.read_exact(&mut code)?;
        let arch = Architecture {
            input,
            hidden,
            output,
            activation: Activation::from_code(code[0])?,
        };
        let params = read_f64s(r)?;
        Mlp::from_params(arch, params).map_err(|e| Error::format("network checkpoint", e.to_string()))
    }
}

pub(crate) fn write_u32<W: Write>(w: &mut W, v: u32) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn write_u64<W: Write>(w: &mut W, v: u64) -> Result<()> {
    w.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub(crate) fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

pub(crate) fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Length-prefixed little-endian f64 vector.
pub(crate) fn write_f64s<W: Write>(w: &mut W, xs: &[f64]) -> Result<()> {
    write_u64(w, xs.len() as u64)?;
    for x in xs {
        w.write_all(&x.to_le_bytes())?;
    }
    Ok(())
}

pub(crate) fn read_f64s<R: Read>(r: &mut R) -> Result<Vec<f64>> {
    let n = read_u64(r)? as usize;
    if n > (1 << 28) {
        return Err(Error::format("f64 block", format!("length {n} too large")));
    }
    let mut out = Vec::with_capacity(n);
    let mut b = [0u8; 8];
    for _ in 0..n {
        r.read_exact(&mut b)?;
        out.push(f64::from_le_bytes(b));
    }
    Ok(out)
}

/// Adam moments for one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub(crate) m: Vec<f64>,
    pub(crate) v: Vec<f64>,
    pub(crate) t: u64,
}

impl Adam {
    pub fn new(n: usize, lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    /// Moves `params` along `+grad` (ascent) or `-grad` (descent).
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascend: bool) {
        assert_eq!(params.len(), self.m.len());
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        let sign = if ascend { 1.0 } else { -1.0 };
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] += sign * self.lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }

    pub(crate) fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        write_f64s(w, &[self.lr, self.beta1, self.beta2, self.eps])?;
        write_u64(w, self.t)?;
        write_f64s(w, &self.m)?;
        write_f64s(w, &self.v)
    }

    pub(crate) fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let h = read_f64s(r)?;
        if h.len() != 4 {
            return Err(Error::format("optimizer state", "bad header"));
        }
        let t = read_u64(r)?;
        let m = read_f64s(r)?;
        let v = read_f64s(r)?;
        if m.len() != v.len() {
            return Err(Error::format("optimizer state", "moment length mismatch"));
        }
        Ok(Adam {
            lr: h[0],
            beta1: h[1],
            beta2: h[2],
            eps: h[3],
            m,
            v,
            t,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Fixed-step SGD or Adam over one flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Sgd { lr: f64 },
    Adam(Adam),
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, n: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Sgd => Optimizer::Sgd { lr },
            OptimizerKind::Adam => Optimizer::Adam(Adam::new(n, lr)),
        }
    }

    pub fn lr(&self) -> f64 {
        match self {
            Optimizer::Sgd { lr } => *lr,
            Optimizer::Adam(opt) => opt.lr,
        }
    }

    pub fn set_lr(&mut self, value: f64) {
        match self {
            Optimizer::Sgd { lr } => *lr = value,
            Optimizer::Adam(opt) => opt.lr = value,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], ascend: bool) {
        match self {
            Optimizer::Sgd { lr } => {
                let s = if ascend { *lr } else { -*lr };
                params.iter_mut().zip(grad).for_each(|(p, g)| *p += s * g);
            }
            Optimizer::Adam(opt) => opt.step(params, grad, ascend),
        }
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        match self {
            Optimizer::Sgd { lr } => {
                w.write_all(&[0])?;
                write_f64s(w, &[*lr])
            }
            Optimizer::Adam(opt) => {
                w.write_all(&[1])?;
                opt.write_to(w)
            }
        }
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let mut tag = [0u8];
        r.read_exact(&mut tag)?;
        match tag[0] {
            0 => match read_f64s(r)?.as_slice() {
                [lr] => Ok(Optimizer::Sgd { lr: *lr }),
                _ => Err(Error::format("optimizer state", "bad learning rate block")),
            },
            1 => Ok(Optimizer::Adam(Adam::read_from(r)?)),
            other => Err(Error::format("optimizer state", format!("unknown tag {other}"))),
        }
    }
}

pub fn l2_norm(xs: &[f64]) -> f64 {
    xs.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Rescales `g` in place so its norm is at most `max_norm`.
pub fn clip_norm(g: &mut [f64], max_norm: f64) {
    let n = l2_norm(g);
    if n > max_norm && n.is_finite() {
        let s = max_norm / n;
        g.iter_mut().for_each(|x| *x *= s);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::substream;

    fn central_diff(f: impl Fn(&[f64]) -> f64, x: &[f64], i: usize, h: f64) -> f64 {
        let mut a = x.to_vec();
        let mut b = x.to_vec();
        a[i] += h;
        b[i] -= h;
        (f(&a) - f(&b)) / (2.0 * h)
    }

    fn rel_err(a: f64, b: f64) -> f64 {
        (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = substream(11, "nn-test", 0);
        let arch = Architecture::new(3, &[5, 4], 2);
        let net = Mlp::new(arch.clone(), &mut rng);
        let x = [0.3, -0.7, 0.1];
        let dy = [0.6, -1.3];
        let (gp, gx) = net.vjp(&x, &dy);
        let scalar_params = |p: &[f64]| {
            let n = Mlp::from_params(arch.clone(), p.to_vec()).unwrap();
            n.forward(&x).iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>()
        };
        for i in 0..net.num_params() {
            let fd = central_diff(scalar_params, net.params(), i, 1e-5);
            assert!(rel_err(fd, gp[i]) <= 1e-4, "param {i}: fd {fd} vs {}", gp[i]);
        }
        let scalar_input = |xx: &[f64]| net.forward(xx).iter().zip(&dy).map(|(a, b)| a * b).sum::<f64>();
        for i in 0..3 {
            let fd = central_diff(scalar_input, &x, i, 1e-5);
            assert!(rel_err(fd, gx[i]) <= 1e-4);
        }
    }

    #[test]
    fn zero_output_layer_gives_zero_function() {
        let mut rng = substream(1, "nn-test", 1);
        let net = Mlp::new_zero_output(Architecture::new(2, &[8], 3), &mut rng);
        assert_eq!(net.forward(&[0.4, -2.0]), vec![0.0; 3]);
    }

    #[test]
    fn checkpoint_round_trip() {
        let mut rng = substream(2, "nn-test", 2);
        let net = Mlp::new(Architecture::new(4, &[3, 3], 1), &mut rng);
        let mut buf = Vec::new();
        net.write_to(&mut buf).unwrap();
        let back = Mlp::read_from(&mut buf.as_slice()).unwrap();
        assert_eq!(net, back);
    }

    #[test]
    fn adam_descends_quadratic() {
        let mut p = vec![3.0, -2.0];
        let mut opt = Adam::new(2, 0.1);
        for _ in 0..500 {
            let g = vec![2.0 * p[0], 2.0 * p[1]];
            opt.step(&mut p, &g, false);
        }
        assert!(l2_norm(&p) < 1e-2);
    }
}
