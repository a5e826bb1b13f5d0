//! Dense feed-forward networks with exact reverse-mode gradients, plus Adam.
//!
//! Parameters are flattened layer by layer as `weights (row-major, out x in)`
//! followed by `bias`. Gradients produced by [`DenseNet::backward_into`] use
//! the same layout, so an optimizer can treat a network as one flat vector.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::SimRng;

static GENERATION: AtomicU64 = AtomicU64::new(1);

fn fresh_generation() -> u64 {
    GENERATION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => libm::tanh(z),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation's output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major `out_dim x in_dim`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(in_dim: usize, out_dim: usize, activation: Activation) -> Self {
        Self {
            in_dim,
            out_dim,
            weights: vec![0.0; in_dim * out_dim],
            bias: vec![0.0; out_dim],
            activation,
        }
    }

    /// Uniform weights with variance `gain² / in_dim`, zero bias.
    pub fn scaled_uniform(
        in_dim: usize,
        out_dim: usize,
        activation: Activation,
        gain: f64,
        rng: &mut SimRng,
    ) -> Self {
        let bound = gain * libm::sqrt(3.0 / in_dim as f64);
        let weights = (0..in_dim * out_dim).map(|_| rng.uniform_range(-bound, bound)).collect();
        Self { in_dim, out_dim, weights, bias: vec![0.0; out_dim], activation }
    }

    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn forward(&self, x: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.out_dim);
        for (row, b) in self.weights.chunks_exact(self.in_dim).zip(&self.bias) {
            let z = row.iter().zip(x).fold(*b, |acc, (w, xi)| acc + w * xi);
            out.push(self.activation.apply(z));
        }
        out
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DenseNet {
    layers: Vec<Layer>,
    #[serde(skip, default = "fresh_generation")]
    generation: u64,
}

impl PartialEq for DenseNet {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

/// Activations recorded by [`DenseNet::forward`]: `values[0]` is the input,
/// `values[k + 1]` the output of layer `k`.
#[derive(Debug, Clone)]
pub struct Tape {
    generation: u64,
    values: Vec<Vec<f64>>,
}

impl Tape {
    pub fn output(&self) -> &[f64] {
        self.values.last().map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Gradients of `output · grad_output`.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Flattened like [`DenseNet::params`].
    pub params: Vec<f64>,
    pub input: Vec<f64>,
}

impl DenseNet {
    pub fn new(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidInput("network needs at least one layer".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Shape { expected: pair[0].out_dim, got: pair[1].in_dim });
            }
        }
        for l in &layers {
            if l.weights.len() != l.in_dim * l.out_dim {
                return Err(Error::Shape { expected: l.in_dim * l.out_dim, got: l.weights.len() });
            }
            if l.bias.len() != l.out_dim {
                return Err(Error::Shape { expected: l.out_dim, got: l.bias.len() });
            }
            if l.weights.iter().chain(&l.bias).any(|p| !p.is_finite()) {
                return Err(Error::InvalidInput("non-finite network parameter".into()));
            }
        }
        Ok(Self { layers, generation: fresh_generation() })
    }

    /// MLP `dims[0] -> dims[1] -> ... -> dims[n]` with `hidden` activations
    /// and an identity output. Hidden layers use gain √2, the output layer
    /// `output_gain`.
    pub fn mlp(dims: &[usize], hidden: Activation, output_gain: f64, rng: &mut SimRng) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::InvalidInput("mlp needs input and output sizes".into()));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, d)| {
                if k == last {
                    Layer::scaled_uniform(d[0], d[1], Activation::Identity, output_gain, rng)
                } else {
                    Layer::scaled_uniform(d[0], d[1], hidden, core::f64::consts::SQRT_2, rng)
                }
            })
            .collect();
        Self::new(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut d = vec![self.in_dim()];
        d.extend(self.layers.iter().map(|l| l.out_dim));
        d
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            p.extend_from_slice(&l.weights);
            p.extend_from_slice(&l.bias);
        }
        p
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: flat.len() });
        }
        let mut off = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        self.generation = fresh_generation();
        Ok(())
    }

    /// Output only, no tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape { expected: self.in_dim(), got: input.len() });
        }
        let mut x = input.to_vec();
        for l in &self.layers {
            x = l.forward(&x);
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        if input.len() != self.in_dim() {
            return Err(Error::Shape { expected: self.in_dim(), got: input.len() });
        }
        let mut values = Vec::with_capacity(self.layers.len() + 1);
        values.push(input.to_vec());
        for l in &self.layers {
            let next = l.forward(values.last().unwrap());
            values.push(next);
        }
        let out = values.last().unwrap().clone();
        Ok((out, Tape { generation: self.generation, values }))
    }

    /// Accumulate parameter gradients of `output · grad_output` into `acc`
    /// and return the gradient with respect to the input.
    pub fn backward_into(&self, tape: &Tape, grad_output: &[f64], acc: &mut [f64]) -> Result<Vec<f64>> {
        if tape.generation != self.generation {
            return Err(Error::StaleTape { tape: tape.generation, net: self.generation });
        }
        if grad_output.len() != self.out_dim() {
            return Err(Error::Shape { expected: self.out_dim(), got: grad_output.len() });
        }
        if acc.len() != self.num_params() {
            return Err(Error::Shape { expected: self.num_params(), got: acc.len() });
        }
        let mut end = acc.len();
        let mut upstream = grad_output.to_vec();
        for (k, l) in self.layers.iter().enumerate().rev() {
            let x = &tape.values[k];
            let y = &tape.values[k + 1];
            let dz: Vec<f64> = upstream
                .iter()
                .zip(y)
                .map(|(g, &yo)| g * l.activation.derivative_from_output(yo))
                .collect();
            let start = end - l.num_params();
            let (gw, gb) = acc[start..end].split_at_mut(l.weights.len());
            let mut dx = vec![0.0; l.in_dim];
            for (o, &d) in dz.iter().enumerate() {
                gb[o] += d;
                if d == 0.0 {
                    continue;
                }
                let row = &l.weights[o * l.in_dim..(o + 1) * l.in_dim];
                let grow = &mut gw[o * l.in_dim..(o + 1) * l.in_dim];
                for i in 0..l.in_dim {
                    grow[i] += d * x[i];
                    dx[i] += row[i] * d;
                }
            }
            upstream = dx;
            end = start;
        }
        Ok(upstream)
    }

    pub fn backward(&self, tape: &Tape, grad_output: &[f64]) -> Result<Gradients> {
        let mut params = vec![0.0; self.num_params()];
        let input = self.backward_into(tape, grad_output, &mut params)?;
        Ok(Gradients { params, input })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Bias-corrected Adam moments for a flat parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(num_params: usize, lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: vec![0.0; num_params],
            v: vec![0.0; num_params],
        }
    }

    /// One update. `lr_scale`, when given, multiplies the learning rate per
    /// parameter (equivalent to running Adam on `p / scale`).
    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr_scale: Option<&[f64]>) -> Result<()> {
        check_shapes(self.m.len(), params, grads, lr_scale)?;
        check_finite(self.step + 1, grads)?;
        self.step += 1;
        let bc1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let bc2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            let scale = lr_scale.map_or(1.0, |s| s[i]);
            params[i] -= self.lr * scale * m_hat / (libm::sqrt(v_hat) + self.eps);
        }
        Ok(())
    }
}

fn check_shapes(n: usize, params: &[f64], grads: &[f64], lr_scale: Option<&[f64]>) -> Result<()> {
    if params.len() != n {
        return Err(Error::Shape { expected: n, got: params.len() });
    }
    if grads.len() != n {
        return Err(Error::Shape { expected: n, got: grads.len() });
    }
    if let Some(s) = lr_scale {
        if s.len() != n {
            return Err(Error::Shape { expected: n, got: s.len() });
        }
    }
    Ok(())
}

fn check_finite(step: u64, grads: &[f64]) -> Result<()> {
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Diverged { step, detail: format!("gradient {i} is {}", grads[i]) });
    }
    Ok(())
}

/// Adam, or plain SGD for ablation hygiene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Adam(AdamState),
    Sgd { lr: f64, step: u64 },
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, num_params: usize, lr: f64) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(num_params, lr)),
            OptimizerKind::Sgd => Optimizer::Sgd { lr, step: 0 },
        }
    }

    pub fn step_count(&self) -> u64 {
        match self {
            Optimizer::Adam(a) => a.step,
            Optimizer::Sgd { step, .. } => *step,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grads: &[f64], lr_scale: Option<&[f64]>) -> Result<()> {
        match self {
            Optimizer::Adam(a) => a.step(params, grads, lr_scale),
            Optimizer::Sgd { lr, step } => {
                check_shapes(params.len(), params, grads, lr_scale)?;
                check_finite(*step + 1, grads)?;
                *step += 1;
                for i in 0..params.len() {
                    params[i] -= *lr * lr_scale.map_or(1.0, |s| s[i]) * grads[i];
                }
                Ok(())
            }
        }
    }
}
