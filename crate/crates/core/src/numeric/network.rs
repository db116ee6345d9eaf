//! Dense ReLU networks with batched forward and backward passes.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// One affine layer. `weights` is row-major with one row per output unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize) -> Self {
        Self { rows: outputs, cols: inputs, weights: vec![0.0; inputs * outputs], bias: vec![0.0; outputs] }
    }

    /// Uniform Glorot initialisation with zero bias.
    pub fn glorot(inputs: usize, outputs: usize, rng: &mut Rng) -> Self {
        let r = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs).map(|_| rng.random_range(-r..r)).collect();
        Self { rows: outputs, cols: inputs, weights, bias: vec![0.0; outputs] }
    }

    #[inline]
    pub fn row(&self, j: usize) -> &[f64] {
        &self.weights[j * self.cols..(j + 1) * self.cols]
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    fn affine_into(&self, x: &[f64], out: &mut [f64]) {
        for (j, o) in out.iter_mut().enumerate() {
            *o = self.bias[j] + dot(self.row(j), x);
        }
    }

    fn is_finite(&self) -> bool {
        self.weights.iter().chain(&self.bias).all(|v| v.is_finite())
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Per-hidden-unit keep flags for one stochastic pass. Kept units are scaled
/// by `1 / (1 - rate)` (inverted dropout).
#[derive(Debug, Clone, PartialEq)]
pub struct DropoutMask {
    keep: Vec<Vec<bool>>,
    rate: f64,
}

impl DropoutMask {
    pub fn new(keep: Vec<Vec<bool>>, rate: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
        }
        Ok(Self { keep, rate })
    }

    pub fn sample(hidden_sizes: &[usize], rate: f64, rng: &mut Rng) -> Self {
        let keep = hidden_sizes
            .iter()
            .map(|&h| (0..h).map(|_| rng.random::<f64>() >= rate).collect())
            .collect();
        Self { keep, rate }
    }

    pub fn keep(&self) -> &[Vec<bool>] {
        &self.keep
    }

    pub fn rate(&self) -> f64 {
        self.rate
    }

    #[inline]
    fn scale(&self) -> f64 {
        1.0 / (1.0 - self.rate)
    }

    fn check(&self, hidden_sizes: &[usize]) -> Result<()> {
        if self.keep.len() != hidden_sizes.len() {
            return Err(Error::InputShape { expected: hidden_sizes.len(), got: self.keep.len() });
        }
        for (layer, &h) in self.keep.iter().zip(hidden_sizes) {
            if layer.len() != h {
                return Err(Error::InputShape { expected: h, got: layer.len() });
            }
        }
        Ok(())
    }
}

/// Result of a single-sample forward pass.
///
/// `activations[0]` is the input as seen by the first layer, `activations[l]`
/// the post-ReLU (and post-mask) output of hidden layer `l`, and the last
/// entry equals `logits`.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardPass {
    pub logits: Vec<f64>,
    pub activations: Vec<Vec<f64>>,
}

/// Activations for a whole batch, each stored flat as `n x width`.
#[derive(Debug, Clone)]
pub struct BatchPass {
    pub n: usize,
    pub activations: Vec<Vec<f64>>,
    mask_scale: f64,
}

impl BatchPass {
    pub fn outputs(&self) -> &[f64] {
        self.activations.last().expect("network has at least one layer")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

/// Feed-forward network: ReLU on hidden layers, identity on the output layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Network {
    pub layers: Vec<Layer>,
}

impl Network {
    pub fn new(layer_sizes: &[usize], rng: &mut Rng) -> Result<Self> {
        check_sizes(layer_sizes)?;
        let layers = layer_sizes.windows(2).map(|w| Layer::glorot(w[0], w[1], rng)).collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("network needs at least one layer".into()));
        }
        for l in &layers {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::InvalidConfig("layer buffers do not match their shape".into()));
            }
        }
        for w in layers.windows(2) {
            if w[0].rows != w[1].cols {
                return Err(Error::InputShape { expected: w[0].rows, got: w[1].cols });
            }
        }
        Ok(Self { layers })
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![self.layers[0].cols];
        sizes.extend(self.layers.iter().map(|l| l.rows));
        sizes
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.layers[..self.layers.len() - 1].iter().map(|l| l.rows).collect()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(Layer::is_finite)
    }

    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<ForwardPass> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape { expected: self.input_dim(), got: x.len() });
        }
        if let Some(m) = mask {
            m.check(&self.hidden_sizes())?;
        }
        let last = self.layers.len() - 1;
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(x.to_vec());
        for (l, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.rows];
            layer.affine_into(activations.last().expect("seeded with input"), &mut out);
            if l < last {
                apply_relu(&mut out, mask.map(|m| (&m.keep[l][..], m.scale())));
            }
            activations.push(out);
        }
        let logits = activations.last().cloned().expect("at least one layer");
        Ok(ForwardPass { logits, activations })
    }

    /// Forward pass over a batch of rows. `masks`, when given, holds one mask
    /// per row.
    pub fn forward_batch(&self, xs: &[Vec<f64>], masks: Option<&[DropoutMask]>) -> Result<BatchPass> {
        let n = xs.len();
        let d = self.input_dim();
        let mut input = Vec::with_capacity(n * d);
        for x in xs {
            if x.len() != d {
                return Err(Error::InputShape { expected: d, got: x.len() });
            }
            input.extend_from_slice(x);
        }
        let mut mask_scale = 1.0;
        if let Some(ms) = masks {
            if ms.len() != n {
                return Err(Error::LengthMismatch { left: ms.len(), right: n });
            }
            let hidden = self.hidden_sizes();
            for m in ms {
                m.check(&hidden)?;
                if m.rate != ms[0].rate {
                    return Err(Error::InvalidConfig("masks in a batch must share one rate".into()));
                }
            }
            if let Some(m) = ms.first() {
                mask_scale = m.scale();
            }
        }
        let last = self.layers.len() - 1;
        let mut activations = vec![input];
        for (l, layer) in self.layers.iter().enumerate() {
            let prev = activations.last().expect("seeded with input");
            let mut out = vec![0.0; n * layer.rows];
            for i in 0..n {
                let x = &prev[i * layer.cols..(i + 1) * layer.cols];
                let o = &mut out[i * layer.rows..(i + 1) * layer.rows];
                layer.affine_into(x, o);
                if l < last {
                    apply_relu(o, masks.map(|ms| (&ms[i].keep[l][..], ms[i].scale())));
                }
            }
            activations.push(out);
        }
        Ok(BatchPass { n, activations, mask_scale })
    }

    /// Backpropagate `d_out` (gradient of the loss w.r.t. the flat `n x out`
    /// outputs) through the batch. Returns parameter gradients and the
    /// gradient w.r.t. the flat input.
    pub fn backward(&self, pass: &BatchPass, d_out: &[f64]) -> (Gradients, Vec<f64>) {
        let n = pass.n;
        let mut weights: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect();
        let mut bias: Vec<Vec<f64>> = self.layers.iter().map(|l| vec![0.0; l.rows]).collect();
        let mut delta = d_out.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &pass.activations[l];
            let (gw, gb) = (&mut weights[l], &mut bias[l]);
            let mut d_input = vec![0.0; n * layer.cols];
            for i in 0..n {
                let x = &input[i * layer.cols..(i + 1) * layer.cols];
                let dz = &delta[i * layer.rows..(i + 1) * layer.rows];
                let dx = &mut d_input[i * layer.cols..(i + 1) * layer.cols];
                for (j, &g) in dz.iter().enumerate() {
                    if g == 0.0 {
                        continue;
                    }
                    gb[j] += g;
                    let gw_row = &mut gw[j * layer.cols..(j + 1) * layer.cols];
                    for (w, &xv) in gw_row.iter_mut().zip(x) {
                        *w += g * xv;
                    }
                    for (d, &w) in dx.iter_mut().zip(layer.row(j)) {
                        *d += g * w;
                    }
                }
            }
            if l > 0 {
                // through the ReLU (and mask) that produced this layer's input;
                // a kept, active unit has a positive output and slope `scale`
                let produced = &pass.activations[l];
                for (d, &a) in d_input.iter_mut().zip(produced) {
                    *d = if a > 0.0 { *d * pass.mask_scale } else { 0.0 };
                }
            }
            delta = d_input;
        }
        (Gradients { weights, bias }, delta)
    }

    pub fn apply_gradients(&mut self, grads: &Gradients, learning_rate: f64) {
        for (layer, (gw, gb)) in self.layers.iter_mut().zip(grads.weights.iter().zip(&grads.bias)) {
            for (w, g) in layer.weights.iter_mut().zip(gw) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.bias.iter_mut().zip(gb) {
                *b -= learning_rate * g;
            }
        }
    }
}

fn apply_relu(out: &mut [f64], mask: Option<(&[bool], f64)>) {
    match mask {
        None => {
            for v in out.iter_mut() {
                if *v < 0.0 {
                    *v = 0.0;
                }
            }
        }
        Some((keep, scale)) => {
            for (v, &k) in out.iter_mut().zip(keep) {
                *v = if k && *v > 0.0 { *v * scale } else { 0.0 };
            }
        }
    }
}

pub(crate) fn check_sizes(layer_sizes: &[usize]) -> Result<()> {
    if layer_sizes.len() < 2 {
        return Err(Error::InvalidConfig("need at least an input and an output layer".into()));
    }
    if layer_sizes.contains(&0) {
        return Err(Error::InvalidConfig("layer sizes must be positive".into()));
    }
    Ok(())
}
