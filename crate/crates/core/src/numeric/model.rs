//! Classifier configuration, training and checkpoints.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::{check_sizes, DropoutMask, ForwardPass, Network};
use super::softmax;
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPOCHS: usize = 500;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub layer_sizes: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    #[serde(default)]
    pub dropout_rate: f64,
}

impl ModelConfig {
    pub fn new(layer_sizes: Vec<usize>, learning_rate: f64) -> Self {
        Self { layer_sizes, learning_rate, epochs: DEFAULT_EPOCHS, seed: 0, dropout_rate: 0.0 }
    }

    /// Input width, hidden widths and output width in one call.
    pub fn with_hidden(input: usize, hidden: &[usize], output: usize, learning_rate: f64) -> Self {
        let mut sizes = Vec::with_capacity(hidden.len() + 2);
        sizes.push(input);
        sizes.extend_from_slice(hidden);
        sizes.push(output);
        Self::new(sizes, learning_rate)
    }

    pub fn epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn dropout(mut self, rate: f64) -> Self {
        self.dropout_rate = rate;
        self
    }

    pub fn hidden_sizes(&self) -> &[usize] {
        let n = self.layer_sizes.len();
        if n < 2 {
            &[]
        } else {
            &self.layer_sizes[1..n - 1]
        }
    }

    pub fn param_count(&self) -> usize {
        self.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn validate(&self) -> Result<()> {
        check_sizes(&self.layer_sizes)?;
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidConfig("epochs must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidConfig(format!("dropout rate {} outside [0, 1)", self.dropout_rate)));
        }
        Ok(())
    }

    fn validate_for(&self, data: &LabeledData) -> Result<()> {
        self.validate()?;
        if self.layer_sizes[0] != data.dim() {
            return Err(Error::InputShape { expected: self.layer_sizes[0], got: data.dim() });
        }
        let out = *self.layer_sizes.last().expect("validated");
        if out != data.class_count {
            return Err(Error::InvalidConfig(format!(
                "output layer has {out} units but the data has {} classes",
                data.class_count
            )));
        }
        Ok(())
    }
}

/// Per-feature z-scoring fitted on training rows only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit(rows: &[Vec<f64>]) -> Result<Self> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let d = first.len();
        let n = rows.len() as f64;
        let mut mean = vec![0.0; d];
        for r in rows {
            for (m, v) in mean.iter_mut().zip(r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; d];
        for r in rows {
            for ((s, v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let scale = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd > 1e-12 { sd } else { 1.0 }
            })
            .collect();
        Ok(Self { mean, scale })
    }

    pub fn transform(&self, x: &[f64]) -> Vec<f64> {
        x.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| (v - m) / s).collect()
    }

    pub fn inverse(&self, z: &[f64]) -> Vec<f64> {
        z.iter().zip(&self.mean).zip(&self.scale).map(|((v, m), s)| v * s + m).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub network: Network,
    pub class_count: usize,
    pub feature_names: Vec<String>,
    pub standardizer: Option<Standardizer>,
    pub final_loss: Option<f64>,
}

impl TrainedModel {
    /// Wrap a hand-built network (no input scaling).
    pub fn from_network(network: Network, feature_names: Vec<String>) -> Result<Self> {
        if feature_names.len() != network.input_dim() {
            return Err(Error::InputShape { expected: network.input_dim(), got: feature_names.len() });
        }
        let class_count = network.output_dim();
        let config = ModelConfig { layer_sizes: network.layer_sizes(), learning_rate: 0.0, epochs: 0, seed: 0, dropout_rate: 0.0 };
        Ok(Self { config, network, class_count, feature_names, standardizer: None, final_loss: None })
    }

    pub fn input_dim(&self) -> usize {
        self.network.input_dim()
    }

    /// Apply the input scaling stored with the model.
    pub fn prepare(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::InputShape { expected: self.input_dim(), got: x.len() });
        }
        Ok(match &self.standardizer {
            Some(s) => s.transform(x),
            None => x.to_vec(),
        })
    }

    /// Logits plus every layer's activation; `activations[0]` is the scaled input.
    pub fn forward(&self, x: &[f64], mask: Option<&DropoutMask>) -> Result<ForwardPass> {
        let z = self.prepare(x)?;
        self.network.forward(&z, mask)
    }

    pub fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        softmax(&self.forward(x, None)?.logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(x)?))
    }

    pub fn layer_activation(&self, x: &[f64], layer_index: usize) -> Result<Vec<f64>> {
        let pass = self.forward(x, None)?;
        pass.activations
            .into_iter()
            .nth(layer_index)
            .ok_or_else(|| Error::InvalidConfig(format!("layer index {layer_index} out of range")))
    }

    pub fn to_checkpoint(&self) -> Result<String> {
        let doc = CheckpointRef { format_version: CHECKPOINT_FORMAT_VERSION, kind: "classifier", model: self };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_checkpoint(text: &str) -> Result<Self> {
        let doc: Checkpoint = serde_json::from_str(text)?;
        if doc.format_version != CHECKPOINT_FORMAT_VERSION {
            return Err(Error::SchemaVersion(doc.format_version));
        }
        let network = Network::from_layers(doc.model.network.layers.clone())?;
        if network.layer_sizes() != doc.model.config.layer_sizes {
            return Err(Error::InvalidConfig("checkpoint weights do not match its layer sizes".into()));
        }
        Ok(doc.model)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_checkpoint()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint(&std::fs::read_to_string(path)?)
    }
}

#[derive(Serialize)]
struct CheckpointRef<'a> {
    format_version: u32,
    kind: &'a str,
    #[serde(flatten)]
    model: &'a TrainedModel,
}

#[derive(Deserialize)]
struct Checkpoint {
    format_version: u32,
    #[allow(dead_code)]
    kind: String,
    #[serde(flatten)]
    model: TrainedModel,
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// Mean softmax cross-entropy over a flat `n x k` logit buffer, and its
/// gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], labels: &[usize], k: usize) -> (f64, Vec<f64>) {
    let n = labels.len();
    let mut grad = vec![0.0; logits.len()];
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let z = &logits[i * k..(i + 1) * k];
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[y];
        let g = &mut grad[i * k..(i + 1) * k];
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = ((z[j] - lse).exp() - if j == y { 1.0 } else { 0.0 }) / n as f64;
        }
    }
    (loss / n as f64, grad)
}

/// Full-batch gradient descent on an arbitrary differentiable loss over the
/// network outputs. `loss` returns the mean loss and its gradient w.r.t. the
/// flat outputs. Dropout masks are resampled every epoch when `dropout_rate > 0`.
pub fn gradient_descent<F>(
    network: &mut Network,
    inputs: &[Vec<f64>],
    epochs: usize,
    learning_rate: f64,
    dropout_rate: f64,
    rng: &mut Rng,
    mut loss: F,
) -> Result<f64>
where
    F: FnMut(&[f64]) -> (f64, Vec<f64>),
{
    let hidden = network.hidden_sizes();
    for epoch in 0..epochs {
        let masks: Option<Vec<DropoutMask>> = (dropout_rate > 0.0)
            .then(|| inputs.iter().map(|_| DropoutMask::sample(&hidden, dropout_rate, rng)).collect());
        let pass = network.forward_batch(inputs, masks.as_deref())?;
        let (value, d_out) = loss(pass.outputs());
        if !value.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let (grads, _) = network.backward(&pass, &d_out);
        network.apply_gradients(&grads, learning_rate);
    }
    let pass = network.forward_batch(inputs, None)?;
    let (final_loss, _) = loss(pass.outputs());
    if !final_loss.is_finite() || !network.is_finite() {
        return Err(Error::TrainingDiverged { epoch: epochs });
    }
    Ok(final_loss)
}

/// Train a classifier by full-batch gradient descent on cross-entropy.
pub fn train(data: &LabeledData, config: &ModelConfig) -> Result<TrainedModel> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate_for(data)?;
    let standardizer = Standardizer::fit(&data.features)?;
    let inputs: Vec<Vec<f64>> = data.features.iter().map(|x| standardizer.transform(x)).collect();
    let mut rng = rng::seeded(config.seed);
    let mut network = Network::new(&config.layer_sizes, &mut rng)?;
    let k = data.class_count;
    let final_loss = gradient_descent(
        &mut network,
        &inputs,
        config.epochs,
        config.learning_rate,
        config.dropout_rate,
        &mut rng,
        |out| cross_entropy(out, &data.labels, k),
    )?;
    Ok(TrainedModel {
        config: config.clone(),
        network,
        class_count: k,
        feature_names: data.feature_names.clone(),
        standardizer: Some(standardizer),
        final_loss: Some(final_loss),
    })
}
