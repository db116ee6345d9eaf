//! Small-matrix numerics: dense networks, training and cross-validation.

mod cv;
mod model;
mod network;

pub use cv::{
    accuracy, cross_validate, grid_search, loso_folds, macro_f1, per_class_f1, ConfigScore, CvOutcome, Fold, FoldScore,
    GridSearchResult, GridSpec,
};
pub use model::{
    argmax, cross_entropy, gradient_descent, train, ModelConfig, Standardizer, TrainedModel, CHECKPOINT_FORMAT_VERSION,
    DEFAULT_EPOCHS,
};
pub use network::{BatchPass, DropoutMask, ForwardPass, Gradients, Layer, Network};

use crate::error::{Error, Result};

/// Numerically stable softmax (max subtraction).
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.is_empty() {
        return Err(Error::NumericDomain("softmax of an empty vector".into()));
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("non-finite logit".into()));
    }
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / sum).collect())
}

/// Cross-entropy loss and parameter gradients of `network` on a batch.
pub fn loss_and_gradients(network: &Network, inputs: &[Vec<f64>], labels: &[usize]) -> Result<(f64, Gradients)> {
    let pass = network.forward_batch(inputs, None)?;
    let (loss, d_out) = cross_entropy(pass.outputs(), labels, network.output_dim());
    let (grads, _) = network.backward(&pass, &d_out);
    Ok((loss, grads))
}
