//! Auxiliary regressor trained to predict the classifier's true-class
//! probability from the input features.

use serde::{Deserialize, Serialize};

use super::{tcp_target, Diagnostics, UqResult};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::numeric::{gradient_descent, ModelConfig, Network, Standardizer, TrainedModel};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceNet {
    pub config: ModelConfig,
    pub network: Network,
    pub standardizer: Standardizer,
    pub final_loss: f64,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn squared_error(outputs: &[f64], targets: &[f64]) -> (f64, Vec<f64>) {
    let n = targets.len() as f64;
    let mut loss = 0.0;
    let grad = outputs
        .iter()
        .zip(targets)
        .map(|(&o, &t)| {
            let s = sigmoid(o);
            loss += (s - t) * (s - t);
            2.0 * (s - t) * s * (1.0 - s) / n
        })
        .collect();
    (loss / n, grad)
}

/// Fit the regressor on the classifier's TCP over `data`. `config` must end
/// in a single output unit.
///
/// The output layer starts at zero weights with its bias at the logit of the
/// mean target, so training begins from the best constant predictor.
pub fn train_confidence_net(classifier: &TrainedModel, data: &LabeledData, config: &ModelConfig) -> Result<ConfidenceNet> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    config.validate()?;
    if config.layer_sizes.first() != Some(&data.dim()) || config.layer_sizes.last() != Some(&1) {
        return Err(Error::InvalidConfig(format!(
            "confidence network must map {} inputs to 1 output, got {:?}",
            data.dim(),
            config.layer_sizes
        )));
    }
    let targets = data
        .features
        .iter()
        .zip(&data.labels)
        .map(|(x, &y)| tcp_target(&classifier.predict_proba(x)?, y))
        .collect::<Result<Vec<f64>>>()?;
    let standardizer = Standardizer::fit(&data.features)?;
    let inputs: Vec<Vec<f64>> = data.features.iter().map(|x| standardizer.transform(x)).collect();

    let mut rng = rng::seeded(config.seed);
    let mut network = Network::new(&config.layer_sizes, &mut rng)?;
    let mean = (targets.iter().sum::<f64>() / targets.len() as f64).clamp(1e-4, 1.0 - 1e-4);
    let head = network.layers.last_mut().expect("at least one layer");
    head.weights.iter_mut().for_each(|w| *w = 0.0);
    head.bias[0] = (mean / (1.0 - mean)).ln();

    let final_loss = gradient_descent(
        &mut network,
        &inputs,
        config.epochs,
        config.learning_rate,
        config.dropout_rate,
        &mut rng,
        |out| squared_error(out, &targets),
    )?;
    Ok(ConfidenceNet { config: config.clone(), network, standardizer, final_loss })
}

impl ConfidenceNet {
    pub fn estimate(&self, x: &[f64]) -> Result<f64> {
        let pass = self.network.forward(&self.standardizer.transform(x), None)?;
        Ok(sigmoid(pass.logits[0]))
    }

    /// Classifier prediction paired with the regressed confidence.
    pub fn confidence(&self, classifier: &TrainedModel, x: &[f64]) -> Result<UqResult> {
        let predicted_class = classifier.predict(x)?;
        let tcp_estimate = self.estimate(x)?;
        Ok(UqResult {
            case_id: None,
            predicted_class,
            confidence: tcp_estimate,
            per_class_scores: None,
            raw: Diagnostics::Regression { tcp_estimate },
        })
    }

    /// Mean squared error against explicit targets.
    pub fn mse(&self, features: &[Vec<f64>], targets: &[f64]) -> Result<f64> {
        if features.len() != targets.len() {
            return Err(Error::LengthMismatch { left: features.len(), right: targets.len() });
        }
        let mut total = 0.0;
        for (x, t) in features.iter().zip(targets) {
            let e = self.estimate(x)? - t;
            total += e * e;
        }
        Ok(total / targets.len() as f64)
    }
}
