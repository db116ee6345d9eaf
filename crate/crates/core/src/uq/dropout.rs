//! Monte-Carlo dropout at inference.

use super::{Diagnostics, UqResult};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax, DropoutMask, TrainedModel};
use crate::rng;

pub const DEFAULT_MC_PASSES: usize = 50;
pub const DEFAULT_MC_RATE: f64 = 0.3;

/// Average the softmax of `passes` stochastic forward passes, each with a
/// fresh inverted-dropout mask on every hidden layer. The predicted class and
/// confidence come from the mean distribution.
pub fn mc_dropout_predict(model: &TrainedModel, x: &[f64], passes: usize, rate: f64, seed: u64) -> Result<UqResult> {
    if passes == 0 {
        return Err(Error::InvalidConfig("at least one dropout pass is required".into()));
    }
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidConfig(format!("dropout rate {rate} outside [0, 1)")));
    }
    let z = model.prepare(x)?;
    let hidden = model.network.hidden_sizes();
    let mut rng = rng::seeded(seed);
    let mut samples = Vec::with_capacity(passes);
    for _ in 0..passes {
        let mask = DropoutMask::sample(&hidden, rate, &mut rng);
        samples.push(softmax(&model.network.forward(&z, Some(&mask))?.logits)?);
    }
    Ok(from_samples(samples))
}

pub(crate) fn from_samples(samples: Vec<Vec<f64>>) -> UqResult {
    let k = samples[0].len();
    let mut mean = vec![0.0; k];
    for s in &samples {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    let t = samples.len() as f64;
    mean.iter_mut().for_each(|m| *m /= t);
    let predicted_class = argmax(&mean);
    UqResult {
        case_id: None,
        predicted_class,
        confidence: mean[predicted_class],
        per_class_scores: Some(mean.clone()),
        raw: Diagnostics::McDropout { passes: samples, mean },
    }
}
