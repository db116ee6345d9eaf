//! Distance-to-centroid confidence in a network's activation space.
//!
//! For distances `d_k` to the K class centroids, `d_max = max_k d_k` (per
//! input), `d̂_k = 1 - d_k / d_max`, and the per-class scores are
//! `softmax(d̂)`. The predicted class is the nearest centroid.

use serde::{Deserialize, Serialize};

use super::{Diagnostics, UqResult};
use crate::error::{Error, Result};
use crate::numeric::{argmax, softmax, TrainedModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroids {
    pub layer_index: usize,
    pub vectors: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistanceScores {
    pub scores: Vec<f64>,
    pub normalized: Vec<f64>,
    pub max_distance: f64,
    pub predicted_class: usize,
    pub degenerate: bool,
}

/// Normalise raw centroid distances into per-class scores.
pub fn distance_scores(distances: &[f64]) -> Result<DistanceScores> {
    if distances.is_empty() {
        return Err(Error::NumericDomain("no centroids".into()));
    }
    if distances.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
        return Err(Error::NumericDomain("distances must be finite and non-negative".into()));
    }
    let k = distances.len();
    let max_distance = distances.iter().cloned().fold(0.0, f64::max);
    if max_distance == 0.0 {
        return Ok(DistanceScores {
            scores: vec![1.0 / k as f64; k],
            normalized: vec![0.0; k],
            max_distance,
            predicted_class: 0,
            degenerate: true,
        });
    }
    let normalized: Vec<f64> = distances.iter().map(|d| 1.0 - d / max_distance).collect();
    let scores = softmax(&normalized)?;
    let predicted_class = argmax(&normalized);
    Ok(DistanceScores { scores, normalized, max_distance, predicted_class, degenerate: false })
}

fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Per-class mean of the activations at `layer_index` (0 = scaled input).
pub fn class_centroids(model: &TrainedModel, features: &[Vec<f64>], labels: &[usize], layer_index: usize) -> Result<Centroids> {
    if features.len() != labels.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    let depth = model.network.layers.len();
    if layer_index >= depth {
        return Err(Error::InvalidConfig(format!("layer index {layer_index} must address the input or a hidden layer")));
    }
    let k = model.class_count;
    let mut sums: Vec<Vec<f64>> = vec![Vec::new(); k];
    let mut counts = vec![0usize; k];
    for (x, &y) in features.iter().zip(labels) {
        if y >= k {
            return Err(Error::LabelOutOfRange { label: y, classes: k });
        }
        let a = model.layer_activation(x, layer_index)?;
        if sums[y].is_empty() {
            sums[y] = vec![0.0; a.len()];
        }
        for (s, v) in sums[y].iter_mut().zip(&a) {
            *s += v;
        }
        counts[y] += 1;
    }
    let mut vectors = Vec::with_capacity(k);
    for (c, (s, n)) in sums.into_iter().zip(counts).enumerate() {
        if n == 0 {
            return Err(Error::MissingClass(c));
        }
        vectors.push(s.into_iter().map(|v| v / n as f64).collect());
    }
    Ok(Centroids { layer_index, vectors })
}

pub fn nn_distance_confidence(model: &TrainedModel, x: &[f64], centroids: &Centroids) -> Result<UqResult> {
    let a = model.layer_activation(x, centroids.layer_index)?;
    let distances: Vec<f64> = centroids.vectors.iter().map(|c| euclidean(&a, c)).collect();
    let s = distance_scores(&distances)?;
    Ok(UqResult {
        case_id: None,
        predicted_class: s.predicted_class,
        confidence: s.scores[s.predicted_class],
        per_class_scores: Some(s.scores),
        raw: Diagnostics::Distances {
            distances,
            max_distance: s.max_distance,
            normalized: s.normalized,
            degenerate: s.degenerate,
        },
    })
}
