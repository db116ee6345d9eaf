//! Confidence estimators and the threshold-sweep evaluation.

mod confnet;
mod distance;
mod dropout;
mod protocol;
mod rbf;
mod sweep;

pub use confnet::{train_confidence_net, ConfidenceNet};
pub use distance::{class_centroids, distance_scores, nn_distance_confidence, Centroids, DistanceScores};
pub use dropout::{mc_dropout_predict, DEFAULT_MC_PASSES, DEFAULT_MC_RATE};
pub use protocol::{loso_confidences, MethodSpec, OutOfFold};
pub use rbf::{rbf_distance_confidence, train_rbf, RbfConfig, RbfNet};
pub use sweep::{sweep_thresholds, uq_sweep, SweepResult, SweepRow};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::argmax;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UqKind {
    Mcp,
    ConfidenceNet,
    McDropout,
    RbfDistance,
    NnDistance,
}

impl std::str::FromStr for UqKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "mcp" => UqKind::Mcp,
            "confnet" | "confidence_net" => UqKind::ConfidenceNet,
            "mcdropout" | "mc_dropout" => UqKind::McDropout,
            "rbf" | "rbf_distance" => UqKind::RbfDistance,
            "nndist" | "nn_distance" => UqKind::NnDistance,
            other => return Err(Error::InvalidConfig(format!("unknown UQ method `{other}`"))),
        })
    }
}

/// Method-specific diagnostics attached to a [`UqResult`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Diagnostics {
    Probabilities { probabilities: Vec<f64> },
    McDropout { passes: Vec<Vec<f64>>, mean: Vec<f64> },
    Distances { distances: Vec<f64>, max_distance: f64, normalized: Vec<f64>, degenerate: bool },
    Regression { tcp_estimate: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UqResult {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub case_id: Option<String>,
    pub predicted_class: usize,
    pub confidence: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_class_scores: Option<Vec<f64>>,
    pub raw: Diagnostics,
}

impl UqResult {
    pub fn with_case_id(mut self, id: impl Into<String>) -> Self {
        self.case_id = Some(id.into());
        self
    }
}

fn check_distribution(probabilities: &[f64]) -> Result<()> {
    let sum: f64 = probabilities.iter().sum();
    if probabilities.is_empty() || probabilities.iter().any(|p| !(0.0..=1.0 + 1e-12).contains(p)) || (sum - 1.0).abs() > 1e-6 {
        return Err(Error::InvalidDistribution(sum));
    }
    Ok(())
}

/// Maximum class probability: `(class, probability)` with ties going to the
/// lowest class index.
pub fn mcp(probabilities: &[f64]) -> Result<(usize, f64)> {
    check_distribution(probabilities)?;
    let c = argmax(probabilities);
    Ok((c, probabilities[c]))
}

pub fn mcp_result(probabilities: &[f64]) -> Result<UqResult> {
    let (predicted_class, confidence) = mcp(probabilities)?;
    Ok(UqResult {
        case_id: None,
        predicted_class,
        confidence,
        per_class_scores: None,
        raw: Diagnostics::Probabilities { probabilities: probabilities.to_vec() },
    })
}

/// True class probability: the probability the model assigns to the
/// ground-truth label.
pub fn tcp_target(probabilities: &[f64], true_label: usize) -> Result<f64> {
    probabilities
        .get(true_label)
        .copied()
        .ok_or(Error::LabelOutOfRange { label: true_label, classes: probabilities.len() })
}
