//! Out-of-fold confidences under leave-one-subject-out evaluation.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    class_centroids, mc_dropout_predict, mcp, nn_distance_confidence, rbf_distance_confidence, train_confidence_net, train_rbf,
    RbfConfig, UqKind,
};
use crate::data::LabeledData;
use crate::error::Result;
use crate::numeric::{train, Fold, ModelConfig};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum MethodSpec {
    Mcp,
    ConfidenceNet { hidden: Vec<usize>, learning_rate: f64, epochs: usize },
    McDropout { passes: usize, rate: f64 },
    RbfDistance(RbfConfig),
    NnDistance { layer_index: usize },
}

impl MethodSpec {
    pub fn kind(&self) -> UqKind {
        match self {
            MethodSpec::Mcp => UqKind::Mcp,
            MethodSpec::ConfidenceNet { .. } => UqKind::ConfidenceNet,
            MethodSpec::McDropout { .. } => UqKind::McDropout,
            MethodSpec::RbfDistance(_) => UqKind::RbfDistance,
            MethodSpec::NnDistance { .. } => UqKind::NnDistance,
        }
    }

    /// Default settings for each method.
    pub fn default_for(kind: UqKind) -> Self {
        match kind {
            UqKind::Mcp => MethodSpec::Mcp,
            UqKind::ConfidenceNet => MethodSpec::ConfidenceNet { hidden: vec![32], learning_rate: 0.05, epochs: 500 },
            UqKind::McDropout => MethodSpec::McDropout { passes: super::DEFAULT_MC_PASSES, rate: super::DEFAULT_MC_RATE },
            UqKind::RbfDistance => MethodSpec::RbfDistance(RbfConfig::default()),
            UqKind::NnDistance => MethodSpec::NnDistance { layer_index: 1 },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutOfFold {
    pub predictions: Vec<usize>,
    pub confidences: Vec<f64>,
    pub labels: Vec<usize>,
}

/// Train on each fold's training subjects and score its held-out cases.
pub fn loso_confidences(data: &LabeledData, classifier: &ModelConfig, method: &MethodSpec, folds: &[Fold]) -> Result<OutOfFold> {
    let per_fold = folds
        .par_iter()
        .map(|fold| score_fold(data, classifier, method, fold))
        .collect::<Result<Vec<_>>>()?;
    let n = data.len();
    let mut predictions = vec![0; n];
    let mut confidences = vec![0.0; n];
    for (fold, scored) in folds.iter().zip(per_fold) {
        for (&i, (p, c)) in fold.test_indices.iter().zip(scored) {
            predictions[i] = p;
            confidences[i] = c;
        }
    }
    Ok(OutOfFold { predictions, confidences, labels: data.labels.clone() })
}

fn score_fold(data: &LabeledData, classifier: &ModelConfig, method: &MethodSpec, fold: &Fold) -> Result<Vec<(usize, f64)>> {
    let train_data = data.subset(&fold.train_indices);
    let test = fold.test_indices.iter().map(|&i| &data.features[i]);
    if let MethodSpec::RbfDistance(cfg) = method {
        let net = train_rbf(&train_data, cfg)?;
        return test
            .map(|x| rbf_distance_confidence(&net, x).map(|r| (r.predicted_class, r.confidence)))
            .collect();
    }
    let model = train(&train_data, classifier)?;
    match method {
        MethodSpec::Mcp => test
            .map(|x| {
                let p = model.predict_proba(x)?;
                mcp(&p)
            })
            .collect(),
        MethodSpec::ConfidenceNet { hidden, learning_rate, epochs } => {
            let cfg = ModelConfig::with_hidden(data.dim(), hidden, 1, *learning_rate).epochs(*epochs).seed(classifier.seed);
            let net = train_confidence_net(&model, &train_data, &cfg)?;
            test.map(|x| net.confidence(&model, x).map(|r| (r.predicted_class, r.confidence))).collect()
        }
        MethodSpec::McDropout { passes, rate } => fold
            .test_indices
            .iter()
            .map(|&i| {
                let seed = rng::derive_seed(classifier.seed, i as u64);
                mc_dropout_predict(&model, &data.features[i], *passes, *rate, seed).map(|r| (r.predicted_class, r.confidence))
            })
            .collect(),
        MethodSpec::NnDistance { layer_index } => {
            let centroids = class_centroids(&model, &train_data.features, &train_data.labels, *layer_index)?;
            test.map(|x| nn_distance_confidence(&model, x, &centroids).map(|r| (r.predicted_class, r.confidence))).collect()
        }
        MethodSpec::RbfDistance(_) => unreachable!("handled above"),
    }
}
