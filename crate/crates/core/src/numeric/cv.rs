//! Leave-one-subject-out folds, F1 scoring and the hyper-parameter grid.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::model::{train, ModelConfig};
use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fold {
    pub held_out_subject: String,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

/// One fold per distinct subject, ordered by subject id.
pub fn loso_folds(subjects: &[String]) -> Result<Vec<Fold>> {
    let mut ids: Vec<&String> = subjects.iter().collect();
    ids.sort();
    ids.dedup();
    if ids.len() < 2 {
        return Err(Error::InsufficientSubjects(ids.len()));
    }
    Ok(ids
        .into_iter()
        .map(|s| {
            let (test, train): (Vec<usize>, Vec<usize>) = (0..subjects.len()).partition(|&i| &subjects[i] == s);
            Fold { held_out_subject: s.clone(), train_indices: train, test_indices: test }
        })
        .collect())
}

/// Per-class F1. A class absent from both predictions and labels scores 1.
pub fn per_class_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<Vec<f64>> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    let mut tp = vec![0usize; classes];
    let mut fp = vec![0usize; classes];
    let mut fn_ = vec![0usize; classes];
    for (&p, &y) in predictions.iter().zip(labels) {
        if p >= classes {
            return Err(Error::LabelOutOfRange { label: p, classes });
        }
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        if p == y {
            tp[p] += 1;
        } else {
            fp[p] += 1;
            fn_[y] += 1;
        }
    }
    Ok((0..classes)
        .map(|c| {
            let denom = 2 * tp[c] + fp[c] + fn_[c];
            if denom == 0 {
                1.0
            } else {
                2.0 * tp[c] as f64 / denom as f64
            }
        })
        .collect())
}

pub fn macro_f1(predictions: &[usize], labels: &[usize], classes: usize) -> Result<f64> {
    let f1 = per_class_f1(predictions, labels, classes)?;
    Ok(f1.iter().sum::<f64>() / classes as f64)
}

pub fn accuracy(predictions: &[usize], labels: &[usize]) -> Result<f64> {
    if predictions.len() != labels.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let hits = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / labels.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldScore {
    pub held_out_subject: String,
    pub macro_f1: f64,
    pub accuracy: f64,
}

/// Out-of-fold results of a cross-validation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub folds: Vec<FoldScore>,
    pub mean_macro_f1: f64,
    pub mean_accuracy: f64,
    /// Pooled (micro) F1 over all out-of-fold predictions, equal to accuracy
    /// for single-label data.
    pub pooled_accuracy: f64,
    pub oof_predictions: Vec<usize>,
    pub oof_probabilities: Vec<Vec<f64>>,
}

pub fn cross_validate(data: &LabeledData, config: &ModelConfig, folds: &[Fold]) -> Result<CvOutcome> {
    let per_fold: Vec<Result<(FoldScore, Vec<(usize, usize, Vec<f64>)>)>> = folds
        .par_iter()
        .map(|fold| {
            let model = train(&data.subset(&fold.train_indices), config)?;
            let mut preds = Vec::with_capacity(fold.test_indices.len());
            let mut out = Vec::with_capacity(fold.test_indices.len());
            for &i in &fold.test_indices {
                let p = model.predict_proba(&data.features[i])?;
                let c = super::model::argmax(&p);
                preds.push(c);
                out.push((i, c, p));
            }
            let labels: Vec<usize> = fold.test_indices.iter().map(|&i| data.labels[i]).collect();
            let score = FoldScore {
                held_out_subject: fold.held_out_subject.clone(),
                macro_f1: macro_f1(&preds, &labels, data.class_count)?,
                accuracy: accuracy(&preds, &labels)?,
            };
            Ok((score, out))
        })
        .collect();

    let mut scores = Vec::with_capacity(folds.len());
    let mut oof_predictions = vec![0; data.len()];
    let mut oof_probabilities = vec![Vec::new(); data.len()];
    for r in per_fold {
        let (score, out) = r?;
        scores.push(score);
        for (i, c, p) in out {
            oof_predictions[i] = c;
            oof_probabilities[i] = p;
        }
    }
    let n = scores.len() as f64;
    let mean_macro_f1 = scores.iter().map(|s| s.macro_f1).sum::<f64>() / n;
    let mean_accuracy = scores.iter().map(|s| s.accuracy).sum::<f64>() / n;
    let pooled_accuracy = accuracy(&oof_predictions, &data.labels)?;
    Ok(CvOutcome { folds: scores, mean_macro_f1, mean_accuracy, pooled_accuracy, oof_predictions, oof_probabilities })
}

/// Hidden-layer layouts and learning rates to search, with the shared
/// training settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub hidden_layouts: Vec<Vec<usize>>,
    pub learning_rates: Vec<f64>,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub dropout_rate: f64,
}

fn default_epochs() -> usize {
    super::model::DEFAULT_EPOCHS
}

impl GridSpec {
    /// One to four equal-width hidden layers of 32..512 units and six
    /// learning rates.
    pub fn full() -> Self {
        let widths = [32, 64, 128, 256, 512];
        let hidden_layouts = (1..=4).flat_map(|depth| widths.iter().map(move |&w| vec![w; depth])).collect();
        Self {
            hidden_layouts,
            learning_rates: vec![0.00001, 0.0005, 0.0001, 0.005, 0.001, 0.01],
            epochs: default_epochs(),
            seed: 0,
            dropout_rate: 0.0,
        }
    }

    /// A small grid that runs in seconds on synthetic data.
    pub fn desk() -> Self {
        Self {
            hidden_layouts: vec![vec![16], vec![32], vec![32, 32]],
            learning_rates: vec![0.01, 0.05, 0.1],
            epochs: default_epochs(),
            seed: 0,
            dropout_rate: 0.0,
        }
    }

    pub fn configs(&self, input: usize, classes: usize) -> Vec<ModelConfig> {
        let mut out = Vec::with_capacity(self.hidden_layouts.len() * self.learning_rates.len());
        for hidden in &self.hidden_layouts {
            for &lr in &self.learning_rates {
                out.push(
                    ModelConfig::with_hidden(input, hidden, classes, lr)
                        .epochs(self.epochs)
                        .seed(self.seed)
                        .dropout(self.dropout_rate),
                );
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfigScore {
    pub config: ModelConfig,
    pub mean_macro_f1: f64,
    pub mean_accuracy: f64,
    pub diverged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    pub best: ModelConfig,
    pub best_score: f64,
    pub scores: Vec<ConfigScore>,
}

/// Cross-validated macro-F1 for every grid point. A configuration whose
/// training diverges in any fold scores 0. Ties go to fewer parameters, then
/// lower learning rate.
pub fn grid_search(data: &LabeledData, grid: &GridSpec, folds: &[Fold]) -> Result<GridSearchResult> {
    let configs = grid.configs(data.dim(), data.class_count);
    if configs.is_empty() {
        return Err(Error::InvalidConfig("empty grid".into()));
    }
    for c in &configs {
        c.validate()?;
    }
    let scores: Vec<Result<ConfigScore>> = configs
        .into_par_iter()
        .map(|config| match cross_validate(data, &config, folds) {
            Ok(cv) => Ok(ConfigScore { config, mean_macro_f1: cv.mean_macro_f1, mean_accuracy: cv.mean_accuracy, diverged: false }),
            Err(Error::TrainingDiverged { .. }) => Ok(ConfigScore { config, mean_macro_f1: 0.0, mean_accuracy: 0.0, diverged: true }),
            Err(e) => Err(e),
        })
        .collect();
    let scores: Vec<ConfigScore> = scores.into_iter().collect::<Result<_>>()?;
    let best = scores
        .iter()
        .min_by(|a, b| {
            b.mean_macro_f1
                .total_cmp(&a.mean_macro_f1)
                .then(a.config.param_count().cmp(&b.config.param_count()))
                .then(a.config.learning_rate.total_cmp(&b.config.learning_rate))
        })
        .expect("non-empty grid");
    Ok(GridSearchResult { best: best.config.clone(), best_score: best.mean_macro_f1, scores: scores.clone() })
}
