//! Labeled feature matrices shared by training, estimation and explanation.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-oriented labeled data: one feature vector, label and subject per case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledData {
    pub features: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub subjects: Vec<String>,
    pub class_count: usize,
    pub feature_names: Vec<String>,
}

impl LabeledData {
    pub fn new(
        features: Vec<Vec<f64>>,
        labels: Vec<usize>,
        subjects: Vec<String>,
        class_count: usize,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
        }
        if features.len() != subjects.len() {
            return Err(Error::LengthMismatch { left: features.len(), right: subjects.len() });
        }
        if class_count == 0 {
            return Err(Error::InvalidConfig("class count must be positive".into()));
        }
        let dim = feature_names.len();
        for row in &features {
            if row.len() != dim {
                return Err(Error::InputShape { expected: dim, got: row.len() });
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDomain("non-finite feature value".into()));
            }
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= class_count) {
            return Err(Error::LabelOutOfRange { label, classes: class_count });
        }
        Ok(Self { features, labels, subjects, class_count, feature_names })
    }

    /// Convenience constructor for unit tests and fixtures: features named
    /// `f0..fd`, every row its own subject.
    pub fn unnamed(features: Vec<Vec<f64>>, labels: Vec<usize>, class_count: usize) -> Result<Self> {
        let dim = features.first().map_or(0, Vec::len);
        let subjects = (0..features.len()).map(|i| format!("s{i}")).collect();
        let names = (0..dim).map(|i| format!("f{i}")).collect();
        Self::new(features, labels, subjects, class_count, names)
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            features: indices.iter().map(|&i| self.features[i].clone()).collect(),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            subjects: indices.iter().map(|&i| self.subjects[i].clone()).collect(),
            class_count: self.class_count,
            feature_names: self.feature_names.clone(),
        }
    }
}
