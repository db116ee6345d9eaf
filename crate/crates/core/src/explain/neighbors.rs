//! Nearest-neighbour lookups over embeddings and per-neighbour tooltips.

use serde::{Deserialize, Serialize};

use super::embed::EmbeddingMap;
use crate::error::{Error, Result};
use crate::kinematics::{Component, Dataset, Status};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Euclidean,
    Cosine,
}

impl std::str::FromStr for Metric {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "euclidean" => Ok(Metric::Euclidean),
            "cosine" => Ok(Metric::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown metric `{other}`"))),
        }
    }
}

impl Metric {
    /// Cosine distance is `1 - cos`; a zero vector is at distance 1 from
    /// everything.
    pub fn distance(self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Metric::Euclidean => a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt(),
            Metric::Cosine => {
                let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
                let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
                let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
                if na == 0.0 || nb == 0.0 {
                    1.0
                } else {
                    1.0 - dot / (na * nb)
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f64,
}

/// The `k` points nearest to `query`, ascending by distance with ties going
/// to the lower index. `exclude` drops one index (the query itself when it
/// belongs to the set).
pub fn nearest(points: &[Vec<f64>], query: &[f64], k: usize, metric: Metric, exclude: Option<usize>) -> Result<Vec<Neighbor>> {
    let available = points.len() - usize::from(exclude.is_some_and(|e| e < points.len()));
    if k == 0 || k > available {
        return Err(Error::InvalidConfig(format!("k = {k} needs 1..={available}")));
    }
    let mut all: Vec<Neighbor> = points
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != exclude)
        .map(|(index, p)| Neighbor { index, distance: metric.distance(query, p) })
        .collect();
    all.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.index.cmp(&b.index)));
    all.truncate(k);
    Ok(all)
}

/// Neighbours of a case already in the embedding.
pub fn knn(map: &EmbeddingMap, query_id: &str, k: usize, metric: Metric) -> Result<Vec<Neighbor>> {
    let q = map.index_of(query_id).ok_or_else(|| Error::UnknownCase(query_id.to_string()))?;
    if k >= map.points.len() {
        return Err(Error::InvalidConfig(format!("k = {k} must be below the {} embedded points", map.points.len())));
    }
    let points: Vec<Vec<f64>> = map.points.iter().map(|p| p.to_vec()).collect();
    nearest(&points, &points[q], k, metric, Some(q))
}

/// Majority label among `neighbors`; ties go to the label seen first (the
/// nearer neighbour).
pub fn vote(neighbors: &[Neighbor], labels: &[usize]) -> usize {
    let mut counts: Vec<(usize, usize)> = Vec::new();
    for n in neighbors {
        let y = labels[n.index];
        match counts.iter_mut().find(|(label, _)| *label == y) {
            Some((_, c)) => *c += 1,
            None => counts.push((y, 1)),
        }
    }
    let mut best = counts[0];
    for &c in &counts[1..] {
        if c.1 > best.1 {
            best = c;
        }
    }
    best.0
}

/// Accuracy of majority-vote kNN over the set. With `leave_one_out` each
/// point is classified by the others; without it the point itself is a
/// candidate neighbour.
pub fn knn_classify(points: &[Vec<f64>], labels: &[usize], k: usize, metric: Metric, leave_one_out: bool) -> Result<f64> {
    if points.len() != labels.len() {
        return Err(Error::LengthMismatch { left: points.len(), right: labels.len() });
    }
    if k >= points.len() {
        return Err(Error::InvalidConfig(format!("k = {k} must be below the {} points", points.len())));
    }
    let mut correct = 0usize;
    for (i, p) in points.iter().enumerate() {
        let nbrs = nearest(points, p, k, metric, leave_one_out.then_some(i))?;
        correct += usize::from(vote(&nbrs, labels) == labels[i]);
    }
    Ok(correct as f64 / points.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborInfo {
    pub case_id: String,
    pub status: Status,
    pub model_accuracy_on_subject: f64,
    pub annotator_agreement_on_subject: f64,
    pub single_annotator: bool,
    pub distance_to_query: f64,
}

/// Tooltip for one case. `predictions` are out-of-fold predictions aligned
/// with `dataset.cases`.
pub fn neighbor_info(dataset: &Dataset, component: Component, predictions: &[usize], case_id: &str, distance_to_query: f64) -> Result<NeighborInfo> {
    if predictions.len() != dataset.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: dataset.len() });
    }
    if !(distance_to_query >= 0.0) {
        return Err(Error::NumericDomain(format!("distance {distance_to_query} is negative")));
    }
    let idx = dataset.index_of(case_id).ok_or_else(|| Error::UnknownCase(case_id.to_string()))?;
    let case = &dataset.cases[idx];
    let mut trials = 0usize;
    let mut correct = 0usize;
    let mut compared = 0usize;
    let mut agreed = 0usize;
    for (c, &p) in dataset.cases.iter().zip(predictions) {
        if c.subject_id != case.subject_id {
            continue;
        }
        trials += 1;
        correct += usize::from(p == c.label(component));
        if let Some(second) = c.second_label(component) {
            compared += 1;
            agreed += usize::from(second == c.label(component));
        }
    }
    let single_annotator = compared == 0;
    Ok(NeighborInfo {
        case_id: case_id.to_string(),
        status: case.status,
        model_accuracy_on_subject: correct as f64 / trials as f64,
        annotator_agreement_on_subject: if single_annotator { 1.0 } else { agreed as f64 / compared as f64 },
        single_annotator,
        distance_to_query,
    })
}
