//! Two-dimensional projections of case representations.

use nalgebra::{DMatrix, SymmetricEigen};
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbedMethod {
    Pca,
    Tsne,
}

impl std::str::FromStr for EmbedMethod {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pca" => Ok(EmbedMethod::Pca),
            "tsne" | "t-sne" => Ok(EmbedMethod::Tsne),
            other => Err(Error::InvalidConfig(format!("unknown embedding method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TsneParams {
    /// `None` picks `min(30, floor((n - 1) / 3))`.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub early_exaggeration: f64,
    pub exaggeration_iterations: usize,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self { perplexity: None, iterations: 1000, learning_rate: 200.0, early_exaggeration: 12.0, exaggeration_iterations: 250 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingMap {
    pub method: EmbedMethod,
    pub points: Vec<[f64; 2]>,
    pub case_ids: Vec<String>,
    pub labels: Vec<usize>,
    pub centroids2d: Vec<[f64; 2]>,
    pub seed: u64,
    /// Effective t-SNE settings (perplexity resolved); absent for PCA.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<TsneParams>,
}

impl EmbeddingMap {
    pub fn index_of(&self, case_id: &str) -> Option<usize> {
        self.case_ids.iter().position(|c| c == case_id)
    }
}

fn check_points(vectors: &[Vec<f64>]) -> Result<usize> {
    if vectors.len() < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: vectors.len() });
    }
    let d = vectors[0].len();
    if d == 0 {
        return Err(Error::InputShape { expected: 1, got: 0 });
    }
    for v in vectors {
        if v.len() != d {
            return Err(Error::InputShape { expected: d, got: v.len() });
        }
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericDomain("non-finite coordinate".into()));
        }
    }
    Ok(d)
}

/// Scores on the top two principal components. Each component's sign is
/// fixed so its largest-magnitude loading is positive; one-dimensional input
/// gets a zero second coordinate.
pub fn pca(vectors: &[Vec<f64>]) -> Result<Vec<[f64; 2]>> {
    let d = check_points(vectors)?;
    let n = vectors.len();
    let mut mean = vec![0.0; d];
    for v in vectors {
        for (m, x) in mean.iter_mut().zip(v) {
            *m += x / n as f64;
        }
    }
    let centered = DMatrix::from_fn(n, d, |i, j| vectors[i][j] - mean[j]);
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    let eig = SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut axes = Vec::new();
    for &c in order.iter().take(2) {
        let mut axis: Vec<f64> = eig.eigenvectors.column(c).iter().copied().collect();
        let mut lead = 0;
        for (i, v) in axis.iter().enumerate() {
            if v.abs() > axis[lead].abs() {
                lead = i;
            }
        }
        if axis[lead] < 0.0 {
            axis.iter_mut().for_each(|v| *v = -*v);
        }
        axes.push(axis);
    }
    Ok((0..n)
        .map(|i| {
            let row = centered.row(i);
            let mut p = [0.0; 2];
            for (slot, axis) in p.iter_mut().zip(&axes) {
                *slot = row.iter().zip(axis).map(|(a, b)| a * b).sum();
            }
            p
        })
        .collect())
}

pub fn default_perplexity(n: usize) -> f64 {
    30f64.min(((n - 1) / 3) as f64)
}

fn sq_distances(vectors: &[Vec<f64>]) -> Vec<f64> {
    let n = vectors.len();
    let mut d = vec![0.0; n * n];
    for i in 0..n {
        for j in i + 1..n {
            let v: f64 = vectors[i].iter().zip(&vectors[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            d[i * n + j] = v;
            d[j * n + i] = v;
        }
    }
    d
}

/// Row-conditional Gaussian affinities whose entropy matches `ln(perplexity)`,
/// found by bisection on the precision.
fn conditional_affinities(dist: &[f64], n: usize, perplexity: f64) -> Vec<f64> {
    let target = perplexity.ln();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        let row = &dist[i * n..(i + 1) * n];
        let (mut lo, mut hi) = (f64::NEG_INFINITY, f64::INFINITY);
        let mut beta = 1.0;
        let min_d = (0..n).filter(|&j| j != i).map(|j| row[j]).fold(f64::INFINITY, f64::min);
        for _ in 0..200 {
            let mut sum = 0.0;
            let mut weighted = 0.0;
            for j in (0..n).filter(|&j| j != i) {
                let w = (-(row[j] - min_d) * beta).exp();
                sum += w;
                weighted += w * (row[j] - min_d);
            }
            let entropy = sum.ln() + beta * weighted / sum;
            for j in (0..n).filter(|&j| j != i) {
                p[i * n + j] = (-(row[j] - min_d) * beta).exp() / sum;
            }
            let diff = entropy - target;
            if diff.abs() < 1e-5 {
                break;
            }
            if diff > 0.0 {
                lo = beta;
                beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
            } else {
                hi = beta;
                beta = if lo.is_finite() { (beta + lo) / 2.0 } else { beta / 2.0 };
            }
        }
    }
    p
}

/// Exact t-SNE. Returns the layout and the perplexity used.
pub fn tsne(vectors: &[Vec<f64>], params: &TsneParams, seed: u64) -> Result<(Vec<[f64; 2]>, f64)> {
    check_points(vectors)?;
    let n = vectors.len();
    let perplexity = params.perplexity.unwrap_or_else(|| default_perplexity(n));
    if !(perplexity >= 1.0 && perplexity <= (n - 1) as f64 / 3.0) {
        return Err(Error::InfeasiblePerplexity { perplexity, n });
    }
    let cond = conditional_affinities(&sq_distances(vectors), n, perplexity);
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            if i != j {
                p[i * n + j] = ((cond[i * n + j] + cond[j * n + i]) / (2.0 * n as f64)).max(1e-12);
            }
        }
    }

    let mut rng = rng::seeded(seed);
    let normal = Normal::new(0.0, 1e-4).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];
    let mut num = vec![0.0; n * n];
    let mut grad = vec![[0.0; 2]; n];
    for iter in 0..params.iterations {
        let exaggeration = if iter < params.exaggeration_iterations { params.early_exaggeration } else { 1.0 };
        let momentum = if iter < params.exaggeration_iterations { 0.5 } else { 0.8 };
        let mut z = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let dx = y[i][0] - y[j][0];
                let dy = y[i][1] - y[j][1];
                let v = 1.0 / (1.0 + dx * dx + dy * dy);
                num[i * n + j] = v;
                num[j * n + i] = v;
                z += 2.0 * v;
            }
        }
        for i in 0..n {
            let mut g = [0.0; 2];
            for j in 0..n {
                if i == j {
                    continue;
                }
                let v = num[i * n + j];
                let q = (v / z).max(1e-12);
                let m = (exaggeration * p[i * n + j] - q) * v;
                g[0] += m * (y[i][0] - y[j][0]);
                g[1] += m * (y[i][1] - y[j][1]);
            }
            grad[i] = [4.0 * g[0], 4.0 * g[1]];
        }
        for i in 0..n {
            for c in 0..2 {
                let same_sign = (grad[i][c] > 0.0) == (update[i][c] > 0.0);
                gains[i][c] = if same_sign { (gains[i][c] * 0.8).max(0.01) } else { gains[i][c] + 0.2 };
                update[i][c] = momentum * update[i][c] - params.learning_rate * gains[i][c] * grad[i][c];
                y[i][c] += update[i][c];
            }
        }
        let mut mean = [0.0; 2];
        for p in &y {
            mean[0] += p[0] / n as f64;
            mean[1] += p[1] / n as f64;
        }
        for p in y.iter_mut() {
            p[0] -= mean[0];
            p[1] -= mean[1];
        }
    }
    if y.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NumericDomain("t-SNE layout diverged".into()));
    }
    Ok((y, perplexity))
}

/// Project `vectors` and attach per-class 2-D centroids.
pub fn project(
    vectors: &[Vec<f64>],
    case_ids: &[String],
    labels: &[usize],
    class_count: usize,
    method: EmbedMethod,
    params: &TsneParams,
    seed: u64,
) -> Result<EmbeddingMap> {
    if case_ids.len() != vectors.len() {
        return Err(Error::LengthMismatch { left: vectors.len(), right: case_ids.len() });
    }
    if labels.len() != vectors.len() {
        return Err(Error::LengthMismatch { left: vectors.len(), right: labels.len() });
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= class_count) {
        return Err(Error::LabelOutOfRange { label: y, classes: class_count });
    }
    let (points, params) = match method {
        EmbedMethod::Pca => (pca(vectors)?, None),
        EmbedMethod::Tsne => {
            let (points, perplexity) = tsne(vectors, params, seed)?;
            (points, Some(TsneParams { perplexity: Some(perplexity), ..params.clone() }))
        }
    };
    let centroids2d = class_means_2d(&points, labels, class_count)?;
    Ok(EmbeddingMap {
        method,
        points,
        case_ids: case_ids.to_vec(),
        labels: labels.to_vec(),
        centroids2d,
        seed,
        params,
    })
}

fn class_means_2d(points: &[[f64; 2]], labels: &[usize], class_count: usize) -> Result<Vec<[f64; 2]>> {
    let mut sums = vec![[0.0; 2]; class_count];
    let mut counts = vec![0usize; class_count];
    for (p, &y) in points.iter().zip(labels) {
        sums[y][0] += p[0];
        sums[y][1] += p[1];
        counts[y] += 1;
    }
    sums.into_iter()
        .zip(counts)
        .enumerate()
        .map(|(k, (s, c))| if c == 0 { Err(Error::MissingClass(k)) } else { Ok([s[0] / c as f64, s[1] / c as f64]) })
        .collect()
}
