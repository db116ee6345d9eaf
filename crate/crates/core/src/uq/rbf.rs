//! Network with a Gaussian radial-basis layer in front of a ReLU classifier
//! head. Each basis centre is tied to one class; the confidence of a
//! prediction is the distance score of the nearest centre of that class.

use rand::seq::IndexedRandom;
use serde::{Deserialize, Serialize};

use super::distance::distance_scores;
use super::{Diagnostics, UqResult};
use crate::data::LabeledData;
use crate::error::{Error, Result};
use crate::numeric::{argmax, cross_entropy, Network, Standardizer};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfConfig {
    /// Basis units; centre `j` belongs to class `j mod K`.
    pub n_centroids: usize,
    /// ReLU layers between the basis layer and the output.
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for RbfConfig {
    fn default() -> Self {
        Self { n_centroids: 32, hidden: vec![32], learning_rate: 0.05, epochs: 500, seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RbfNet {
    pub config: RbfConfig,
    pub class_count: usize,
    pub standardizer: Standardizer,
    pub centers: Vec<Vec<f64>>,
    pub widths: Vec<f64>,
    pub center_class: Vec<usize>,
    pub head: Network,
    pub final_loss: f64,
}

const MIN_WIDTH: f64 = 1e-3;

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn basis(z: &[f64], centers: &[Vec<f64>], widths: &[f64], out: &mut [f64]) {
    for ((o, c), w) in out.iter_mut().zip(centers).zip(widths) {
        *o = (-sq_dist(z, c) / (2.0 * w * w)).exp();
    }
}

/// Gradients of the loss w.r.t. centres and widths given `d_phi`, the
/// gradient w.r.t. the flat `n x J` basis outputs.
fn basis_gradients(inputs: &[Vec<f64>], phi: &[Vec<f64>], d_phi: &[f64], centers: &[Vec<f64>], widths: &[f64]) -> (Vec<Vec<f64>>, Vec<f64>) {
    let j_count = centers.len();
    let mut d_centers = vec![vec![0.0; centers[0].len()]; j_count];
    let mut d_widths = vec![0.0; j_count];
    for (i, z) in inputs.iter().enumerate() {
        for j in 0..j_count {
            let g = d_phi[i * j_count + j] * phi[i][j];
            if g == 0.0 {
                continue;
            }
            let w2 = widths[j] * widths[j];
            let mut r2 = 0.0;
            for ((dc, zv), cv) in d_centers[j].iter_mut().zip(z).zip(&centers[j]) {
                let diff = zv - cv;
                *dc += g * diff / w2;
                r2 += diff * diff;
            }
            d_widths[j] += g * r2 / (w2 * widths[j]);
        }
    }
    (d_centers, d_widths)
}

fn mean_pairwise_distance(points: &[Vec<f64>]) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            total += sq_dist(&points[i], &points[j]).sqrt();
            pairs += 1;
        }
    }
    if pairs == 0 || total == 0.0 {
        1.0
    } else {
        total / pairs as f64
    }
}

pub fn train_rbf(data: &LabeledData, config: &RbfConfig) -> Result<RbfNet> {
    if data.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let k = data.class_count;
    if config.n_centroids < k {
        return Err(Error::InvalidConfig(format!("{} basis units cannot cover {k} classes", config.n_centroids)));
    }
    if !(config.learning_rate > 0.0 && config.learning_rate.is_finite()) || config.hidden.contains(&0) {
        return Err(Error::InvalidConfig("bad basis-network configuration".into()));
    }
    let standardizer = Standardizer::fit(&data.features)?;
    let inputs: Vec<Vec<f64>> = data.features.iter().map(|x| standardizer.transform(x)).collect();
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
    for (i, &y) in data.labels.iter().enumerate() {
        by_class[y].push(i);
    }
    if let Some(c) = by_class.iter().position(Vec::is_empty) {
        return Err(Error::MissingClass(c));
    }

    let mut rng = rng::seeded(config.seed);
    let dim = data.dim();
    let center_class: Vec<usize> = (0..config.n_centroids).map(|j| j % k).collect();
    let centers: Vec<Vec<f64>> = center_class
        .iter()
        .enumerate()
        .map(|(j, &c)| {
            if j < k {
                let mut m = vec![0.0; dim];
                for &i in &by_class[c] {
                    for (a, v) in m.iter_mut().zip(&inputs[i]) {
                        *a += v;
                    }
                }
                m.iter_mut().for_each(|a| *a /= by_class[c].len() as f64);
                m
            } else {
                inputs[*by_class[c].choose(&mut rng).expect("class is non-empty")].clone()
            }
        })
        .collect();
    let width = mean_pairwise_distance(&inputs);
    let mut sizes = vec![config.n_centroids];
    sizes.extend(&config.hidden);
    sizes.push(k);
    let head = Network::new(&sizes, &mut rng)?;

    let mut net = RbfNet {
        config: config.clone(),
        class_count: k,
        standardizer,
        widths: vec![width; config.n_centroids],
        centers,
        center_class,
        head,
        final_loss: f64::NAN,
    };
    let n = inputs.len();
    let j_count = config.n_centroids;
    let mut phi = vec![vec![0.0; j_count]; n];
    for epoch in 0..config.epochs {
        for (p, z) in phi.iter_mut().zip(&inputs) {
            basis(z, &net.centers, &net.widths, p);
        }
        let pass = net.head.forward_batch(&phi, None)?;
        let (loss, d_out) = cross_entropy(pass.outputs(), &data.labels, k);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged { epoch });
        }
        let (grads, d_phi) = net.head.backward(&pass, &d_out);
        let (d_centers, d_widths) = basis_gradients(&inputs, &phi, &d_phi, &net.centers, &net.widths);
        net.head.apply_gradients(&grads, config.learning_rate);
        for (c, dc) in net.centers.iter_mut().zip(&d_centers) {
            for (v, g) in c.iter_mut().zip(dc) {
                *v -= config.learning_rate * g;
            }
        }
        for (w, g) in net.widths.iter_mut().zip(&d_widths) {
            *w = (*w - config.learning_rate * g).max(MIN_WIDTH);
        }
    }
    for (p, z) in phi.iter_mut().zip(&inputs) {
        basis(z, &net.centers, &net.widths, p);
    }
    let pass = net.head.forward_batch(&phi, None)?;
    let (loss, _) = cross_entropy(pass.outputs(), &data.labels, k);
    let finite = net.head.is_finite() && net.centers.iter().flatten().all(|v| v.is_finite());
    if !loss.is_finite() || !finite {
        return Err(Error::TrainingDiverged { epoch: config.epochs });
    }
    net.final_loss = loss;
    Ok(net)
}

impl RbfNet {
    fn scaled(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.standardizer.mean.len() {
            return Err(Error::InputShape { expected: self.standardizer.mean.len(), got: x.len() });
        }
        Ok(self.standardizer.transform(x))
    }

    pub fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.scaled(x)?;
        let mut phi = vec![0.0; self.centers.len()];
        basis(&z, &self.centers, &self.widths, &mut phi);
        Ok(self.head.forward(&phi, None)?.logits)
    }

    pub fn predict(&self, x: &[f64]) -> Result<usize> {
        Ok(argmax(&self.logits(x)?))
    }

    /// Distance from `x` (in scaled input space) to the nearest centre of
    /// each class.
    pub fn class_distances(&self, x: &[f64]) -> Result<Vec<f64>> {
        let z = self.scaled(x)?;
        let mut best = vec![f64::INFINITY; self.class_count];
        for (c, &class) in self.centers.iter().zip(&self.center_class) {
            best[class] = best[class].min(sq_dist(&z, c).sqrt());
        }
        Ok(best)
    }
}

pub fn rbf_distance_confidence(net: &RbfNet, x: &[f64]) -> Result<UqResult> {
    let predicted_class = net.predict(x)?;
    let distances = net.class_distances(x)?;
    let s = distance_scores(&distances)?;
    Ok(UqResult {
        case_id: None,
        predicted_class,
        confidence: s.scores[predicted_class],
        per_class_scores: Some(s.scores),
        raw: Diagnostics::Distances {
            distances,
            max_distance: s.max_distance,
            normalized: s.normalized,
            degenerate: s.degenerate,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blobs() -> LabeledData {
        let mut rng = rng::seeded(4);
        use rand_distr::{Distribution, Normal};
        let noise = Normal::new(0.0, 0.3).unwrap();
        let centres = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, m) in centres.iter().enumerate() {
            for _ in 0..20 {
                features.push(vec![m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)]);
                labels.push(c);
            }
        }
        LabeledData::unnamed(features, labels, 3).unwrap()
    }

    #[test]
    fn basis_value() {
        let mut out = [0.0];
        basis(&[1.0, 1.0], &[vec![0.0, 0.0]], &[1.0], &mut out);
        assert!((out[0] - (-1.0f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn learns_separable_blobs() {
        let data = blobs();
        let cfg = RbfConfig { n_centroids: 6, hidden: vec![8], learning_rate: 0.1, epochs: 300, seed: 1 };
        let net = train_rbf(&data, &cfg).unwrap();
        let correct = data.features.iter().zip(&data.labels).filter(|(x, y)| net.predict(x).unwrap() == **y).count();
        assert!(correct as f64 / data.len() as f64 >= 0.95);
        assert_eq!(net.center_class, vec![0, 1, 2, 0, 1, 2]);
        let r = rbf_distance_confidence(&net, &data.features[0]).unwrap();
        assert!((0.0..=1.0).contains(&r.confidence));
        let far = rbf_distance_confidence(&net, &[80.0, -60.0]).unwrap();
        assert!(far.confidence < r.confidence);
    }

    #[test]
    fn finite_difference_centre_gradient() {
        let data = LabeledData::unnamed(vec![vec![0.3, -0.2], vec![-0.5, 0.4], vec![1.0, 0.1]], vec![0, 1, 0], 2).unwrap();
        let cfg = RbfConfig { n_centroids: 2, hidden: vec![], learning_rate: 1e-9, epochs: 0, seed: 2 };
        let net = train_rbf(&data, &cfg).unwrap();
        let inputs: Vec<Vec<f64>> = data.features.iter().map(|x| net.standardizer.transform(x)).collect();
        let loss = |centers: &[Vec<f64>], widths: &[f64]| {
            let phi: Vec<Vec<f64>> = inputs
                .iter()
                .map(|z| {
                    let mut p = vec![0.0; 2];
                    basis(z, centers, widths, &mut p);
                    p
                })
                .collect();
            let pass = net.head.forward_batch(&phi, None).unwrap();
            cross_entropy(pass.outputs(), &data.labels, 2).0
        };
        let phi: Vec<Vec<f64>> = inputs
            .iter()
            .map(|z| {
                let mut p = vec![0.0; 2];
                basis(z, &net.centers, &net.widths, &mut p);
                p
            })
            .collect();
        let pass = net.head.forward_batch(&phi, None).unwrap();
        let (_, d_out) = cross_entropy(pass.outputs(), &data.labels, 2);
        let (_, d_phi) = net.head.backward(&pass, &d_out);
        let (d_centers, d_widths) = basis_gradients(&inputs, &phi, &d_phi, &net.centers, &net.widths);
        let j = 1;
        let (analytic_c0, analytic_w) = (d_centers[j][0], d_widths[j]);
        let eps = 1e-6;
        let mut plus = net.centers.clone();
        plus[j][0] += eps;
        let mut minus = net.centers.clone();
        minus[j][0] -= eps;
        let numeric_c0 = (loss(&plus, &net.widths) - loss(&minus, &net.widths)) / (2.0 * eps);
        let mut wp = net.widths.clone();
        wp[j] += eps;
        let mut wm = net.widths.clone();
        wm[j] -= eps;
        let numeric_w = (loss(&net.centers, &wp) - loss(&net.centers, &wm)) / (2.0 * eps);
        assert!((analytic_c0 - numeric_c0).abs() < 1e-6, "{analytic_c0} vs {numeric_c0}");
        assert!((analytic_w - numeric_w).abs() < 1e-6, "{analytic_w} vs {numeric_w}");
    }

    fn two_blobs(noise_sd: f64) -> LabeledData {
        use rand_distr::{Distribution, Normal};
        let mut rng = rng::seeded(11);
        let noise = Normal::new(0.0, noise_sd).unwrap();
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for (c, m) in [[-2.0, 1.0], [2.0, -1.0]].iter().enumerate() {
            for _ in 0..30 {
                features.push(vec![m[0] + noise.sample(&mut rng), m[1] + noise.sample(&mut rng)]);
                labels.push(c);
            }
        }
        LabeledData::unnamed(features, labels, 2).unwrap()
    }

    // Lloyd's iterations from the two extreme points
    fn kmeans2(points: &[Vec<f64>]) -> [Vec<f64>; 2] {
        let mut c = [points[0].clone(), points[points.len() - 1].clone()];
        for _ in 0..50 {
            let mut sums = [vec![0.0; 2], vec![0.0; 2]];
            let mut counts = [0.0; 2];
            for p in points {
                let j = usize::from(sq_dist(p, &c[1]) < sq_dist(p, &c[0]));
                sums[j][0] += p[0];
                sums[j][1] += p[1];
                counts[j] += 1.0;
            }
            for j in 0..2 {
                c[j] = vec![sums[j][0] / counts[j], sums[j][1] / counts[j]];
            }
        }
        c
    }

    #[test]
    fn centres_stay_near_blob_means() {
        let noise_sd = 0.2;
        let data = two_blobs(noise_sd);
        let cfg = RbfConfig { n_centroids: 2, hidden: vec![], learning_rate: 0.05, epochs: 300, seed: 3 };
        let net = train_rbf(&data, &cfg).unwrap();
        let means = kmeans2(&data.features);
        for (center, class) in net.centers.iter().zip(&net.center_class) {
            let raw = net.standardizer.inverse(center);
            assert!(sq_dist(&raw, &means[*class]).sqrt() <= 3.0 * noise_sd, "{raw:?} vs {:?}", means[*class]);
            let r = rbf_distance_confidence(&net, &raw).unwrap();
            let scores = r.per_class_scores.unwrap();
            assert_eq!(argmax(&scores), *class);
        }
    }

    #[test]
    fn single_layer_shape_is_expressible() {
        let cfg = RbfConfig { n_centroids: 3, hidden: vec![16], learning_rate: 0.01, epochs: 5, seed: 0 };
        let net = train_rbf(&blobs(), &cfg).unwrap();
        assert_eq!(net.centers.len(), 3);
        assert_eq!(net.head.layer_sizes(), vec![3, 16, 3]);
    }

    #[test]
    fn rejects_too_few_centroids() {
        let cfg = RbfConfig { n_centroids: 2, ..RbfConfig::default() };
        assert!(matches!(train_rbf(&blobs(), &cfg), Err(Error::InvalidConfig(_))));
    }
}
