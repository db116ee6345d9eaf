//! Kernel SHAP attributions of the predicted-class probability, and the
//! top-feature radar payload built from them.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Largest feature count for which all coalitions are enumerated.
pub const MAX_EXACT_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShapMode {
    Exact,
    Sampled(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapValues {
    pub base_value: f64,
    pub prediction: f64,
    pub values: Vec<f64>,
}

/// Number of subsets of size `s` out of `d`.
fn binomial(d: usize, s: usize) -> f64 {
    (0..s).fold(1.0, |acc, i| acc * (d - i) as f64 / (i + 1) as f64)
}

/// Shapley kernel weight of a coalition of size `s` among `d` features.
pub fn shapley_kernel(d: usize, s: usize) -> f64 {
    (d - 1) as f64 / (binomial(d, s) * s as f64 * (d - s) as f64)
}

/// Explain `f` at `x`. Features outside a coalition take the background
/// mean. `f` must already be restricted to the output being explained.
pub fn kernel_shap<F>(f: F, x: &[f64], background: &[Vec<f64>], mode: ShapMode, seed: u64) -> Result<ShapValues>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let d = x.len();
    if background.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if d == 0 {
        return Err(Error::InputShape { expected: 1, got: 0 });
    }
    let mut mean = vec![0.0; d];
    for b in background {
        if b.len() != d {
            return Err(Error::InputShape { expected: d, got: b.len() });
        }
        for (m, v) in mean.iter_mut().zip(b) {
            *m += v / background.len() as f64;
        }
    }
    let eval = |mask: &[bool]| -> Result<f64> {
        let z: Vec<f64> = (0..d).map(|i| if mask[i] { x[i] } else { mean[i] }).collect();
        f(&z)
    };
    let base_value = eval(&vec![false; d])?;
    let prediction = eval(&vec![true; d])?;
    let total = prediction - base_value;
    if d == 1 {
        return Ok(ShapValues { base_value, prediction, values: vec![total] });
    }

    let coalitions: Vec<(Vec<bool>, f64)> = match mode {
        ShapMode::Exact => {
            if d > MAX_EXACT_FEATURES {
                return Err(Error::InvalidConfig(format!("exact mode supports at most {MAX_EXACT_FEATURES} features, got {d}")));
            }
            (1u32..(1 << d) - 1)
                .map(|bits| {
                    let mask: Vec<bool> = (0..d).map(|i| bits >> i & 1 == 1).collect();
                    let s = mask.iter().filter(|m| **m).count();
                    (mask, shapley_kernel(d, s))
                })
                .collect()
        }
        ShapMode::Sampled(n) => {
            if n < 2 {
                return Err(Error::InvalidConfig("sampled mode needs at least 2 coalitions".into()));
            }
            sample_coalitions(d, n, seed)
        }
    };

    // enforce sum(phi) = total by writing phi_last = total - sum(others)
    let m = d - 1;
    let mut xtwx = DMatrix::<f64>::zeros(m, m);
    let mut xtwy = DVector::<f64>::zeros(m);
    for (mask, w) in &coalitions {
        let y = eval(mask)? - base_value - if mask[m] { total } else { 0.0 };
        let last = f64::from(u8::from(mask[m]));
        let row: Vec<f64> = (0..m).map(|i| f64::from(u8::from(mask[i])) - last).collect();
        for i in 0..m {
            if row[i] == 0.0 {
                continue;
            }
            xtwy[i] += w * row[i] * y;
            for j in 0..m {
                xtwx[(i, j)] += w * row[i] * row[j];
            }
        }
    }
    let solved = xtwx
        .clone()
        .cholesky()
        .map(|c| c.solve(&xtwy))
        .or_else(|| xtwx.clone().lu().solve(&xtwy))
        .or_else(|| xtwx.clone().pseudo_inverse(1e-12).ok().map(|p| p * &xtwy))
        .ok_or(Error::DegenerateSample("coalition design is singular"))?;
    let mut values: Vec<f64> = solved.iter().copied().collect();
    values.push(total - values.iter().sum::<f64>());
    Ok(ShapValues { base_value, prediction, values })
}

/// Coalition sizes drawn in proportion to the kernel's total mass per size,
/// each sample paired with its complement; every drawn coalition has unit
/// weight.
fn sample_coalitions(d: usize, n: usize, seed: u64) -> Vec<(Vec<bool>, f64)> {
    let mass: Vec<f64> = (1..d).map(|s| (d - 1) as f64 / (s * (d - s)) as f64).collect();
    let total: f64 = mass.iter().sum();
    let mut rng = rng::seeded(seed);
    let mut out = Vec::with_capacity(n + 1);
    while out.len() < n {
        let mut u = rng.random::<f64>() * total;
        let mut s = d - 1;
        for (i, w) in mass.iter().enumerate() {
            if u < *w {
                s = i + 1;
                break;
            }
            u -= w;
        }
        let mut mask = vec![false; d];
        for i in index::sample(&mut rng, d, s) {
            mask[i] = true;
        }
        let complement: Vec<bool> = mask.iter().map(|m| !m).collect();
        out.push((mask, 1.0));
        out.push((complement, 1.0));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureRange {
    pub min: f64,
    pub max: f64,
}

impl FeatureRange {
    /// Per-feature extremes over a set of rows.
    pub fn fit(rows: &[Vec<f64>]) -> Result<Vec<FeatureRange>> {
        let first = rows.first().ok_or(Error::EmptyDataset)?;
        let mut ranges: Vec<FeatureRange> = first.iter().map(|&v| FeatureRange { min: v, max: v }).collect();
        for r in rows {
            if r.len() != ranges.len() {
                return Err(Error::InputShape { expected: ranges.len(), got: r.len() });
            }
            for (range, &v) in ranges.iter_mut().zip(r) {
                range.min = range.min.min(v);
                range.max = range.max.max(v);
            }
        }
        Ok(ranges)
    }

    /// Min-max position clipped to `[0, 1]`; a constant feature maps to 0.5.
    pub fn normalize(&self, v: f64) -> f64 {
        if self.max - self.min <= 0.0 {
            0.5
        } else {
            ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureAttribution {
    pub name: String,
    pub shap: f64,
    pub affected: f64,
    pub unaffected: f64,
}

/// The `k` largest attributions by magnitude (ties in schema order), paired
/// with normalised affected- and unaffected-side values.
pub fn top_k_features(
    shap: &[f64],
    names: &[String],
    affected: &[f64],
    unaffected: &[f64],
    ranges: &[FeatureRange],
    k: usize,
) -> Result<Vec<FeatureAttribution>> {
    let d = shap.len();
    for len in [names.len(), affected.len(), unaffected.len(), ranges.len()] {
        if len != d {
            return Err(Error::LengthMismatch { left: d, right: len });
        }
    }
    if k > d || k == 0 {
        return Err(Error::TooFewFeatures { needed: k, got: d });
    }
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| shap[b].abs().total_cmp(&shap[a].abs()).then(a.cmp(&b)));
    Ok(order
        .into_iter()
        .take(k)
        .map(|i| FeatureAttribution {
            name: names[i].clone(),
            shap: shap[i],
            affected: ranges[i].normalize(affected[i]),
            unaffected: ranges[i].normalize(unaffected[i]),
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Shapley values by the permutation-free subset formula.
    pub(crate) fn exhaustive_shapley(v: &dyn Fn(&[bool]) -> f64, d: usize) -> Vec<f64> {
        let fact = |n: usize| (1..=n).fold(1.0, |a, b| a * b as f64);
        (0..d)
            .map(|i| {
                let mut phi = 0.0;
                for bits in 0u32..(1 << d) {
                    if bits >> i & 1 == 1 {
                        continue;
                    }
                    let s: Vec<bool> = (0..d).map(|j| bits >> j & 1 == 1).collect();
                    let size = s.iter().filter(|b| **b).count();
                    let mut with = s.clone();
                    with[i] = true;
                    phi += fact(size) * fact(d - size - 1) / fact(d) * (v(&with) - v(&s));
                }
                phi
            })
            .collect()
    }

    #[test]
    fn constant_model_has_no_attribution() {
        let r = kernel_shap(|_| Ok(0.7), &[1.0, 2.0, 3.0], &[vec![0.0; 3]], ShapMode::Exact, 0).unwrap();
        assert_eq!(r.base_value, 0.7);
        assert!(r.values.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn linear_model_closed_form() {
        let w = [0.5, -1.0, 2.0, 0.25];
        let f = |z: &[f64]| Ok(z.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>());
        let x = [1.0, 2.0, -1.0, 4.0];
        let b = vec![0.5, 0.5, 0.5, 0.5];
        let r = kernel_shap(f, &x, &[b.clone()], ShapMode::Exact, 0).unwrap();
        for i in 0..4 {
            assert!((r.values[i] - w[i] * (x[i] - b[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn exact_matches_enumeration_on_interactions() {
        let f = |z: &[f64]| Ok(z[0] * z[1] + (z[2] * z[3]).sin() + z[4].powi(2) * z[0]);
        let x = [1.0, -2.0, 0.5, 3.0, 1.5];
        let bg = vec![vec![0.2, 0.1, -0.3, 0.4, 0.0], vec![-0.2, 0.3, 0.1, 0.0, 1.0]];
        let mean: Vec<f64> = (0..5).map(|i| (bg[0][i] + bg[1][i]) / 2.0).collect();
        let r = kernel_shap(f, &x, &bg, ShapMode::Exact, 0).unwrap();
        let v = |s: &[bool]| {
            let z: Vec<f64> = (0..5).map(|i| if s[i] { x[i] } else { mean[i] }).collect();
            f(&z).unwrap()
        };
        let oracle = exhaustive_shapley(&v, 5);
        for (a, b) in r.values.iter().zip(&oracle) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
        assert!((r.values.iter().sum::<f64>() + r.base_value - r.prediction).abs() < 1e-9);
    }

    #[test]
    fn duplicated_features_share_credit() {
        let f = |z: &[f64]| Ok((z[0] + z[1]).tanh() + 0.3 * z[2]);
        let r = kernel_shap(f, &[0.8, 0.8, -1.0], &[vec![0.0; 3]], ShapMode::Exact, 0).unwrap();
        assert!((r.values[0] - r.values[1]).abs() < 1e-6);
    }

    #[test]
    fn sampled_mode_is_efficient_and_close() {
        let f = |z: &[f64]| Ok(z[0] * z[1] + 0.5 * z[2] - z[3] * z[4] + z[5]);
        let x = [1.0, 2.0, -1.0, 0.5, 1.0, 2.0];
        let bg = vec![vec![0.0; 6]];
        let exact = kernel_shap(f, &x, &bg, ShapMode::Exact, 0).unwrap();
        let sampled = kernel_shap(f, &x, &bg, ShapMode::Sampled(2000), 4).unwrap();
        assert!((sampled.values.iter().sum::<f64>() + sampled.base_value - sampled.prediction).abs() < 1e-3);
        for (a, b) in exact.values.iter().zip(&sampled.values) {
            assert!((a - b).abs() < 0.05, "{a} vs {b}");
        }
        assert_eq!(sampled, kernel_shap(f, &x, &bg, ShapMode::Sampled(2000), 4).unwrap());
    }

    #[test]
    fn errors() {
        assert!(kernel_shap(|_| Ok(0.0), &[1.0], &[], ShapMode::Exact, 0).is_err());
        assert!(matches!(kernel_shap(|_| Ok(0.0), &[1.0, 2.0], &[vec![0.0]], ShapMode::Exact, 0), Err(Error::InputShape { .. })));
        assert!(kernel_shap(|_| Ok(0.0), &[0.0; 13], &[vec![0.0; 13]], ShapMode::Exact, 0).is_err());
    }

    #[test]
    fn ranking_and_normalization() {
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let ranges = vec![FeatureRange { min: 2.0, max: 10.0 }; 3];
        let top = top_k_features(&[0.5, -0.9, 0.1], &names, &[6.0, 12.0, 0.0], &[2.0, 2.0, 2.0], &ranges, 3).unwrap();
        assert_eq!(top.iter().map(|t| t.name.as_str()).collect::<Vec<_>>(), vec!["b", "a", "c"]);
        assert_eq!(top[1].affected, 0.5);
        assert_eq!(top[0].affected, 1.0);
        assert_eq!(top[2].affected, 0.0);
        let tie = top_k_features(&[0.2, -0.2, 0.1], &names, &[0.0; 3], &[0.0; 3], &ranges, 2).unwrap();
        assert_eq!(tie[0].name, "a");
        assert!(matches!(
            top_k_features(&[0.1, 0.2], &names[..2], &[0.0; 2], &[0.0; 2], &ranges[..2], 3),
            Err(Error::TooFewFeatures { .. })
        ));
        assert_eq!(FeatureRange { min: 1.0, max: 1.0 }.normalize(4.0), 0.5);
    }

    #[test]
    fn kernel_weights() {
        assert!((shapley_kernel(4, 1) - 3.0 / (4.0 * 3.0)).abs() < 1e-15);
        assert!((shapley_kernel(4, 2) - 3.0 / (6.0 * 4.0)).abs() < 1e-15);
    }
}
