//! One-sample normality check and paired two-sided tests.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal, StudentsT};

use crate::error::{Error, Result};

/// Largest number of non-zero differences for which the signed-rank p-value
/// is computed exactly.
pub const WILCOXON_EXACT_MAX: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KsResult {
    pub statistic: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    /// Observations entering the test (non-zero differences for signed-rank).
    pub n: usize,
    pub exact: bool,
}

fn mean_sd(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Kolmogorov survival function `Q(λ) = 2 Σ (-1)^(k-1) exp(-2 k² λ²)`.
fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut sum = 0.0;
    for k in 1..=100 {
        let term = (-2.0 * (k * k) as f64 * lambda * lambda).exp();
        sum += if k % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// KS distance between the sample and a normal with the sample's own mean
/// and standard deviation. The p-value uses the asymptotic Kolmogorov
/// distribution with Stephens' small-sample scaling; it ignores that the
/// parameters were estimated and so is conservative.
pub fn ks_normality(sample: &[f64]) -> Result<KsResult> {
    let n = sample.len();
    if n < 3 {
        return Err(Error::TooFewPoints { needed: 3, got: n });
    }
    let (mean, sd) = mean_sd(sample);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("zero variance"));
    }
    let normal = Normal::new(mean, sd).map_err(|e| Error::NumericDomain(e.to_string()))?;
    let d = ks_statistic(sample, |x| normal.cdf(x));
    let root = (n as f64).sqrt();
    Ok(KsResult { statistic: d, p_value: kolmogorov_q((root + 0.12 + 0.11 / root) * d) })
}

/// `sup |ECDF - F|` over the sample against a fully specified CDF.
pub fn ks_statistic(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut sorted = sample.to_vec();
    sorted.sort_by(f64::total_cmp);
    let nf = sorted.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / nf - f).max(f - i as f64 / nf);
    }
    d
}

fn differences(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch { left: a.len(), right: b.len() });
    }
    Ok(a.iter().zip(b).map(|(x, y)| x - y).collect())
}

/// Paired t-test on `a - b`, two-sided.
pub fn paired_t(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let d = differences(a, b)?;
    let n = d.len();
    if n < 2 {
        return Err(Error::TooFewPoints { needed: 2, got: n });
    }
    let (mean, sd) = mean_sd(&d);
    if !(sd > 0.0) {
        return Err(Error::DegenerateSample("differences have zero variance"));
    }
    let t = mean / (sd / (n as f64).sqrt());
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::NumericDomain(e.to_string()))?;
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(TestResult { statistic: t, p_value: p, n, exact: true })
}

/// Average ranks (1-based) of `values`, ties sharing their mean rank.
fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Wilcoxon signed-rank test on `a - b`, two-sided. Zero differences are
/// dropped; `W = min(W+, W-)`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<TestResult> {
    let d: Vec<f64> = differences(a, b)?.into_iter().filter(|v| *v != 0.0).collect();
    let m = d.len();
    if m == 0 {
        return Err(Error::DegenerateSample("all differences are zero"));
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = average_ranks(&abs);
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(v, _)| **v > 0.0).map(|(_, r)| r).sum();
    let total = (m * (m + 1)) as f64 / 2.0;
    let w = w_plus.min(total - w_plus);

    if m <= WILCOXON_EXACT_MAX {
        // ranks are multiples of 1/2, so doubled ranks are integers
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let max: usize = doubled.iter().sum();
        let mut ways = vec![0u64; max + 1];
        ways[0] = 1;
        for &r in &doubled {
            for s in (r..=max).rev() {
                ways[s] += ways[s - r];
            }
        }
        let w2 = (w * 2.0).round() as usize;
        let extreme: u64 = ways.iter().enumerate().filter(|(s, _)| (*s).min(max - s) <= w2).map(|(_, c)| c).sum();
        let p = extreme as f64 / 2f64.powi(m as i32);
        return Ok(TestResult { statistic: w, p_value: p.min(1.0), n: m, exact: true });
    }

    let mut tie_term = 0.0;
    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let mf = m as f64;
    let var = mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0;
    let z = (w - total / 2.0) / var.sqrt();
    let p = 2.0 * Normal::new(0.0, 1.0).expect("standard normal").cdf(z);
    Ok(TestResult { statistic: w, p_value: p.min(1.0), n: m, exact: false })
}
