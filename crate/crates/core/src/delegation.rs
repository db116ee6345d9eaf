//! Threshold exploration on held-out cases and the split of assigned cases
//! into AI-delegated and human-review sets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::uq::sweep_thresholds;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DelegationStats {
    pub threshold: f64,
    pub n_delegated: usize,
    pub n_total: usize,
    /// `None` when nothing is delegated.
    pub accuracy_on_delegated: Option<f64>,
}

fn check_threshold(tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::InvalidConfig(format!("threshold {tau} outside [0, 1]")));
    }
    Ok(())
}

/// A case is delegated when its confidence is at least `tau`.
pub fn delegation_stats(confidences: &[f64], predictions: &[usize], labels: &[usize], tau: f64) -> Result<DelegationStats> {
    check_threshold(tau)?;
    if confidences.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: confidences.len(), right: predictions.len() });
    }
    if labels.len() != predictions.len() {
        return Err(Error::LengthMismatch { left: predictions.len(), right: labels.len() });
    }
    let mut n_delegated = 0;
    let mut correct = 0;
    for ((&c, &p), &y) in confidences.iter().zip(predictions).zip(labels) {
        if c >= tau {
            n_delegated += 1;
            correct += usize::from(p == y);
        }
    }
    Ok(DelegationStats {
        threshold: tau,
        n_delegated,
        n_total: labels.len(),
        accuracy_on_delegated: (n_delegated > 0).then(|| correct as f64 / n_delegated as f64),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placement {
    Delegated,
    Review,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Override {
    pub case_id: String,
    pub placement: Placement,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlanSource {
    UserExplored,
    Default,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Partition {
    pub delegated_ids: Vec<String>,
    pub review_ids: Vec<String>,
    pub overrides: Vec<Override>,
}

impl Partition {
    pub fn placement(&self, case_id: &str) -> Option<Placement> {
        if self.delegated_ids.iter().any(|c| c == case_id) {
            Some(Placement::Delegated)
        } else if self.review_ids.iter().any(|c| c == case_id) {
            Some(Placement::Review)
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelegationPlan {
    pub threshold: f64,
    pub source: PlanSource,
    pub heldout_stats: DelegationStats,
    #[serde(flatten)]
    pub partition: Partition,
}

/// Threshold split of the assigned cases, then overrides applied in order.
/// Both lists keep the order of `case_ids`.
pub fn partition_cases(case_ids: &[String], confidences: &[f64], tau: f64, overrides: &[Override]) -> Result<Partition> {
    check_threshold(tau)?;
    if case_ids.len() != confidences.len() {
        return Err(Error::LengthMismatch { left: case_ids.len(), right: confidences.len() });
    }
    let mut placement: Vec<Placement> =
        confidences.iter().map(|&c| if c >= tau { Placement::Delegated } else { Placement::Review }).collect();
    for o in overrides {
        let i = case_ids.iter().position(|c| *c == o.case_id).ok_or_else(|| Error::UnknownCase(o.case_id.clone()))?;
        placement[i] = o.placement;
    }
    let pick = |want: Placement| -> Vec<String> {
        case_ids.iter().zip(&placement).filter(|(_, p)| **p == want).map(|(c, _)| c.clone()).collect()
    };
    Ok(Partition { delegated_ids: pick(Placement::Delegated), review_ids: pick(Placement::Review), overrides: overrides.to_vec() })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DefaultThreshold {
    pub threshold: f64,
    pub stats: DelegationStats,
    /// False when no grid threshold delegates at least half the cases.
    pub feasible: bool,
}

/// Grid threshold maximising accuracy on the delegated cases while
/// delegating at least half of them; ties go to the smaller threshold.
pub fn default_threshold(confidences: &[f64], predictions: &[usize], labels: &[usize], step: f64) -> Result<DefaultThreshold> {
    if labels.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut best: Option<(f64, DelegationStats)> = None;
    for tau in sweep_thresholds(step)? {
        let s = delegation_stats(confidences, predictions, labels, tau)?;
        if 2 * s.n_delegated < s.n_total {
            continue;
        }
        let acc = s.accuracy_on_delegated.expect("coverage floor implies a delegated case");
        if best.as_ref().is_none_or(|(a, _)| acc > *a) {
            best = Some((acc, s));
        }
    }
    Ok(match best {
        Some((_, stats)) => DefaultThreshold { threshold: stats.threshold, stats, feasible: true },
        None => DefaultThreshold { threshold: 0.0, stats: delegation_stats(confidences, predictions, labels, 0.0)?, feasible: false },
    })
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;

    use super::*;

    fn ids(n: usize) -> Vec<String> {
        (0..n).map(|i| format!("c{i}")).collect()
    }

    #[test]
    fn stats_examples() {
        let s = delegation_stats(&[0.7, 0.65, 0.3], &[1, 0, 2], &[1, 1, 2], 0.6).unwrap();
        assert_eq!((s.n_delegated, s.accuracy_on_delegated), (2, Some(0.5)));
        let all = delegation_stats(&[0.7, 0.65, 0.3], &[1, 0, 2], &[1, 1, 2], 0.0).unwrap();
        assert_eq!(all.n_delegated, 3);
        assert!((all.accuracy_on_delegated.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        let none = delegation_stats(&[0.7, 0.65, 0.3], &[1, 0, 2], &[1, 1, 2], 0.8).unwrap();
        assert_eq!((none.n_delegated, none.accuracy_on_delegated), (0, None));
        assert!(delegation_stats(&[0.7], &[1, 0], &[1, 0], 0.5).is_err());
        assert!(delegation_stats(&[0.7], &[1], &[1], 1.5).is_err());
    }

    #[test]
    fn partition_with_override() {
        let case_ids = ids(4);
        let p = partition_cases(&case_ids, &[0.9, 0.8, 0.95, 0.7], 0.5, &[]).unwrap();
        assert!(p.review_ids.is_empty());
        let o = Override { case_id: "c1".into(), placement: Placement::Review };
        let p = partition_cases(&case_ids, &[0.9, 0.8, 0.95, 0.7], 0.5, &[o.clone()]).unwrap();
        assert_eq!(p.delegated_ids, vec!["c0", "c2", "c3"]);
        assert_eq!(p.review_ids, vec!["c1"]);
        assert_eq!(p.overrides, vec![o]);
        assert_eq!(p.placement("c1"), Some(Placement::Review));
        let bad = Override { case_id: "zz".into(), placement: Placement::Review };
        assert!(matches!(partition_cases(&case_ids, &[0.9; 4], 0.5, &[bad]), Err(Error::UnknownCase(_))));
    }

    #[test]
    fn fourteen_case_filter() {
        let case_ids = ids(14);
        let conf: Vec<f64> = (0..14).map(|i| ((i * 37) % 100) as f64 / 100.0).collect();
        let p = partition_cases(&case_ids, &conf, 0.4, &[]).unwrap();
        let oracle: Vec<String> = case_ids.iter().zip(&conf).filter(|(_, c)| **c >= 0.4).map(|(i, _)| i.clone()).collect();
        assert_eq!(p.delegated_ids, oracle);
        assert_eq!(p.delegated_ids.len() + p.review_ids.len(), 14);
    }

    #[test]
    fn default_threshold_examples() {
        let conf = [0.9, 0.2, 0.5, 0.7];
        let d = default_threshold(&conf, &[1, 1, 1, 1], &[1, 1, 1, 1], 0.05).unwrap();
        assert_eq!(d.threshold, 0.0);
        assert!(d.feasible);

        // right cases at 0.6..0.9, wrong cases at 0.1..0.35
        let conf = [0.9, 0.8, 0.7, 0.6, 0.35, 0.1];
        let preds = [0, 0, 0, 0, 1, 1];
        let labels = [0; 6];
        let d = default_threshold(&conf, &preds, &labels, 0.05).unwrap();
        assert!((d.threshold - 0.4).abs() < 1e-12, "{}", d.threshold);
        assert_eq!(d.stats.accuracy_on_delegated, Some(1.0));
    }

    #[test]
    fn a_forty_percent_default_is_reachable() {
        let conf = [0.95, 0.8, 0.6, 0.45, 0.39, 0.3, 0.2, 0.1];
        let preds = [0, 0, 0, 0, 1, 1, 0, 1];
        let labels = [0, 0, 0, 0, 0, 0, 0, 0];
        let d = default_threshold(&conf, &preds, &labels, 0.05).unwrap();
        assert!((d.threshold - 0.4).abs() < 1e-12);
    }

    #[test]
    fn ties_prefer_the_smaller_threshold() {
        let d = default_threshold(&[0.5, 0.5], &[0, 1], &[0, 0], 0.05).unwrap();
        assert!(d.feasible);
        assert_eq!(d.threshold, 0.0);
    }

    proptest! {
        #[test]
        fn partition_is_exhaustive_and_disjoint(
            conf in prop::collection::vec(0.0f64..=1.0, 1..30),
            tau in 0.0f64..=1.0,
            flips in prop::collection::vec((0usize..30, any::<bool>()), 0..5),
        ) {
            let case_ids = ids(conf.len());
            let overrides: Vec<Override> = flips
                .iter()
                .map(|(i, d)| Override {
                    case_id: case_ids[i % conf.len()].clone(),
                    placement: if *d { Placement::Delegated } else { Placement::Review },
                })
                .collect();
            let p = partition_cases(&case_ids, &conf, tau, &overrides).unwrap();
            prop_assert_eq!(p.delegated_ids.len() + p.review_ids.len(), conf.len());
            for c in &p.delegated_ids {
                prop_assert!(!p.review_ids.contains(c));
            }
            if overrides.is_empty() {
                for (c, v) in case_ids.iter().zip(&conf) {
                    prop_assert_eq!(p.delegated_ids.contains(c), *v >= tau);
                }
            }
        }

        #[test]
        fn delegated_count_shrinks_with_threshold(
            cases in prop::collection::vec((0.0f64..=1.0, 0usize..3, 0usize..3), 1..30),
            extra in 0.0f64..1.0,
        ) {
            let conf: Vec<f64> = cases.iter().map(|c| c.0).collect();
            let preds: Vec<usize> = cases.iter().map(|c| c.1).collect();
            let labels: Vec<usize> = cases.iter().map(|c| c.2).collect();
            let mut last = usize::MAX;
            for tau in sweep_thresholds(0.05).unwrap() {
                let s = delegation_stats(&conf, &preds, &labels, tau).unwrap();
                prop_assert!(s.n_delegated <= last);
                last = s.n_delegated;
            }
            let tau = 0.5;
            let before = delegation_stats(&conf, &preds, &labels, tau).unwrap();
            let mut c2 = conf.clone();
            c2.push(extra * tau);
            let mut p2 = preds.clone();
            p2.push(0);
            let mut l2 = labels.clone();
            l2.push(1);
            let after = delegation_stats(&c2, &p2, &l2, tau).unwrap();
            prop_assert_eq!(before.accuracy_on_delegated, after.accuracy_on_delegated);

            let d = default_threshold(&conf, &preds, &labels, 0.05).unwrap();
            prop_assert!(sweep_thresholds(0.05).unwrap().contains(&d.threshold));
            if d.feasible {
                prop_assert!(2 * d.stats.n_delegated >= d.stats.n_total);
            }
        }
    }
}
