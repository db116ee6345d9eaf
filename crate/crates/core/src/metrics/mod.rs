//! Reliance metrics over logged decisions and the tests used to compare
//! conditions.

mod report;
mod stats;

pub use report::{report, Comparison, ConditionDelta, GroupReport, MetricsReport, ReportFilter, TestKind, Unit, ROW_LABELS};
pub use stats::{ks_normality, ks_statistic, paired_t, wilcoxon_signed_rank, KsResult, TestResult, WILCOXON_EXACT_MAX};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    Numerical,
    Distance,
}

impl Condition {
    pub const ALL: [Condition; 2] = [Condition::Numerical, Condition::Distance];

    pub fn as_str(self) -> &'static str {
        match self {
            Condition::Numerical => "numerical",
            Condition::Distance => "distance",
        }
    }
}

impl std::str::FromStr for Condition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "numerical" => Ok(Condition::Numerical),
            "distance" => Ok(Condition::Distance),
            other => Err(Error::InvalidConfig(format!("unknown condition `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Group {
    NoExplore,
    Explore,
}

impl Group {
    pub const ALL: [Group; 2] = [Group::NoExplore, Group::Explore];

    pub fn as_str(self) -> &'static str {
        match self {
            Group::NoExplore => "no_explore",
            Group::Explore => "explore",
        }
    }
}

impl std::str::FromStr for Group {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "no_explore" => Ok(Group::NoExplore),
            "explore" => Ok(Group::Explore),
            other => Err(Error::InvalidConfig(format!("unknown group `{other}`"))),
        }
    }
}

/// One participant's assessment of one case under one condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub session_id: String,
    pub case_id: String,
    pub condition: Condition,
    pub group: Group,
    pub initial_score: usize,
    pub ai_score: usize,
    pub final_score: usize,
    pub truth: usize,
    #[serde(default)]
    pub delegated: bool,
    pub started_at: DateTime<Utc>,
    pub submitted_at: DateTime<Utc>,
}

impl DecisionRecord {
    pub fn ai_correct(&self) -> bool {
        self.ai_score == self.truth
    }

    pub fn agreed(&self) -> bool {
        self.final_score == self.ai_score
    }

    pub fn right(&self) -> bool {
        self.final_score == self.truth
    }

    pub fn initially_right(&self) -> bool {
        self.initial_score == self.truth
    }

    pub fn changed(&self) -> bool {
        self.final_score != self.initial_score
    }

    pub fn duration_seconds(&self) -> f64 {
        (self.submitted_at - self.started_at).num_milliseconds() as f64 / 1000.0
    }

    pub fn validate(&self, class_count: usize) -> Result<()> {
        for s in [self.initial_score, self.ai_score, self.final_score, self.truth] {
            if s >= class_count {
                return Err(Error::LabelOutOfRange { label: s, classes: class_count });
            }
        }
        if self.submitted_at < self.started_at {
            return Err(Error::InvalidConfig(format!("decision on {} submitted before it started", self.case_id)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelianceBreakdown {
    pub n: usize,
    pub right_ratio: f64,
    pub agree_right: f64,
    pub reject_wrong: f64,
    pub agree_wrong: f64,
    pub reject_right: f64,
    pub changed: f64,
    pub changed_right: f64,
    pub changed_wrong: f64,
    /// Fraction right before seeing the AI output.
    pub initial_right_ratio: f64,
    /// Mean over participants of their summed per-case durations.
    pub mean_duration_seconds: f64,
}

impl RelianceBreakdown {
    /// Value under one of the [`ROW_LABELS`].
    pub fn metric(&self, label: &str) -> Option<f64> {
        Some(match label {
            "Right" => self.right_ratio,
            "agree-Right" => self.agree_right,
            "reject-Wrong" => self.reject_wrong,
            "agree-Wrong" => self.agree_wrong,
            "reject-Right" => self.reject_right,
            "Changed" => self.changed,
            "ChangedRight" => self.changed_right,
            "ChangedWrong" => self.changed_wrong,
            _ => return None,
        })
    }
}

pub fn reliance_breakdown(records: &[DecisionRecord]) -> Result<RelianceBreakdown> {
    if records.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let n = records.len();
    let ratio = |pred: &dyn Fn(&DecisionRecord) -> bool| records.iter().filter(|r| pred(r)).count() as f64 / n as f64;
    let mut per_participant: Vec<(&str, f64)> = Vec::new();
    for r in records {
        match per_participant.iter_mut().find(|(s, _)| *s == r.session_id) {
            Some((_, total)) => *total += r.duration_seconds(),
            None => per_participant.push((&r.session_id, r.duration_seconds())),
        }
    }
    Ok(RelianceBreakdown {
        n,
        right_ratio: ratio(&|r| r.right()),
        agree_right: ratio(&|r| r.agreed() && r.ai_correct()),
        reject_wrong: ratio(&|r| !r.agreed() && !r.ai_correct()),
        agree_wrong: ratio(&|r| r.agreed() && !r.ai_correct()),
        reject_right: ratio(&|r| !r.agreed() && r.ai_correct()),
        changed: ratio(&|r| r.changed()),
        changed_right: ratio(&|r| r.changed() && r.right()),
        changed_wrong: ratio(&|r| r.changed() && !r.right()),
        initial_right_ratio: ratio(&|r| r.initially_right()),
        mean_duration_seconds: per_participant.iter().map(|(_, t)| t).sum::<f64>() / per_participant.len() as f64,
    })
}

#[cfg(test)]
mod tests {
    use chrono::TimeZone;
    use proptest::prelude::*;

    use super::*;

    pub(crate) fn record(session: &str, case: usize, condition: Condition, scores: (usize, usize, usize, usize), secs: i64) -> DecisionRecord {
        let start = Utc.with_ymd_and_hms(2024, 3, 1, 10, 0, 0).unwrap() + chrono::Duration::seconds(case as i64 * 100);
        DecisionRecord {
            session_id: session.into(),
            case_id: format!("case{case}"),
            condition,
            group: Group::Explore,
            initial_score: scores.0,
            ai_score: scores.1,
            final_score: scores.2,
            truth: scores.3,
            delegated: false,
            started_at: start,
            submitted_at: start + chrono::Duration::seconds(secs),
        }
    }

    #[test]
    fn full_agreement_with_ten_right_four_wrong() {
        let records: Vec<DecisionRecord> = (0..14)
            .map(|i| {
                let ai = if i < 10 { 1 } else { 2 };
                record("p1", i, Condition::Numerical, (1, ai, ai, 1), 30)
            })
            .collect();
        let b = reliance_breakdown(&records).unwrap();
        assert_eq!(b.right_ratio, 10.0 / 14.0);
        assert_eq!(b.agree_wrong, 4.0 / 14.0);
        assert_eq!(b.agree_right, 10.0 / 14.0);
        assert_eq!(b.mean_duration_seconds, 14.0 * 30.0);
    }

    #[test]
    fn six_record_recount() {
        // (initial, ai, final, truth)
        let rows = [(0, 0, 0, 0), (1, 0, 0, 1), (2, 2, 1, 1), (0, 1, 1, 1), (1, 1, 2, 2), (2, 0, 2, 0)];
        let records: Vec<DecisionRecord> =
            rows.iter().enumerate().map(|(i, s)| record(if i < 3 { "a" } else { "b" }, i, Condition::Distance, *s, 10 + i as i64)).collect();
        let b = reliance_breakdown(&records).unwrap();
        // right: rows 0,2,3,4; agree: 0,1,3; ai correct: 0,3,5
        assert_eq!(b.right_ratio, 4.0 / 6.0);
        assert_eq!(b.agree_right, 2.0 / 6.0);
        assert_eq!(b.agree_wrong, 1.0 / 6.0);
        assert_eq!(b.reject_wrong, 2.0 / 6.0);
        assert_eq!(b.reject_right, 1.0 / 6.0);
        // changed: 1,2,3,4 ; changed & right: 2,3,4
        assert_eq!(b.changed, 4.0 / 6.0);
        assert_eq!(b.changed_right, 3.0 / 6.0);
        assert_eq!(b.changed_wrong, 1.0 / 6.0);
        assert_eq!(b.initial_right_ratio, 2.0 / 6.0);
        assert_eq!(b.mean_duration_seconds, ((10 + 11 + 12) + (13 + 14 + 15)) as f64 / 2.0);
    }

    #[test]
    fn no_changes() {
        let records: Vec<DecisionRecord> = (0..5).map(|i| record("p", i, Condition::Numerical, (1, 0, 1, 1), 5)).collect();
        let b = reliance_breakdown(&records).unwrap();
        assert_eq!((b.changed, b.changed_right, b.changed_wrong), (0.0, 0.0, 0.0));
        assert!(reliance_breakdown(&[]).is_err());
    }

    #[test]
    fn validation() {
        let mut r = record("p", 0, Condition::Numerical, (1, 0, 1, 3), 5);
        assert!(r.validate(3).is_err());
        r.truth = 1;
        assert!(r.validate(3).is_ok());
        std::mem::swap(&mut r.started_at, &mut r.submitted_at);
        assert!(r.validate(3).is_err());
    }

    proptest! {
        #[test]
        fn quadrants_partition(rows in prop::collection::vec((0usize..3, 0usize..3, 0usize..3, 0usize..3), 1..40)) {
            let records: Vec<DecisionRecord> = rows.iter().enumerate().map(|(i, s)| record("p", i, Condition::Numerical, *s, 1)).collect();
            let b = reliance_breakdown(&records).unwrap();
            let n = records.len();
            let counts = [b.agree_right, b.reject_wrong, b.agree_wrong, b.reject_right].map(|v| (v * n as f64).round() as usize);
            prop_assert_eq!(counts.iter().sum::<usize>(), n);
            prop_assert!((b.agree_right + b.reject_wrong + b.agree_wrong + b.reject_right - 1.0).abs() <= 1e-12);
            let changed = (b.changed * n as f64).round() as usize;
            let cr = (b.changed_right * n as f64).round() as usize;
            let cw = (b.changed_wrong * n as f64).round() as usize;
            prop_assert_eq!(cr + cw, changed);
        }
    }
}
