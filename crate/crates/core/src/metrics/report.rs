//! Grouped reliance report with per-metric condition comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::stats::{ks_normality, paired_t, wilcoxon_signed_rank, KsResult};
use super::{reliance_breakdown, Condition, DecisionRecord, Group, RelianceBreakdown};
use crate::error::{Error, Result};

/// Metric rows, in display order.
pub const ROW_LABELS: [&str; 8] =
    ["Right", "agree-Right", "reject-Wrong", "agree-Wrong", "reject-Right", "Changed", "ChangedRight", "ChangedWrong"];

const NORMALITY_ALPHA: f64 = 0.05;

fn indicator(label: &str, r: &DecisionRecord) -> bool {
    match label {
        "Right" => r.right(),
        "agree-Right" => r.agreed() && r.ai_correct(),
        "reject-Wrong" => !r.agreed() && !r.ai_correct(),
        "agree-Wrong" => r.agreed() && !r.ai_correct(),
        "reject-Right" => !r.agreed() && r.ai_correct(),
        "Changed" => r.changed(),
        "ChangedRight" => r.changed() && r.right(),
        "ChangedWrong" => r.changed() && !r.right(),
        _ => unreachable!("unknown metric label {label}"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub group: Option<Group>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Unit {
    Cases,
    Participants,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestKind {
    PairedT,
    Wilcoxon,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupReport {
    pub group: Group,
    pub condition: Condition,
    pub n_records: usize,
    pub n_participants: usize,
    pub breakdown: RelianceBreakdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub group: Group,
    /// A row label, or `Human vs Human+AI` for the before/after comparison.
    pub metric: String,
    /// Populated for the before/after comparison only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub condition: Option<Condition>,
    pub unit: Unit,
    pub left: String,
    pub right: String,
    pub left_value: f64,
    pub right_value: f64,
    pub n: usize,
    pub paired: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub normality: Option<KsResult>,
    pub test: TestKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub statistic: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

/// Share of right answers before and after seeing the AI output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionDelta {
    pub group: Group,
    pub condition: Condition,
    pub human: f64,
    pub human_ai: f64,
    pub delta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub filter: ReportFilter,
    pub row_labels: Vec<String>,
    pub groups: Vec<GroupReport>,
    pub deltas: Vec<ConditionDelta>,
    pub comparisons: Vec<Comparison>,
    pub notes: Vec<String>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Normality of the paired differences decides between the t-test and the
/// signed-rank test.
fn run_paired(left: &[f64], right: &[f64]) -> (Option<KsResult>, TestKind, Option<(f64, f64)>, Option<String>) {
    let diffs: Vec<f64> = left.iter().zip(right).map(|(a, b)| a - b).collect();
    let normality = ks_normality(&diffs).ok();
    if normality.is_some_and(|k| k.p_value >= NORMALITY_ALPHA) {
        if let Ok(t) = paired_t(left, right) {
            return (normality, TestKind::PairedT, Some((t.statistic, t.p_value)), None);
        }
    }
    match wilcoxon_signed_rank(left, right) {
        Ok(w) => (normality, TestKind::Wilcoxon, Some((w.statistic, w.p_value)), None),
        Err(_) => (normality, TestKind::None, None, Some("no non-zero differences".into())),
    }
}

#[allow(clippy::too_many_arguments)]
fn comparison(
    group: Group,
    metric: &str,
    condition: Option<Condition>,
    unit: Unit,
    sides: (&str, &str),
    left: &[f64],
    right: &[f64],
    paired: bool,
) -> Comparison {
    let mut c = Comparison {
        group,
        metric: metric.to_string(),
        condition,
        unit,
        left: sides.0.to_string(),
        right: sides.1.to_string(),
        left_value: mean(left),
        right_value: mean(right),
        n: left.len().min(right.len()),
        paired,
        normality: None,
        test: TestKind::None,
        statistic: None,
        p_value: None,
        warning: None,
    };
    if !paired {
        c.warning = Some(format!("unequal sizes ({} vs {}); paired test skipped", left.len(), right.len()));
        return c;
    }
    let (normality, test, result, warning) = run_paired(left, right);
    c.normality = normality;
    c.test = test;
    c.statistic = result.map(|r| r.0);
    c.p_value = result.map(|r| r.1);
    c.warning = warning;
    c
}

type Cell<'a> = BTreeMap<&'a str, Vec<&'a DecisionRecord>>;

/// Records of one (group, condition) split by participant, each
/// participant's records in start order.
fn by_participant<'a>(records: &[&'a DecisionRecord]) -> Cell<'a> {
    let mut map: Cell<'a> = BTreeMap::new();
    for r in records {
        map.entry(r.session_id.as_str()).or_default().push(r);
    }
    for list in map.values_mut() {
        list.sort_by(|a, b| a.started_at.cmp(&b.started_at).then(a.case_id.cmp(&b.case_id)));
    }
    map
}

fn ratio(list: &[&DecisionRecord], f: impl Fn(&DecisionRecord) -> bool) -> f64 {
    list.iter().filter(|r| f(r)).count() as f64 / list.len() as f64
}

fn bit(b: bool) -> f64 {
    f64::from(u8::from(b))
}

pub fn report(records: &[DecisionRecord], filter: ReportFilter) -> Result<MetricsReport> {
    let selected: Vec<&DecisionRecord> = records
        .iter()
        .filter(|r| filter.group.is_none_or(|g| r.group == g) && filter.condition.is_none_or(|c| r.condition == c))
        .collect();
    if selected.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut cells: BTreeMap<(Group, Condition), Vec<&DecisionRecord>> = BTreeMap::new();
    for r in &selected {
        cells.entry((r.group, r.condition)).or_default().push(r);
    }

    let mut groups = Vec::new();
    let mut deltas = Vec::new();
    let mut comparisons = Vec::new();
    for (&(group, condition), list) in &cells {
        let owned: Vec<DecisionRecord> = list.iter().map(|r| (*r).clone()).collect();
        let breakdown = reliance_breakdown(&owned)?;
        let participants = by_participant(list);
        groups.push(GroupReport { group, condition, n_records: list.len(), n_participants: participants.len(), breakdown });
        deltas.push(ConditionDelta {
            group,
            condition,
            human: breakdown.initial_right_ratio,
            human_ai: breakdown.right_ratio,
            delta: breakdown.right_ratio - breakdown.initial_right_ratio,
        });

        let sides = ("human", "human_ai");
        let before: Vec<f64> = participants.values().map(|l| ratio(l, DecisionRecord::initially_right)).collect();
        let after: Vec<f64> = participants.values().map(|l| ratio(l, DecisionRecord::right)).collect();
        comparisons.push(comparison(group, "Human vs Human+AI", Some(condition), Unit::Participants, sides, &before, &after, true));
        let before: Vec<f64> = list.iter().map(|r| bit(r.initially_right())).collect();
        let after: Vec<f64> = list.iter().map(|r| bit(r.right())).collect();
        comparisons.push(comparison(group, "Human vs Human+AI", Some(condition), Unit::Cases, sides, &before, &after, true));
    }

    for group in Group::ALL {
        let (Some(num), Some(dist)) = (cells.get(&(group, Condition::Numerical)), cells.get(&(group, Condition::Distance))) else {
            continue;
        };
        let (pn, pd) = (by_participant(num), by_participant(dist));
        let same_people = pn.keys().eq(pd.keys());
        let same_counts = same_people && pn.iter().all(|(k, v)| pd[k].len() == v.len());
        let sides = (Condition::Numerical.as_str(), Condition::Distance.as_str());
        for label in ROW_LABELS {
            let left: Vec<f64> = pn.values().map(|l| ratio(l, |r| indicator(label, r))).collect();
            let right: Vec<f64> = pd.values().map(|l| ratio(l, |r| indicator(label, r))).collect();
            comparisons.push(comparison(group, label, None, Unit::Participants, sides, &left, &right, same_people));
            let left: Vec<f64> = pn.values().flatten().map(|r| bit(indicator(label, r))).collect();
            let right: Vec<f64> = pd.values().flatten().map(|r| bit(indicator(label, r))).collect();
            comparisons.push(comparison(group, label, None, Unit::Cases, sides, &left, &right, same_counts));
        }
    }

    Ok(MetricsReport {
        filter,
        row_labels: ROW_LABELS.iter().map(|s| s.to_string()).collect(),
        groups,
        deltas,
        comparisons,
        notes: vec![
            "normality: one-sample Kolmogorov-Smirnov against a normal with estimated mean and sd (asymptotic p, conservative)".into(),
            "tests: paired t when differences look normal (p >= 0.05), Wilcoxon signed-rank otherwise".into(),
            "unit of analysis: each comparison is reported per participant and per case".into(),
            "cases-unit condition comparisons pair each participant's cases in start order".into(),
        ],
    })
}

impl MetricsReport {
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let header: Vec<String> = self.groups.iter().map(|g| format!("{}/{}", g.group.as_str(), g.condition.as_str())).collect();
        let width = header.iter().map(String::len).max().unwrap_or(0).max(10);
        let _ = write!(out, "{:<14}", "metric");
        for h in &header {
            let _ = write!(out, "  {h:>width$}");
        }
        out.push('\n');
        for label in ROW_LABELS {
            let _ = write!(out, "{label:<14}");
            for g in &self.groups {
                let v = g.breakdown.metric(label).expect("known label") * 100.0;
                let _ = write!(out, "  {v:>width$.2}");
            }
            out.push('\n');
        }
        for (name, f) in [
            ("Duration(s)", (|g: &GroupReport| format!("{:.1}", g.breakdown.mean_duration_seconds)) as fn(&GroupReport) -> String),
            ("records", |g: &GroupReport| g.n_records.to_string()),
            ("participants", |g: &GroupReport| g.n_participants.to_string()),
        ] {
            let _ = write!(out, "{name:<14}");
            for g in &self.groups {
                let _ = write!(out, "  {:>width$}", f(g));
            }
            out.push('\n');
        }
        out.push_str("\nHuman vs Human+AI (right %)\n");
        for d in &self.deltas {
            let _ = writeln!(
                out,
                "{}/{}  human {:.2}  human+ai {:.2}  delta {:+.2}",
                d.group.as_str(),
                d.condition.as_str(),
                d.human * 100.0,
                d.human_ai * 100.0,
                d.delta * 100.0
            );
        }
        out.push_str("\ncomparisons\n");
        for c in &self.comparisons {
            let cond = c.condition.map(|c| format!("/{}", c.as_str())).unwrap_or_default();
            let unit = match c.unit {
                Unit::Cases => "cases",
                Unit::Participants => "participants",
            };
            let test = match c.test {
                TestKind::PairedT => "paired_t",
                TestKind::Wilcoxon => "wilcoxon",
                TestKind::None => "-",
            };
            let _ = write!(
                out,
                "{}{cond}  {}  {unit}  {} {:.4} vs {} {:.4}  n={}  {test}",
                c.group.as_str(),
                c.metric,
                c.left,
                c.left_value,
                c.right,
                c.right_value,
                c.n
            );
            if let (Some(s), Some(p)) = (c.statistic, c.p_value) {
                let _ = write!(out, "  stat={s:.4} p={p:.4}");
            }
            if let Some(w) = &c.warning {
                let _ = write!(out, "  [{w}]");
            }
            out.push('\n');
        }
        out.push('\n');
        for n in &self.notes {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
