//! The delegation study built on a labelled dataset: a three-way subject
//! split, the classifier and its confidences, counterbalanced case
//! assignment, per-case explanation bundles, and simulated participants.
//!
//! Post-stroke subjects are split into an assignment pool (cases shown to
//! participants), a held-out set (threshold exploration statistics), and the
//! training set together with every healthy subject.

use std::collections::BTreeMap;

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::data::LabeledData;
use crate::delegation::{
    default_threshold, delegation_stats, partition_cases, DefaultThreshold, DelegationPlan, DelegationStats, Override, PlanSource,
};
use crate::error::{Error, Result};
use crate::explain::{
    explain_prediction, nearest, neighbor_info, project, top_k_features, EmbedMethod, EmbeddingMap, FeatureAttribution,
    FeatureRange, Metric, ShapMode, TsneParams,
};
use crate::kinematics::{
    extract_comp_features_for_arm, extract_rom_features_for_arm, feature_traces, Component, Dataset, FeatureTrace, JointSequence,
    Side, Status,
};
use crate::metrics::{Condition, DecisionRecord, Group};
use crate::numeric::{cross_validate, loso_folds, train, ModelConfig, TrainedModel};
use crate::rng;
use crate::uq::{class_centroids, mcp, nn_distance_confidence, Centroids, Diagnostics};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudyConfig {
    pub component: Component,
    pub hidden: Vec<usize>,
    pub learning_rate: f64,
    pub epochs: usize,
    pub seed: u64,
    pub pool_subjects: usize,
    pub heldout_subjects: usize,
    /// Layer whose activations feed the distance confidence and embedding.
    pub layer_index: usize,
    pub threshold_step: f64,
    pub neighbors: usize,
    pub embed_method: EmbedMethod,
    pub shap_mode: ShapMode,
    pub radar_features: usize,
    pub correct_per_condition: usize,
    pub wrong_per_condition: usize,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            component: Component::Rom,
            hidden: vec![32],
            learning_rate: 0.05,
            epochs: 500,
            seed: 1,
            pool_subjects: 7,
            heldout_subjects: 3,
            layer_index: 1,
            threshold_step: 0.05,
            neighbors: 10,
            embed_method: EmbedMethod::Tsne,
            shap_mode: ShapMode::Exact,
            radar_features: 3,
            correct_per_condition: 10,
            wrong_per_condition: 4,
        }
    }
}

impl StudyConfig {
    pub fn classifier(&self, input: usize, classes: usize) -> ModelConfig {
        ModelConfig::with_hidden(input, &self.hidden, classes, self.learning_rate).epochs(self.epochs).seed(self.seed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectSplit {
    pub train: Vec<String>,
    pub heldout: Vec<String>,
    pub pool: Vec<String>,
}

/// Shuffle the post-stroke subjects with `seed`; the first `pool` go to the
/// assignment pool, the next `heldout` to the held-out set, the rest (and all
/// healthy subjects) to training.
pub fn split_subjects(dataset: &Dataset, pool: usize, heldout: usize, seed: u64) -> Result<SubjectSplit> {
    let mut stroke: Vec<String> = Vec::new();
    let mut healthy: Vec<String> = Vec::new();
    for c in &dataset.cases {
        let list = if c.status == Status::PostStroke { &mut stroke } else { &mut healthy };
        if !list.contains(&c.subject_id) {
            list.push(c.subject_id.clone());
        }
    }
    stroke.sort();
    healthy.sort();
    if pool == 0 || heldout == 0 || pool + heldout > stroke.len() {
        return Err(Error::InsufficientSubjects(stroke.len()));
    }
    stroke.shuffle(&mut rng::seeded(seed));
    let mut pool_ids: Vec<String> = stroke[..pool].to_vec();
    let mut heldout_ids: Vec<String> = stroke[pool..pool + heldout].to_vec();
    let mut train_ids: Vec<String> = stroke[pool + heldout..].to_vec();
    train_ids.extend(healthy);
    pool_ids.sort();
    heldout_ids.sort();
    train_ids.sort();
    Ok(SubjectSplit { train: train_ids, heldout: heldout_ids, pool: pool_ids })
}

/// Model confidences for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCase {
    pub case_id: String,
    pub index: usize,
    pub truth: usize,
    pub predicted: usize,
    pub probabilities: Vec<f64>,
    pub confidence_numerical: f64,
    pub distance: DistanceConfidence,
}

impl ScoredCase {
    pub fn correct(&self) -> bool {
        self.predicted == self.truth
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceConfidence {
    pub predicted_class: usize,
    pub confidence: f64,
    pub per_class_scores: Vec<f64>,
    pub distances: Vec<f64>,
    pub max_distance: f64,
    pub degenerate: bool,
}

/// Split, classifier, and confidences: everything needed for delegation.
#[derive(Debug, Clone)]
pub struct StudyModel {
    pub config: StudyConfig,
    pub dataset: Dataset,
    pub split: SubjectSplit,
    pub train_indices: Vec<usize>,
    pub model: TrainedModel,
    pub centroids: Centroids,
    pub heldout: Vec<ScoredCase>,
    pub pool: Vec<ScoredCase>,
    pub default_threshold: DefaultThreshold,
}

fn indices_for(dataset: &Dataset, subjects: &[String]) -> Vec<usize> {
    dataset.cases.iter().enumerate().filter(|(_, c)| subjects.contains(&c.subject_id)).map(|(i, _)| i).collect()
}

impl StudyModel {
    pub fn build(dataset: Dataset, config: StudyConfig) -> Result<Self> {
        let split = split_subjects(&dataset, config.pool_subjects, config.heldout_subjects, config.seed)?;
        let labeled = dataset.labeled(config.component);
        let train_indices = indices_for(&dataset, &split.train);
        let train_data = labeled.subset(&train_indices);
        let model = train(&train_data, &config.classifier(labeled.dim(), labeled.class_count))?;
        Self::with_model(dataset, config, split, train_indices, model)
    }

    /// Use an already trained classifier (it should not have seen the pool
    /// or held-out subjects).
    pub fn with_model(dataset: Dataset, config: StudyConfig, split: SubjectSplit, train_indices: Vec<usize>, model: TrainedModel) -> Result<Self> {
        let labeled = dataset.labeled(config.component);
        if model.input_dim() != labeled.dim() {
            return Err(Error::InputShape { expected: labeled.dim(), got: model.input_dim() });
        }
        let train_data = labeled.subset(&train_indices);
        let centroids = class_centroids(&model, &train_data.features, &train_data.labels, config.layer_index)?;
        let score = |indices: Vec<usize>| -> Result<Vec<ScoredCase>> {
            indices.into_iter().map(|i| score_case(&dataset, &labeled, &model, &centroids, i)).collect()
        };
        let heldout = score(indices_for(&dataset, &split.heldout))?;
        let pool = score(indices_for(&dataset, &split.pool))?;
        let (conf, preds, labels) = columns(&heldout);
        let default_threshold = default_threshold(&conf, &preds, &labels, config.threshold_step)?;
        Ok(Self { config, dataset, split, train_indices, model, centroids, heldout, pool, default_threshold })
    }

    pub fn heldout_stats(&self, tau: f64) -> Result<DelegationStats> {
        let (conf, preds, labels) = columns(&self.heldout);
        delegation_stats(&conf, &preds, &labels, tau)
    }

    pub fn pool_case(&self, case_id: &str) -> Option<&ScoredCase> {
        self.pool.iter().find(|c| c.case_id == case_id)
    }

    /// Delegation plan over `case_ids` (pool cases) by numerical confidence.
    pub fn plan(&self, case_ids: &[String], tau: f64, source: PlanSource, overrides: &[Override]) -> Result<DelegationPlan> {
        let confidences = case_ids
            .iter()
            .map(|id| self.pool_case(id).map(|c| c.confidence_numerical).ok_or_else(|| Error::UnknownCase(id.clone())))
            .collect::<Result<Vec<f64>>>()?;
        Ok(DelegationPlan {
            threshold: tau,
            source,
            heldout_stats: self.heldout_stats(tau)?,
            partition: partition_cases(case_ids, &confidences, tau, overrides)?,
        })
    }

    /// Counterbalanced assignment: disjoint case sets per condition, each
    /// with the configured numbers of AI-correct and AI-wrong cases; odd
    /// session indices see the conditions in reverse order.
    pub fn assign_cases(&self, seed: u64, session_index: u64) -> Result<Assignment> {
        let mut correct: Vec<&ScoredCase> = self.pool.iter().filter(|c| c.correct()).collect();
        let mut wrong: Vec<&ScoredCase> = self.pool.iter().filter(|c| !c.correct()).collect();
        let (nc, nw) = (self.config.correct_per_condition, self.config.wrong_per_condition);
        if correct.len() < 2 * nc || wrong.len() < 2 * nw {
            return Err(Error::InsufficientCases(format!(
                "need {} AI-correct and {} AI-wrong pool cases, have {} and {}",
                2 * nc,
                2 * nw,
                correct.len(),
                wrong.len()
            )));
        }
        let mut rng = rng::seeded(seed);
        correct.shuffle(&mut rng);
        wrong.shuffle(&mut rng);
        let mut cases = BTreeMap::new();
        for (slot, condition) in Condition::ALL.into_iter().enumerate() {
            let mut ids: Vec<String> = correct[slot * nc..(slot + 1) * nc]
                .iter()
                .chain(&wrong[slot * nw..(slot + 1) * nw])
                .map(|c| c.case_id.clone())
                .collect();
            ids.shuffle(&mut rng);
            cases.insert(condition, ids);
        }
        let condition_order = if session_index % 2 == 0 {
            [Condition::Numerical, Condition::Distance]
        } else {
            [Condition::Distance, Condition::Numerical]
        };
        Ok(Assignment { condition_order, cases })
    }

    /// Deterministic simulated participants, alternating between groups.
    /// Explore participants pick a threshold near the default; participants
    /// follow delegated cases and otherwise agree with the AI some of the
    /// time.
    pub fn simulate_decisions(&self, participants: usize, seed: u64) -> Result<Vec<DecisionRecord>> {
        let epoch = Utc.with_ymd_and_hms(2024, 1, 1, 9, 0, 0).single().expect("valid epoch");
        let k = self.dataset.class_count;
        let mut records = Vec::new();
        for p in 0..participants {
            let session_id = format!("sim-{:03}", p + 1);
            let group = if p % 2 == 0 { Group::Explore } else { Group::NoExplore };
            let assignment = self.assign_cases(rng::derive_seed(seed, p as u64), p as u64)?;
            let mut rng = rng::derived(seed ^ 0x5EED, p as u64);
            let tau = match group {
                Group::NoExplore => self.default_threshold.threshold,
                Group::Explore => {
                    let shift = rng.random_range(-2i32..=2) as f64 * self.config.threshold_step;
                    (self.default_threshold.threshold + shift).clamp(0.0, 1.0)
                }
            };
            let all: Vec<String> = assignment.all_cases();
            let plan = self.plan(&all, tau, PlanSource::UserExplored, &[])?;
            let mut clock: DateTime<Utc> = epoch + Duration::hours(p as i64);
            let skill = rng.random_range(0.5..0.8);
            let trust = rng.random_range(0.5..0.9);
            for condition in assignment.condition_order {
                for case_id in &assignment.cases[&condition] {
                    let case = self.pool_case(case_id).expect("assigned from the pool");
                    let delegated = plan.partition.delegated_ids.contains(case_id);
                    let initial = if rng.random::<f64>() < skill { case.truth } else { (case.truth + rng.random_range(1..k)) % k };
                    let lean = if condition == Condition::Distance && !case.correct() { trust - 0.15 } else { trust };
                    let final_score = if delegated || rng.random::<f64>() < lean { case.predicted } else { initial };
                    let started_at = clock;
                    let seconds = rng.random_range(20..90);
                    let submitted_at = started_at + Duration::seconds(seconds);
                    clock = submitted_at + Duration::seconds(5);
                    records.push(DecisionRecord {
                        session_id: session_id.clone(),
                        case_id: case_id.clone(),
                        condition,
                        group,
                        initial_score: initial,
                        ai_score: case.predicted,
                        final_score,
                        truth: case.truth,
                        delegated,
                        started_at,
                        submitted_at,
                    });
                }
            }
        }
        Ok(records)
    }
}

fn columns(cases: &[ScoredCase]) -> (Vec<f64>, Vec<usize>, Vec<usize>) {
    (
        cases.iter().map(|c| c.confidence_numerical).collect(),
        cases.iter().map(|c| c.predicted).collect(),
        cases.iter().map(|c| c.truth).collect(),
    )
}

fn score_case(dataset: &Dataset, labeled: &LabeledData, model: &TrainedModel, centroids: &Centroids, i: usize) -> Result<ScoredCase> {
    let x = &labeled.features[i];
    let probabilities = model.predict_proba(x)?;
    let (predicted, confidence_numerical) = mcp(&probabilities)?;
    let r = nn_distance_confidence(model, x, centroids)?;
    let Diagnostics::Distances { distances, max_distance, degenerate, .. } = r.raw else {
        unreachable!("distance confidence carries distance diagnostics")
    };
    Ok(ScoredCase {
        case_id: dataset.cases[i].id(),
        index: i,
        truth: labeled.labels[i],
        predicted,
        probabilities,
        confidence_numerical,
        distance: DistanceConfidence {
            predicted_class: r.predicted_class,
            confidence: r.confidence,
            per_class_scores: r.per_class_scores.unwrap_or_default(),
            distances,
            max_distance,
            degenerate,
        },
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub condition_order: [Condition; 2],
    pub cases: BTreeMap<Condition, Vec<String>>,
}

impl Assignment {
    /// Case ids in presentation order.
    pub fn all_cases(&self) -> Vec<String> {
        self.condition_order.iter().flat_map(|c| self.cases[c].iter().cloned()).collect()
    }

    pub fn condition_of(&self, case_id: &str) -> Option<Condition> {
        self.cases.iter().find(|(_, ids)| ids.iter().any(|c| c == case_id)).map(|(c, _)| *c)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tooltip {
    pub status: Status,
    pub model_acc: f64,
    pub agreement: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedPoint {
    pub case_id: String,
    pub x: f64,
    pub y: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Centroid2d {
    pub class: usize,
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NeighborPayload {
    pub case_id: String,
    pub x: f64,
    pub y: f64,
    pub label: usize,
    pub distance: f64,
    pub tooltip: Tooltip,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Point2 {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingPayload {
    pub method: EmbedMethod,
    pub points: Vec<EmbeddedPoint>,
    pub centroids: Vec<Centroid2d>,
    pub query: Point2,
    pub neighbors: Vec<NeighborPayload>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseBundle {
    pub case_id: String,
    pub condition: Condition,
    pub ai_score: usize,
    pub confidence_numerical: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence_distance: Option<DistanceConfidence>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<EmbeddingPayload>,
    pub radar: Vec<FeatureAttribution>,
    pub traces: Vec<FeatureTrace>,
}

#[derive(Debug, Clone)]
struct Explanation {
    radar: Vec<FeatureAttribution>,
    traces: Vec<FeatureTrace>,
}

/// [`StudyModel`] plus precomputed explanations for every pool case.
#[derive(Debug, Clone)]
pub struct StudyContext {
    pub study: StudyModel,
    pub embedding: EmbeddingMap,
    /// Out-of-fold predictions aligned with the dataset: leave-one-subject-out
    /// within the training subjects, the study model elsewhere.
    pub oof_predictions: Vec<usize>,
    explanations: BTreeMap<String, Explanation>,
}

impl StudyContext {
    pub fn build(dataset: Dataset, sequences: &[JointSequence], config: StudyConfig) -> Result<Self> {
        let study = StudyModel::build(dataset, config)?;
        Self::from_study(study, sequences)
    }

    pub fn from_study(study: StudyModel, sequences: &[JointSequence]) -> Result<Self> {
        let config = &study.config;
        let dataset = &study.dataset;
        let labeled = dataset.labeled(config.component);
        let train_data = labeled.subset(&study.train_indices);

        let mut oof_predictions = Vec::with_capacity(dataset.len());
        for x in &labeled.features {
            oof_predictions.push(study.model.predict(x)?);
        }
        let folds = loso_folds(&train_data.subjects)?;
        let cv = cross_validate(&train_data, &config.classifier(labeled.dim(), labeled.class_count), &folds)?;
        for (&i, &p) in study.train_indices.iter().zip(&cv.oof_predictions) {
            oof_predictions[i] = p;
        }

        let mut members: Vec<usize> = study.train_indices.clone();
        members.extend(study.pool.iter().map(|c| c.index));
        let vectors = members
            .iter()
            .map(|&i| study.model.layer_activation(&labeled.features[i], config.layer_index))
            .collect::<Result<Vec<_>>>()?;
        let ids: Vec<String> = members.iter().map(|&i| dataset.cases[i].id()).collect();
        let labels: Vec<usize> = members.iter().map(|&i| labeled.labels[i]).collect();
        let embedding = project(&vectors, &ids, &labels, labeled.class_count, config.embed_method, &TsneParams::default(), config.seed)?;

        let ranges = FeatureRange::fit(&train_data.features)?;
        let mut background: Vec<Vec<f64>> = study
            .train_indices
            .iter()
            .filter(|&&i| dataset.cases[i].status == Status::PostStroke)
            .map(|&i| labeled.features[i].clone())
            .collect();
        if background.is_empty() {
            background = train_data.features.clone();
        }
        let mut explanations = BTreeMap::new();
        for scored in &study.pool {
            let x = &labeled.features[scored.index];
            let (_, shap) = explain_prediction(&study.model, x, &background, config.shap_mode, config.seed)?;
            let other = unaffected_values(dataset, sequences, config.component, scored.index)?;
            let radar = top_k_features(&shap.values, &labeled.feature_names, x, &other, &ranges, config.radar_features)?;
            let case = &dataset.cases[scored.index];
            let traces = match sequences.iter().find(|s| s.subject_id == case.subject_id && s.trial_id == case.trial_id) {
                Some(seq) => feature_traces(seq)?,
                None => Vec::new(),
            };
            explanations.insert(scored.case_id.clone(), Explanation { radar, traces });
        }
        Ok(Self { study, embedding, oof_predictions, explanations })
    }

    /// Bundle for a pool case. The numerical condition carries no embedding
    /// and no distance confidence.
    pub fn bundle(&self, case_id: &str, condition: Condition, k: Option<usize>) -> Result<CaseBundle> {
        let scored = self.study.pool_case(case_id).ok_or_else(|| Error::UnknownCase(case_id.to_string()))?;
        let explanation = &self.explanations[case_id];
        let (confidence_distance, embedding) = match condition {
            Condition::Numerical => (None, None),
            Condition::Distance => (Some(scored.distance.clone()), Some(self.embedding_payload(case_id, k.unwrap_or(self.study.config.neighbors))?)),
        };
        Ok(CaseBundle {
            case_id: case_id.to_string(),
            condition,
            ai_score: scored.predicted,
            confidence_numerical: scored.confidence_numerical,
            confidence_distance,
            embedding,
            radar: explanation.radar.clone(),
            traces: explanation.traces.clone(),
        })
    }

    fn embedding_payload(&self, case_id: &str, k: usize) -> Result<EmbeddingPayload> {
        let map = &self.embedding;
        let q = map.index_of(case_id).ok_or_else(|| Error::UnknownCase(case_id.to_string()))?;
        let n_train = self.study.train_indices.len();
        let train_points: Vec<Vec<f64>> = map.points[..n_train].iter().map(|p| p.to_vec()).collect();
        let query = map.points[q];
        let found = nearest(&train_points, &query, k, Metric::Euclidean, None)?;
        let component = self.study.config.component;
        let neighbors = found
            .into_iter()
            .map(|n| {
                let id = &map.case_ids[n.index];
                let info = neighbor_info(&self.study.dataset, component, &self.oof_predictions, id, n.distance)?;
                Ok(NeighborPayload {
                    case_id: id.clone(),
                    x: map.points[n.index][0],
                    y: map.points[n.index][1],
                    label: map.labels[n.index],
                    distance: n.distance,
                    tooltip: Tooltip {
                        status: info.status,
                        model_acc: info.model_accuracy_on_subject,
                        agreement: info.annotator_agreement_on_subject,
                    },
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EmbeddingPayload {
            method: map.method,
            points: (0..n_train)
                .map(|i| EmbeddedPoint { case_id: map.case_ids[i].clone(), x: map.points[i][0], y: map.points[i][1], label: map.labels[i] })
                .collect(),
            centroids: map.centroids2d.iter().enumerate().map(|(class, c)| Centroid2d { class, x: c[0], y: c[1] }).collect(),
            query: Point2 { x: query[0], y: query[1] },
            neighbors,
        })
    }
}

/// Unaffected-side feature values for the radar comparison: the mean over
/// the subject's unaffected-side trials, else the opposite arm of the same
/// trial, else the case's own values.
fn unaffected_values(dataset: &Dataset, sequences: &[JointSequence], component: Component, index: usize) -> Result<Vec<f64>> {
    let case = &dataset.cases[index];
    let others: Vec<&[f64]> = dataset
        .cases
        .iter()
        .filter(|c| c.subject_id == case.subject_id && c.side == Side::Unaffected)
        .map(|c| c.features(component))
        .collect();
    if case.side == Side::Affected && !others.is_empty() {
        let d = others[0].len();
        return Ok((0..d).map(|j| others.iter().map(|r| r[j]).sum::<f64>() / others.len() as f64).collect());
    }
    if let Some(seq) = sequences.iter().find(|s| s.subject_id == case.subject_id && s.trial_id == case.trial_id) {
        return match component {
            Component::Rom => extract_rom_features_for_arm(seq, case.arm.other()),
            Component::Comp => extract_comp_features_for_arm(seq, case.arm.other()),
        };
    }
    Ok(case.features(component).to_vec())
}
