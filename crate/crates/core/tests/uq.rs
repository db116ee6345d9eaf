use std::collections::BTreeMap;

use rand::Rng;
use uqd_core::kinematics::{synth_generate, Component, SynthConfig};
use uqd_core::numeric::{train, ModelConfig, TrainedModel};
use uqd_core::rng;
use uqd_core::uq::{class_centroids, distance_scores, mcp, nn_distance_confidence, uq_sweep, Diagnostics};
use uqd_core::LabeledData;

fn small_data() -> LabeledData {
    let cfg = SynthConfig { n_stroke_subjects: 6, n_healthy_subjects: 4, trials_per_subject: 6, seed: 11, ..SynthConfig::default() };
    synth_generate(&cfg).unwrap().dataset.labeled(Component::Rom)
}

fn small_model(data: &LabeledData) -> TrainedModel {
    let cfg = ModelConfig::with_hidden(data.dim(), &[8], data.class_count, 0.05).epochs(200).seed(2);
    train(data, &cfg).unwrap()
}

// hidden activation recomputed from the raw weights
fn hidden_by_hand(model: &TrainedModel, x: &[f64]) -> Vec<f64> {
    let z = model.prepare(x).unwrap();
    let layer = &model.network.layers[0];
    (0..layer.rows)
        .map(|r| {
            let s: f64 = (0..layer.cols).map(|c| layer.weights[r * layer.cols + c] * z[c]).sum::<f64>() + layer.bias[r];
            s.max(0.0)
        })
        .collect()
}

#[test]
fn centroids_match_groupby_mean() {
    let data = small_data();
    let model = small_model(&data);
    let centroids = class_centroids(&model, &data.features, &data.labels, 1).unwrap();

    let mut groups: BTreeMap<usize, Vec<Vec<f64>>> = BTreeMap::new();
    for (x, &y) in data.features.iter().zip(&data.labels) {
        groups.entry(y).or_default().push(hidden_by_hand(&model, x));
    }
    assert_eq!(groups.len(), centroids.vectors.len());
    for (class, rows) in groups {
        for (j, &got) in centroids.vectors[class].iter().enumerate() {
            let want = rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64;
            assert!((got - want).abs() < 1e-9, "class {class} unit {j}: {got} vs {want}");
        }
    }
}

#[test]
fn distance_confidence_matches_hand_formula() {
    let data = small_data();
    let model = small_model(&data);
    let centroids = class_centroids(&model, &data.features, &data.labels, 1).unwrap();
    for x in data.features.iter().take(20) {
        let h = hidden_by_hand(&model, x);
        let d: Vec<f64> = centroids.vectors.iter().map(|c| c.iter().zip(&h).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt()).collect();
        let dmax = d.iter().cloned().fold(0.0, f64::max);
        let e: Vec<f64> = d.iter().map(|v| (1.0 - v / dmax).exp()).collect();
        let total: f64 = e.iter().sum();
        let r = nn_distance_confidence(&model, x, &centroids).unwrap();
        let scores = r.per_class_scores.unwrap();
        for (s, ei) in scores.iter().zip(&e) {
            assert!((s - ei / total).abs() < 1e-9);
        }
        let Diagnostics::Distances { distances, .. } = r.raw else { panic!("distance diagnostics expected") };
        for (a, b) in distances.iter().zip(&d) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn scores_sum_to_one_on_random_inputs() {
    let mut rng = rng::seeded(99);
    for _ in 0..1000 {
        let k = rng.random_range(2..8);
        let d: Vec<f64> = (0..k).map(|_| rng.random_range(0.0..50.0)).collect();
        let s = distance_scores(&d).unwrap();
        assert!((s.scores.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        assert!(s.scores.iter().all(|v| *v > 0.0));
    }
}

fn f1_and_accuracy(preds: &[usize], labels: &[usize], k: usize) -> (f64, f64) {
    let mut f1 = 0.0;
    for c in 0..k {
        let tp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l == c).count() as f64;
        let fp = preds.iter().zip(labels).filter(|(p, l)| **p == c && **l != c).count() as f64;
        let fneg = preds.iter().zip(labels).filter(|(p, l)| **p != c && **l == c).count() as f64;
        f1 += if tp == 0.0 { 0.0 } else { 2.0 * tp / (2.0 * tp + fp + fneg) };
    }
    let acc = preds.iter().zip(labels).filter(|(p, l)| p == l).count() as f64 / labels.len() as f64;
    (f1 / k as f64, acc)
}

#[test]
fn sweep_on_trained_model() {
    let data = small_data();
    let model = small_model(&data);
    let mut preds = Vec::new();
    let mut confs = Vec::new();
    for x in &data.features {
        let (c, p) = mcp(&model.predict_proba(x).unwrap()).unwrap();
        preds.push(c);
        confs.push(p.min(0.999));
    }
    let sweep = uq_sweep(&preds, &confs, &data.labels, data.class_count, 0.05).unwrap();
    assert_eq!(sweep.rows.len(), 21);
    let (f1, acc) = f1_and_accuracy(&preds, &data.labels, data.class_count);
    assert_eq!(sweep.rows[0].threshold, 0.0);
    assert_eq!(sweep.rows[0].replaced, 0);
    assert!((sweep.rows[0].macro_f1 - f1).abs() < 1e-12);
    assert!((sweep.rows[0].accuracy - acc).abs() < 1e-12);
    assert!(sweep.rows.windows(2).all(|w| w[1].accuracy >= w[0].accuracy));
    assert_eq!(sweep.rows[20].accuracy, 1.0);

    // each row recomputed by replacing low-confidence cases with the truth
    for row in &sweep.rows {
        let replaced: Vec<usize> =
            preds.iter().zip(&confs).zip(&data.labels).map(|((p, c), l)| if *c < row.threshold { *l } else { *p }).collect();
        let (f1, acc) = f1_and_accuracy(&replaced, &data.labels, data.class_count);
        assert!((row.macro_f1 - f1).abs() < 1e-12);
        assert!((row.accuracy - acc).abs() < 1e-12);
    }
}
