//! Seeded synthetic "bring a cup to the mouth" trials.
//!
//! Each trial is driven by a handful of motion parameters: peak shoulder
//! flexion and elbow flexion for range of motion, forward trunk lean and
//! shoulder elevation for compensation. Class `c` moves those parameters a
//! fixed step away from the full, uncompensated motion. All within-class
//! variability (subject offsets, trial jitter, per-frame noise) is divided
//! by `class_separation`, so large separations make classes trivially
//! separable.
//!
//! Healthy actors perform one standard trial and acted-out incorrect trials;
//! a fraction `ood_fraction` of the acted-out trials uses a shifted motion
//! family (sideways abduction with lateral trunk lean).

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::features::{extract_comp_features, extract_rom_features};
use super::{Arm, Case, Dataset, Frame, JointSequence, MotionFamily, Point3, Side, Status};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub n_stroke_subjects: usize,
    pub n_healthy_subjects: usize,
    pub trials_per_subject: usize,
    pub class_count: usize,
    pub class_separation: f64,
    pub ood_fraction: f64,
    pub noise_sd: f64,
    pub annotator_disagreement: f64,
    pub frames_per_trial: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stroke_subjects: 15,
            n_healthy_subjects: 10,
            trials_per_subject: 10,
            class_count: 3,
            class_separation: 1.0,
            ood_fraction: 0.0,
            noise_sd: 0.004,
            annotator_disagreement: 0.1,
            frames_per_trial: 40,
            seed: 7,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if self.n_stroke_subjects == 0 || self.n_healthy_subjects == 0 {
            return bad("subject counts must be at least 1");
        }
        if self.trials_per_subject == 0 {
            return bad("trials per subject must be at least 1");
        }
        if self.class_count < 2 {
            return bad("need at least two classes");
        }
        if !(self.class_separation > 0.0 && self.class_separation.is_finite()) {
            return bad("class separation must be positive");
        }
        if !(0.0..=1.0).contains(&self.ood_fraction) {
            return bad("ood fraction must lie in [0, 1]");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise sd must be positive");
        }
        if !(0.0..=1.0).contains(&self.annotator_disagreement) {
            return bad("annotator disagreement must lie in [0, 1]");
        }
        if self.frames_per_trial < 2 {
            return bad("need at least two frames per trial");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub dataset: Dataset,
    pub sequences: Vec<JointSequence>,
}

// Motion template. Angles in degrees, lengths in metres.
const SHOULDER_FLEX_FULL: f64 = 55.0;
const SHOULDER_FLEX_STEP: f64 = 13.0;
const ELBOW_FLEX_FULL: f64 = 135.0;
const ELBOW_FLEX_STEP: f64 = 28.0;
const LEAN_STEP: f64 = 0.05;
const ELEVATION_STEP: f64 = 0.025;

// Within-class spread at separation 1.
const SHOULDER_JITTER: f64 = 7.0;
const ELBOW_JITTER: f64 = 14.0;
const LEAN_JITTER: f64 = 0.025;
const ELEVATION_JITTER: f64 = 0.012;
const SUBJECT_SPREAD: f64 = 0.5;

struct Body {
    origin: Point3,
    scale: f64,
    upper_arm: f64,
    forearm: f64,
}

#[derive(Clone, Copy)]
struct Motion {
    shoulder_flex: f64,
    elbow_flex: f64,
    lean: f64,
    elevation: f64,
    family: MotionFamily,
}

fn normal(rng: &mut Rng, sd: f64) -> f64 {
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

fn class_motion(rom: usize, comp: usize, spread: f64, subject: &Motion, family: MotionFamily, rng: &mut Rng) -> Motion {
    Motion {
        shoulder_flex: SHOULDER_FLEX_FULL - SHOULDER_FLEX_STEP * rom as f64
            + subject.shoulder_flex
            + normal(rng, SHOULDER_JITTER * spread),
        elbow_flex: ELBOW_FLEX_FULL - ELBOW_FLEX_STEP * rom as f64 + subject.elbow_flex + normal(rng, ELBOW_JITTER * spread),
        lean: LEAN_STEP * comp as f64 + subject.lean + normal(rng, LEAN_JITTER * spread),
        elevation: ELEVATION_STEP * comp as f64 + subject.elevation + normal(rng, ELEVATION_JITTER * spread),
        family,
    }
}

fn lateral(arm: Arm) -> f64 {
    match arm {
        Arm::Left => -1.0,
        Arm::Right => 1.0,
    }
}

/// Upper-arm and forearm directions for shoulder flexion `a` and elbow
/// flexion `b` (degrees). Standard motions stay in the sagittal plane with
/// the hand drifting to the midline; shifted motions abduct sideways.
fn limb_directions(a: f64, b: f64, progress: f64, arm: Arm, family: MotionFamily) -> (Point3, Point3) {
    let (ar, fr) = (a.to_radians(), (a + b).to_radians());
    let side = lateral(arm);
    match family {
        MotionFamily::Standard => {
            let upper = Point3::new(0.0, -ar.cos(), ar.sin());
            let inward = -side * 0.45 * progress;
            let fore = Point3::new(inward, -fr.cos(), fr.sin());
            (upper, fore * (1.0 / fore.norm()))
        }
        MotionFamily::Shifted => {
            let upper = Point3::new(side * ar.sin(), -ar.cos(), 0.1);
            let fore = Point3::new(side * fr.sin() * 0.6, -fr.cos(), 0.3);
            (upper * (1.0 / upper.norm()), fore * (1.0 / fore.norm()))
        }
    }
}

fn build_frames(body: &Body, arm: Arm, motion: &Motion, n_frames: usize, noise: f64, rng: &mut Rng) -> Vec<Frame> {
    let s = body.scale;
    let rest = Motion { shoulder_flex: 5.0, elbow_flex: 75.0, lean: 0.0, elevation: 0.0, family: motion.family };
    (0..n_frames)
        .map(|i| {
            let progress = (std::f64::consts::PI * i as f64 / (n_frames - 1) as f64).sin();
            let lean_dir = match motion.family {
                MotionFamily::Standard => Point3::new(0.0, 0.0, 1.0),
                MotionFamily::Shifted => Point3::new(-lateral(arm), 0.0, 0.2),
            };
            let trunk = lean_dir * (motion.lean * progress * s);
            let spine = body.origin + trunk * 0.3;
            let head = body.origin + Point3::new(0.0, 0.5 * s, 0.0) + trunk * 1.3;
            let mut shoulders = [
                body.origin + Point3::new(-0.18 * s, 0.4 * s, 0.0) + trunk,
                body.origin + Point3::new(0.18 * s, 0.4 * s, 0.0) + trunk,
            ];
            let active = if arm == Arm::Left { 0 } else { 1 };
            shoulders[active] = shoulders[active] + Point3::new(0.0, motion.elevation * progress * s, 0.0);
            let mut elbows = [Point3::default(); 2];
            let mut wrists = [Point3::default(); 2];
            for (k, limb) in [Arm::Left, Arm::Right].into_iter().enumerate() {
                let (a, b, p, fam) = if k == active {
                    (
                        rest.shoulder_flex + (motion.shoulder_flex - rest.shoulder_flex) * progress,
                        rest.elbow_flex + (motion.elbow_flex - rest.elbow_flex) * progress,
                        progress,
                        motion.family,
                    )
                } else {
                    (rest.shoulder_flex, rest.elbow_flex, 0.0, MotionFamily::Standard)
                };
                let (upper, fore) = limb_directions(a, b, p, limb, fam);
                elbows[k] = shoulders[k] + upper * (body.upper_arm * s);
                wrists[k] = elbows[k] + fore * (body.forearm * s);
            }
            let frame = Frame {
                head,
                spine,
                shoulder_left: shoulders[0],
                shoulder_right: shoulders[1],
                elbow_left: elbows[0],
                elbow_right: elbows[1],
                wrist_left: wrists[0],
                wrist_right: wrists[1],
            };
            frame.map(|q| q + Point3::new(normal(rng, noise), normal(rng, noise), normal(rng, noise)))
        })
        .collect()
}

fn second_opinion(label: usize, classes: usize, rate: f64, rng: &mut Rng) -> usize {
    if rng.random::<f64>() >= rate {
        return label;
    }
    if label == 0 {
        1
    } else if label + 1 == classes || rng.random::<bool>() {
        label - 1
    } else {
        label + 1
    }
}

fn clamp_class(v: f64, classes: usize) -> usize {
    v.round().clamp(0.0, (classes - 1) as f64) as usize
}

/// Generate the synthetic dataset and its joint sequences.
pub fn synth_generate(config: &SynthConfig) -> Result<SynthOutput> {
    config.validate()?;
    let mut rng = rng::seeded(config.seed);
    let spread = 1.0 / config.class_separation;
    let noise = config.noise_sd * spread;
    let k = config.class_count;
    let max_class = (k - 1) as f64;

    let mut cases = Vec::new();
    let mut sequences = Vec::new();
    let subjects = (0..config.n_stroke_subjects)
        .map(|i| (format!("S{:02}", i + 1), Status::PostStroke))
        .chain((0..config.n_healthy_subjects).map(|i| (format!("H{:02}", i + 1), Status::Healthy)));

    for (subject_id, status) in subjects {
        let body = Body {
            origin: Point3::new(normal(&mut rng, 0.3), 0.9 + normal(&mut rng, 0.05), 2.0 + normal(&mut rng, 0.2)),
            scale: rng.random_range(0.85..1.15),
            upper_arm: 0.3,
            forearm: 0.27,
        };
        let affected_arm = if rng.random::<bool>() { Arm::Right } else { Arm::Left };
        let offsets = Motion {
            shoulder_flex: normal(&mut rng, SHOULDER_JITTER * SUBJECT_SPREAD * spread),
            elbow_flex: normal(&mut rng, ELBOW_JITTER * SUBJECT_SPREAD * spread),
            lean: normal(&mut rng, LEAN_JITTER * SUBJECT_SPREAD * spread),
            elevation: normal(&mut rng, ELEVATION_JITTER * SUBJECT_SPREAD * spread),
            family: MotionFamily::Standard,
        };
        let severity = rng.random_range(0.0..=max_class);

        for t in 0..config.trials_per_subject {
            let (side, rom, comp, family) = match status {
                Status::PostStroke => {
                    if t % 2 == 0 {
                        let rom = clamp_class(severity + normal(&mut rng, 0.6), k);
                        let comp = clamp_class(severity + normal(&mut rng, 0.8), k);
                        (Side::Affected, rom, comp, MotionFamily::Standard)
                    } else {
                        let comp = usize::from(rng.random::<f64>() < 0.15);
                        (Side::Unaffected, 0, comp, MotionFamily::Standard)
                    }
                }
                Status::Healthy => {
                    if t == 0 {
                        (Side::Affected, 0, 0, MotionFamily::Standard)
                    } else {
                        let rom = rng.random_range(0..k);
                        let comp = rng.random_range(0..k);
                        let family =
                            if rng.random::<f64>() < config.ood_fraction { MotionFamily::Shifted } else { MotionFamily::Standard };
                        (Side::Affected, rom, comp, family)
                    }
                }
            };
            let arm = match side {
                Side::Affected => affected_arm,
                Side::Unaffected => affected_arm.other(),
            };
            let motion = class_motion(rom, comp, spread, &offsets, family, &mut rng);
            let frames = build_frames(&body, arm, &motion, config.frames_per_trial, noise, &mut rng);
            let seq = JointSequence {
                subject_id: subject_id.clone(),
                trial_id: format!("t{:02}", t + 1),
                status,
                side,
                arm,
                frame_rate: 30.0,
                frames,
            };
            let case = Case {
                subject_id: subject_id.clone(),
                trial_id: seq.trial_id.clone(),
                status,
                side,
                arm,
                family,
                rom_features: extract_rom_features(&seq)?,
                comp_features: extract_comp_features(&seq)?,
                rom_label: rom,
                comp_label: comp,
                annotator2_rom_label: Some(second_opinion(rom, k, config.annotator_disagreement, &mut rng)),
                annotator2_comp_label: Some(second_opinion(comp, k, config.annotator_disagreement, &mut rng)),
            };
            cases.push(case);
            sequences.push(seq);
        }
    }
    Ok(SynthOutput { dataset: Dataset::new(k, cases)?, sequences })
}

/// Points far outside the data: the feature mean plus a random direction
/// scaled to `R + multiple * S`, where `R` is the largest distance from the
/// mean to any row and `S` the largest distance between class means. Every
/// returned point is at least `multiple * S` from every row.
pub fn far_ood_points(features: &[Vec<f64>], labels: &[usize], count: usize, multiple: f64, seed: u64) -> Result<Vec<Vec<f64>>> {
    let first = features.first().ok_or(Error::EmptyDataset)?;
    if labels.len() != features.len() {
        return Err(Error::LengthMismatch { left: features.len(), right: labels.len() });
    }
    let d = first.len();
    let n = features.len() as f64;
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row) {
            *m += v / n;
        }
    }
    let dist = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let radius = features.iter().map(|r| dist(r, &mean)).fold(0.0, f64::max);
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sums = vec![vec![0.0; d]; k];
    let mut counts = vec![0.0; k];
    for (row, &y) in features.iter().zip(labels) {
        for (s, v) in sums[y].iter_mut().zip(row) {
            *s += v;
        }
        counts[y] += 1.0;
    }
    let centroids: Vec<Vec<f64>> =
        sums.into_iter().zip(&counts).filter(|(_, c)| **c > 0.0).map(|(s, c)| s.into_iter().map(|v| v / c).collect()).collect();
    let mut separation: f64 = 0.0;
    for i in 0..centroids.len() {
        for j in i + 1..centroids.len() {
            separation = separation.max(dist(&centroids[i], &centroids[j]));
        }
    }
    let reach = radius + multiple * separation;
    let mut rng = rng::seeded(seed);
    Ok((0..count)
        .map(|_| {
            let dir: Vec<f64> = (0..d).map(|_| normal(&mut rng, 1.0)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
            mean.iter().zip(&dir).map(|(m, u)| m + u / norm * reach).collect()
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::super::{load_dataset, save_dataset, Component};
    use super::*;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { n_stroke_subjects: 1, n_healthy_subjects: 1, trials_per_subject: 1, seed, ..SynthConfig::default() }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let a = synth_generate(&small(7)).unwrap();
        let b = synth_generate(&small(7)).unwrap();
        save_dataset(&a.dataset, dir.path().join("a.cases.jsonl")).unwrap();
        save_dataset(&b.dataset, dir.path().join("b.cases.jsonl")).unwrap();
        let ra = std::fs::read(dir.path().join("a.cases.jsonl")).unwrap();
        let rb = std::fs::read(dir.path().join("b.cases.jsonl")).unwrap();
        assert_eq!(ra, rb);
        assert_eq!(a, b);
        assert_ne!(synth_generate(&small(8)).unwrap().dataset, a.dataset);
    }

    /// Nearest-centroid oracle on range-of-motion features at a very large
    /// separation.
    #[test]
    fn huge_separation_is_nearest_centroid_separable() {
        let config = SynthConfig { class_separation: 100.0, n_stroke_subjects: 6, n_healthy_subjects: 4, seed: 3, ..SynthConfig::default() };
        let out = synth_generate(&config).unwrap();
        let data = out.dataset.labeled(Component::Rom);
        let d = data.dim();
        let mut sums = vec![vec![0.0; d]; 3];
        let mut counts = [0usize; 3];
        for (x, &y) in data.features.iter().zip(&data.labels) {
            counts[y] += 1;
            for (s, v) in sums[y].iter_mut().zip(x) {
                *s += v;
            }
        }
        let centroids: Vec<Vec<f64>> = sums
            .iter()
            .zip(counts)
            .filter(|(_, c)| *c > 0)
            .map(|(s, c)| s.iter().map(|v| v / c as f64).collect())
            .collect();
        assert_eq!(centroids.len(), 3);
        // scale each feature by its global range so angles do not dominate
        let lo: Vec<f64> = (0..d).map(|j| data.features.iter().map(|x| x[j]).fold(f64::MAX, f64::min)).collect();
        let hi: Vec<f64> = (0..d).map(|j| data.features.iter().map(|x| x[j]).fold(f64::MIN, f64::max)).collect();
        let dist = |a: &[f64], b: &[f64]| -> f64 {
            (0..d).map(|j| ((a[j] - b[j]) / (hi[j] - lo[j]).max(1e-12)).powi(2)).sum()
        };
        let hits = data
            .features
            .iter()
            .zip(&data.labels)
            .filter(|(x, &y)| {
                let best = (0..3).min_by(|&i, &j| dist(x, &centroids[i]).total_cmp(&dist(x, &centroids[j]))).unwrap();
                best == y
            })
            .count();
        assert_eq!(hits, data.len());
    }

    #[test]
    fn far_points_keep_their_distance() {
        let out = synth_generate(&SynthConfig { seed: 3, ..SynthConfig::default() }).unwrap();
        let data = out.dataset.labeled(Component::Rom);
        let far = far_ood_points(&data.features, &data.labels, 20, 5.0, 1).unwrap();
        let mut sep: f64 = 0.0;
        let k = data.class_count;
        let means: Vec<Vec<f64>> = (0..k)
            .map(|c| {
                let rows: Vec<&Vec<f64>> = data.features.iter().zip(&data.labels).filter(|(_, y)| **y == c).map(|(r, _)| r).collect();
                (0..data.dim()).map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / rows.len() as f64).collect()
            })
            .collect();
        for a in &means {
            for b in &means {
                sep = sep.max(a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt());
            }
        }
        for p in &far {
            for r in &data.features {
                let d = p.iter().zip(r).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
                assert!(d >= 5.0 * sep - 1e-9);
            }
        }
    }

    #[test]
    fn ood_flags_follow_the_fraction() {
        let none = synth_generate(&SynthConfig { ood_fraction: 0.0, ..SynthConfig::default() }).unwrap();
        assert!(none.dataset.cases.iter().all(|c| c.family == MotionFamily::Standard));
        let some = synth_generate(&SynthConfig { ood_fraction: 0.5, ..SynthConfig::default() }).unwrap();
        let shifted: Vec<&Case> = some.dataset.cases.iter().filter(|c| c.family == MotionFamily::Shifted).collect();
        assert!(!shifted.is_empty());
        assert!(shifted.iter().all(|c| c.status == Status::Healthy && c.trial_id != "t01"));
    }

    #[test]
    fn default_layout_matches_subject_design() {
        let out = synth_generate(&SynthConfig::default()).unwrap();
        assert_eq!(out.dataset.len(), 25 * 10);
        assert_eq!(out.sequences.len(), out.dataset.len());
        let data = out.dataset.labeled(Component::Comp);
        assert_eq!(crate::numeric::loso_folds(&data.subjects).unwrap().len(), 25);
        for k in 0..3 {
            assert!(data.labels.contains(&k), "class {k} missing");
        }
    }

    #[test]
    fn dataset_file_round_trip_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&SynthConfig { n_stroke_subjects: 2, n_healthy_subjects: 1, trials_per_subject: 3, ..SynthConfig::default() }).unwrap();
        let path = dir.path().join("d.cases.jsonl");
        save_dataset(&out.dataset, &path).unwrap();
        assert_eq!(load_dataset(&path, 3).unwrap(), out.dataset);

        let text = std::fs::read_to_string(&path).unwrap();
        let truncated = &text[..text.len() - 40];
        std::fs::write(&path, truncated).unwrap();
        match load_dataset(&path, 3) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 9),
            other => panic!("expected parse error, got {other:?}"),
        }

        std::fs::write(&path, text.replacen("\"rom_label\":", "\"rom_label\":3,\"x\":", 1)).unwrap();
        match load_dataset(&path, 3) {
            Err(e @ Error::LabelOutOfRange { label: 3, classes: 3 }) => assert!(e.to_string().contains("label out of range")),
            other => panic!("expected label error, got {other:?}"),
        }

        std::fs::write(&path, text.replacen("\"schema_version\":1", "\"schema_version\":2", 1)).unwrap();
        assert!(matches!(load_dataset(&path, 3), Err(Error::SchemaVersion(2))));
    }

    #[test]
    fn sequences_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let out = synth_generate(&small(2)).unwrap();
        let path = dir.path().join("d.frames.jsonl");
        super::super::save_sequences(&out.sequences, &path).unwrap();
        assert_eq!(super::super::load_sequences(&path).unwrap(), out.sequences);
    }
}
