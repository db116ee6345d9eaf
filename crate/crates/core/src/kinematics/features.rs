//! Range-of-motion and compensation features.
//!
//! Distances are divided by the torso length (head to spine at frame 0), so
//! every feature is invariant to global translation and uniform scaling.
//! Per-frame quantities are reduced over the trial with `min` for distances
//! to the target and `max` for angles and displacements.

use serde::{Deserialize, Serialize};

use super::{Arm, Frame, JointSequence, Point3};
use crate::error::{Error, Result};

pub const FEATURE_SCHEMA_VERSION: u32 = 1;

pub const ROM_FEATURES: [&str; 11] = [
    "elbow_flexion_max_deg",
    "shoulder_flexion_max_deg",
    "elbow_extension_max_deg",
    "head_wrist_dist_min",
    "head_elbow_dist_min",
    "head_wrist_dx_min",
    "head_wrist_dy_min",
    "head_wrist_dz_min",
    "shoulder_wrist_dx_min",
    "shoulder_wrist_dy_min",
    "shoulder_wrist_dz_min",
];

pub const COMP_FEATURES: [&str; 9] = [
    "head_dx_max",
    "head_dy_max",
    "head_dz_max",
    "spine_dx_max",
    "spine_dy_max",
    "spine_dz_max",
    "shoulder_dx_max",
    "shoulder_dy_max",
    "shoulder_dz_max",
];

const MIN_TORSO: f64 = 1e-6;

/// Angle in degrees between two vectors, via a clamped arccos.
pub fn vector_angle(u: Point3, v: Point3) -> Result<f64> {
    let (nu, nv) = (u.norm(), v.norm());
    if nu == 0.0 || nv == 0.0 {
        return Err(Error::DegenerateGeometry("zero-length ray"));
    }
    Ok((u.dot(v) / (nu * nv)).clamp(-1.0, 1.0).acos().to_degrees())
}

/// Angle at vertex `b` between rays `b -> a` and `b -> c`, in degrees.
pub fn joint_angle(a: Point3, b: Point3, c: Point3) -> Result<f64> {
    vector_angle(a - b, c - b)
}

pub fn torso_length(seq: &JointSequence) -> Result<f64> {
    let f0 = seq.frames.first().ok_or(Error::TooFewPoints { needed: 2, got: 0 })?;
    let torso = f0.head.distance(f0.spine);
    if torso <= MIN_TORSO {
        return Err(Error::Normalization(torso));
    }
    Ok(torso)
}

struct FrameAngles {
    elbow_interior: f64,
    shoulder_flexion: f64,
}

fn frame_angles(f: &Frame, arm: Arm) -> Result<FrameAngles> {
    let elbow_interior = joint_angle(f.shoulder(arm), f.elbow(arm), f.wrist(arm))?;
    // torso axis points up, a hanging upper arm points down: 180 deg apart
    let shoulder_flexion = 180.0 - vector_angle(f.head - f.spine, f.elbow(arm) - f.shoulder(arm))?;
    Ok(FrameAngles { elbow_interior, shoulder_flexion })
}

pub fn extract_rom_features(seq: &JointSequence) -> Result<Vec<f64>> {
    extract_rom_features_for_arm(seq, seq.arm)
}

/// Range-of-motion features measured on `arm`, which need not be the arm
/// that performed the exercise.
pub fn extract_rom_features_for_arm(seq: &JointSequence, arm: Arm) -> Result<Vec<f64>> {
    seq.validate()?;
    let torso = torso_length(seq)?;
    let mut elbow_flexion = f64::NEG_INFINITY;
    let mut shoulder_flexion = f64::NEG_INFINITY;
    let mut elbow_extension = f64::NEG_INFINITY;
    let mut dists = [f64::INFINITY; 8];
    for f in &seq.frames {
        let a = frame_angles(f, arm)?;
        elbow_flexion = elbow_flexion.max(180.0 - a.elbow_interior);
        elbow_extension = elbow_extension.max(a.elbow_interior);
        shoulder_flexion = shoulder_flexion.max(a.shoulder_flexion);
        let hw = f.wrist(arm) - f.head;
        let sw = f.wrist(arm) - f.shoulder(arm);
        let frame_dists = [
            hw.norm(),
            f.head.distance(f.elbow(arm)),
            hw.0[0].abs(),
            hw.0[1].abs(),
            hw.0[2].abs(),
            sw.0[0].abs(),
            sw.0[1].abs(),
            sw.0[2].abs(),
        ];
        for (m, d) in dists.iter_mut().zip(frame_dists) {
            *m = m.min(d / torso);
        }
    }
    let mut out = vec![elbow_flexion, shoulder_flexion, elbow_extension];
    out.extend_from_slice(&dists);
    Ok(out)
}

pub fn extract_comp_features(seq: &JointSequence) -> Result<Vec<f64>> {
    extract_comp_features_for_arm(seq, seq.arm)
}

/// Largest per-axis displacement from frame 0 of head, spine and the given
/// arm's shoulder.
pub fn extract_comp_features_for_arm(seq: &JointSequence, arm: Arm) -> Result<Vec<f64>> {
    seq.validate()?;
    let torso = torso_length(seq)?;
    let f0 = &seq.frames[0];
    let origin = [f0.head, f0.spine, f0.shoulder(arm)];
    let mut out = vec![0.0; 9];
    for f in &seq.frames {
        let current = [f.head, f.spine, f.shoulder(arm)];
        for (j, (p, p0)) in current.iter().zip(&origin).enumerate() {
            let d = *p - *p0;
            for axis in 0..3 {
                let v = d.0[axis].abs() / torso;
                if v > out[j * 3 + axis] {
                    out[j * 3 + axis] = v;
                }
            }
        }
    }
    Ok(out)
}

/// A per-frame signal shown in place of the trial video.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureTrace {
    pub name: String,
    pub values: Vec<f64>,
}

pub fn feature_traces(seq: &JointSequence) -> Result<Vec<FeatureTrace>> {
    seq.validate()?;
    let torso = torso_length(seq)?;
    let arm = seq.arm;
    let f0 = seq.frames[0];
    let mut hw = Vec::with_capacity(seq.frames.len());
    let mut elbow = Vec::with_capacity(seq.frames.len());
    let mut shoulder = Vec::with_capacity(seq.frames.len());
    let mut trunk = Vec::with_capacity(seq.frames.len());
    for f in &seq.frames {
        let a = frame_angles(f, arm)?;
        hw.push(f.head.distance(f.wrist(arm)) / torso);
        elbow.push(a.elbow_interior);
        shoulder.push(a.shoulder_flexion);
        trunk.push(f.spine.distance(f0.spine) / torso);
    }
    Ok(vec![
        FeatureTrace { name: "head_wrist_dist".into(), values: hw },
        FeatureTrace { name: "elbow_angle_deg".into(), values: elbow },
        FeatureTrace { name: "shoulder_flexion_deg".into(), values: shoulder },
        FeatureTrace { name: "trunk_displacement".into(), values: trunk },
    ])
}
