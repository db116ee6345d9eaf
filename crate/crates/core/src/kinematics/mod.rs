//! Joint trajectories, kinematic features and the case dataset.

mod features;
mod io;
mod synth;

pub use features::{
    extract_comp_features, extract_comp_features_for_arm, extract_rom_features, extract_rom_features_for_arm,
    feature_traces, joint_angle, torso_length, vector_angle, FeatureTrace, COMP_FEATURES, FEATURE_SCHEMA_VERSION,
    ROM_FEATURES,
};
pub use io::{load_dataset, load_sequences, save_dataset, save_sequences, DATASET_SCHEMA_VERSION};
pub use synth::{far_ood_points, synth_generate, SynthConfig, SynthOutput};

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::data::LabeledData;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3(pub [f64; 3]);

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self([x, y, z])
    }

    pub fn dot(self, other: Self) -> f64 {
        self.0[0] * other.0[0] + self.0[1] * other.0[1] + self.0[2] * other.0[2]
    }

    pub fn norm(self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn distance(self, other: Self) -> f64 {
        (self - other).norm()
    }

    pub fn is_finite(self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

impl Add for Point3 {
    type Output = Self;
    fn add(self, o: Self) -> Self {
        Self([self.0[0] + o.0[0], self.0[1] + o.0[1], self.0[2] + o.0[2]])
    }
}

impl Sub for Point3 {
    type Output = Self;
    fn sub(self, o: Self) -> Self {
        Self([self.0[0] - o.0[0], self.0[1] - o.0[1], self.0[2] - o.0[2]])
    }
}

impl Mul<f64> for Point3 {
    type Output = Self;
    fn mul(self, s: f64) -> Self {
        Self([self.0[0] * s, self.0[1] * s, self.0[2] * s])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    PostStroke,
    Healthy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Affected,
    Unaffected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Left,
    Right,
}

impl Arm {
    pub fn other(self) -> Self {
        match self {
            Arm::Left => Arm::Right,
            Arm::Right => Arm::Left,
        }
    }
}

/// Which motion family generated a trial. `Shifted` marks the acted-out,
/// out-of-distribution motions of healthy actors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MotionFamily {
    #[default]
    Standard,
    Shifted,
}

/// Which assessment component a model scores.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    Rom,
    Comp,
}

impl Component {
    pub fn feature_names(self) -> &'static [&'static str] {
        match self {
            Component::Rom => &ROM_FEATURES,
            Component::Comp => &COMP_FEATURES,
        }
    }
}

impl std::str::FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rom" => Ok(Component::Rom),
            "comp" => Ok(Component::Comp),
            other => Err(Error::InvalidConfig(format!("unknown component `{other}`"))),
        }
    }
}

/// Joint positions (metres) for one frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub head: Point3,
    pub spine: Point3,
    pub shoulder_left: Point3,
    pub shoulder_right: Point3,
    pub elbow_left: Point3,
    pub elbow_right: Point3,
    pub wrist_left: Point3,
    pub wrist_right: Point3,
}

impl Frame {
    pub fn shoulder(&self, arm: Arm) -> Point3 {
        match arm {
            Arm::Left => self.shoulder_left,
            Arm::Right => self.shoulder_right,
        }
    }

    pub fn elbow(&self, arm: Arm) -> Point3 {
        match arm {
            Arm::Left => self.elbow_left,
            Arm::Right => self.elbow_right,
        }
    }

    pub fn wrist(&self, arm: Arm) -> Point3 {
        match arm {
            Arm::Left => self.wrist_left,
            Arm::Right => self.wrist_right,
        }
    }

    fn joints(&self) -> [Point3; 8] {
        [
            self.head,
            self.spine,
            self.shoulder_left,
            self.shoulder_right,
            self.elbow_left,
            self.elbow_right,
            self.wrist_left,
            self.wrist_right,
        ]
    }

    /// Apply `f` to every joint.
    pub fn map(&self, mut f: impl FnMut(Point3) -> Point3) -> Self {
        Self {
            head: f(self.head),
            spine: f(self.spine),
            shoulder_left: f(self.shoulder_left),
            shoulder_right: f(self.shoulder_right),
            elbow_left: f(self.elbow_left),
            elbow_right: f(self.elbow_right),
            wrist_left: f(self.wrist_left),
            wrist_right: f(self.wrist_right),
        }
    }
}

/// One exercise trial. `arm` is the limb performing the exercise; `side`
/// says whether that limb is the subject's affected one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointSequence {
    pub subject_id: String,
    pub trial_id: String,
    pub status: Status,
    pub side: Side,
    pub arm: Arm,
    pub frame_rate: f64,
    pub frames: Vec<Frame>,
}

impl JointSequence {
    pub fn validate(&self) -> Result<()> {
        if self.frames.len() < 2 {
            return Err(Error::TooFewPoints { needed: 2, got: self.frames.len() });
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!("frame rate {} must be positive", self.frame_rate)));
        }
        if self.frames.iter().any(|f| f.joints().iter().any(|p| !p.is_finite())) {
            return Err(Error::NumericDomain("non-finite joint coordinate".into()));
        }
        Ok(())
    }

    pub fn case_id(&self) -> String {
        case_id(&self.subject_id, &self.trial_id)
    }
}

pub fn case_id(subject_id: &str, trial_id: &str) -> String {
    format!("{subject_id}/{trial_id}")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Case {
    pub subject_id: String,
    pub trial_id: String,
    pub status: Status,
    pub side: Side,
    pub arm: Arm,
    #[serde(default)]
    pub family: MotionFamily,
    #[serde(with = "io::rom_named")]
    pub rom_features: Vec<f64>,
    #[serde(with = "io::comp_named")]
    pub comp_features: Vec<f64>,
    pub rom_label: usize,
    pub comp_label: usize,
    #[serde(default)]
    pub annotator2_rom_label: Option<usize>,
    #[serde(default)]
    pub annotator2_comp_label: Option<usize>,
}

impl Case {
    pub fn id(&self) -> String {
        case_id(&self.subject_id, &self.trial_id)
    }

    pub fn features(&self, component: Component) -> &[f64] {
        match component {
            Component::Rom => &self.rom_features,
            Component::Comp => &self.comp_features,
        }
    }

    pub fn label(&self, component: Component) -> usize {
        match component {
            Component::Rom => self.rom_label,
            Component::Comp => self.comp_label,
        }
    }

    pub fn second_label(&self, component: Component) -> Option<usize> {
        match component {
            Component::Rom => self.annotator2_rom_label,
            Component::Comp => self.annotator2_comp_label,
        }
    }

    fn validate(&self, class_count: usize) -> Result<()> {
        if self.rom_features.len() != ROM_FEATURES.len() {
            return Err(Error::InputShape { expected: ROM_FEATURES.len(), got: self.rom_features.len() });
        }
        if self.comp_features.len() != COMP_FEATURES.len() {
            return Err(Error::InputShape { expected: COMP_FEATURES.len(), got: self.comp_features.len() });
        }
        if self.rom_features.iter().chain(&self.comp_features).any(|v| !v.is_finite()) {
            return Err(Error::NumericDomain("non-finite feature".into()));
        }
        let labels = [Some(self.rom_label), Some(self.comp_label), self.annotator2_rom_label, self.annotator2_comp_label];
        for label in labels.into_iter().flatten() {
            if label >= class_count {
                return Err(Error::LabelOutOfRange { label, classes: class_count });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub class_count: usize,
    pub cases: Vec<Case>,
}

impl Dataset {
    pub fn new(class_count: usize, cases: Vec<Case>) -> Result<Self> {
        for c in &cases {
            c.validate(class_count)?;
        }
        Ok(Self { class_count, cases })
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn index_of(&self, case_id: &str) -> Option<usize> {
        self.cases.iter().position(|c| c.id() == case_id)
    }

    /// Feature matrix and first-annotator labels for one component.
    pub fn labeled(&self, component: Component) -> LabeledData {
        LabeledData {
            features: self.cases.iter().map(|c| c.features(component).to_vec()).collect(),
            labels: self.cases.iter().map(|c| c.label(component)).collect(),
            subjects: self.cases.iter().map(|c| c.subject_id.clone()).collect(),
            class_count: self.class_count,
            feature_names: component.feature_names().iter().map(|s| s.to_string()).collect(),
        }
    }
}
