//! Core library for confidence-aware task delegation.
//!
//! The crate is split along the lines of the workflow it supports:
//!
//! * [`numeric`] trains small feed-forward classifiers and evaluates them with
//!   leave-one-subject-out cross-validation.
//! * [`kinematics`] turns joint trajectories into feature vectors and
//!   generates seeded synthetic exercise data.
//! * [`uq`] holds the five confidence estimators and the threshold sweep.
//! * [`explain`] provides embeddings, nearest-neighbour examples and Kernel
//!   SHAP attributions.
//! * [`delegation`] partitions cases between the model and a human reviewer.
//! * [`metrics`] computes reliance metrics and significance tests over
//!   decision logs.
//! * [`study`] wires the pieces into the artifacts a study session needs.

pub mod data;
pub mod delegation;
pub mod error;
pub mod explain;
pub mod kinematics;
pub mod metrics;
pub mod numeric;
pub mod rng;
pub mod study;
pub mod uq;

pub use data::LabeledData;
pub use error::{Error, Result};
