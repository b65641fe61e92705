//! Hybrid bidirectional-LSTM + Kolmogorov–Arnold network classifier for
//! respiratory sound recordings, together with the imbalance-aware
//! training pipeline around it: audio feature extraction, SMOTE,
//! class-targeted augmentation, focal loss, two-stage training and
//! stratified cross-validation reporting.

pub mod config;
pub mod dataset;
pub mod error;
pub mod evalkit;
pub mod features;
pub mod imbalance;
pub mod kan;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod params;
pub mod pipeline;
pub mod report;
pub mod splines;
pub mod synthetic;

pub use error::{Error, Result};

/// The six diagnostic classes, in label-index order.
pub const CLASS_NAMES: [&str; 6] = [
    "Healthy",
    "COPD",
    "Bronchiectasis",
    "Bronchiolitis",
    "Pneumonia",
    "URTI",
];

pub const NUM_CLASSES: usize = CLASS_NAMES.len();

pub fn class_index(name: &str) -> Option<usize> {
    CLASS_NAMES
        .iter()
        .position(|c| c.eq_ignore_ascii_case(name.trim()))
}
