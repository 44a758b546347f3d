//! Quality assurance for black-box segmentation models.
//!
//! A synthetic multi-domain cardiac benchmark stands in for clinical data.
//! Image and shape autoencoders yield four per-case features, a per-model
//! regressor maps them to a predicted Dice score, and a rolling monitor
//! watches the predictions for drift.

pub mod container;
pub mod grid;
pub mod stats;
pub mod perturb;
pub mod phantom;
pub mod encoders;
pub mod features;
pub mod regress;
pub mod qa;
