//! Semi-supervised classification for class-imbalanced data over precomputed
//! dense representations.
//!
//! The pipeline combines three ingredients:
//!
//! * [`rebalance`]: effective-number class weights for the supervised loss,
//! * [`calibration`]: pseudo-labels aligned to the labeled class distribution
//!   and sharpened with a temperature,
//! * [`softmix`]: latent-space convex mixing of an unlabeled example with its
//!   question- and context-augmented representations.
//!
//! [`trainer::train`] ties them together; [`data`] handles ingestion and the
//! synthetic long-tail generator and [`eval`] provides the metrics.

pub mod calibration;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod numerics;
pub mod parallel;
pub mod rebalance;
pub mod softmix;
pub mod trainer;

pub use error::{Error, Result};
pub use numerics::{ClassDistribution, MlpClassifier, Representation};
pub use parallel::ExecMode;
pub use trainer::{train, TrainConfig, TrainReport};
