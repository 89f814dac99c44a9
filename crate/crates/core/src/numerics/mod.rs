//! Dense vectors, the feed-forward classifier, and its optimizer.

mod dist;
mod mlp;
mod optim;

pub use dist::{
    cross_entropy, softmax, ClassDistribution, Representation, LOG_FLOOR, SUM_TOLERANCE,
};
pub use mlp::{
    weighted_ce_gradient, Dense, GradientSet, MlpClassifier, WeightedTarget, MODEL_MAGIC,
};
pub use optim::Sgd;
