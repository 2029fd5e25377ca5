//! Masked multi-label cross-entropy, Adam with coupled L2, and the epoch loop.

mod adam;
mod loss;
mod trainer;

pub use adam::{AdamConfig, AdamState, Moments};
pub use loss::{bce_value, multilabel_bce, LossBatch};
pub use trainer::{train_epoch, EpochStats, TrainConfig};
