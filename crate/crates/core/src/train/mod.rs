//! Losses, the optimizer, the alternating semi-supervised schedule, and
//! evaluation.

mod adam;
mod config;
mod engine;
mod loss;
mod metrics;

pub use adam::{Adam, AdamState};
pub use config::{Precision, TrainConfig};
pub use engine::{
    evaluate, train, train_with, EncodedSet, Model, Noise, RealBatch, StepMetrics, TrainOutcome, Trainer,
};
pub use loss::{bce_with_logits, discriminator_loss, generator_loss, mae_loss, DiscriminatorLoss};
pub use metrics::{EpochRecord, EvalMetrics, MetricHistory};
