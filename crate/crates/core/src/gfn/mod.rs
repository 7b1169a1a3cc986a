//! Tabular GFlowNet on the hypergrid trained with f-trajectory balance.

pub mod exact;
pub mod metrics;
pub mod policy;
pub mod sampling;
pub mod train;

pub use metrics::RunMetrics;
pub use policy::{BackwardMode, PolicyParams};
pub use sampling::{sample_rng, sample_trajectory, BehaviorPolicy};
pub use train::{
    batch_gradient, AlphaSchedule, BatchGradient, Normalization, TrainConfig, Trainer,
};
