//! End-to-end training with partial forward blocking.

pub mod ablation;
mod checkpoint;
mod config;
mod data;
mod metrics;
mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, CHECKPOINT_SCHEMA};
pub use config::RunConfig;
pub use data::{generate_dataset, Dataset, MixtureSpec};
pub use metrics::{format_sig9, BatchMetrics, MetricsWriter, RetentionSummary};
pub use train::{train, TrainOutcome, Trainer};
