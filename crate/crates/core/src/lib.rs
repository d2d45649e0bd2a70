//! Streaming data pruning by partial forward blocking.
//!
//! Samples are scored from shallow-layer features with a balanced kernel
//! density estimate over a small set of streaming centroids. Low-importance
//! samples are dropped before the deep forward pass, so they cost only the
//! shallow stage.
//!
//! * [`repr`]: feature maps to compact representations.
//! * [`ade`]: centroids, balancing weights, bandwidth, and the density estimate.
//! * [`pruner`]: importance scores and per-batch masks.
//! * [`net`]: a two-stage MLP with manual gradients and MAC accounting.
//! * [`harness`]: the training loop, metrics, and checkpoints.
//! * [`oracle`]: brute-force references for testing.

pub mod ade;
pub mod error;
pub mod harness;
pub mod net;
pub mod oracle;
pub mod pruner;
pub mod repr;

pub use ade::{AdeConfig, Bandwidth, BandwidthRule, Centroid, CentroidSet, CentroidUpdateMode};
pub use error::{PfbError, Result};
pub use harness::{
    load_checkpoint, save_checkpoint, train, BatchMetrics, Checkpoint, Dataset, MetricsWriter, MixtureSpec,
    RetentionSummary, RunConfig, TrainOutcome, Trainer,
};
pub use net::{BatchTensors, FlopCount, Matrix, NetDims, TwoStageNet};
pub use pruner::{prune, score_batch, ImportanceScore, PruneDecision};
pub use repr::{FeatureMap, Representation};
