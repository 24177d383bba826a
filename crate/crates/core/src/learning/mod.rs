//! Federated signSGD with majority vote.
//!
//! Every round each ED draws a batch from its local data, computes the
//! gradient of the shared model and sends its sign. The ES decides one sign
//! per coordinate and broadcasts it, and all EDs apply `w ← w - η v`.

pub mod data;
pub mod idx;
pub mod model;
pub mod partition;
pub mod train;

pub use data::{generate_blobs, BlobConfig, Dataset};
pub use idx::{load_idx_dataset, parse_idx, IdxArray};
pub use model::{evaluate, Architecture, Evaluation, Model};
pub use partition::{
    partition_iid, partition_location, ring_labels, ring_of, ring_radii, PartitionKind,
};
pub use train::{
    aggregate_votes, apply_update, local_losses, run_training, setup, sign_vector, train_round,
    AirInterface, Batcher, DataSource, RoundRecord, RoundReport, Scheme, StepRule, TaskConfig,
    TrainConfig, TrainOutcome, TrainState,
};
