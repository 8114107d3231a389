//! Desk-scale training: embedder, optimizer, scheduler, synthetic data and
//! the epoch loop.

pub mod checkpoint;
pub mod model;
pub mod optim;
pub mod synth;
pub mod trainer;

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, CheckpointHeader};
pub use model::EmbedderModel;
pub use optim::{adamw_step, AdamState, GroupConfig, Monitor, OptimizerConfig, PlateauScheduler};
pub use synth::{generate_synthetic, LabeledDataset, Sample, SyntheticDatasetConfig};
pub use trainer::{embed_dataset, init_proxies, train, EpochRecord, TrainOutcome, TrainState, Trainer};
