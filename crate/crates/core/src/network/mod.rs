//! The box classifier: character embedding, graph convolution over the
//! neighbor graph, convolution over the reading-order sequence,
//! self-attention, and a sigmoid multilabel head. Also its losses,
//! optimizer, training loop and checkpoint format.

pub mod adam;
pub mod batch;
pub mod check;
pub mod config;
pub mod layers;
pub mod loss;
pub mod model;
pub mod train;

pub use batch::{make_batches, pad_batch, Batch, Example};
pub use config::{LossKind, ModelConfig, Targets, TrainConfig};
pub use model::{Model, Param};
pub use train::{evaluate, predict, train, train_with, EarlyStopping, EpochRecord, TrainOutcome};
