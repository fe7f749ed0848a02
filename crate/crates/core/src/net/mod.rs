//! The two-stream detector: configuration, network, optimizer, checkpoints
//! and training.

pub mod checkpoint;
pub mod config;
pub mod network;
pub mod optim;
pub mod train;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, TrainState};
pub use config::NetworkConfig;
pub use network::{
    Batch, ConvBlock, Forward, FreqNorm, ModuleKind, PelNetwork, SiteTrace, Stream, StreamKind, FREQ_WINDOW_STRIDE,
};
pub use optim::Adam;
pub use train::{train, EpochLog, Trainer, LOG_HEADER};
