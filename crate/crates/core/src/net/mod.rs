//! The network, its trainer and checkpoint files.

pub mod checkpoint;
pub mod eegnet;
pub mod train;

pub use checkpoint::{
    load_model, load_trunk, save_model, save_trunk, trunk_digest, Provenance, TrunkCheckpoint,
};
pub use eegnet::{EEGNetConfig, EEGNetModel, Mode};
pub use train::{train_classifier, train_classifier_logged, TrainConfig, TrainLog};
