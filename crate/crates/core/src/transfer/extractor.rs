//! Pretrained trunks used as frozen feature extractors.

use std::path::Path;

use crate::autodiff::Tensor;
use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::net::checkpoint::{load_trunk, save_trunk, trunk_digest, Provenance, TrunkCheckpoint};
use crate::net::eegnet::{embed_with, epochs_tensor, EEGNetConfig};
use crate::net::train::{train_classifier_logged, TrainConfig, TrainLog};
use crate::transfer::head::Features;

/// An immutable trunk in inference mode. Nothing here mutates parameters, so
/// the checksum taken at construction stays valid.
#[derive(Debug, Clone)]
pub struct FrozenExtractor {
    ckpt: TrunkCheckpoint,
    checksum: String,
}

impl FrozenExtractor {
    pub fn new(ckpt: TrunkCheckpoint) -> Result<Self> {
        ckpt.config.validate()?;
        let checksum = trunk_digest(&ckpt);
        Ok(FrozenExtractor { ckpt, checksum })
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Self::new(load_trunk(dir)?)
    }

    /// Writes a trunk-only checkpoint.
    pub fn save(&self, dir: &Path) -> Result<String> {
        save_trunk(&self.ckpt, dir)
    }

    pub fn donor_id(&self) -> &str {
        &self.ckpt.provenance.donor_id
    }

    pub fn embedding_dim(&self) -> usize {
        self.ckpt.config.embedding_dim()
    }

    pub fn config(&self) -> &EEGNetConfig {
        &self.ckpt.config
    }

    pub fn provenance(&self) -> &Provenance {
        &self.ckpt.provenance
    }

    /// SHA-256 of the trunk parameter blob.
    pub fn checksum(&self) -> &str {
        &self.checksum
    }

    /// Recomputes the digest from the parameters.
    pub fn current_checksum(&self) -> String {
        trunk_digest(&self.ckpt)
    }

    pub fn checkpoint(&self) -> &TrunkCheckpoint {
        &self.ckpt
    }

    pub fn embed_tensor(&self, x: &Tensor<f32>) -> Result<Tensor<f32>> {
        embed_with(&self.ckpt.config, &self.ckpt.trunk, &self.ckpt.running, x)
    }

    /// One embedding row per trial.
    pub fn embed(&self, set: &EpochSet) -> Result<Features> {
        let e = self.embed_tensor(&epochs_tensor(set)?)?;
        Features::new(self.embedding_dim(), e.values().iter().map(|&v| v as f64).collect())
    }
}

/// Trains on every trial of the donor's sessions (all subjects, sessions and
/// classes), drops the head and freezes the trunk. `net` supplies the
/// architecture; input shape and class count are taken from the data.
pub fn pretrain_donor(
    sessions: &[EpochSet],
    net: &EEGNetConfig,
    train: &TrainConfig,
) -> Result<(FrozenExtractor, TrainLog)> {
    let donor = EpochSet::concat(sessions)?.compact_vocab();
    if donor.class_vocab.len() < 2 {
        return Err(Error::TooFewClasses(donor.class_vocab.len()));
    }
    let cfg = EEGNetConfig {
        n_channels: donor.n_channels(),
        n_samples: donor.n_samples(),
        n_classes: donor.class_vocab.len(),
        ..net.clone()
    };
    log::info!(
        "pretraining on {}: {} trials, classes {:?}",
        donor.dataset_id,
        donor.n_trials(),
        donor.class_vocab
    );
    let (model, log) = train_classifier_logged(train, &donor, &cfg)?;
    let ckpt = TrunkCheckpoint {
        config: cfg,
        trunk: model.params.trunk,
        running: model.running,
        seed: train.seed,
        provenance: Provenance {
            donor_id: donor.dataset_id.clone(),
            class_vocab: donor.class_vocab.clone(),
            n_trials: donor.n_trials(),
            train: train.clone(),
            final_loss: log.epoch_loss.last().copied(),
        },
    };
    Ok((FrozenExtractor::new(ckpt)?, log))
}
