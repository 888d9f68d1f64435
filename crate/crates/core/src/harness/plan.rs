//! Experiment plans and seed derivation.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::net::{EEGNetConfig, TrainConfig};
use crate::preprocess::PreprocessConfig;
use crate::transfer::{Analysis, HeadOptions};

pub const DEFAULT_K_VALUES: [usize; 7] = [1, 2, 4, 8, 16, 32, 64];

/// A donor × receiver grid with every setting needed to reproduce it.
///
/// `net.n_channels`, `net.n_samples` and `net.n_classes` are taken from the
/// donor data, and `train.seed` is replaced by [`pretrain_seed`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    pub donor_ids: Vec<String>,
    pub receiver_ids: Vec<String>,
    pub analyses: Vec<Analysis>,
    pub k_values: Vec<usize>,
    pub n_folds: usize,
    pub master_seed: u64,
    /// Falls back to the command line or environment when absent.
    pub data_root: Option<PathBuf>,
    pub preprocess: PreprocessConfig,
    pub net: EEGNetConfig,
    pub train: TrainConfig,
    pub head: HeadOptions,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        ExperimentPlan {
            donor_ids: Vec::new(),
            receiver_ids: Vec::new(),
            analyses: vec![Analysis::LhRh, Analysis::RhF, Analysis::All],
            k_values: DEFAULT_K_VALUES.to_vec(),
            n_folds: 16,
            master_seed: 0,
            data_root: None,
            preprocess: PreprocessConfig::default(),
            net: EEGNetConfig::default(),
            train: TrainConfig::default(),
            head: HeadOptions::default(),
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        if self.donor_ids.is_empty() {
            return Err(Error::invalid("donor_ids", "empty"));
        }
        if self.receiver_ids.is_empty() {
            return Err(Error::invalid("receiver_ids", "empty"));
        }
        if self.analyses.is_empty() {
            return Err(Error::invalid("analyses", "empty"));
        }
        if self.k_values.is_empty() || self.k_values[0] == 0 || self.k_values.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::invalid("k_values", "must be positive and strictly increasing"));
        }
        if self.n_folds == 0 {
            return Err(Error::invalid("n_folds", "must be >= 1"));
        }
        self.preprocess.validate()?;
        self.train.validate()?;
        Ok(())
    }

    pub fn from_toml(text: &str, origin: &Path) -> Result<Self> {
        let plan: ExperimentPlan = toml::from_str(text).map_err(|e| Error::format(origin, e))?;
        plan.validate()?;
        Ok(plan)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::format("plan", e))
    }
}

/// Stable 64-bit seed: the first eight bytes, little-endian, of the SHA-256
/// of the parts joined by the unit separator `0x1f`.
pub fn stable_seed(parts: &[&str]) -> u64 {
    let digest = Sha256::digest(parts.join("\u{1f}").as_bytes());
    u64::from_le_bytes(digest[..8].try_into().expect("eight bytes"))
}

/// Seed of one (donor, receiver, analysis, k, subject, session) cell.
pub fn cell_seed(
    master_seed: u64,
    donor: &str,
    receiver: &str,
    analysis: Analysis,
    k: usize,
    subject: &str,
    session: &str,
) -> u64 {
    stable_seed(&[
        &master_seed.to_string(),
        donor,
        receiver,
        analysis.name(),
        &k.to_string(),
        subject,
        session,
    ])
}

/// Seed of a donor's pretraining run.
pub fn pretrain_seed(master_seed: u64, donor: &str) -> u64 {
    stable_seed(&[&master_seed.to_string(), "pretrain", donor])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_plan_fills_defaults() {
        let plan = ExperimentPlan::from_toml(
            "donor_ids = [\"A\"]\nreceiver_ids = [\"B\"]\nanalyses = [\"rh-f\"]\n",
            Path::new("p.toml"),
        )
        .unwrap();
        assert_eq!(plan.k_values, [1, 2, 4, 8, 16, 32, 64]);
        assert_eq!(plan.n_folds, 16);
        assert_eq!(plan.analyses, [Analysis::RhF]);
        assert_eq!(plan.net, EEGNetConfig::default());
    }

    #[test]
    fn toml_round_trip() {
        let plan = ExperimentPlan {
            donor_ids: vec!["A".into()],
            receiver_ids: vec!["B".into(), "C".into()],
            data_root: Some("/data".into()),
            ..Default::default()
        };
        let text = plan.to_toml().unwrap();
        assert_eq!(ExperimentPlan::from_toml(&text, Path::new("p")).unwrap(), plan);
    }

    #[test]
    fn invalid_plans() {
        let p = |s: &str| ExperimentPlan::from_toml(s, Path::new("p"));
        assert!(p("receiver_ids = [\"B\"]").is_err());
        assert!(p("donor_ids = [\"A\"]\nreceiver_ids = [\"B\"]\nk_values = [4, 2]").is_err());
        assert!(p("donor_ids = [\"A\"]\nreceiver_ids = [\"B\"]\nanalyses = [\"feet\"]").is_err());
        assert!(p("donor_ids = [\"A\"]\nreceiver_ids = [\"B\"]\nfolds = 3").is_err());
    }

    #[test]
    fn seeds_are_stable_and_distinct() {
        let a = cell_seed(1, "A", "B", Analysis::LhRh, 16, "1", "0");
        assert_eq!(a, cell_seed(1, "A", "B", Analysis::LhRh, 16, "1", "0"));
        assert_ne!(a, cell_seed(1, "A", "B", Analysis::LhRh, 16, "1", "1"));
        assert_ne!(a, cell_seed(2, "A", "B", Analysis::LhRh, 16, "1", "0"));
        // separator keeps field boundaries apart
        assert_ne!(stable_seed(&["ab", "c"]), stable_seed(&["a", "bc"]));
        assert_eq!(stable_seed(&[]), 0x141c_fc98_42c4_b0e3);
    }
}
