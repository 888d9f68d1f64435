//! Whole synthetic datasets written as containers plus a descriptor.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::epochs::save_epochs;
use crate::error::Result;
use crate::harness::catalog::write_descriptor;
use crate::harness::plan::stable_seed;
use crate::registry::{DatasetDescriptor, Sessions};
use crate::synth::{generate_synthetic, scramble_labels, SyntheticSpec};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticDataset {
    pub dataset_id: String,
    pub n_subjects: usize,
    pub sessions_per_subject: usize,
    /// Labels permuted after generation, leaving no signal to learn.
    pub scramble_labels: bool,
    /// Per-trial settings. Its `seed`, `dataset_id`, `subject_id` and
    /// `session_id` are overwritten for each session.
    pub template: SyntheticSpec,
}

impl Default for SyntheticDataset {
    fn default() -> Self {
        SyntheticDataset {
            dataset_id: "Synthetic".into(),
            n_subjects: 2,
            sessions_per_subject: 1,
            scramble_labels: false,
            template: SyntheticSpec::default(),
        }
    }
}

impl SyntheticDataset {
    pub fn descriptor(&self) -> DatasetDescriptor {
        DatasetDescriptor {
            dataset_id: self.dataset_id.clone(),
            class_vocab: self.template.classes.clone(),
            n_subjects: self.n_subjects,
            sessions_per_subject: Sessions::Uniform(self.sessions_per_subject),
            examples_per_cell: self.template.n_trials_per_class,
        }
    }

    /// Writes `{root}/{dataset}/{subject}/{session}` for subjects `1..=n`
    /// and sessions `0..m`. Each session's generator seed is derived from
    /// `seed` and its identity.
    pub fn write(&self, root: &Path, seed: u64) -> Result<DatasetDescriptor> {
        let desc = self.descriptor();
        desc.validate()?;
        let seed_text = seed.to_string();
        for subject in 1..=self.n_subjects {
            for session in 0..self.sessions_per_subject {
                let subject_id = subject.to_string();
                let session_id = session.to_string();
                let session_seed = stable_seed(&[&seed_text, &self.dataset_id, &subject_id, &session_id]);
                let spec = SyntheticSpec {
                    seed: session_seed,
                    dataset_id: self.dataset_id.clone(),
                    subject_id: subject_id.clone(),
                    session_id: session_id.clone(),
                    ..self.template.clone()
                };
                let mut set = generate_synthetic(&spec)?;
                if self.scramble_labels {
                    scramble_labels(&mut set, session_seed.wrapping_add(1));
                }
                save_epochs(&set, &root.join(&self.dataset_id).join(&subject_id).join(&session_id))?;
            }
        }
        write_descriptor(root, &desc)?;
        Ok(desc)
    }
}
