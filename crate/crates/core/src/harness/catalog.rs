//! What is on disk under a data root.
//!
//! ```text
//! {root}/{dataset}/descriptor.json          optional, local datasets only
//! {root}/{dataset}/{subject}/{session}/metadata.json
//! ```

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use crate::epochs::METADATA_FILE;
use crate::error::{Error, Result};
use crate::registry::{DatasetDescriptor, Registry};

pub const DESCRIPTOR_FILE: &str = "descriptor.json";
pub const DATA_ROOT_ENV: &str = "MI_TRANSFER_DATA_ROOT";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SessionRef {
    pub dataset: String,
    pub subject: String,
    pub session: String,
    pub dir: PathBuf,
}

/// Numeric ids sort numerically and before non-numeric ones.
pub fn natural_cmp(a: &str, b: &str) -> Ordering {
    match (a.parse::<u64>(), b.parse::<u64>()) {
        (Ok(x), Ok(y)) => x.cmp(&y).then_with(|| a.cmp(b)),
        (Ok(_), Err(_)) => Ordering::Less,
        (Err(_), Ok(_)) => Ordering::Greater,
        _ => a.cmp(b),
    }
}

fn subdirs(dir: &Path) -> Result<Vec<String>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        if entry.file_type().map_err(|e| Error::io(entry.path(), e))?.is_dir() {
            out.push(entry.file_name().to_string_lossy().into_owned());
        }
    }
    out.sort_by(|a, b| natural_cmp(a, b));
    Ok(out)
}

#[derive(Debug, Clone, Default)]
pub struct Catalog {
    pub root: PathBuf,
    datasets: BTreeMap<String, Vec<SessionRef>>,
    descriptors: Vec<DatasetDescriptor>,
}

impl Catalog {
    /// Lists every container under `root`. A missing root is an error.
    pub fn scan(root: &Path) -> Result<Self> {
        let mut cat = Catalog {
            root: root.to_path_buf(),
            ..Default::default()
        };
        for dataset in subdirs(root)? {
            let ds_dir = root.join(&dataset);
            let desc_path = ds_dir.join(DESCRIPTOR_FILE);
            if desc_path.is_file() {
                let text = fs::read(&desc_path).map_err(|e| Error::io(&desc_path, e))?;
                let d: DatasetDescriptor =
                    serde_json::from_slice(&text).map_err(|e| Error::format(&desc_path, e))?;
                cat.descriptors.push(d);
            }
            let mut sessions = Vec::new();
            for subject in subdirs(&ds_dir)? {
                for session in subdirs(&ds_dir.join(&subject))? {
                    let dir = ds_dir.join(&subject).join(&session);
                    if dir.join(METADATA_FILE).is_file() {
                        sessions.push(SessionRef {
                            dataset: dataset.clone(),
                            subject: subject.clone(),
                            session,
                            dir,
                        });
                    }
                }
            }
            if !sessions.is_empty() {
                cat.datasets.insert(dataset, sessions);
            }
        }
        Ok(cat)
    }

    pub fn has(&self, dataset: &str) -> bool {
        self.datasets.contains_key(dataset)
    }

    /// Containers of `dataset`, ordered by subject then session.
    pub fn sessions(&self, dataset: &str) -> Result<&[SessionRef]> {
        self.datasets
            .get(dataset)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::MissingData {
                dataset: dataset.to_string(),
                root: self.root.clone(),
            })
    }

    /// Built-in registry with local descriptors layered on top.
    pub fn registry(&self) -> Result<Registry> {
        let mut reg = Registry::builtin();
        for d in &self.descriptors {
            reg.upsert(d.clone())?;
        }
        Ok(reg)
    }
}

/// Writes `{root}/{dataset}/descriptor.json`.
pub fn write_descriptor(root: &Path, d: &DatasetDescriptor) -> Result<()> {
    d.validate()?;
    let dir = root.join(&d.dataset_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let json = serde_json::to_vec_pretty(d).map_err(|e| Error::format(dir.join(DESCRIPTOR_FILE), e))?;
    crate::epochs::write_atomic(&dir.join(DESCRIPTOR_FILE), &json)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::epochs::{container_dir, save_epochs, tests::toy_set};
    use crate::registry::Sessions;

    #[test]
    fn natural_order() {
        let mut ids = vec!["10", "2", "b", "1", "a"];
        ids.sort_by(|a, b| natural_cmp(a, b));
        assert_eq!(ids, ["1", "2", "10", "a", "b"]);
    }

    #[test]
    fn scan_finds_containers_and_descriptors() {
        let root = tempfile::tempdir().unwrap();
        for (subj, sess) in [("1", "0"), ("10", "0"), ("2", "0"), ("2", "1")] {
            save_epochs(&toy_set(2, 2, 4), &container_dir(root.path(), "Local", subj, sess)).unwrap();
        }
        fs::create_dir_all(root.path().join("Empty/1")).unwrap();
        let d = DatasetDescriptor {
            dataset_id: "Local".into(),
            class_vocab: vec!["lh".into(), "rh".into()],
            n_subjects: 3,
            sessions_per_subject: Sessions::Uniform(1),
            examples_per_cell: 1,
        };
        write_descriptor(root.path(), &d).unwrap();
        let cat = Catalog::scan(root.path()).unwrap();
        let order: Vec<(&str, &str)> = cat
            .sessions("Local")
            .unwrap()
            .iter()
            .map(|s| (s.subject.as_str(), s.session.as_str()))
            .collect();
        assert_eq!(order, [("1", "0"), ("2", "0"), ("2", "1"), ("10", "0")]);
        assert!(!cat.has("Empty"));
        assert!(matches!(cat.sessions("Zhou2016"), Err(Error::MissingData { .. })));
        let reg = cat.registry().unwrap();
        assert_eq!(reg.get("Local").unwrap(), &d);
        assert_eq!(reg.len(), 13);
    }

    #[test]
    fn missing_root_is_an_error() {
        assert!(Catalog::scan(Path::new("/nonexistent/data/root")).is_err());
    }
}
