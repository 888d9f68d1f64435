//! Dataset registry.
//!
//! The built-in entries describe the twelve public motor-imagery datasets the
//! engine was designed around: class vocabulary, subject and session counts,
//! and the number of trials recorded per (subject, session, class).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Task abbreviations used as class labels across all datasets.
pub const TASK_VOCABULARY: [(&str, &str); 17] = [
    ("bh", "both hands"),
    ("f", "both feet"),
    ("lh", "left hand"),
    ("lhrf", "left hand right foot"),
    ("n", "navigation"),
    ("r", "rest"),
    ("ree", "right elbow extension"),
    ("ref", "right elbow flexion"),
    ("rh", "right hand"),
    ("rhc", "right hand close"),
    ("rhlf", "right hand left foot"),
    ("rho", "right hand open"),
    ("rp", "right hand pronation"),
    ("rs", "right hand supination"),
    ("s", "subtraction"),
    ("t", "tongue"),
    ("wa", "word association"),
];

pub fn is_known_task(name: &str) -> bool {
    TASK_VOCABULARY.iter().any(|(abbr, _)| *abbr == name)
}

pub fn task_description(name: &str) -> Option<&'static str> {
    TASK_VOCABULARY
        .iter()
        .find(|(abbr, _)| *abbr == name)
        .map(|(_, d)| *d)
}

/// Sessions recorded per subject. Either one count for everybody or a
/// default with per-subject exceptions (subjects are numbered from 1).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SessionsRepr", into = "SessionsRepr")]
pub enum Sessions {
    Uniform(usize),
    PerSubject {
        default: usize,
        overrides: BTreeMap<usize, usize>,
    },
}

/// Serialized form: a bare integer, or `{"default": n, "overrides": {"8": m}}`
/// (document keys are always strings).
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum SessionsRepr {
    Uniform(usize),
    PerSubject {
        default: usize,
        overrides: BTreeMap<String, usize>,
    },
}

impl TryFrom<SessionsRepr> for Sessions {
    type Error = String;

    fn try_from(r: SessionsRepr) -> std::result::Result<Self, String> {
        Ok(match r {
            SessionsRepr::Uniform(n) => Sessions::Uniform(n),
            SessionsRepr::PerSubject { default, overrides } => Sessions::PerSubject {
                default,
                overrides: overrides
                    .into_iter()
                    .map(|(k, v)| {
                        k.parse::<usize>()
                            .map(|k| (k, v))
                            .map_err(|_| format!("subject key {k:?} is not an integer"))
                    })
                    .collect::<std::result::Result<_, _>>()?,
            },
        })
    }
}

impl From<Sessions> for SessionsRepr {
    fn from(s: Sessions) -> Self {
        match s {
            Sessions::Uniform(n) => SessionsRepr::Uniform(n),
            Sessions::PerSubject { default, overrides } => SessionsRepr::PerSubject {
                default,
                overrides: overrides.into_iter().map(|(k, v)| (k.to_string(), v)).collect(),
            },
        }
    }
}

impl Sessions {
    pub fn for_subject(&self, subject: usize) -> usize {
        match self {
            Sessions::Uniform(n) => *n,
            Sessions::PerSubject { default, overrides } => {
                overrides.get(&subject).copied().unwrap_or(*default)
            }
        }
    }

    fn min_count(&self) -> usize {
        match self {
            Sessions::Uniform(n) => *n,
            Sessions::PerSubject { default, overrides } => overrides
                .values()
                .copied()
                .chain(std::iter::once(*default))
                .min()
                .unwrap_or(*default),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetDescriptor {
    pub dataset_id: String,
    pub class_vocab: Vec<String>,
    pub n_subjects: usize,
    pub sessions_per_subject: Sessions,
    /// Trials per (subject, session, class).
    pub examples_per_cell: usize,
}

impl DatasetDescriptor {
    pub fn n_classes(&self) -> usize {
        self.class_vocab.len()
    }

    pub fn has_class(&self, class: &str) -> bool {
        self.class_vocab.iter().any(|c| c == class)
    }

    pub fn total_sessions(&self) -> usize {
        (1..=self.n_subjects)
            .map(|s| self.sessions_per_subject.for_subject(s))
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        if self.dataset_id.is_empty() {
            return Err(Error::invalid("dataset_id", "empty"));
        }
        if self.class_vocab.is_empty() {
            return Err(Error::invalid("class_vocab", "empty"));
        }
        let unique: BTreeSet<_> = self.class_vocab.iter().collect();
        if unique.len() != self.class_vocab.len() {
            return Err(Error::invalid("class_vocab", "duplicate class"));
        }
        if self.n_subjects == 0 {
            return Err(Error::invalid("n_subjects", "must be >= 1"));
        }
        if self.sessions_per_subject.min_count() == 0 {
            return Err(Error::invalid("sessions_per_subject", "must be >= 1"));
        }
        if self.examples_per_cell == 0 {
            return Err(Error::invalid("examples_per_cell", "must be >= 1"));
        }
        Ok(())
    }
}

fn entry(id: &str, classes: &[&str], subjects: usize, sessions: Sessions, examples: usize) -> DatasetDescriptor {
    DatasetDescriptor {
        dataset_id: id.to_string(),
        class_vocab: classes.iter().map(|c| c.to_string()).collect(),
        n_subjects: subjects,
        sessions_per_subject: sessions,
        examples_per_cell: examples,
    }
}

/// The twelve built-in dataset descriptors.
pub fn builtin_registry() -> Vec<DatasetDescriptor> {
    use Sessions::Uniform;
    vec![
        entry("AlexMI", &["f", "r", "rh"], 8, Uniform(1), 20),
        entry("BNCI2014001", &["f", "lh", "rh", "t"], 9, Uniform(2), 72),
        entry("BNCI2014004", &["lh", "rh"], 9, Uniform(5), 72),
        entry(
            "BNCI2015001",
            &["f", "rh"],
            13,
            Sessions::PerSubject {
                default: 2,
                overrides: (8..=11).map(|s| (s, 3)).collect(),
            },
            100,
        ),
        entry("BNCI2015004", &["f", "n", "rh", "s", "wa"], 9, Uniform(2), 39),
        entry("Cho2017", &["lh", "rh"], 53, Uniform(1), 101),
        entry("Lee2019_MI", &["lh", "rh"], 55, Uniform(2), 200),
        entry(
            "Ofner2017",
            &["r", "ree", "ref", "rhc", "rho", "rp", "rs"],
            15,
            Uniform(1),
            60,
        ),
        entry("PhysionetMI", &["bh", "f", "lh", "r", "rh"], 109, Uniform(1), 23),
        entry("Schirrmeister2017", &["f", "lh", "r", "rh"], 14, Uniform(1), 241),
        entry(
            "Weibo2014",
            &["bh", "f", "lh", "lhrf", "r", "rh", "rhlf"],
            10,
            Uniform(1),
            79,
        ),
        entry("Zhou2016", &["f", "lh", "rh"], 4, Uniform(3), 50),
    ]
}

/// A lookup table of descriptors keyed by dataset id.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    entries: BTreeMap<String, DatasetDescriptor>,
}

impl Registry {
    pub fn builtin() -> Self {
        Self::from_descriptors(builtin_registry()).expect("built-in registry is valid")
    }

    pub fn from_descriptors(descriptors: impl IntoIterator<Item = DatasetDescriptor>) -> Result<Self> {
        let mut reg = Registry::default();
        for d in descriptors {
            d.validate()?;
            if reg.entries.contains_key(&d.dataset_id) {
                return Err(Error::invalid(
                    "dataset_id",
                    format!("duplicate id {}", d.dataset_id),
                ));
            }
            reg.entries.insert(d.dataset_id.clone(), d);
        }
        Ok(reg)
    }

    /// Adds or replaces a descriptor. Local descriptors (e.g. synthetic
    /// datasets written by `synth`) shadow built-in entries of the same id.
    pub fn upsert(&mut self, descriptor: DatasetDescriptor) -> Result<()> {
        descriptor.validate()?;
        self.entries.insert(descriptor.dataset_id.clone(), descriptor);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&DatasetDescriptor> {
        self.entries
            .get(id)
            .ok_or_else(|| Error::UnknownDataset(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &DatasetDescriptor> {
        self.entries.values()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn find(id: &str) -> DatasetDescriptor {
        builtin_registry()
            .into_iter()
            .find(|d| d.dataset_id == id)
            .unwrap()
    }

    #[test]
    fn bnci2014001_row() {
        let d = find("BNCI2014001");
        assert_eq!(d.class_vocab, ["f", "lh", "rh", "t"]);
        assert_eq!(d.n_subjects, 9);
        assert_eq!(d.sessions_per_subject, Sessions::Uniform(2));
        assert_eq!(d.examples_per_cell, 72);
    }

    #[test]
    fn physionet_and_ofner_rows() {
        let p = find("PhysionetMI");
        assert_eq!(p.class_vocab, ["bh", "f", "lh", "r", "rh"]);
        assert_eq!((p.n_subjects, p.examples_per_cell), (109, 23));
        assert_eq!(p.sessions_per_subject.for_subject(1), 1);

        let o = find("Ofner2017");
        assert_eq!(o.n_classes(), 7);
        assert_eq!((o.n_subjects, o.examples_per_cell), (15, 60));
    }

    #[test]
    fn bnci2015001_session_exception() {
        let d = find("BNCI2015001");
        for s in 1..=13 {
            let expected = if (8..=11).contains(&s) { 3 } else { 2 };
            assert_eq!(d.sessions_per_subject.for_subject(s), expected, "subject {s}");
        }
        assert_eq!(d.total_sessions(), 4 * 3 + 9 * 2);
    }

    #[test]
    fn registry_totals() {
        let reg = builtin_registry();
        assert_eq!(reg.len(), 12);
        assert_eq!(reg.iter().map(|d| d.n_subjects).sum::<usize>(), 308);
        for d in &reg {
            d.validate().unwrap();
            for c in &d.class_vocab {
                assert!(is_known_task(c), "{} uses unknown class {c}", d.dataset_id);
            }
        }
        Registry::from_descriptors(reg).unwrap();
    }

    #[test]
    fn duplicate_ids_rejected() {
        let d = find("Zhou2016");
        assert!(Registry::from_descriptors(vec![d.clone(), d]).is_err());
    }

    #[test]
    fn sessions_serde_forms() {
        let d = find("BNCI2015001");
        let json = serde_json::to_string(&d).unwrap();
        let back: DatasetDescriptor = serde_json::from_str(&json).unwrap();
        assert_eq!(back, d);
        let u: Sessions = serde_json::from_str("3").unwrap();
        assert_eq!(u, Sessions::Uniform(3));
    }
}
