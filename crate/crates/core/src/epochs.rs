//! The epoch container: a labeled `[trial][channel][sample]` array of EEG
//! trials plus the metadata needed to interpret it.
//!
//! On disk a container is a directory holding `metadata.json` and a raw
//! little-endian `f32` blob (`data.bin` by default) in trial, channel, sample
//! order. Containers live at `{root}/{dataset}/{subject}/{session}/`.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const FORMAT_VERSION: u32 = 1;
pub const METADATA_FILE: &str = "metadata.json";
pub const DATA_FILE: &str = "data.bin";

#[derive(Debug, Clone, PartialEq)]
pub struct EpochSet {
    /// Flat `[n_trials, n_channels, n_samples]` buffer, microvolts.
    pub data: Vec<f32>,
    pub shape: [usize; 3],
    pub channel_names: Vec<String>,
    pub sampling_rate_hz: f64,
    /// Time of the first sample relative to the cue, seconds.
    pub tmin_s: f64,
    pub labels: Vec<usize>,
    pub class_vocab: Vec<String>,
    pub dataset_id: String,
    pub subject_id: String,
    pub session_id: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    dataset_id: String,
    subject_id: String,
    session_id: String,
    channel_names: Vec<String>,
    sampling_rate_hz: f64,
    tmin_s: f64,
    class_vocab: Vec<String>,
    labels: Vec<usize>,
    shape: [usize; 3],
    dtype: String,
    data_file: String,
}

impl EpochSet {
    pub fn n_trials(&self) -> usize {
        self.shape[0]
    }

    pub fn n_channels(&self) -> usize {
        self.shape[1]
    }

    pub fn n_samples(&self) -> usize {
        self.shape[2]
    }

    pub fn duration_s(&self) -> f64 {
        self.n_samples() as f64 / self.sampling_rate_hz
    }

    pub fn trial(&self, i: usize) -> &[f32] {
        let len = self.shape[1] * self.shape[2];
        &self.data[i * len..(i + 1) * len]
    }

    pub fn series(&self, trial: usize, channel: usize) -> &[f32] {
        let t = self.shape[2];
        let start = (trial * self.shape[1] + channel) * t;
        &self.data[start..start + t]
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channel_names.iter().position(|c| c == name)
    }

    pub fn class_index(&self, name: &str) -> Option<usize> {
        self.class_vocab.iter().position(|c| c == name)
    }

    /// Trial count per vocabulary entry.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_vocab.len()];
        for &l in &self.labels {
            if l < counts.len() {
                counts[l] += 1;
            }
        }
        counts
    }

    pub fn validate(&self) -> Result<()> {
        let [n, c, t] = self.shape;
        if self.data.len() != n * c * t {
            return Err(Error::invalid(
                "data",
                format!("length {} does not match shape {:?}", self.data.len(), self.shape),
            ));
        }
        if self.channel_names.len() != c {
            return Err(Error::invalid(
                "channel_names",
                format!("{} names for {} channels", self.channel_names.len(), c),
            ));
        }
        let unique: BTreeSet<_> = self.channel_names.iter().collect();
        if unique.len() != self.channel_names.len() {
            return Err(Error::invalid("channel_names", "duplicate channel name"));
        }
        if self.labels.len() != n {
            return Err(Error::invalid(
                "labels",
                format!("{} labels for {} trials", self.labels.len(), n),
            ));
        }
        if let Some(&bad) = self.labels.iter().find(|&&l| l >= self.class_vocab.len()) {
            return Err(Error::invalid(
                "labels",
                format!("label {bad} out of range for {} classes", self.class_vocab.len()),
            ));
        }
        let vocab: BTreeSet<_> = self.class_vocab.iter().collect();
        if vocab.len() != self.class_vocab.len() {
            return Err(Error::invalid("class_vocab", "duplicate class"));
        }
        if !(self.sampling_rate_hz.is_finite() && self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid("sampling_rate_hz", "must be positive"));
        }
        if !self.tmin_s.is_finite() {
            return Err(Error::invalid("tmin_s", "must be finite"));
        }
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "contains non-finite values"));
        }
        Ok(())
    }

    /// New set containing the given trials, in the given order.
    pub fn select_trials(&self, indices: &[usize]) -> EpochSet {
        let len = self.shape[1] * self.shape[2];
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(self.trial(i));
        }
        EpochSet {
            data,
            shape: [indices.len(), self.shape[1], self.shape[2]],
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            ..self.metadata_clone()
        }
    }

    /// Keeps only trials of the named classes; the vocabulary becomes
    /// `classes` in the given order.
    pub fn filter_classes(&self, classes: &[String]) -> Result<EpochSet> {
        let mapping: Vec<Option<usize>> = self
            .class_vocab
            .iter()
            .map(|c| classes.iter().position(|k| k == c))
            .collect();
        for c in classes {
            if self.class_index(c).is_none() {
                return Err(Error::invalid("class_vocab", format!("class {c} not present")));
            }
        }
        let keep: Vec<usize> = (0..self.n_trials())
            .filter(|&i| mapping[self.labels[i]].is_some())
            .collect();
        let mut out = self.select_trials(&keep);
        out.labels = keep
            .iter()
            .map(|&i| mapping[self.labels[i]].unwrap())
            .collect();
        out.class_vocab = classes.to_vec();
        Ok(out)
    }

    /// Drops vocabulary entries with no trials, remapping labels.
    pub fn compact_vocab(&self) -> EpochSet {
        let counts = self.class_counts();
        let present: Vec<String> = self
            .class_vocab
            .iter()
            .zip(&counts)
            .filter(|(_, &n)| n > 0)
            .map(|(c, _)| c.clone())
            .collect();
        self.filter_classes(&present)
            .expect("present classes are a subset of the vocabulary")
    }

    fn metadata_clone(&self) -> EpochSet {
        EpochSet {
            data: Vec::new(),
            shape: [0, self.shape[1], self.shape[2]],
            channel_names: self.channel_names.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            tmin_s: self.tmin_s,
            labels: Vec::new(),
            class_vocab: self.class_vocab.clone(),
            dataset_id: self.dataset_id.clone(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
        }
    }

    /// Concatenates sets along the trial axis. Channel layout, rate and window
    /// must agree; vocabularies are merged (union, first-seen order) and
    /// labels remapped.
    pub fn concat(sets: &[EpochSet]) -> Result<EpochSet> {
        let first = sets
            .first()
            .ok_or_else(|| Error::invalid("sets", "nothing to concatenate"))?;
        let mut vocab: Vec<String> = Vec::new();
        for s in sets {
            if s.shape[1..] != first.shape[1..] {
                return Err(Error::Shape {
                    expected: first.shape.to_vec(),
                    got: s.shape.to_vec(),
                });
            }
            if s.channel_names != first.channel_names {
                return Err(Error::invalid("channel_names", "differs between sets"));
            }
            if s.sampling_rate_hz != first.sampling_rate_hz || s.tmin_s != first.tmin_s {
                return Err(Error::invalid("sampling_rate_hz", "timing differs between sets"));
            }
            for c in &s.class_vocab {
                if !vocab.contains(c) {
                    vocab.push(c.clone());
                }
            }
        }
        let mut out = first.metadata_clone();
        for s in sets {
            let remap: Vec<usize> = s
                .class_vocab
                .iter()
                .map(|c| vocab.iter().position(|v| v == c).unwrap())
                .collect();
            out.data.extend_from_slice(&s.data);
            out.labels.extend(s.labels.iter().map(|&l| remap[l]));
        }
        out.shape[0] = out.labels.len();
        out.class_vocab = vocab;
        out.subject_id = if sets.iter().all(|s| s.subject_id == first.subject_id) {
            first.subject_id.clone()
        } else {
            "*".to_string()
        };
        out.session_id = if sets.iter().all(|s| s.session_id == first.session_id) {
            first.session_id.clone()
        } else {
            "*".to_string()
        };
        Ok(out)
    }

    /// SHA-256 over metadata and data bytes, hex encoded.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        let meta = serde_json::to_vec(&self.metadata(DATA_FILE)).expect("metadata serializes");
        h.update(&meta);
        h.update(data_bytes(&self.data));
        hex::encode(h.finalize())
    }

    fn metadata(&self, data_file: &str) -> Metadata {
        Metadata {
            format_version: FORMAT_VERSION,
            dataset_id: self.dataset_id.clone(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
            channel_names: self.channel_names.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            tmin_s: self.tmin_s,
            class_vocab: self.class_vocab.clone(),
            labels: self.labels.clone(),
            shape: self.shape,
            dtype: "f32le".to_string(),
            data_file: data_file.to_string(),
        }
    }
}

pub(crate) fn data_bytes(data: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn f32_from_le_bytes(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

/// Writes `bytes` to a sibling temp file and renames it into place.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}tmp",
        path.extension()
            .map(|e| format!("{}.", e.to_string_lossy()))
            .unwrap_or_default()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// `{root}/{dataset}/{subject}/{session}`
pub fn container_dir(root: &Path, dataset: &str, subject: &str, session: &str) -> PathBuf {
    root.join(dataset).join(subject).join(session)
}

/// Writes `set` as a container in directory `dir`, creating it if needed.
pub fn save_epochs(set: &EpochSet, dir: &Path) -> Result<()> {
    set.validate()?;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_atomic(&dir.join(DATA_FILE), &data_bytes(&set.data))?;
    let meta = serde_json::to_vec_pretty(&set.metadata(DATA_FILE))
        .map_err(|e| Error::format(dir.join(METADATA_FILE), e))?;
    write_atomic(&dir.join(METADATA_FILE), &meta)
}

/// Reads and validates the container in directory `dir`.
pub fn load_epochs(dir: &Path) -> Result<EpochSet> {
    let meta_path = dir.join(METADATA_FILE);
    let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: Metadata =
        serde_json::from_slice(&text).map_err(|e| Error::format(&meta_path, e))?;
    if meta.format_version != FORMAT_VERSION {
        return Err(Error::format(
            &meta_path,
            format!("unsupported format_version {}", meta.format_version),
        ));
    }
    if meta.dtype != "f32le" {
        return Err(Error::format(&meta_path, format!("unsupported dtype {}", meta.dtype)));
    }
    let data_path = dir.join(&meta.data_file);
    let bytes = fs::read(&data_path).map_err(|e| Error::io(&data_path, e))?;
    let expected = (meta.shape.iter().product::<usize>() * 4) as u64;
    if bytes.len() as u64 != expected {
        return Err(Error::SizeMismatch {
            path: data_path,
            expected,
            found: bytes.len() as u64,
        });
    }
    let set = EpochSet {
        data: f32_from_le_bytes(&bytes),
        shape: meta.shape,
        channel_names: meta.channel_names,
        sampling_rate_hz: meta.sampling_rate_hz,
        tmin_s: meta.tmin_s,
        labels: meta.labels,
        class_vocab: meta.class_vocab,
        dataset_id: meta.dataset_id,
        subject_id: meta.subject_id,
        session_id: meta.session_id,
    };
    set.validate()?;
    Ok(set)
}
