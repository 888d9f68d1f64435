//! Checkpoint directories: `checkpoint.json` (config, parameter manifest,
//! seed, provenance, blob digest) next to one little-endian f32 blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::epochs::{data_bytes, f32_from_le_bytes, write_atomic};
use crate::error::{Error, Result};
use crate::net::eegnet::{
    new_running, BnRunning, EEGNetConfig, EEGNetModel, HeadParams, Params, TrunkParams,
    HEAD_PARAM_NAMES, TRUNK_PARAM_NAMES,
};
use crate::net::train::TrainConfig;

pub const CHECKPOINT_VERSION: u32 = 1;
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const PARAMS_FILE: &str = "params.bin";

const RUNNING_NAMES: [&str; 6] = [
    "bn1.running_mean",
    "bn1.running_var",
    "bn2.running_mean",
    "bn2.running_var",
    "bn3.running_mean",
    "bn3.running_var",
];

/// Where the weights came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub donor_id: String,
    pub class_vocab: Vec<String>,
    pub n_trials: usize,
    pub train: TrainConfig,
    pub final_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset into the blob.
    pub offset: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub format_version: u32,
    /// `"full"` or `"trunk"`.
    pub kind: String,
    pub config: EEGNetConfig,
    pub parameters: Vec<ParamEntry>,
    pub seed: u64,
    pub provenance: Provenance,
    pub data_file: String,
    pub sha256: String,
}

/// A trunk without its head, as produced by pretraining.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkCheckpoint {
    pub config: EEGNetConfig,
    pub trunk: TrunkParams<f32>,
    pub running: BnRunning,
    pub seed: u64,
    pub provenance: Provenance,
}

fn running_tensors(running: &BnRunning) -> Vec<Tensor<f32>> {
    running
        .iter()
        .flat_map(|r| {
            [
                Tensor::new(vec![r.mean.len()], r.mean.clone()).expect("channels"),
                Tensor::new(vec![r.var.len()], r.var.clone()).expect("channels"),
            ]
        })
        .collect()
}

fn encode(tensors: Vec<(&str, &Tensor<f32>)>) -> (Vec<ParamEntry>, Vec<u8>) {
    let mut blob = Vec::new();
    let mut parameters = Vec::new();
    for (name, t) in tensors {
        parameters.push(ParamEntry {
            name: name.to_string(),
            shape: t.shape().to_vec(),
            offset: blob.len(),
        });
        blob.extend_from_slice(&data_bytes(t.values()));
    }
    (parameters, blob)
}

fn write(
    dir: &Path,
    kind: &str,
    config: &EEGNetConfig,
    tensors: Vec<(&str, &Tensor<f32>)>,
    seed: u64,
    provenance: &Provenance,
) -> Result<String> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let (parameters, blob) = encode(tensors);
    let sha256 = hex::encode(Sha256::digest(&blob));
    let meta = CheckpointMeta {
        format_version: CHECKPOINT_VERSION,
        kind: kind.to_string(),
        config: config.clone(),
        parameters,
        seed,
        provenance: provenance.clone(),
        data_file: PARAMS_FILE.to_string(),
        sha256: sha256.clone(),
    };
    write_atomic(&dir.join(PARAMS_FILE), &blob)?;
    let json = serde_json::to_vec_pretty(&meta).map_err(|e| Error::format(dir.join(CHECKPOINT_FILE), e))?;
    write_atomic(&dir.join(CHECKPOINT_FILE), &json)?;
    Ok(sha256)
}

/// Writes a full model (trunk, running statistics and head). Returns the
/// blob digest.
pub fn save_model(model: &EEGNetModel, seed: u64, provenance: &Provenance, dir: &Path) -> Result<String> {
    let running = running_tensors(&model.running);
    let mut tensors = model.params.tensors();
    let head = tensors.split_off(TRUNK_PARAM_NAMES.len());
    tensors.extend(RUNNING_NAMES.iter().copied().zip(running.iter()));
    tensors.extend(head);
    write(dir, "full", &model.config, tensors, seed, provenance)
}

fn trunk_tensors<'a>(ckpt: &'a TrunkCheckpoint, running: &'a [Tensor<f32>]) -> Vec<(&'static str, &'a Tensor<f32>)> {
    TRUNK_PARAM_NAMES
        .iter()
        .copied()
        .zip(ckpt.trunk.tensors())
        .chain(RUNNING_NAMES.iter().copied().zip(running.iter()))
        .collect()
}

/// Writes a trunk-only checkpoint. Returns the blob digest.
pub fn save_trunk(ckpt: &TrunkCheckpoint, dir: &Path) -> Result<String> {
    let running = running_tensors(&ckpt.running);
    write(dir, "trunk", &ckpt.config, trunk_tensors(ckpt, &running), ckpt.seed, &ckpt.provenance)
}

/// SHA-256 of the blob `save_trunk` would write, hex encoded.
pub fn trunk_digest(ckpt: &TrunkCheckpoint) -> String {
    let running = running_tensors(&ckpt.running);
    let (_, blob) = encode(trunk_tensors(ckpt, &running));
    hex::encode(Sha256::digest(&blob))
}

struct Loaded {
    meta: CheckpointMeta,
    blob: Vec<u8>,
}

impl Loaded {
    fn read(dir: &Path) -> Result<Loaded> {
        let meta_path = dir.join(CHECKPOINT_FILE);
        let text = fs::read(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
        let meta: CheckpointMeta = serde_json::from_slice(&text).map_err(|e| Error::format(&meta_path, e))?;
        if meta.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &meta_path,
                format!("unsupported format_version {}", meta.format_version),
            ));
        }
        meta.config.validate()?;
        let blob_path = dir.join(&meta.data_file);
        let blob = fs::read(&blob_path).map_err(|e| Error::io(&blob_path, e))?;
        if hex::encode(Sha256::digest(&blob)) != meta.sha256 {
            return Err(Error::Checksum(blob_path));
        }
        Ok(Loaded { meta, blob })
    }

    fn tensor(&self, name: &str, expected: &[usize]) -> Result<Tensor<f32>> {
        let path = Path::new(&self.meta.data_file);
        let entry = self
            .meta
            .parameters
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::format(path, format!("missing parameter {name}")))?;
        if entry.shape != expected {
            return Err(Error::Shape {
                expected: expected.to_vec(),
                got: entry.shape.clone(),
            });
        }
        let len = expected.iter().product::<usize>() * 4;
        let bytes = self
            .blob
            .get(entry.offset..entry.offset + len)
            .ok_or_else(|| Error::format(path, format!("parameter {name} out of bounds")))?;
        Tensor::new(expected.to_vec(), f32_from_le_bytes(bytes))
    }

    fn trunk(&self) -> Result<(TrunkParams<f32>, BnRunning)> {
        let cfg = &self.meta.config;
        let shapes = TrunkParams::<f32>::expected_shapes(cfg);
        let mut t = Vec::with_capacity(10);
        for (name, shape) in TRUNK_PARAM_NAMES.iter().zip(&shapes) {
            t.push(self.tensor(name, shape)?);
        }
        let [temporal, bn1_gamma, bn1_beta, spatial, bn2_gamma, bn2_beta, sep_depth, sep_point, bn3_gamma, bn3_beta]: [Tensor<f32>; 10] =
            t.try_into().expect("ten tensors");
        let mut running = new_running(cfg);
        for (stage, r) in running.iter_mut().enumerate() {
            let n = r.mean.len();
            r.mean = self.tensor(RUNNING_NAMES[2 * stage], &[n])?.into_values();
            r.var = self.tensor(RUNNING_NAMES[2 * stage + 1], &[n])?.into_values();
            if r.var.iter().any(|&v| !(v > 0.0)) {
                return Err(Error::invalid("running_var", "must be positive"));
            }
        }
        Ok((
            TrunkParams {
                temporal,
                bn1_gamma,
                bn1_beta,
                spatial,
                bn2_gamma,
                bn2_beta,
                sep_depth,
                sep_point,
                bn3_gamma,
                bn3_beta,
            },
            running,
        ))
    }
}

/// Reads the trunk of a trunk-only or full checkpoint.
pub fn load_trunk(dir: &Path) -> Result<TrunkCheckpoint> {
    let l = Loaded::read(dir)?;
    let (trunk, running) = l.trunk()?;
    Ok(TrunkCheckpoint {
        config: l.meta.config.clone(),
        trunk,
        running,
        seed: l.meta.seed,
        provenance: l.meta.provenance.clone(),
    })
}

/// Reads a full checkpoint into an inference-mode model.
pub fn load_model(dir: &Path) -> Result<(EEGNetModel, Provenance)> {
    let l = Loaded::read(dir)?;
    if l.meta.kind != "full" {
        return Err(Error::format(
            dir.join(CHECKPOINT_FILE),
            format!("expected a full checkpoint, found {:?}", l.meta.kind),
        ));
    }
    let (trunk, running) = l.trunk()?;
    let cfg = &l.meta.config;
    let head = HeadParams {
        weight: l.tensor(HEAD_PARAM_NAMES[0], &[cfg.embedding_dim(), cfg.n_classes])?,
        bias: l.tensor(HEAD_PARAM_NAMES[1], &[cfg.n_classes])?,
    };
    let model = EEGNetModel::from_parts(cfg.clone(), Params { trunk, head }, running)?;
    Ok((model, l.meta.provenance))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::net::eegnet::Mode;

    fn provenance() -> Provenance {
        Provenance {
            donor_id: "toy".into(),
            class_vocab: vec!["lh".into(), "rh".into()],
            n_trials: 10,
            train: TrainConfig::default(),
            final_loss: Some(0.5),
        }
    }

    #[test]
    fn full_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut model = EEGNetModel::new(EEGNetConfig::default(), 5).unwrap();
        model.set_mode(Mode::Inference);
        model.running[1].mean[3] = 0.25;
        save_model(&model, 5, &provenance(), dir.path()).unwrap();
        let (back, prov) = load_model(dir.path()).unwrap();
        assert_eq!(back, model);
        assert_eq!(prov, provenance());
    }

    #[test]
    fn trunk_round_trip_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let model = EEGNetModel::new(EEGNetConfig::default(), 6).unwrap();
        let ckpt = TrunkCheckpoint {
            config: model.config.clone(),
            trunk: model.params.trunk.clone(),
            running: model.running.clone(),
            seed: 6,
            provenance: provenance(),
        };
        let digest = save_trunk(&ckpt, dir.path()).unwrap();
        assert_eq!(digest, trunk_digest(&ckpt));
        assert_eq!(load_trunk(dir.path()).unwrap(), ckpt);
        let meta: CheckpointMeta =
            serde_json::from_slice(&fs::read(dir.path().join(CHECKPOINT_FILE)).unwrap()).unwrap();
        assert_eq!(meta.kind, "trunk");
        assert_eq!(meta.parameters[0].name, "temporal.weight");
        assert_eq!(meta.parameters[0].shape, [8, 1, 64]);
        assert_eq!(meta.parameters[1].offset, 8 * 64 * 4);
        assert!(meta.parameters.iter().all(|p| !p.name.starts_with("head")));
        assert!(load_model(dir.path()).is_err());
    }

    #[test]
    fn corrupted_blob_detected() {
        let dir = tempfile::tempdir().unwrap();
        let model = EEGNetModel::new(EEGNetConfig::default(), 6).unwrap();
        save_model(&model, 6, &provenance(), dir.path()).unwrap();
        let path = dir.path().join(PARAMS_FILE);
        let mut bytes = fs::read(&path).unwrap();
        bytes[100] ^= 1;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_trunk(dir.path()), Err(Error::Checksum(_))));
    }
}
