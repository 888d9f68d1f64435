//! Minibatch Adam training.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::net::eegnet::{epochs_tensor, EEGNetConfig, EEGNetModel, Mode};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub adam_betas: (f64, f64),
    pub adam_eps: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            learning_rate: 1e-3,
            adam_betas: (0.9, 0.999),
            adam_eps: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs", "must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size", "must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid("learning_rate", "must be positive"));
        }
        let (b1, b2) = self.adam_betas;
        if !(0.0..1.0).contains(&b1) || !(0.0..1.0).contains(&b2) || !(self.adam_eps > 0.0) {
            return Err(Error::invalid("adam", "betas must lie in [0, 1), eps > 0"));
        }
        Ok(())
    }
}

/// Per-epoch training history.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    /// Mean minibatch loss of each epoch.
    pub epoch_loss: Vec<f64>,
    /// Largest spatial-kernel and head-column norms seen after any step.
    pub max_spatial_norm_seen: f64,
    pub max_head_norm_seen: f64,
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: i32,
}

impl Adam {
    fn new(sizes: &[usize]) -> Self {
        Adam {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            step: 0,
        }
    }

    fn update(&mut self, cfg: &TrainConfig, params: Vec<&mut Tensor<f32>>, grads: Vec<&Tensor<f32>>) {
        self.step += 1;
        let (b1, b2) = cfg.adam_betas;
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        for (i, (p, g)) in params.into_iter().zip(grads).enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for ((w, &g), (m, v)) in p
                .values_mut()
                .iter_mut()
                .zip(g.values())
                .zip(m.iter_mut().zip(v.iter_mut()))
            {
                let g = g as f64;
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let step = cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.adam_eps);
                *w = (*w as f64 - step) as f32;
            }
        }
    }
}

fn check_training_set(set: &EpochSet, model_cfg: &EEGNetConfig) -> Result<()> {
    set.validate()?;
    if set.n_channels() != model_cfg.n_channels || set.n_samples() != model_cfg.n_samples {
        return Err(Error::Shape {
            expected: vec![set.n_trials(), model_cfg.n_channels, model_cfg.n_samples],
            got: set.shape.to_vec(),
        });
    }
    if set.class_vocab.len() != model_cfg.n_classes {
        return Err(Error::invalid(
            "n_classes",
            format!(
                "model has {} classes, training set has {}",
                model_cfg.n_classes,
                set.class_vocab.len()
            ),
        ));
    }
    for (class, count) in set.class_vocab.iter().zip(set.class_counts()) {
        if count == 0 {
            return Err(Error::EmptyClass(class.clone()));
        }
    }
    Ok(())
}

pub fn train_classifier(cfg: &TrainConfig, train: &EpochSet, model_cfg: &EEGNetConfig) -> Result<EEGNetModel> {
    train_classifier_logged(cfg, train, model_cfg).map(|(m, _)| m)
}

/// Trains from a seeded Glorot initialization and returns the model in
/// inference mode with its loss history. Single-threaded and bit-deterministic.
pub fn train_classifier_logged(
    cfg: &TrainConfig,
    train: &EpochSet,
    model_cfg: &EEGNetConfig,
) -> Result<(EEGNetModel, TrainLog)> {
    cfg.validate()?;
    model_cfg.validate()?;
    check_training_set(train, model_cfg)?;
    let x = epochs_tensor(train)?;
    let mut model = EEGNetModel::new(model_cfg.clone(), cfg.seed)?;
    model.set_mode(Mode::Training);

    let sizes: Vec<usize> = model.params.tensors().iter().map(|(_, t)| t.len()).collect();
    let mut adam = Adam::new(&sizes);
    let mut order_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    order_rng.set_stream(2);
    let n = train.n_trials();
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = TrainLog::default();
    let per_trial = model_cfg.n_channels * model_cfg.n_samples;

    for epoch in 0..cfg.epochs {
        if cfg.shuffle {
            order.shuffle(&mut order_rng);
        }
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let mut values = Vec::with_capacity(chunk.len() * per_trial);
            for &i in chunk {
                values.extend_from_slice(&x.values()[i * per_trial..(i + 1) * per_trial]);
            }
            let batch = Tensor::new(vec![chunk.len(), model_cfg.n_channels, model_cfg.n_samples], values)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            let lg = model.loss_and_grad(&batch, &labels)?;
            adam.update(
                cfg,
                model.params.tensors_mut(),
                lg.grads.tensors().into_iter().map(|(_, t)| t).collect(),
            );
            model.apply_max_norm();
            let (s, h) = max_norms(&model);
            log.max_spatial_norm_seen = log.max_spatial_norm_seen.max(s);
            log.max_head_norm_seen = log.max_head_norm_seen.max(h);
            for (stage, stats) in lg.batch_stats.iter().enumerate() {
                model.running[stage].update(stats, model_cfg.bn_momentum);
            }
            total += lg.loss;
            batches += 1;
        }
        let mean = total / batches as f64;
        log::debug!("epoch {epoch}: loss {mean:.5}");
        log.epoch_loss.push(mean);
    }
    model.set_mode(Mode::Inference);
    Ok((model, log))
}

/// Largest spatial-kernel norm and largest head-column norm.
pub fn max_norms(model: &EEGNetModel) -> (f64, f64) {
    let cfg = &model.config;
    let spatial = model
        .params
        .trunk
        .spatial
        .values()
        .chunks(cfg.n_channels)
        .map(|r| r.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let (d, m) = (cfg.embedding_dim(), cfg.n_classes);
    let w = model.params.head.weight.values();
    let head = (0..m)
        .map(|j| (0..d).map(|i| (w[i * m + j] as f64).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    (spatial, head)
}

/// Fraction of trials whose arg-max logit equals the label.
pub fn training_accuracy(model: &EEGNetModel, set: &EpochSet) -> Result<f64> {
    let logits = model.logits(&epochs_tensor(set)?)?;
    let m = model.config.n_classes;
    let hits = logits
        .values()
        .chunks(m)
        .zip(&set.labels)
        .filter(|(row, &l)| argmax(row) == l)
        .count();
    Ok(hits as f64 / set.n_trials().max(1) as f64)
}

pub(crate) fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
