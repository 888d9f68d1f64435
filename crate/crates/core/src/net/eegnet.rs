//! The compact convolutional network: temporal convolution, depthwise
//! spatial convolution, separable convolution and a linear head.
//!
//! ```text
//! x [b, C, T]
//!  → temporal conv (F1 filters, K taps, same padding) → BN
//!  → depthwise spatial conv (D per filter, spans C) → BN → ELU → avgpool p1 → dropout
//!  → separable conv (depthwise 16 taps + pointwise F2) → BN → ELU → avgpool p2 → dropout
//!  → flatten (F2 · T/(p1·p2)) → linear head
//! ```

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{affine_rows, BatchStats, Scalar, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Rows per inference batch, bounding activation memory.
const INFER_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EEGNetConfig {
    pub n_channels: usize,
    pub n_samples: usize,
    pub n_classes: usize,
    pub f1: usize,
    pub d: usize,
    pub f2: usize,
    pub temporal_kernel_len: usize,
    pub separable_kernel_len: usize,
    pub pool1: usize,
    pub pool2: usize,
    pub dropout_p: f64,
    pub max_spatial_norm: f64,
    pub max_head_norm: f64,
    pub bn_eps: f64,
    /// Weight of the previous running statistic in each update.
    pub bn_momentum: f64,
}

impl Default for EEGNetConfig {
    fn default() -> Self {
        EEGNetConfig {
            n_channels: 3,
            n_samples: 384,
            n_classes: 2,
            f1: 8,
            d: 2,
            f2: 16,
            temporal_kernel_len: 64,
            separable_kernel_len: 16,
            pool1: 4,
            pool2: 8,
            dropout_p: 0.25,
            max_spatial_norm: 1.0,
            max_head_norm: 0.25,
            bn_eps: 1e-3,
            bn_momentum: 0.99,
        }
    }
}

impl EEGNetConfig {
    pub fn embedding_dim(&self) -> usize {
        self.f2 * (self.n_samples / (self.pool1 * self.pool2))
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("n_channels", self.n_channels),
            ("n_samples", self.n_samples),
            ("f1", self.f1),
            ("d", self.d),
            ("f2", self.f2),
            ("temporal_kernel_len", self.temporal_kernel_len),
            ("separable_kernel_len", self.separable_kernel_len),
            ("pool1", self.pool1),
            ("pool2", self.pool2),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::invalid("net config", format!("{name} must be >= 1")));
            }
        }
        if self.f2 != self.f1 * self.d {
            return Err(Error::invalid("net config", "f2 must equal f1 * d"));
        }
        if self.n_samples % (self.pool1 * self.pool2) != 0 {
            return Err(Error::invalid(
                "net config",
                "pool1 * pool2 must divide n_samples",
            ));
        }
        if self.n_classes < 2 {
            return Err(Error::TooFewClasses(self.n_classes));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid("net config", "dropout_p must lie in [0, 1)"));
        }
        if !(self.max_spatial_norm > 0.0 && self.max_head_norm > 0.0) {
            return Err(Error::invalid("net config", "max norms must be positive"));
        }
        if !(self.bn_eps > 0.0) || !(0.0..1.0).contains(&self.bn_momentum) {
            return Err(Error::invalid("net config", "bad batch-norm settings"));
        }
        Ok(())
    }
}

/// Everything but the classification head.
#[derive(Debug, Clone, PartialEq)]
pub struct TrunkParams<T = f32> {
    /// `[F1, 1, K]`
    pub temporal: Tensor<T>,
    pub bn1_gamma: Tensor<T>,
    pub bn1_beta: Tensor<T>,
    /// `[F1·D, C]`
    pub spatial: Tensor<T>,
    pub bn2_gamma: Tensor<T>,
    pub bn2_beta: Tensor<T>,
    /// `[F1·D, 1, 16]`
    pub sep_depth: Tensor<T>,
    /// `[F2, F1·D]`
    pub sep_point: Tensor<T>,
    pub bn3_gamma: Tensor<T>,
    pub bn3_beta: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeadParams<T = f32> {
    /// `[embedding_dim, n_classes]`
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Params<T = f32> {
    pub trunk: TrunkParams<T>,
    pub head: HeadParams<T>,
}

pub const TRUNK_PARAM_NAMES: [&str; 10] = [
    "temporal.weight",
    "bn1.gamma",
    "bn1.beta",
    "spatial.weight",
    "bn2.gamma",
    "bn2.beta",
    "separable.depthwise",
    "separable.pointwise",
    "bn3.gamma",
    "bn3.beta",
];
pub const HEAD_PARAM_NAMES: [&str; 2] = ["head.weight", "head.bias"];

impl<T: Scalar> TrunkParams<T> {
    /// Glorot-uniform kernels, unit γ, zero β.
    pub fn init(cfg: &EEGNetConfig, rng: &mut impl Rng) -> Self {
        let f1d = cfg.f1 * cfg.d;
        let (k, c, ks) = (cfg.temporal_kernel_len, cfg.n_channels, cfg.separable_kernel_len);
        TrunkParams {
            temporal: glorot(&[cfg.f1, 1, k], k, cfg.f1 * k, rng),
            bn1_gamma: ones(cfg.f1),
            bn1_beta: Tensor::zeros(&[cfg.f1]),
            spatial: glorot(&[f1d, c], c, cfg.d * c, rng),
            bn2_gamma: ones(f1d),
            bn2_beta: Tensor::zeros(&[f1d]),
            sep_depth: glorot(&[f1d, 1, ks], ks, ks, rng),
            sep_point: glorot(&[cfg.f2, f1d], f1d, cfg.f2, rng),
            bn3_gamma: ones(cfg.f2),
            bn3_beta: Tensor::zeros(&[cfg.f2]),
        }
    }

    pub fn tensors(&self) -> [&Tensor<T>; 10] {
        [
            &self.temporal,
            &self.bn1_gamma,
            &self.bn1_beta,
            &self.spatial,
            &self.bn2_gamma,
            &self.bn2_beta,
            &self.sep_depth,
            &self.sep_point,
            &self.bn3_gamma,
            &self.bn3_beta,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor<T>; 10] {
        [
            &mut self.temporal,
            &mut self.bn1_gamma,
            &mut self.bn1_beta,
            &mut self.spatial,
            &mut self.bn2_gamma,
            &mut self.bn2_beta,
            &mut self.sep_depth,
            &mut self.sep_point,
            &mut self.bn3_gamma,
            &mut self.bn3_beta,
        ]
    }

    pub fn cast<U: Scalar>(&self) -> TrunkParams<U> {
        let t = self.tensors();
        TrunkParams {
            temporal: t[0].cast(),
            bn1_gamma: t[1].cast(),
            bn1_beta: t[2].cast(),
            spatial: t[3].cast(),
            bn2_gamma: t[4].cast(),
            bn2_beta: t[5].cast(),
            sep_depth: t[6].cast(),
            sep_point: t[7].cast(),
            bn3_gamma: t[8].cast(),
            bn3_beta: t[9].cast(),
        }
    }

    /// Shapes implied by `cfg`, in [`TRUNK_PARAM_NAMES`] order.
    pub fn expected_shapes(cfg: &EEGNetConfig) -> [Vec<usize>; 10] {
        let f1d = cfg.f1 * cfg.d;
        [
            vec![cfg.f1, 1, cfg.temporal_kernel_len],
            vec![cfg.f1],
            vec![cfg.f1],
            vec![f1d, cfg.n_channels],
            vec![f1d],
            vec![f1d],
            vec![f1d, 1, cfg.separable_kernel_len],
            vec![cfg.f2, f1d],
            vec![cfg.f2],
            vec![cfg.f2],
        ]
    }
}

impl<T: Scalar> HeadParams<T> {
    pub fn init(cfg: &EEGNetConfig, rng: &mut impl Rng) -> Self {
        let d = cfg.embedding_dim();
        HeadParams {
            weight: glorot(&[d, cfg.n_classes], d, cfg.n_classes, rng),
            bias: Tensor::zeros(&[cfg.n_classes]),
        }
    }

    pub fn zeros(cfg: &EEGNetConfig) -> Self {
        HeadParams {
            weight: Tensor::zeros(&[cfg.embedding_dim(), cfg.n_classes]),
            bias: Tensor::zeros(&[cfg.n_classes]),
        }
    }

    pub fn cast<U: Scalar>(&self) -> HeadParams<U> {
        HeadParams {
            weight: self.weight.cast(),
            bias: self.bias.cast(),
        }
    }
}

impl<T: Scalar> Params<T> {
    pub fn tensors(&self) -> Vec<(&'static str, &Tensor<T>)> {
        TRUNK_PARAM_NAMES
            .iter()
            .copied()
            .zip(self.trunk.tensors())
            .chain([
                (HEAD_PARAM_NAMES[0], &self.head.weight),
                (HEAD_PARAM_NAMES[1], &self.head.bias),
            ])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out: Vec<&mut Tensor<T>> = self.trunk.tensors_mut().into_iter().collect();
        out.push(&mut self.head.weight);
        out.push(&mut self.head.bias);
        out
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            trunk: self.trunk.cast(),
            head: self.head.cast(),
        }
    }
}

fn ones<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::new(vec![n], vec![T::one(); n]).expect("non-empty")
}

fn glorot<T: Scalar>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut impl Rng) -> Tensor<T> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let n = shape.iter().product();
    let values = (0..n).map(|_| T::lift(rng.random_range(-limit..limit))).collect();
    Tensor::new(shape.to_vec(), values).expect("shape matches")
}

/// Running batch-norm statistics for one stage.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl RunningStats {
    pub fn new(channels: usize) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    /// `running ← momentum·running + (1 − momentum)·batch`, unbiased variance.
    pub fn update(&mut self, batch: &BatchStats, momentum: f64) {
        let n = batch.count as f64;
        let unbias = if n > 1.0 { n / (n - 1.0) } else { 1.0 };
        for c in 0..self.mean.len() {
            let m = momentum * self.mean[c] as f64 + (1.0 - momentum) * batch.mean[c];
            let v = momentum * self.var[c] as f64 + (1.0 - momentum) * batch.var[c] * unbias;
            self.mean[c] = m as f32;
            self.var[c] = v as f32;
        }
    }
}

pub type BnRunning = [RunningStats; 3];

pub fn new_running(cfg: &EEGNetConfig) -> BnRunning {
    [
        RunningStats::new(cfg.f1),
        RunningStats::new(cfg.f1 * cfg.d),
        RunningStats::new(cfg.f2),
    ]
}

/// How batch norm and dropout behave in a graph.
pub enum Pass<'a> {
    /// Batch statistics; dropout masks drawn from the stream.
    Train(&'a mut ChaCha8Rng),
    /// Running statistics; no dropout.
    Infer(&'a BnRunning),
}

pub struct TrunkGraph {
    pub params: [Var; 10],
    pub embedding: Var,
    pub batch_stats: Vec<BatchStats>,
    /// Inputs of the two ELU stages.
    pub elu_inputs: [Var; 2],
}

fn check_finite<T: Scalar>(tape: &Tape<T>, v: Var, layer: &'static str) -> Result<()> {
    if tape.value(v).is_finite() {
        Ok(())
    } else {
        Err(Error::NonFinite(layer))
    }
}

fn check_input<T: Scalar>(cfg: &EEGNetConfig, x: &Tensor<T>) -> Result<usize> {
    let s = x.shape();
    if s.len() != 3 || s[1] != cfg.n_channels || s[2] != cfg.n_samples {
        return Err(Error::Shape {
            expected: vec![s.first().copied().unwrap_or(0), cfg.n_channels, cfg.n_samples],
            got: s.to_vec(),
        });
    }
    Ok(s[0])
}

/// Records the trunk on `tape` and returns the flattened embedding node.
pub fn build_trunk<T: Scalar>(
    tape: &mut Tape<T>,
    cfg: &EEGNetConfig,
    trunk: &TrunkParams<T>,
    x: &Tensor<T>,
    mut pass: Pass<'_>,
    requires_grad: bool,
) -> Result<TrunkGraph> {
    let b = check_input(cfg, x)?;
    let input = tape.leaf(
        x.clone().reshape(vec![b, 1, cfg.n_channels, cfg.n_samples])?,
        false,
    );
    let p: Vec<Var> = trunk
        .tensors()
        .into_iter()
        .map(|t| tape.leaf(t.clone(), requires_grad))
        .collect();
    let params: [Var; 10] = p.try_into().expect("ten trunk tensors");
    let mut batch_stats = Vec::new();

    let mut norm = |tape: &mut Tape<T>, h: Var, stage: usize, gamma: Var, beta: Var, pass: &Pass<'_>| -> Result<Var> {
        match pass {
            Pass::Train(_) => {
                let (y, stats) = tape.batch_norm(h, gamma, beta, cfg.bn_eps)?;
                batch_stats.push(stats);
                Ok(y)
            }
            Pass::Infer(running) => {
                let r = &running[stage];
                let g = tape.value(gamma).values().to_vec();
                let be = tape.value(beta).values().to_vec();
                let mut scale = Vec::with_capacity(g.len());
                let mut shift = Vec::with_capacity(g.len());
                for c in 0..g.len() {
                    let s = g[c].as_f64() / (r.var[c] as f64 + cfg.bn_eps).sqrt();
                    scale.push(T::lift(s));
                    shift.push(T::lift(be[c].as_f64() - r.mean[c] as f64 * s));
                }
                tape.channel_affine(h, scale, &shift)
            }
        }
    };
    let dropout = |tape: &mut Tape<T>, h: Var, pass: &mut Pass<'_>| -> Result<Var> {
        match pass {
            Pass::Train(rng) if cfg.dropout_p > 0.0 => {
                let keep = T::lift(1.0 / (1.0 - cfg.dropout_p));
                let n = tape.value(h).len();
                let mask = (0..n)
                    .map(|_| {
                        if rng.random::<f64>() < cfg.dropout_p {
                            T::zero()
                        } else {
                            keep
                        }
                    })
                    .collect();
                tape.mask(h, mask)
            }
            _ => Ok(h),
        }
    };

    let h = tape.conv1d(input, params[0], 1)?;
    check_finite(tape, h, "temporal conv")?;
    let h = norm(tape, h, 0, params[1], params[2], &pass)?;
    let h = tape.spatial_depthwise(h, params[3])?;
    check_finite(tape, h, "spatial conv")?;
    let pre1 = norm(tape, h, 1, params[4], params[5], &pass)?;
    let h = tape.elu(pre1);
    let h = tape.avg_pool(h, cfg.pool1)?;
    let h = dropout(tape, h, &mut pass)?;
    let h = tape.conv1d(h, params[6], cfg.f1 * cfg.d)?;
    let h = tape.pointwise(h, params[7])?;
    check_finite(tape, h, "separable conv")?;
    let pre2 = norm(tape, h, 2, params[8], params[9], &pass)?;
    let h = tape.elu(pre2);
    let h = tape.avg_pool(h, cfg.pool2)?;
    let h = dropout(tape, h, &mut pass)?;
    let embedding = tape.flatten(h);
    check_finite(tape, embedding, "embedding")?;
    Ok(TrunkGraph {
        params,
        embedding,
        batch_stats,
        elu_inputs: [pre1, pre2],
    })
}

/// Training-mode loss and gradients for arbitrary precision.
pub struct LossAndGrad<T> {
    pub loss: f64,
    pub grads: Params<T>,
    pub batch_stats: Vec<BatchStats>,
}

/// Mean softmax cross-entropy of a training-mode pass and its gradient with
/// respect to every parameter. Dropout masks come from `rng`.
pub fn training_loss<T: Scalar>(
    cfg: &EEGNetConfig,
    params: &Params<T>,
    x: &Tensor<T>,
    labels: &[usize],
    rng: &mut ChaCha8Rng,
) -> Result<LossAndGrad<T>> {
    let mut tape = Tape::new();
    let g = build_trunk(&mut tape, cfg, &params.trunk, x, Pass::Train(rng), true)?;
    let w = tape.leaf(params.head.weight.clone(), true);
    let b = tape.leaf(params.head.bias.clone(), true);
    let logits = tape.linear(g.embedding, w, b)?;
    check_finite(&tape, logits, "head")?;
    let loss = tape.softmax_cross_entropy(logits, labels)?;
    let grads = tape.backward(loss);
    let t: Vec<Tensor<T>> = g.params.iter().map(|&v| grads.get(v, &tape)).collect();
    let [temporal, bn1_gamma, bn1_beta, spatial, bn2_gamma, bn2_beta, sep_depth, sep_point, bn3_gamma, bn3_beta]: [Tensor<T>; 10] =
        t.try_into().expect("ten trunk grads");
    Ok(LossAndGrad {
        loss: tape.value(loss).values()[0].as_f64(),
        grads: Params {
            trunk: TrunkParams {
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
            head: HeadParams {
                weight: grads.get(w, &tape),
                bias: grads.get(b, &tape),
            },
        },
        batch_stats: g.batch_stats,
    })
}

/// Sign pattern (`> 0`) of every ELU input in a training-mode pass. Two
/// parameter settings with equal patterns lie on the same smooth piece of the
/// loss.
pub fn elu_input_signs<T: Scalar>(
    cfg: &EEGNetConfig,
    params: &Params<T>,
    x: &Tensor<T>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<bool>> {
    let mut tape = Tape::new();
    let g = build_trunk(&mut tape, cfg, &params.trunk, x, Pass::Train(rng), false)?;
    Ok(g.elu_inputs
        .iter()
        .flat_map(|&v| tape.value(v).values().iter().map(|&z| z > T::zero()).collect::<Vec<_>>())
        .collect())
}

/// Inference-mode embeddings `[b, embedding_dim]`.
pub fn embed_with(
    cfg: &EEGNetConfig,
    trunk: &TrunkParams<f32>,
    running: &BnRunning,
    x: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let b = check_input(cfg, x)?;
    let dim = cfg.embedding_dim();
    let mut out = Vec::with_capacity(b * dim);
    for start in (0..b).step_by(INFER_CHUNK) {
        let chunk = x.slice_rows(start, (start + INFER_CHUNK).min(b));
        let mut tape = Tape::new();
        let g = build_trunk(&mut tape, cfg, trunk, &chunk, Pass::Infer(running), false)?;
        out.extend_from_slice(tape.value(g.embedding).values());
    }
    Tensor::new(vec![b, dim], out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Training,
    Inference,
}

#[derive(Debug, Clone)]
pub struct EEGNetModel {
    pub config: EEGNetConfig,
    pub params: Params<f32>,
    pub running: BnRunning,
    mode: Mode,
    dropout_rng: ChaCha8Rng,
}

impl PartialEq for EEGNetModel {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.params == other.params
            && self.running == other.running
            && self.mode == other.mode
    }
}

impl EEGNetModel {
    /// Glorot-initialized model in training mode. Initialization and the
    /// dropout stream are both derived from `seed`.
    pub fn new(config: EEGNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut init = ChaCha8Rng::seed_from_u64(seed);
        init.set_stream(1);
        let trunk = TrunkParams::init(&config, &mut init);
        let head = HeadParams::init(&config, &mut init);
        let mut dropout_rng = ChaCha8Rng::seed_from_u64(seed);
        dropout_rng.set_stream(3);
        let running = new_running(&config);
        let mut model = EEGNetModel {
            config,
            params: Params { trunk, head },
            running,
            mode: Mode::Training,
            dropout_rng,
        };
        model.apply_max_norm();
        Ok(model)
    }

    pub fn from_parts(config: EEGNetConfig, params: Params<f32>, running: BnRunning) -> Result<Self> {
        config.validate()?;
        let shapes = TrunkParams::<f32>::expected_shapes(&config);
        for (t, s) in params.trunk.tensors().iter().zip(&shapes) {
            if t.shape() != s.as_slice() {
                return Err(Error::Shape {
                    expected: s.clone(),
                    got: t.shape().to_vec(),
                });
            }
        }
        let head_shape = [config.embedding_dim(), config.n_classes];
        if params.head.weight.shape() != head_shape || params.head.bias.len() != config.n_classes {
            return Err(Error::Shape {
                expected: head_shape.to_vec(),
                got: params.head.weight.shape().to_vec(),
            });
        }
        Ok(EEGNetModel {
            config,
            params,
            running,
            mode: Mode::Inference,
            dropout_rng: ChaCha8Rng::seed_from_u64(0),
        })
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    /// Logits `[b, n_classes]`. Training mode uses batch statistics and draws
    /// dropout masks from the model's seeded stream.
    pub fn forward(&mut self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        match self.mode {
            Mode::Inference => self.logits(batch),
            Mode::Training => {
                check_input(&self.config, batch)?;
                let mut tape = Tape::new();
                let g = build_trunk(
                    &mut tape,
                    &self.config,
                    &self.params.trunk,
                    batch,
                    Pass::Train(&mut self.dropout_rng),
                    false,
                )?;
                let emb = tape.value(g.embedding).clone();
                self.apply_head(&emb)
            }
        }
    }

    /// Inference-mode logits; safe to call concurrently.
    pub fn logits(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        let emb = self.embed(batch)?;
        self.apply_head(&emb)
    }

    /// Inference-mode activation feeding the head.
    pub fn embed(&self, batch: &Tensor<f32>) -> Result<Tensor<f32>> {
        embed_with(&self.config, &self.params.trunk, &self.running, batch)
    }

    /// `embedding · W + b`.
    pub fn apply_head(&self, embedding: &Tensor<f32>) -> Result<Tensor<f32>> {
        let d = self.config.embedding_dim();
        let m = self.config.n_classes;
        if embedding.shape().len() != 2 || embedding.shape()[1] != d {
            return Err(Error::Shape {
                expected: vec![embedding.shape()[0], d],
                got: embedding.shape().to_vec(),
            });
        }
        let y = affine_rows(
            embedding.values(),
            self.params.head.weight.values(),
            self.params.head.bias.values(),
            d,
            m,
        );
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("head"));
        }
        Tensor::new(vec![embedding.shape()[0], m], y)
    }

    /// Training-mode loss and gradients; consumes dropout masks from the
    /// model's stream.
    pub fn loss_and_grad(&mut self, batch: &Tensor<f32>, labels: &[usize]) -> Result<LossAndGrad<f32>> {
        training_loss(&self.config, &self.params, batch, labels, &mut self.dropout_rng)
    }

    /// Projects each spatial kernel and each head column onto its L2 ball.
    pub fn apply_max_norm(&mut self) {
        let c = self.config.n_channels;
        for row in self.params.trunk.spatial.values_mut().chunks_mut(c) {
            renorm(row, self.config.max_spatial_norm);
        }
        let (d, m) = (self.config.embedding_dim(), self.config.n_classes);
        let w = self.params.head.weight.values_mut();
        for j in 0..m {
            let norm = (0..d).map(|i| (w[i * m + j] as f64).powi(2)).sum::<f64>().sqrt();
            if norm > self.config.max_head_norm {
                let s = (self.config.max_head_norm / (norm + 1e-7)) as f32;
                for i in 0..d {
                    w[i * m + j] *= s;
                }
            }
        }
    }
}

fn renorm(v: &mut [f32], max: f64) {
    let norm = v.iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
    if norm > max {
        let s = (max / (norm + 1e-7)) as f32;
        for x in v {
            *x *= s;
        }
    }
}

/// Copies trials of an epoch set into a `[n, C, T]` tensor.
pub fn epochs_tensor(set: &crate::epochs::EpochSet) -> Result<Tensor<f32>> {
    Tensor::new(set.shape.to_vec(), set.data.clone())
}
