//! Oracles shared by the integration tests. Nothing here calls into the
//! code under test except to build inputs.
#![allow(dead_code)]

use std::f64::consts::PI;
use std::path::Path;

use mi_transfer::autodiff::Tensor;
use mi_transfer::epochs::EpochSet;
use mi_transfer::harness::SyntheticDataset;
use mi_transfer::net::eegnet::{elu_input_signs, training_loss, EEGNetConfig, Params};
use mi_transfer::synth::SyntheticSpec;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One trial, the same `signal(t)` on every channel.
pub fn tone_set(
    channels: &[&str],
    rate: f64,
    n_samples: usize,
    tmin: f64,
    signal: impl Fn(f64) -> f64,
) -> EpochSet {
    let mut data = Vec::with_capacity(channels.len() * n_samples);
    for _ in channels {
        data.extend((0..n_samples).map(|i| signal(tmin + i as f64 / rate) as f32));
    }
    EpochSet {
        data,
        shape: [1, channels.len(), n_samples],
        channel_names: channels.iter().map(|c| c.to_string()).collect(),
        sampling_rate_hz: rate,
        tmin_s: tmin,
        labels: vec![0],
        class_vocab: vec!["lh".into()],
        dataset_id: "tone".into(),
        subject_id: "1".into(),
        session_id: "0".into(),
    }
}

pub fn channel(set: &EpochSet, trial: usize, ch: usize) -> Vec<f64> {
    let t = set.n_samples();
    let start = (trial * set.n_channels() + ch) * t;
    set.data[start..start + t].iter().map(|&v| v as f64).collect()
}

/// Middle half of a series.
pub fn central(x: &[f64]) -> &[f64] {
    let q = x.len() / 4;
    &x[q..x.len() - q]
}

/// Amplitude of the `freq` component by least squares on `[sin, cos, 1]`.
pub fn fitted_amplitude(x: &[f64], rate: f64, freq: f64) -> f64 {
    let n = x.len();
    let a = DMatrix::from_fn(n, 3, |i, j| {
        let w = 2.0 * PI * freq * i as f64 / rate;
        match j {
            0 => w.sin(),
            1 => w.cos(),
            _ => 1.0,
        }
    });
    let b = DVector::from_column_slice(x);
    let coef = (a.transpose() * &a).lu().solve(&(a.transpose() * b)).expect("regular normal equations");
    coef[0].hypot(coef[1])
}

/// Hann-windowed single-bin DFT amplitude; direct summation.
pub fn dft_amplitudes(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    let w: Vec<f64> = (0..n).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos()).collect();
    let wsum: f64 = w.iter().sum();
    (0..=n / 2)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, (&v, &wi)) in x.iter().zip(&w).enumerate() {
                let ph = 2.0 * PI * (k * i) as f64 / n as f64;
                re += v * wi * ph.cos();
                im -= v * wi * ph.sin();
            }
            2.0 * re.hypot(im) / wsum
        })
        .collect()
}

/// Welch-style mean periodogram power in `[lo, hi]` Hz: Hann segments of
/// `seg` samples with half overlap, direct DFT.
pub fn band_power(x: &[f64], rate: f64, seg: usize, lo: f64, hi: f64) -> f64 {
    let w: Vec<f64> = (0..seg).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / seg as f64).cos()).collect();
    let mut total = 0.0;
    let mut n_seg = 0;
    let mut start = 0;
    while start + seg <= x.len() {
        let s = &x[start..start + seg];
        let mean = s.iter().sum::<f64>() / seg as f64;
        for k in 0..=seg / 2 {
            let f = k as f64 * rate / seg as f64;
            if f < lo || f > hi {
                continue;
            }
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..seg {
                let ph = 2.0 * PI * (k * i) as f64 / seg as f64;
                re += (s[i] - mean) * w[i] * ph.cos();
                im -= (s[i] - mean) * w[i] * ph.sin();
            }
            total += re * re + im * im;
        }
        n_seg += 1;
        start += seg / 2;
    }
    total / n_seg.max(1) as f64
}

/// Mann-Whitney by enumerating every positive/negative pair.
pub fn brute_auc(scores: &[f64], labels: &[usize]) -> f64 {
    let mut twice_wins: u64 = 0;
    let (mut p, mut n) = (0u64, 0u64);
    for (i, &li) in labels.iter().enumerate() {
        if li == 1 {
            p += 1;
        } else {
            n += 1;
        }
        if li != 1 {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj == 0 {
                twice_wins += match scores[i].partial_cmp(&scores[j]).unwrap() {
                    std::cmp::Ordering::Greater => 2,
                    std::cmp::Ordering::Equal => 1,
                    std::cmp::Ordering::Less => 0,
                };
            }
        }
    }
    twice_wins as f64 / (2 * p * n) as f64
}

/// Damped Newton on mean cross-entropy + `lambda`·‖W‖² (bias free), with
/// parameters laid out class-major as `[w_c (d), b_c]` per class. Returns
/// the objective at the optimum and the `[n, m]` class probabilities.
pub fn newton_head(x: &[Vec<f64>], y: &[usize], m: usize, lambda: f64) -> (f64, Vec<Vec<f64>>) {
    let n = x.len();
    let d = x[0].len();
    let q = d + 1;
    let aug = |i: usize, j: usize| if j < d { x[i][j] } else { 1.0 };
    let xa = DMatrix::from_fn(n, q, aug);
    let probs = |theta: &DVector<f64>| -> Vec<Vec<f64>> {
        (0..n)
            .map(|i| {
                let z: Vec<f64> = (0..m).map(|c| (0..q).map(|j| theta[c * q + j] * aug(i, j)).sum()).collect();
                let mx = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                let e: Vec<f64> = z.iter().map(|v| (v - mx).exp()).collect();
                let s: f64 = e.iter().sum();
                e.iter().map(|v| v / s).collect()
            })
            .collect()
    };
    let objective = |theta: &DVector<f64>| -> f64 {
        let p = probs(theta);
        let ce: f64 = (0..n).map(|i| -p[i][y[i]].ln()).sum::<f64>() / n as f64;
        let reg: f64 = (0..m).flat_map(|c| (0..d).map(move |j| (c, j))).map(|(c, j)| theta[c * q + j].powi(2)).sum();
        ce + lambda * reg
    };
    let mut theta = DVector::zeros(m * q);
    for _ in 0..200 {
        let p = probs(&theta);
        let mut g = DVector::zeros(m * q);
        let mut h = DMatrix::zeros(m * q, m * q);
        for c in 0..m {
            let r = DVector::from_fn(n, |i, _| (p[i][c] - if y[i] == c { 1.0 } else { 0.0 }) / n as f64);
            g.rows_mut(c * q, q).copy_from(&(xa.transpose() * r));
            for c2 in 0..m {
                let s = DVector::from_fn(n, |i, _| p[i][c] * ((c == c2) as u8 as f64 - p[i][c2]) / n as f64);
                let mut weighted = xa.clone();
                for (i, mut row) in weighted.row_iter_mut().enumerate() {
                    row *= s[i];
                }
                h.view_mut((c * q, c2 * q), (q, q)).copy_from(&(xa.transpose() * weighted));
            }
        }
        for c in 0..m {
            for j in 0..d {
                g[c * q + j] += 2.0 * lambda * theta[c * q + j];
                h[(c * q + j, c * q + j)] += 2.0 * lambda;
            }
        }
        if g.norm() < 1e-11 {
            break;
        }
        // the common bias shift is a null direction of the softmax
        for k in 0..m * q {
            h[(k, k)] += 1e-10;
        }
        let step = h.lu().solve(&(-&g)).expect("damped Hessian is regular");
        let f0 = objective(&theta);
        let mut t = 1.0;
        while objective(&(&theta + t * &step)) > f0 + 1e-4 * t * g.dot(&step) && t > 1e-12 {
            t *= 0.5;
        }
        theta += t * step;
    }
    (objective(&theta), probs(&theta))
}

/// Every partial of the training loss against central differences, with
/// the dropout mask pinned by `mask_seed`. Returns `(worst relative error,
/// partials checked, partials whose step had to shrink)`.
///
/// The relative error is `|a − n| / max(|a|, |n|, 1e-3)`. The step starts
/// at 1e-4 and is halved while the ±h points see different ELU input
/// signs, so no difference straddles a kink.
pub fn gradient_check(cfg: &EEGNetConfig, params: &Params<f64>, x: &Tensor<f64>, labels: &[usize], mask_seed: u64) -> (f64, usize, usize) {
    let rng = || ChaCha8Rng::seed_from_u64(mask_seed);
    let analytic = training_loss(cfg, params, x, labels, &mut rng()).unwrap().grads;
    let loss = |p: &Params<f64>| training_loss(cfg, p, x, labels, &mut rng()).unwrap().loss;
    let signs = |p: &Params<f64>| elu_input_signs(cfg, p, x, &mut rng()).unwrap();
    let analytic_tensors = analytic.tensors();
    let (mut worst, mut checked, mut shrunk) = (0.0f64, 0, 0);
    for (ti, (_, tensor)) in params.tensors().iter().enumerate() {
        for j in 0..tensor.len() {
            let shifted = |h: f64| {
                let mut p = params.clone();
                p.tensors_mut()[ti].values_mut()[j] += h;
                p
            };
            let mut h = 1e-4;
            let (mut plus, mut minus) = (shifted(h), shifted(-h));
            let mut halvings = 0;
            while signs(&plus) != signs(&minus) && halvings < 40 {
                h *= 0.5;
                plus = shifted(h);
                minus = shifted(-h);
                halvings += 1;
            }
            if halvings > 0 {
                shrunk += 1;
            }
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * h);
            let a = analytic_tensors[ti].1.values()[j];
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-3);
            worst = worst.max(rel);
            checked += 1;
        }
    }
    (worst, checked, shrunk)
}

/// Session template: classes `classes`, `n` trials per class.
pub fn template(classes: &[&str], n: usize) -> SyntheticSpec {
    SyntheticSpec {
        n_trials_per_class: n,
        classes: classes.iter().map(|c| c.to_string()).collect(),
        ..Default::default()
    }
}

/// Writes synthetic datasets under `root`, one per `(id, classes, subjects,
/// trials per class)`.
pub fn write_datasets(root: &Path, specs: &[(&str, &[&str], usize, usize)], seed: u64) {
    for &(id, classes, subjects, n) in specs {
        SyntheticDataset {
            dataset_id: id.into(),
            n_subjects: subjects,
            sessions_per_subject: 1,
            scramble_labels: false,
            template: template(classes, n),
        }
        .write(root, seed)
        .unwrap();
    }
}

/// Three small architectures covering grouped convolutions, odd kernels,
/// uneven pooling and two to four classes.
pub fn gradcheck_configs() -> [EEGNetConfig; 3] {
    [
        EEGNetConfig {
            n_channels: 2,
            n_samples: 32,
            n_classes: 2,
            f1: 2,
            d: 1,
            f2: 2,
            temporal_kernel_len: 8,
            separable_kernel_len: 4,
            pool1: 2,
            pool2: 4,
            ..Default::default()
        },
        EEGNetConfig {
            n_channels: 3,
            n_samples: 48,
            n_classes: 3,
            f1: 3,
            d: 2,
            f2: 6,
            temporal_kernel_len: 7,
            separable_kernel_len: 5,
            pool1: 4,
            pool2: 3,
            ..Default::default()
        },
        EEGNetConfig {
            n_channels: 4,
            n_samples: 64,
            n_classes: 4,
            f1: 4,
            d: 2,
            f2: 8,
            temporal_kernel_len: 16,
            separable_kernel_len: 6,
            pool1: 4,
            pool2: 4,
            ..Default::default()
        },
    ]
}

/// Random parameters (batch-norm affine terms jittered away from 1 and 0),
/// a random batch of 16, and the finite-difference comparison.
pub fn gradcheck_case(cfg: &EEGNetConfig, seed: u64) -> (f64, usize, usize) {
    use mi_transfer::net::eegnet::{HeadParams, TrunkParams};
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p32 = Params {
        trunk: TrunkParams::<f32>::init(cfg, &mut rng),
        head: HeadParams::<f32>::init(cfg, &mut rng),
    };
    let mut params: Params<f64> = p32.cast();
    for (i, t) in params.tensors_mut().into_iter().enumerate() {
        if [1, 2, 4, 5, 8, 9].contains(&i) {
            t.values_mut().iter_mut().for_each(|v| *v += rng.random_range(-0.3..0.3));
        }
    }
    let b = 16;
    let n = b * cfg.n_channels * cfg.n_samples;
    let x = Tensor::new(vec![b, cfg.n_channels, cfg.n_samples], (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
    let labels: Vec<usize> = (0..b).map(|i| i % cfg.n_classes).collect();
    gradient_check(cfg, &params, &x, &labels, seed + 1000)
}

/// Gaussian blobs in `dim` dimensions, `n` per class, class means on
/// random directions scaled to `separation`.
pub fn blobs(dim: usize, n: usize, n_classes: usize, separation: f64, seed: u64) -> (Vec<Vec<f64>>, Vec<usize>) {
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let means: Vec<Vec<f64>> = (0..n_classes)
        .map(|_| {
            let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter().map(|x| x / norm * separation).collect()
        })
        .collect();
    let mut x = Vec::new();
    let mut y = Vec::new();
    for i in 0..n * n_classes {
        let c = i % n_classes;
        x.push(means[c].iter().map(|m| m + { let e: f64 = StandardNormal.sample(&mut rng); e * 0.5 }).collect());
        y.push(c);
    }
    (x, y)
}

/// Donors D1, D2 and receivers R1, R2: two subjects with one session each,
/// classes lh/rh, 20 trials per class. R2's labels are scrambled so its
/// scores vary from fold to fold.
pub fn toy_root(root: &Path) {
    let lr: &[&str] = &["lh", "rh"];
    write_datasets(root, &[("D1", lr, 2, 20), ("D2", lr, 2, 20), ("R1", lr, 2, 20)], 3);
    SyntheticDataset {
        dataset_id: "R2".into(),
        n_subjects: 2,
        sessions_per_subject: 1,
        scramble_labels: true,
        template: template(lr, 20),
    }
    .write(root, 3)
    .unwrap();
}

pub fn toy_plan(k_values: &[usize]) -> mi_transfer::harness::ExperimentPlan {
    use mi_transfer::harness::ExperimentPlan;
    use mi_transfer::net::TrainConfig;
    use mi_transfer::transfer::Analysis;
    ExperimentPlan {
        donor_ids: vec!["D1".into(), "D2".into()],
        receiver_ids: vec!["R1".into(), "R2".into()],
        analyses: vec![Analysis::LhRh],
        k_values: k_values.to_vec(),
        n_folds: 16,
        master_seed: 42,
        train: TrainConfig {
            epochs: 3,
            batch_size: 16,
            ..Default::default()
        },
        ..Default::default()
    }
}

pub fn record(donor: &str, receiver: &str, subject: &str, session: &str, k: usize, fold: usize, value: f64) -> mi_transfer::transfer::ScoreRecord {
    mi_transfer::transfer::ScoreRecord {
        donor: donor.into(),
        receiver: receiver.into(),
        subject: subject.into(),
        session: session.into(),
        analysis: "rh-f".into(),
        k,
        fold,
        metric: "roc_auc_f".into(),
        value,
    }
}
