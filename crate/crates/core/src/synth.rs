//! Synthetic motor-imagery generator.
//!
//! Every trial is coloured (1/f^α) background noise on all channels plus a
//! mu-band sinusoid on C3, Cz and C4. The channel mapped to the trial's class
//! has its mu amplitude scaled by `1 - erd_depth`, mimicking contralateral
//! event-related desynchronization.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{Error, Result};
use crate::registry::is_known_task;

pub const MOTOR_CHANNELS: [&str; 3] = ["C3", "Cz", "C4"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    pub n_trials_per_class: usize,
    pub classes: Vec<String>,
    pub channels: Vec<String>,
    pub sampling_rate_hz: f64,
    pub trial_length_s: f64,
    pub tmin_s: f64,
    pub mu_freq_hz: f64,
    pub erd_depth: f64,
    pub noise_exponent: f64,
    /// Mu-rhythm power relative to background power, dB.
    pub snr_db: f64,
    /// Background standard deviation, µV.
    pub noise_std_uv: f64,
    pub class_map: BTreeMap<String, String>,
    pub seed: u64,
    pub dataset_id: String,
    pub subject_id: String,
    pub session_id: String,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n_trials_per_class: 50,
            classes: vec!["lh".into(), "rh".into()],
            channels: ["Fz", "C3", "Cz", "C4", "Pz"].map(String::from).to_vec(),
            sampling_rate_hz: 250.0,
            trial_length_s: 4.0,
            tmin_s: -0.5,
            mu_freq_hz: 10.0,
            erd_depth: 0.8,
            noise_exponent: 1.0,
            snr_db: 6.0,
            noise_std_uv: 10.0,
            class_map: default_class_map(),
            seed: 0,
            dataset_id: "synthetic".into(),
            subject_id: "1".into(),
            session_id: "0".into(),
        }
    }
}

pub fn default_class_map() -> BTreeMap<String, String> {
    [("lh", "C4"), ("rh", "C3"), ("f", "Cz")]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}

impl SyntheticSpec {
    pub fn n_samples(&self) -> usize {
        (self.trial_length_s * self.sampling_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.erd_depth) {
            return Err(Error::invalid("erd_depth", "must lie in [0, 1]"));
        }
        if self.classes.is_empty() {
            return Err(Error::invalid("classes", "empty"));
        }
        if self.n_trials_per_class == 0 {
            return Err(Error::invalid("n_trials_per_class", "must be >= 1"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if !is_known_task(c) {
                return Err(Error::invalid("classes", format!("unknown class {c}")));
            }
            if self.classes[..i].contains(c) {
                return Err(Error::invalid("classes", format!("duplicate class {c}")));
            }
            match self.class_map.get(c) {
                None => return Err(Error::invalid("class_map", format!("no channel for {c}"))),
                Some(ch) if !self.channels.contains(ch) => {
                    return Err(Error::invalid("class_map", format!("{c} maps to absent {ch}")))
                }
                _ => {}
            }
        }
        for m in MOTOR_CHANNELS {
            if !self.channels.iter().any(|c| c == m) {
                return Err(Error::invalid("channels", format!("missing {m}")));
            }
        }
        for (i, c) in self.channels.iter().enumerate() {
            if self.channels[..i].contains(c) {
                return Err(Error::invalid("channels", format!("duplicate {c}")));
            }
        }
        if !(self.sampling_rate_hz > 0.0) {
            return Err(Error::invalid("sampling_rate_hz", "must be positive"));
        }
        if !(self.trial_length_s > 0.0) || self.n_samples() < 2 {
            return Err(Error::invalid("trial_length_s", "too short"));
        }
        if !(self.mu_freq_hz > 0.0 && self.mu_freq_hz < self.sampling_rate_hz / 2.0) {
            return Err(Error::invalid("mu_freq_hz", "must lie below Nyquist"));
        }
        if !self.snr_db.is_finite() || !self.noise_exponent.is_finite() {
            return Err(Error::invalid("snr_db", "must be finite"));
        }
        if !(self.noise_std_uv > 0.0) {
            return Err(Error::invalid("noise_std_uv", "must be positive"));
        }
        Ok(())
    }
}

/// Unit-variance noise with power spectral density ∝ 1/f^exponent.
fn coloured_noise(
    rng: &mut impl Rng,
    n: usize,
    exponent: f64,
    planner: &mut FftPlanner<f64>,
) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        let f = k.min(n - k) as f64;
        buf[k] *= f.powf(-exponent / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let mut out: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = out.iter().sum::<f64>() / n as f64;
    let var = out.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    let scale = if var > 0.0 { var.sqrt().recip() } else { 0.0 };
    for v in &mut out {
        *v = (*v - mean) * scale;
    }
    out
}

/// Generates a labeled synthetic session. Deterministic in `spec.seed`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<EpochSet> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n_classes = spec.classes.len();
    let n_trials = n_classes * spec.n_trials_per_class;
    let n_ch = spec.channels.len();
    let n_t = spec.n_samples();

    let mut labels: Vec<usize> = (0..n_trials).map(|i| i % n_classes).collect();
    labels.shuffle(&mut rng);

    let motor: Vec<usize> = MOTOR_CHANNELS
        .iter()
        .map(|m| spec.channels.iter().position(|c| c == m).unwrap())
        .collect();
    let attenuated: Vec<usize> = spec
        .classes
        .iter()
        .map(|c| {
            let ch = &spec.class_map[c];
            spec.channels.iter().position(|x| x == ch).unwrap()
        })
        .collect();
    let amplitude = spec.noise_std_uv * (2.0 * 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let omega = 2.0 * std::f64::consts::PI * spec.mu_freq_hz;

    let mut planner = FftPlanner::new();
    let mut data = Vec::with_capacity(n_trials * n_ch * n_t);
    for &label in &labels {
        let phase = rng.random::<f64>() * 2.0 * std::f64::consts::PI;
        for ch in 0..n_ch {
            let noise = coloured_noise(&mut rng, n_t, spec.noise_exponent, &mut planner);
            let gain = if !motor.contains(&ch) {
                0.0
            } else if ch == attenuated[label] {
                amplitude * (1.0 - spec.erd_depth)
            } else {
                amplitude
            };
            data.extend(noise.iter().enumerate().map(|(i, &z)| {
                let t = spec.tmin_s + i as f64 / spec.sampling_rate_hz;
                (spec.noise_std_uv * z + gain * (omega * t + phase).sin()) as f32
            }));
        }
    }

    let set = EpochSet {
        data,
        shape: [n_trials, n_ch, n_t],
        channel_names: spec.channels.clone(),
        sampling_rate_hz: spec.sampling_rate_hz,
        tmin_s: spec.tmin_s,
        labels,
        class_vocab: spec.classes.clone(),
        dataset_id: spec.dataset_id.clone(),
        subject_id: spec.subject_id.clone(),
        session_id: spec.session_id.clone(),
    };
    set.validate()?;
    Ok(set)
}

/// Replaces labels with a seeded permutation, destroying any link between
/// signal and label while keeping class balance.
pub fn scramble_labels(set: &mut EpochSet, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    set.labels.shuffle(&mut rng);
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_in_seed() {
        let spec = SyntheticSpec {
            n_trials_per_class: 5,
            seed: 42,
            ..Default::default()
        };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic(&SyntheticSpec { seed: 43, ..spec }).unwrap();
        assert_ne!(a.data, c.data);
    }

    #[test]
    fn balanced_labels_and_shape() {
        let spec = SyntheticSpec {
            n_trials_per_class: 7,
            classes: vec!["lh".into(), "rh".into(), "f".into()],
            ..Default::default()
        };
        let set = generate_synthetic(&spec).unwrap();
        assert_eq!(set.shape, [21, 5, 1000]);
        assert_eq!(set.class_counts(), vec![7, 7, 7]);
    }

    #[test]
    fn invalid_specs() {
        let bad = [
            SyntheticSpec { erd_depth: 1.5, ..Default::default() },
            SyntheticSpec { classes: vec![], ..Default::default() },
            SyntheticSpec { classes: vec!["t".into()], ..Default::default() },
            SyntheticSpec {
                channels: vec!["C3".into(), "C4".into()],
                ..Default::default()
            },
        ];
        for spec in bad {
            assert!(generate_synthetic(&spec).is_err(), "{spec:?}");
        }
    }

    #[test]
    fn noise_is_unit_variance_and_red() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut planner = FftPlanner::new();
        let x = coloured_noise(&mut rng, 1024, 1.0, &mut planner);
        let var = x.iter().map(|v| v * v).sum::<f64>() / 1024.0;
        assert!((var - 1.0).abs() < 1e-9);
        // lag-1 autocorrelation is strongly positive for pink noise
        let ac = x.windows(2).map(|w| w[0] * w[1]).sum::<f64>() / 1023.0;
        assert!(ac > 0.3, "{ac}");
    }
}
