mod common;

use std::f64::consts::PI;

use common::{band_power, central, channel, dft_amplitudes, fitted_amplitude, tone_set};
use mi_transfer::preprocess::{bandpass, preprocess_pipeline, resample, PreprocessConfig};
use mi_transfer::synth::{generate_synthetic, SyntheticSpec};

const FIVE: [&str; 5] = ["Fz", "C3", "Cz", "C4", "Pz"];

fn sine(freq: f64) -> impl Fn(f64) -> f64 {
    move |t| (2.0 * PI * freq * t).sin()
}

#[test]
fn bandpass_passes_alpha_and_rejects_mains() {
    for (freq, check) in [(10.0, 0.95), (60.0, 0.1)] {
        let set = tone_set(&["C3"], 250.0, 1125, -0.5, sine(freq));
        let out = bandpass(&set, 0.5, 40.0, 4, true).unwrap();
        let y = channel(&out, 0, 0);
        let peak = central(&y).iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if freq < 40.0 {
            assert!(peak >= check, "{freq} Hz peak {peak}");
        } else {
            assert!(peak <= check, "{freq} Hz peak {peak}");
        }
    }
}

#[test]
fn bandpass_removes_dc() {
    let set = tone_set(&["C3"], 250.0, 1125, -0.5, |_| 100.0);
    let out = bandpass(&set, 0.5, 40.0, 4, true).unwrap();
    let y = channel(&out, 0, 0);
    let c = central(&y);
    let mean_abs = c.iter().map(|v| v.abs()).sum::<f64>() / c.len() as f64;
    assert!(mean_abs <= 1.0, "{mean_abs}");
}

#[test]
fn bandpass_is_linear() {
    let a = tone_set(&["C3"], 250.0, 1000, 0.0, |t| (2.0 * PI * 7.0 * t).sin() + 0.3 * (2.0 * PI * 31.0 * t).cos());
    let b = tone_set(&["C3"], 250.0, 1000, 0.0, |t| 5.0 + (2.0 * PI * 13.0 * t).cos() * t);
    let mut mix = a.clone();
    for (m, (x, y)) in mix.data.iter_mut().zip(a.data.iter().zip(&b.data)) {
        *m = 2.0 * x - 0.5 * y;
    }
    let fa = channel(&bandpass(&a, 0.5, 40.0, 4, true).unwrap(), 0, 0);
    let fb = channel(&bandpass(&b, 0.5, 40.0, 4, true).unwrap(), 0, 0);
    let fm = channel(&bandpass(&mix, 0.5, 40.0, 4, true).unwrap(), 0, 0);
    let scale = fm.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for i in 0..fm.len() {
        let expect = 2.0 * fa[i] - 0.5 * fb[i];
        assert!((fm[i] - expect).abs() <= 1e-4 * scale, "sample {i}");
    }
}

#[test]
fn resample_keeps_tone_frequency_and_amplitude() {
    let set = tone_set(&["C3"], 250.0, 750, 0.0, sine(10.0));
    let out = resample(&set, 128.0).unwrap();
    assert_eq!(out.n_samples(), 384);
    let y = channel(&out, 0, 0);
    let amps = dft_amplitudes(&y);
    let peak_bin = (0..amps.len()).max_by(|&a, &b| amps[a].total_cmp(&amps[b])).unwrap();
    let peak_hz = peak_bin as f64 * 128.0 / 384.0;
    assert!((peak_hz - 10.0).abs() <= 0.2, "peak at {peak_hz} Hz");
    assert!((amps[peak_bin] - 1.0).abs() <= 0.02, "amplitude {}", amps[peak_bin]);
    let fitted = fitted_amplitude(central(&y), 128.0, 10.0);
    assert!((fitted - 1.0).abs() <= 0.02, "fitted amplitude {fitted}");
}

#[test]
fn pipeline_tone_contract() {
    let cfg = PreprocessConfig::default();
    for (freq, lo, hi) in [(10.0, 0.95, 1.05), (60.0, 0.0, 0.1)] {
        let set = tone_set(&FIVE, 250.0, 1125, -0.5, sine(freq));
        let out = preprocess_pipeline(&set, &cfg).unwrap();
        assert_eq!(out.shape, [1, 3, 384]);
        for ch in 0..3 {
            let y = channel(&out, 0, ch);
            let amp = fitted_amplitude(central(&y), 128.0, freq);
            assert!(amp >= lo && amp <= hi, "{freq} Hz channel {ch}: {amp}");
        }
    }
    let dc = tone_set(&FIVE, 250.0, 1125, -0.5, |_| 100.0);
    let y = channel(&preprocess_pipeline(&dc, &cfg).unwrap(), 0, 1);
    let c = central(&y);
    let mean_abs = c.iter().map(|v| v.abs()).sum::<f64>() / c.len() as f64;
    assert!(mean_abs <= 1.0, "{mean_abs}");
}

#[test]
fn synthetic_erd_lowers_contralateral_mu_power() {
    let power_by_class = |erd_depth: f64, ch: Option<usize>| {
        let spec = SyntheticSpec {
            n_trials_per_class: 100,
            erd_depth,
            seed: 11,
            ..Default::default()
        };
        let set = generate_synthetic(&spec).unwrap();
        let ch = ch.unwrap_or_else(|| set.channel_names.iter().position(|c| c == "C3").unwrap());
        let mut per_class = vec![Vec::new(); 2];
        for i in 0..set.n_trials() {
            let x = channel(&set, i, ch);
            per_class[set.labels[i]].push(band_power(&x, 250.0, 250, 8.0, 12.0));
        }
        let rh = set.class_vocab.iter().position(|c| c == "rh").unwrap();
        (per_class[1 - rh].clone(), per_class[rh].clone())
    };
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (lh, rh) = power_by_class(0.8, None);
    assert!(mean(&rh) < mean(&lh), "rh {} lh {}", mean(&rh), mean(&lh));

    // no ERD: class means within three standard errors on every channel
    for ch in 0..5 {
        let (a, b) = power_by_class(0.0, Some(ch));
        let var = |v: &[f64]| {
            let m = mean(v);
            v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64
        };
        let se = (var(&a) / a.len() as f64 + var(&b) / b.len() as f64).sqrt();
        assert!((mean(&a) - mean(&b)).abs() < 3.0 * se, "channel {ch}");
    }
}
