//! Signal preprocessing: channel selection, bandpass filtering, resampling
//! and cropping to the analysis window.
//!
//! Default pipeline: keep C3, Cz, C4; 4th-order Butterworth bandpass
//! 0.5–40 Hz applied forward and backward at the native rate; polyphase
//! resampling to 128 Hz; crop to [0, 3) s after the cue. The result is the
//! fixed network input `[n_trials, 3, 384]`.

pub mod butterworth;
pub mod resample;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::epochs::EpochSet;
use crate::error::{Error, Result};

pub use butterworth::{butter_bandpass, Sos};
pub use resample::{rational_ratio, Resampler};

/// Slack for floating-point time comparisons, seconds.
const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub channels: Vec<String>,
    /// `[t_start_s, t_end_s]` relative to the cue.
    pub window: [f64; 2],
    /// `[low_hz, high_hz]`
    pub band: [f64; 2],
    pub target_rate_hz: f64,
    pub filter_order: usize,
    pub zero_phase: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            channels: ["C3", "Cz", "C4"].map(String::from).to_vec(),
            window: [0.0, 3.0],
            band: [0.5, 40.0],
            target_rate_hz: 128.0,
            filter_order: 4,
            zero_phase: true,
        }
    }
}

impl PreprocessConfig {
    /// Samples per trial after preprocessing.
    pub fn output_samples(&self) -> usize {
        ((self.window[1] - self.window[0]) * self.target_rate_hz).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::invalid("channels", "empty"));
        }
        if !(self.window[1] > self.window[0]) {
            return Err(Error::invalid("window", "t_end must exceed t_start"));
        }
        let [low, high] = self.band;
        if !(low > 0.0 && low < high && high < self.target_rate_hz / 2.0) {
            return Err(Error::InvalidBand {
                low,
                high,
                rate: self.target_rate_hz,
            });
        }
        if self.filter_order == 0 {
            return Err(Error::invalid("filter_order", "must be >= 1"));
        }
        Ok(())
    }

    pub fn validate_for(&self, set: &EpochSet) -> Result<()> {
        self.validate()?;
        if self.target_rate_hz > set.sampling_rate_hz {
            return Err(Error::Resample {
                from: set.sampling_rate_hz,
                to: self.target_rate_hz,
                reason: "upsampling is not supported".into(),
            });
        }
        Ok(())
    }
}

/// Keeps `channels`, in that order.
pub fn select_channels(set: &EpochSet, channels: &[String]) -> Result<EpochSet> {
    let idx: Vec<usize> = channels
        .iter()
        .map(|c| set.channel_index(c).ok_or_else(|| Error::MissingChannel(c.clone())))
        .collect::<Result<_>>()?;
    let t = set.n_samples();
    let mut data = Vec::with_capacity(set.n_trials() * idx.len() * t);
    for trial in 0..set.n_trials() {
        for &c in &idx {
            data.extend_from_slice(set.series(trial, c));
        }
    }
    Ok(EpochSet {
        data,
        shape: [set.n_trials(), idx.len(), t],
        channel_names: channels.to_vec(),
        ..set.clone_without_data()
    })
}

/// Keeps samples with `t_start <= t < t_end`, where sample `i` sits at
/// `tmin_s + i / rate`.
pub fn crop_window(set: &EpochSet, t_start_s: f64, t_end_s: f64) -> Result<EpochSet> {
    let rate = set.sampling_rate_hz;
    let extent_end = set.tmin_s + set.duration_s();
    let out_of_range = || Error::WindowOutOfRange {
        start: t_start_s,
        end: t_end_s,
        min: set.tmin_s,
        max: extent_end,
    };
    if !(t_end_s > t_start_s)
        || t_start_s < set.tmin_s - TIME_EPS
        || t_end_s > extent_end + TIME_EPS
    {
        return Err(out_of_range());
    }
    let start = ((t_start_s - set.tmin_s) * rate).round() as usize;
    let len = ((t_end_s - t_start_s) * rate).round() as usize;
    if start + len > set.n_samples() || len == 0 {
        return Err(out_of_range());
    }
    let mut data = Vec::with_capacity(set.n_trials() * set.n_channels() * len);
    for trial in 0..set.n_trials() {
        for c in 0..set.n_channels() {
            data.extend_from_slice(&set.series(trial, c)[start..start + len]);
        }
    }
    Ok(EpochSet {
        data,
        shape: [set.n_trials(), set.n_channels(), len],
        tmin_s: t_start_s,
        ..set.clone_without_data()
    })
}

fn map_series(set: &EpochSet, out_len: usize, f: impl Fn(&[f64]) -> Vec<f64> + Sync) -> Vec<f32> {
    let t = set.n_samples();
    let mut out = vec![0f32; set.n_trials() * set.n_channels() * out_len];
    if out_len == 0 {
        return out;
    }
    out.par_chunks_mut(out_len)
        .zip(set.data.par_chunks(t.max(1)))
        .for_each(|(dst, src)| {
            let x: Vec<f64> = src.iter().map(|&v| v as f64).collect();
            for (d, y) in dst.iter_mut().zip(f(&x)) {
                *d = y as f32;
            }
        });
    out
}

/// Butterworth bandpass applied to every (trial, channel) series.
pub fn bandpass(
    set: &EpochSet,
    low_hz: f64,
    high_hz: f64,
    order: usize,
    zero_phase: bool,
) -> Result<EpochSet> {
    let sos = butter_bandpass(order, low_hz, high_hz, set.sampling_rate_hz)?;
    let data = map_series(set, set.n_samples(), |x| {
        if zero_phase {
            sos.filtfilt(x)
        } else {
            sos.filt(x)
        }
    });
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("bandpass output"));
    }
    Ok(EpochSet {
        data,
        ..set.clone()
    })
}

pub fn resample(set: &EpochSet, target_rate_hz: f64) -> Result<EpochSet> {
    let (up, down) = rational_ratio(set.sampling_rate_hz, target_rate_hz)?;
    if up == down {
        return Ok(set.clone());
    }
    let r = Resampler::new(up, down);
    let n_out = r.output_len(set.n_samples());
    let data = map_series(set, n_out, |x| r.process(x));
    Ok(EpochSet {
        data,
        shape: [set.n_trials(), set.n_channels(), n_out],
        sampling_rate_hz: target_rate_hz,
        ..set.clone_without_data()
    })
}

/// select_channels → bandpass (native rate) → resample → crop_window.
pub fn preprocess_pipeline(set: &EpochSet, cfg: &PreprocessConfig) -> Result<EpochSet> {
    cfg.validate_for(set)?;
    let x = select_channels(set, &cfg.channels)?;
    let x = bandpass(&x, cfg.band[0], cfg.band[1], cfg.filter_order, cfg.zero_phase)?;
    let x = resample(&x, cfg.target_rate_hz)?;
    crop_window(&x, cfg.window[0], cfg.window[1])
}

impl EpochSet {
    fn clone_without_data(&self) -> EpochSet {
        EpochSet {
            data: Vec::new(),
            shape: self.shape,
            channel_names: self.channel_names.clone(),
            sampling_rate_hz: self.sampling_rate_hz,
            tmin_s: self.tmin_s,
            labels: self.labels.clone(),
            class_vocab: self.class_vocab.clone(),
            dataset_id: self.dataset_id.clone(),
            subject_id: self.subject_id.clone(),
            session_id: self.session_id.clone(),
        }
    }
}
