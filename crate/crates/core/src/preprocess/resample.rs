//! Rational-ratio polyphase resampling.
//!
//! The anti-alias kernel is a Kaiser-windowed sinc (β = 5) with cutoff at the
//! lower of the two Nyquist rates and half-length `10·max(up, down)` taps at
//! the upsampled rate. Input edges are extended by odd reflection.

use crate::error::{Error, Result};
use crate::preprocess::butterworth::odd_extend;

const KAISER_BETA: f64 = 5.0;
const HALF_LEN_FACTOR: usize = 10;
const RATE_DENOMINATOR: f64 = 1000.0;
const MAX_FACTOR: u64 = 10_000;

fn gcd(mut a: u64, mut b: u64) -> u64 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Reduced `(up, down)` with `target/source = up/down`. Rates are taken to a
/// resolution of 1 mHz.
pub fn rational_ratio(source_hz: f64, target_hz: f64) -> Result<(usize, usize)> {
    let err = |reason: &str| Error::Resample {
        from: source_hz,
        to: target_hz,
        reason: reason.to_string(),
    };
    if !(source_hz > 0.0 && target_hz > 0.0) || !source_hz.is_finite() || !target_hz.is_finite() {
        return Err(err("rates must be positive"));
    }
    if target_hz > source_hz {
        return Err(err("upsampling is not supported"));
    }
    let s = (source_hz * RATE_DENOMINATOR).round() as u64;
    let t = (target_hz * RATE_DENOMINATOR).round() as u64;
    let g = gcd(s, t);
    let (up, down) = (t / g, s / g);
    if up.max(down) > MAX_FACTOR {
        return Err(err("rate ratio is not a small rational"));
    }
    Ok((up as usize, down as usize))
}

/// Zeroth-order modified Bessel function of the first kind (power series).
fn bessel_i0(x: f64) -> f64 {
    let q = x * x / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..200 {
        term *= q / (k * k) as f64;
        sum += term;
        if term < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase resampler for a fixed `(up, down)` pair.
#[derive(Debug, Clone)]
pub struct Resampler {
    up: usize,
    down: usize,
    half_len: usize,
    taps: Vec<f64>,
}

impl Resampler {
    pub fn new(up: usize, down: usize) -> Self {
        let max = up.max(down);
        let half_len = HALF_LEN_FACTOR * max;
        let len = 2 * half_len + 1;
        let cutoff = 1.0 / max as f64;
        let denom = bessel_i0(KAISER_BETA);
        let mut taps: Vec<f64> = (0..len)
            .map(|i| {
                let m = i as f64 - half_len as f64;
                let r = m / half_len as f64;
                let window = bessel_i0(KAISER_BETA * (1.0 - r * r).max(0.0).sqrt()) / denom;
                cutoff * sinc(cutoff * m) * window
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        for t in &mut taps {
            *t *= up as f64 / sum;
        }
        Resampler {
            up,
            down,
            half_len,
            taps,
        }
    }

    pub fn output_len(&self, n: usize) -> usize {
        (n as f64 * self.up as f64 / self.down as f64).round() as usize
    }

    pub fn process(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if self.up == self.down {
            return x.to_vec();
        }
        let n_out = self.output_len(n);
        if n == 0 {
            return Vec::new();
        }
        let pad = (self.half_len / self.up + 2).min(n.saturating_sub(1));
        let ext = odd_extend(x, pad);
        let (up, down, half) = (self.up as i64, self.down as i64, self.half_len as i64);
        let len = self.taps.len() as i64;
        let lo_bound = -(pad as i64);
        let hi_bound = (n + pad) as i64 - 1;
        (0..n_out as i64)
            .map(|m| {
                let centre = m * down + half;
                let i_min = (centre - len + up).div_euclid(up);
                let i_max = centre.div_euclid(up);
                let mut acc = 0.0;
                for i in i_min.max(lo_bound)..=i_max.min(hi_bound) {
                    let tap = (centre - i * up) as usize;
                    acc += self.taps[tap] * ext[(i + pad as i64) as usize];
                }
                acc
            })
            .collect()
    }
}
