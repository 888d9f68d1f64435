//! Butterworth bandpass design as second-order sections, and
//! forward-backward (zero-phase) filtering with mirror padding and
//! steady-state initial conditions.

use rustfft::num_complex::Complex64;

use crate::error::{Error, Result};

/// One biquad: `b = [b0, b1, b2]`, `a = [1, a1, a2]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Section {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sos {
    pub sections: Vec<Section>,
}

/// Designs an `order`-th order Butterworth bandpass (2·order poles).
pub fn butter_bandpass(order: usize, low_hz: f64, high_hz: f64, fs: f64) -> Result<Sos> {
    let nyquist = fs / 2.0;
    if order == 0 || !(low_hz > 0.0 && low_hz < high_hz && high_hz < nyquist) {
        return Err(Error::InvalidBand {
            low: low_hz,
            high: high_hz,
            rate: fs,
        });
    }
    let warp = |f: f64| 2.0 * fs * (std::f64::consts::PI * f / fs).tan();
    let (wl, wh) = (warp(low_hz), warp(high_hz));
    let bw = wh - wl;
    let w0 = (wl * wh).sqrt();
    let n = order as f64;

    let mut poles = Vec::with_capacity(2 * order);
    for m in 0..order {
        let theta = std::f64::consts::PI * (2.0 * m as f64 + n + 1.0) / (2.0 * n);
        let proto = Complex64::from_polar(1.0, theta);
        let half = proto * (bw / 2.0);
        let disc = (half * half - w0 * w0).sqrt();
        for s in [half + disc, half - disc] {
            let z = (2.0 * fs + s) / (2.0 * fs - s);
            poles.push(z);
        }
    }
    for p in &poles {
        if p.norm() >= 1.0 {
            return Err(Error::UnstableFilter(p.norm()));
        }
    }

    let eps = 1e-12;
    let mut complex: Vec<Complex64> = poles.iter().copied().filter(|p| p.im > eps).collect();
    let mut real: Vec<f64> = poles
        .iter()
        .filter(|p| p.im.abs() <= eps)
        .map(|p| p.re)
        .collect();
    complex.sort_by(|a, b| a.norm().total_cmp(&b.norm()));
    real.sort_by(f64::total_cmp);

    let mut sections: Vec<Section> = complex
        .iter()
        .map(|p| Section {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -2.0 * p.re, p.norm_sqr()],
        })
        .collect();
    for pair in real.chunks(2) {
        let (r1, r2) = (pair[0], *pair.get(1).unwrap_or(&0.0));
        sections.push(Section {
            b: [1.0, 0.0, -1.0],
            a: [1.0, -(r1 + r2), r1 * r2],
        });
    }
    debug_assert_eq!(sections.len(), order);

    // unit gain at the centre frequency
    let wc = 2.0 * (w0 / (2.0 * fs)).atan();
    let mut sos = Sos { sections };
    let g = sos.response(wc).norm();
    for c in &mut sos.sections[0].b {
        *c /= g;
    }
    Ok(sos)
}

impl Sos {
    /// Complex frequency response at normalized angular frequency `w` (rad/sample).
    pub fn response(&self, w: f64) -> Complex64 {
        let z1 = Complex64::from_polar(1.0, -w);
        let z2 = z1 * z1;
        self.sections.iter().fold(Complex64::new(1.0, 0.0), |acc, s| {
            let num = s.b[0] + z1 * s.b[1] + z2 * s.b[2];
            let den = s.a[0] + z1 * s.a[1] + z2 * s.a[2];
            acc * num / den
        })
    }

    /// Steady-state state vectors for a unit step input.
    fn step_state(&self) -> Vec<[f64; 2]> {
        let mut scale = 1.0;
        self.sections
            .iter()
            .map(|s| {
                let g = (s.b[0] + s.b[1] + s.b[2]) / (s.a[0] + s.a[1] + s.a[2]);
                let z1 = s.b[2] - s.a[2] * g;
                let z0 = s.b[1] - s.a[1] * g + z1;
                let out = [z0 * scale, z1 * scale];
                scale *= g;
                out
            })
            .collect()
    }

    /// Filters in place (transposed direct form II), starting from `state`.
    fn run(&self, x: &mut [f64], mut state: Vec<[f64; 2]>) {
        for v in x.iter_mut() {
            let mut u = *v;
            for (s, z) in self.sections.iter().zip(state.iter_mut()) {
                let y = s.b[0] * u + z[0];
                z[0] = s.b[1] * u - s.a[1] * y + z[1];
                z[1] = s.b[2] * u - s.a[2] * y;
                u = y;
            }
            *v = u;
        }
    }

    /// Zero-phase filtering: forward then backward pass over `x` extended
    /// on each side by its mirror image (up to `len − 1` samples). A short
    /// odd reflection leaves slow high-pass transients in the middle of
    /// short epochs.
    pub fn filtfilt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = n - 1;
        let mut ext = mirror_extend(x, pad);
        let zi = self.step_state();
        let x0 = ext[0];
        self.run(&mut ext, scaled(&zi, x0));
        ext.reverse();
        let y0 = ext[0];
        self.run(&mut ext, scaled(&zi, y0));
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }

    /// Single causal pass with the left edge mirror-padded.
    pub fn filt(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len();
        if n < 2 {
            return x.to_vec();
        }
        let pad = n - 1;
        let mut ext = mirror_extend(x, pad);
        let x0 = ext[0];
        self.run(&mut ext, scaled(&self.step_state(), x0));
        ext[pad..pad + n].to_vec()
    }
}

fn scaled(state: &[[f64; 2]], k: f64) -> Vec<[f64; 2]> {
    state.iter().map(|z| [z[0] * k, z[1] * k]).collect()
}

/// `x[pad..1]`, `x`, `x[n−2..n−1−pad]`: reflection about the end samples.
fn mirror_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(pad < n.max(1));
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| x[n - 1 - i]));
    out
}

/// Odd extension by `pad` samples on each side: `2·x[0] − x[pad..1]` on the
/// left and the mirror image on the right.
pub(crate) fn odd_extend(x: &[f64], pad: usize) -> Vec<f64> {
    let n = x.len();
    assert!(pad < n.max(1));
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    out.extend_from_slice(x);
    out.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn magnitude_matches_analog_prototype() {
        let fs = 250.0;
        let sos = butter_bandpass(4, 0.5, 40.0, fs).unwrap();
        let warp = |f: f64| 2.0 * fs * (PI * f / fs).tan();
        let (wl, wh) = (warp(0.5), warp(40.0));
        for f in [1.0, 5.0, 10.0, 30.0, 40.0, 50.0, 60.0, 100.0] {
            let w = warp(f);
            let omega = (w * w - wl * wh) / (w * (wh - wl));
            let expected = 1.0 / (1.0 + omega.powi(8)).sqrt();
            let got = sos.response(2.0 * PI * f / fs).norm();
            assert!((got - expected).abs() < 1e-9, "{f} Hz: {got} vs {expected}");
        }
    }

    #[test]
    fn odd_orders_and_narrow_bands() {
        for (order, lo, hi) in [(3, 0.5, 40.0), (1, 8.0, 12.0), (5, 20.0, 30.0), (2, 1.0, 100.0)] {
            let sos = butter_bandpass(order, lo, hi, 250.0).unwrap();
            assert_eq!(sos.sections.len(), order);
            let centre = ((lo * hi) as f64).sqrt();
            let g = sos.response(2.0 * PI * centre / 250.0).norm();
            assert!((g - 1.0).abs() < 0.05, "{order} {lo} {hi}: {g}");
        }
    }

    #[test]
    fn rejects_bad_bands() {
        assert!(butter_bandpass(4, 0.5, 125.0, 250.0).is_err());
        assert!(butter_bandpass(4, 40.0, 0.5, 250.0).is_err());
        assert!(butter_bandpass(4, 0.0, 40.0, 250.0).is_err());
        assert!(butter_bandpass(0, 0.5, 40.0, 250.0).is_err());
    }

    #[test]
    fn extensions() {
        let x = [1.0, 2.0, 4.0, 7.0];
        assert_eq!(
            odd_extend(&x, 2),
            vec![-2.0, 0.0, 1.0, 2.0, 4.0, 7.0, 10.0, 12.0]
        );
        assert_eq!(mirror_extend(&x, 3), vec![7.0, 4.0, 2.0, 1.0, 2.0, 4.0, 7.0, 4.0, 2.0, 1.0]);
    }

    #[test]
    fn constant_input_gives_zero() {
        let sos = butter_bandpass(4, 0.5, 40.0, 250.0).unwrap();
        let y = sos.filtfilt(&vec![100.0; 500]);
        assert!(y.iter().all(|v| v.abs() < 1e-9));
    }
}
