//! IIR filter design (bilinear-transform Butterworth band-pass, second-order
//! notch) and zero-phase second-order-section filtering.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signalgen::Signal;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FilterSpec {
    ButterworthBandpass {
        low_hz: f64,
        high_hz: f64,
        /// Band-pass order (twice the low-pass prototype order).
        order: usize,
    },
    Notch {
        center_hz: f64,
        quality_q: f64,
    },
}

impl FilterSpec {
    pub fn validate(&self, fs: f64) -> Result<()> {
        match *self {
            FilterSpec::ButterworthBandpass { low_hz, high_hz, order } => {
                if !(0.0 < low_hz && low_hz < high_hz && high_hz < fs / 2.0) {
                    return Err(Error::Config(format!(
                        "band-pass edges must satisfy 0 < {low_hz} < {high_hz} < fs/2 = {}",
                        fs / 2.0
                    )));
                }
                if order == 0 || order % 2 != 0 {
                    return Err(Error::Config(format!("band-pass order must be a positive even integer, got {order}")));
                }
            }
            FilterSpec::Notch { center_hz, quality_q } => {
                if !(0.0 < center_hz && center_hz < fs / 2.0) {
                    return Err(Error::Config(format!(
                        "notch center {center_hz} Hz must lie in (0, fs/2 = {})",
                        fs / 2.0
                    )));
                }
                if !(quality_q > 0.0) {
                    return Err(Error::Config(format!("notch Q must be positive, got {quality_q}")));
                }
            }
        }
        Ok(())
    }

    pub fn design(&self, fs: f64) -> Result<Vec<Biquad>> {
        self.validate(fs)?;
        Ok(match *self {
            FilterSpec::ButterworthBandpass { low_hz, high_hz, order } => butterworth_bandpass_sos(low_hz, high_hz, order, fs),
            FilterSpec::Notch { center_hz, quality_q } => vec![notch_biquad(center_hz, quality_q, fs)],
        })
    }
}

/// Normalized (`a0 = 1`) second-order section.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn response(&self, z: Complex<f64>) -> Complex<f64> {
        let zi = z.inv();
        let zi2 = zi * zi;
        (self.b[0] + zi * self.b[1] + zi2 * self.b[2]) / (Complex::new(1.0, 0.0) + zi * self.a[0] + zi2 * self.a[1])
    }

    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// Transposed direct-form II state for a unit-step steady state.
    fn step_state(&self) -> [f64; 2] {
        let g = self.dc_gain();
        let s2 = self.b[2] - self.a[1] * g;
        let s1 = self.b[1] - self.a[0] * g + s2;
        [s1, s2]
    }
}

/// Magnitude response of a cascade at `freq_hz`.
pub fn cascade_gain(sections: &[Biquad], freq_hz: f64, fs: f64) -> f64 {
    let z = Complex::from_polar(1.0, 2.0 * PI * freq_hz / fs);
    sections.iter().map(|s| s.response(z)).product::<Complex<f64>>().norm()
}

fn butterworth_bandpass_sos(low_hz: f64, high_hz: f64, order: usize, fs: f64) -> Vec<Biquad> {
    let n = order / 2;
    // prewarped edges for the bilinear map s = (z - 1) / (z + 1)
    let wl = (PI * low_hz / fs).tan();
    let wh = (PI * high_hz / fs).tan();
    let bw = wh - wl;
    let w0sq = wl * wh;

    let mut zpoles = Vec::with_capacity(2 * n);
    for k in 0..n {
        let theta = PI * (2 * k + n + 1) as f64 / (2 * n) as f64;
        let p = Complex::from_polar(1.0, theta);
        let pb = p * bw;
        let disc = (pb * pb - 4.0 * w0sq).sqrt();
        for s in [(pb + disc) * 0.5, (pb - disc) * 0.5] {
            let one = Complex::new(1.0, 0.0);
            zpoles.push((one + s) / (one - s));
        }
    }

    let mut sections = Vec::with_capacity(n);
    let mut reals = Vec::new();
    for z in &zpoles {
        if z.im.abs() <= 1e-12 {
            reals.push(z.re);
        } else if z.im > 0.0 {
            sections.push(Biquad {
                b: [1.0, 0.0, -1.0],
                a: [-2.0 * z.re, z.norm_sqr()],
            });
        }
    }
    reals.sort_by(|a, b| a.total_cmp(b));
    for pair in reals.chunks(2) {
        let (r1, r2) = (pair[0], pair[1]);
        sections.push(Biquad {
            b: [1.0, 0.0, -1.0],
            a: [-(r1 + r2), r1 * r2],
        });
    }

    // unit gain at the band center
    let center_hz = (w0sq.sqrt()).atan() * fs / PI;
    let g = cascade_gain(&sections, center_hz, fs);
    for v in &mut sections[0].b {
        *v /= g;
    }
    sections
}

fn notch_biquad(center_hz: f64, q: f64, fs: f64) -> Biquad {
    let w0 = 2.0 * PI * center_hz / fs;
    let bw = w0 / q;
    let beta = (bw / 2.0).tan();
    let gain = 1.0 / (1.0 + beta);
    let c = w0.cos();
    Biquad {
        b: [gain, -2.0 * gain * c, gain],
        a: [-2.0 * gain * c, 2.0 * gain - 1.0],
    }
}

fn sosfilt(sections: &[Biquad], x: &mut [f64], init: f64) {
    let mut scale = init;
    for s in sections {
        let [mut s1, mut s2] = s.step_state();
        s1 *= scale;
        s2 *= scale;
        for v in x.iter_mut() {
            let xin = *v;
            let y = s.b[0] * xin + s1;
            s1 = s.b[1] * xin - s.a[0] * y + s2;
            s2 = s.b[2] * xin - s.a[1] * y;
            *v = y;
        }
        scale *= s.dc_gain();
    }
}

/// Forward-backward filtering with odd-extension padding and steady-state
/// initial conditions. Output length equals input length.
pub fn sosfiltfilt(sections: &[Biquad], x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len();
    let pad = (3 * (2 * sections.len() + 1)).min(n - 1);
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| 2.0 * x[0] - x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| 2.0 * x[n - 1] - x[n - 1 - i]));

    let first = ext[0];
    sosfilt(sections, &mut ext, first);
    ext.reverse();
    let first = ext[0];
    sosfilt(sections, &mut ext, first);
    ext.reverse();
    ext[pad..pad + n].to_vec()
}

pub fn apply_filter(signal: &Signal, spec: &FilterSpec) -> Result<Signal> {
    let sections = spec.design(signal.fs)?;
    Ok(signal.with_samples(sosfiltfilt(&sections, &signal.samples)))
}

/// Zero-phase Butterworth band-pass.
pub fn butterworth_bandpass(signal: &Signal, spec: &FilterSpec) -> Result<Signal> {
    match spec {
        FilterSpec::ButterworthBandpass { .. } => apply_filter(signal, spec),
        FilterSpec::Notch { .. } => Err(Error::Config("expected a band-pass filter spec".into())),
    }
}

/// Zero-phase second-order notch.
pub fn notch(signal: &Signal, center_hz: f64, quality_q: f64) -> Result<Signal> {
    apply_filter(signal, &FilterSpec::Notch { center_hz, quality_q })
}
