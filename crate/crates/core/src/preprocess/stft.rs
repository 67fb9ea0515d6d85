use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signalgen::Signal;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StftSpec {
    #[serde(default = "default_window_s")]
    pub window_s: f64,
    #[serde(default = "default_overlap")]
    pub overlap_samples: usize,
    /// Output bin width; must be a whole number of native 1 Hz bins.
    #[serde(default = "default_freq_res")]
    pub freq_res_hz: f64,
}

fn default_window_s() -> f64 {
    1.0
}

fn default_overlap() -> usize {
    50
}

fn default_freq_res() -> f64 {
    2.0
}

impl Default for StftSpec {
    fn default() -> Self {
        StftSpec {
            window_s: default_window_s(),
            overlap_samples: default_overlap(),
            freq_res_hz: default_freq_res(),
        }
    }
}

/// Frame geometry of an STFT at a given sampling rate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StftLayout {
    pub window: usize,
    pub hop: usize,
    pub dft_len: usize,
    pub bins: usize,
    pub bin_width: usize,
}

impl StftLayout {
    pub fn frames(&self, len: usize) -> usize {
        if len < self.window {
            0
        } else {
            (len - self.window) / self.hop + 1
        }
    }
}

impl StftSpec {
    pub fn layout(&self, fs: f64) -> Result<StftLayout> {
        let window = (self.window_s * fs).round();
        if !(window >= 1.0) {
            return Err(Error::Config(format!("window of {} s at {fs} Hz is empty", self.window_s)));
        }
        let window = window as usize;
        if window <= self.overlap_samples {
            return Err(Error::Config(format!(
                "window ({window} samples) must exceed overlap ({})",
                self.overlap_samples
            )));
        }
        let width = self.freq_res_hz.round();
        if !(width >= 1.0) || (self.freq_res_hz - width).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "freq_res_hz must be a positive whole number of 1 Hz bins, got {}",
                self.freq_res_hz
            )));
        }
        let dft_len = fs.round() as usize;
        let bins = ((fs / 2.0) / self.freq_res_hz).floor() as usize;
        if bins == 0 || dft_len < 2 {
            return Err(Error::Config(format!("sampling rate {fs} Hz too low for the STFT spec")));
        }
        Ok(StftLayout {
            window,
            hop: window - self.overlap_samples,
            dft_len,
            bins,
            bin_width: width as usize,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    /// `bins × frames`, bin-major: `magnitudes[b * frames + t]`.
    pub magnitudes: Vec<f64>,
    pub bins: usize,
    pub frames: usize,
    pub bin_hz: f64,
    pub frame_hop_samples: usize,
}

impl Spectrogram {
    pub fn at(&self, bin: usize, frame: usize) -> f64 {
        self.magnitudes[bin * self.frames + frame]
    }
}

/// Hann-windowed magnitude STFT on native 1 Hz bins (DFT length
/// `round(fs)`), averaged into `freq_res_hz` bins. Output bin `b` covers
/// native bins `[b * width, (b + 1) * width)`. Magnitudes are scaled by
/// `2 / Σw` so a bin-centered unit sine peaks near 1.
pub fn stft(signal: &Signal, spec: &StftSpec) -> Result<Spectrogram> {
    let layout = spec.layout(signal.fs)?;
    let frames = layout.frames(signal.len());
    if frames == 0 {
        return Err(Error::Input(format!(
            "signal of {} samples is shorter than one {}-sample window",
            signal.len(),
            layout.window
        )));
    }
    let w = layout.window;
    let window: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / w as f64).cos()).collect();
    let norm = 2.0 / window.iter().sum::<f64>();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(layout.dft_len);
    let mut buf = vec![Complex::new(0.0, 0.0); layout.dft_len];
    let mut magnitudes = vec![0.0; layout.bins * frames];
    for t in 0..frames {
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        let start = t * layout.hop;
        // time-aliasing fold: DFT samples of a longer window at dft_len points
        for (i, (&x, &wi)) in signal.samples[start..start + w].iter().zip(&window).enumerate() {
            buf[i % layout.dft_len].re += x * wi;
        }
        fft.process(&mut buf);
        for b in 0..layout.bins {
            let lo = b * layout.bin_width;
            let sum: f64 = buf[lo..lo + layout.bin_width].iter().map(|c| c.norm()).sum();
            magnitudes[b * frames + t] = norm * sum / layout.bin_width as f64;
        }
    }
    Ok(Spectrogram {
        magnitudes,
        bins: layout.bins,
        frames,
        bin_hz: spec.freq_res_hz,
        frame_hop_samples: layout.hop,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signalgen::DomainName;
    use proptest::prelude::*;

    fn sig(samples: Vec<f64>, fs: f64) -> Signal {
        Signal {
            samples,
            fs,
            patient_id: "p".into(),
            label: "normal".into(),
            domain: DomainName::Base,
        }
    }

    #[test]
    fn default_geometry_at_256_hz() {
        let s = sig(vec![0.0; 3072], 256.0);
        let spec = stft(&s, &StftSpec::default()).unwrap();
        assert_eq!((spec.bins, spec.frames, spec.frame_hop_samples), (64, 14, 206));
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn sine_peaks_in_its_bin() {
        let fs = 256.0;
        let x: Vec<f64> = (0..3072).map(|i| (2.0 * PI * 8.0 * i as f64 / fs).sin()).collect();
        let spec = stft(&sig(x, fs), &StftSpec::default()).unwrap();
        for t in 0..spec.frames {
            let best = (0..spec.bins)
                .max_by(|&a, &b| spec.at(a, t).total_cmp(&spec.at(b, t)))
                .unwrap();
            assert_eq!(best as f64 * spec.bin_hz, 8.0);
        }
    }

    #[test]
    fn short_signal_is_an_input_error() {
        assert!(matches!(
            stft(&sig(vec![0.0; 100], 256.0), &StftSpec::default()),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn bad_specs_are_rejected() {
        let s = sig(vec![0.0; 1000], 256.0);
        let overlap = StftSpec {
            overlap_samples: 300,
            ..Default::default()
        };
        assert!(matches!(stft(&s, &overlap), Err(Error::Config(_))));
        let frac = StftSpec {
            freq_res_hz: 1.5,
            ..Default::default()
        };
        assert!(matches!(stft(&s, &frac), Err(Error::Config(_))));
    }

    #[test]
    fn longer_window_matches_direct_dft() {
        // 2 s window folded onto the 1 Hz grid equals a direct DFT at integer Hz
        let fs = 64.0;
        let x: Vec<f64> = (0..256).map(|i| ((i * 37) % 11) as f64 - 5.0).collect();
        let spec = StftSpec {
            window_s: 2.0,
            overlap_samples: 0,
            freq_res_hz: 1.0,
        };
        let got = stft(&sig(x.clone(), fs), &spec).unwrap();
        let w = 128;
        let win: Vec<f64> = (0..w).map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / w as f64).cos()).collect();
        let norm = 2.0 / win.iter().sum::<f64>();
        for t in 0..got.frames {
            for b in 0..got.bins {
                let (mut re, mut im) = (0.0, 0.0);
                for i in 0..w {
                    let ang = -2.0 * PI * b as f64 * i as f64 / fs;
                    let v = x[t * w + i] * win[i];
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                let direct = norm * (re * re + im * im).sqrt();
                assert!((got.at(b, t) - direct).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #[test]
        fn geometry_follows_closed_form(fs in prop::sample::select(vec![100.0, 128.0, 200.0, 256.0, 300.0]),
                                        len_s in 1.0f64..15.0,
                                        overlap in 0usize..60,
                                        res in 1u32..4) {
            let spec = StftSpec { window_s: 1.0, overlap_samples: overlap, freq_res_hz: res as f64 };
            let n = (len_s * fs) as usize;
            prop_assume!(n >= fs as usize);
            let out = stft(&sig(vec![0.1; n], fs), &spec).unwrap();
            let w = fs as usize;
            let hop = w - overlap;
            prop_assert_eq!(out.frames, (n - w) / hop + 1);
            prop_assert_eq!(out.bins, ((fs / 2.0) / res as f64).floor() as usize);
            prop_assert!(out.magnitudes.iter().all(|&m| m >= 0.0));
        }
    }
}
