//! Signal conditioning: filtering, resampling, STFT features, scaling and
//! class-balancing augmentation.

mod augment;
mod filter;
mod stft;

pub use augment::augment_balance;
pub use filter::{apply_filter, butterworth_bandpass, cascade_gain, notch, sosfiltfilt, Biquad, FilterSpec};
pub use stft::{stft, Spectrogram, StftLayout, StftSpec};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signalgen::Signal;

/// Linear-interpolation resampling to `new_fs`; output length is
/// `round(len * new_fs / fs)`.
pub fn resample(signal: &Signal, new_fs: f64) -> Result<Signal> {
    if !(new_fs > 0.0 && new_fs.is_finite()) {
        return Err(Error::Config(format!("target sampling rate must be positive, got {new_fs}")));
    }
    if new_fs == signal.fs {
        return Ok(signal.clone());
    }
    let len = signal.len();
    let out_len = (len as f64 * new_fs / signal.fs).round() as usize;
    let step = signal.fs / new_fs;
    let x = &signal.samples;
    let samples = (0..out_len)
        .map(|i| {
            let pos = i as f64 * step;
            let j = pos.floor() as usize;
            if j + 1 >= len {
                return x[len - 1];
            }
            let frac = pos - j as f64;
            x[j] + frac * (x[j + 1] - x[j])
        })
        .collect();
    Ok(Signal {
        samples,
        fs: new_fs,
        ..signal.clone()
    })
}

/// `(x - min) / (max - min)`; a constant input maps to zeros.
pub fn minmax_normalize(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let range = hi - lo;
    if !(range > 0.0) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / range).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum FeatureScaling {
    None,
    MinMax,
    /// `ln(m + floor_ratio * max(m))`, then min-max over the record.
    LogMinMax { floor_ratio: f64 },
}

impl Default for FeatureScaling {
    fn default() -> Self {
        FeatureScaling::LogMinMax { floor_ratio: 1e-3 }
    }
}

/// Raw signal → flattened encoder input.
///
/// Steps: resample to `target_fs`, apply `filters` in order, STFT, scale.
/// The flattened vector is bin-major (`bins × frames`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pipeline {
    #[serde(default = "default_target_fs")]
    pub target_fs: f64,
    #[serde(default = "default_filters")]
    pub filters: Vec<FilterSpec>,
    #[serde(default)]
    pub stft: StftSpec,
    #[serde(default)]
    pub scaling: FeatureScaling,
}

fn default_target_fs() -> f64 {
    256.0
}

fn default_filters() -> Vec<FilterSpec> {
    vec![
        FilterSpec::ButterworthBandpass {
            low_hz: 0.5,
            high_hz: 60.0,
            order: 4,
        },
        FilterSpec::Notch {
            center_hz: 50.0,
            quality_q: 30.0,
        },
    ]
}

impl Default for Pipeline {
    fn default() -> Self {
        Pipeline {
            target_fs: default_target_fs(),
            filters: default_filters(),
            stft: StftSpec::default(),
            scaling: FeatureScaling::default(),
        }
    }
}

impl Pipeline {
    pub fn validate(&self) -> Result<()> {
        for f in &self.filters {
            f.validate(self.target_fs)?;
        }
        self.stft.layout(self.target_fs)?;
        Ok(())
    }

    /// Input length the encoder sees for a record of `n_samples` at `fs`.
    pub fn output_dim(&self, n_samples: usize, fs: f64) -> Result<usize> {
        let layout = self.stft.layout(self.target_fs)?;
        let len = if fs == self.target_fs {
            n_samples
        } else {
            (n_samples as f64 * self.target_fs / fs).round() as usize
        };
        let frames = layout.frames(len);
        if frames == 0 {
            return Err(Error::Input(format!(
                "{n_samples} samples at {fs} Hz are shorter than one STFT window"
            )));
        }
        Ok(layout.bins * frames)
    }

    pub fn spectrogram(&self, signal: &Signal) -> Result<Spectrogram> {
        let mut s = resample(signal, self.target_fs)?;
        for f in &self.filters {
            s = apply_filter(&s, f)?;
        }
        stft(&s, &self.stft)
    }

    pub fn apply(&self, signal: &Signal) -> Result<Vec<f64>> {
        let spec = self.spectrogram(signal)?;
        let m = spec.magnitudes;
        Ok(match self.scaling {
            FeatureScaling::None => m,
            FeatureScaling::MinMax => minmax_normalize(&m),
            FeatureScaling::LogMinMax { floor_ratio } => {
                let max = m.iter().fold(0.0f64, |a, &b| a.max(b));
                let floor = (floor_ratio * max).max(f64::MIN_POSITIVE);
                let logs: Vec<f64> = m.iter().map(|v| (v + floor).ln()).collect();
                minmax_normalize(&logs)
            }
        })
    }
}
