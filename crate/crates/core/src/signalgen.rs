//! Synthetic single-channel biosignals.
//!
//! Every record is 1/f background noise; the `abnormal` class adds
//! amplitude-modulated rhythmic bursts. Domains differ in sampling rate,
//! noise level, gain and burst frequency, giving a controllable
//! hospital-to-wearable shift.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::dataset::{Dataset, Record, Role};
use crate::error::{Error, Result};
use crate::rng::{rng_from, SeedMixer};

pub const NORMAL: &str = "normal";
pub const ABNORMAL: &str = "abnormal";
pub const MIN_SAMPLES: usize = 64;

/// Lowest frequency shaped by the 1/f filter; bins below it take its gain.
const PINK_FLOOR_HZ: f64 = 0.5;
/// Period of the burst amplitude envelope.
const BURST_ENVELOPE_S: f64 = 2.0;
/// Per-record burst frequency jitter (uniform, ± Hz).
const BURST_JITTER_HZ: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DomainName {
    Base,
    Target,
    New,
    Test,
}

impl DomainName {
    pub fn as_str(self) -> &'static str {
        match self {
            DomainName::Base => "base",
            DomainName::Target => "target",
            DomainName::New => "new",
            DomainName::Test => "test",
        }
    }

    /// Dataset role a freshly generated record of this domain receives.
    pub fn default_role(self) -> Role {
        match self {
            DomainName::Base | DomainName::Target => Role::Train,
            DomainName::New => Role::New,
            DomainName::Test => Role::Test,
        }
    }
}

impl fmt::Display for DomainName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for DomainName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(DomainName::Base),
            "target" => Ok(DomainName::Target),
            "new" => Ok(DomainName::New),
            "test" => Ok(DomainName::Test),
            other => Err(Error::Input(format!("unknown domain {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub name: DomainName,
    pub fs: f64,
    pub noise_std: f64,
    pub gain: f64,
    /// Offset added to `burst_hz` for this domain.
    pub burst_freq_shift: f64,
    #[serde(default = "default_burst_hz")]
    pub burst_hz: f64,
    /// Burst amplitude relative to unit gain, before the patient factor.
    #[serde(default = "default_burst_amp")]
    pub burst_amp: f64,
    /// Half-width of the per-patient burst frequency offset.
    #[serde(default = "default_patient_spread")]
    pub patient_burst_spread_hz: f64,
}

fn default_burst_hz() -> f64 {
    8.0
}

fn default_burst_amp() -> f64 {
    1.5
}

fn default_patient_spread() -> f64 {
    2.0
}

impl DomainSpec {
    /// Hospital-style recordings.
    pub fn base() -> Self {
        DomainSpec {
            name: DomainName::Base,
            fs: 256.0,
            noise_std: 1.0,
            gain: 1.0,
            burst_freq_shift: 0.0,
            burst_hz: default_burst_hz(),
            burst_amp: default_burst_amp(),
            patient_burst_spread_hz: default_patient_spread(),
        }
    }

    /// Wearable-style recordings: 200 Hz, 1.5x noise, bursts 2 Hz higher.
    pub fn wearable(name: DomainName) -> Self {
        DomainSpec {
            name,
            fs: 200.0,
            noise_std: 1.5,
            gain: 1.0,
            burst_freq_shift: 2.0,
            burst_hz: default_burst_hz(),
            burst_amp: default_burst_amp(),
            patient_burst_spread_hz: default_patient_spread(),
        }
    }

    pub fn default_for(name: DomainName) -> Self {
        match name {
            DomainName::Base => Self::base(),
            other => Self::wearable(other),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fs > 0.0 && self.fs.is_finite()) {
            return Err(Error::Config(format!("domain {}: fs must be positive", self.name)));
        }
        if !(self.noise_std >= 0.0) {
            return Err(Error::Config(format!("domain {}: noise_std must be >= 0", self.name)));
        }
        if !(self.gain > 0.0) {
            return Err(Error::Config(format!("domain {}: gain must be > 0", self.name)));
        }
        if !(self.patient_burst_spread_hz >= 0.0) {
            return Err(Error::Config(format!("domain {}: patient_burst_spread_hz must be >= 0", self.name)));
        }
        let f = self.burst_hz + self.burst_freq_shift;
        let reach = self.patient_burst_spread_hz + BURST_JITTER_HZ;
        if !(f - reach > 0.0 && f + reach < self.fs / 2.0) {
            return Err(Error::Config(format!(
                "domain {}: burst frequency {f} Hz outside (0, fs/2)",
                self.name
            )));
        }
        Ok(())
    }

    /// True when `self` and `other` differ in at least one shift parameter.
    pub fn shifted_from(&self, other: &DomainSpec) -> bool {
        self.fs != other.fs
            || self.noise_std != other.noise_std
            || self.gain != other.gain
            || self.burst_freq_shift != other.burst_freq_shift
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientSpec {
    pub patient_id: String,
    pub amp_factor: f64,
    pub phase_offset: f64,
    /// In [-1, 1]; scaled by the domain's `patient_burst_spread_hz`.
    pub burst_offset: f64,
    pub seed: u64,
}

impl PatientSpec {
    /// Patient-level variability drawn from the dataset seed.
    pub fn derive(patient_id: &str, dataset_seed: u64) -> Self {
        let seed = SeedMixer::new(dataset_seed).str("patient").str(patient_id).finish();
        let mut rng = rng_from(seed);
        PatientSpec {
            patient_id: patient_id.to_string(),
            amp_factor: rng.random_range(0.6..1.4),
            phase_offset: rng.random_range(0.0..2.0 * PI),
            burst_offset: rng.random_range(-1.0..1.0),
            seed,
        }
    }
}

/// One labeled single-channel recording.
#[derive(Debug, Clone, PartialEq)]
pub struct Signal {
    pub samples: Vec<f64>,
    pub fs: f64,
    pub patient_id: String,
    pub label: String,
    pub domain: DomainName,
}

impl Signal {
    pub fn with_samples(&self, samples: Vec<f64>) -> Signal {
        Signal {
            samples,
            fs: self.fs,
            patient_id: self.patient_id.clone(),
            label: self.label.clone(),
            domain: self.domain,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.fs
    }
}

/// Seed for record `index` of `(patient_id, label)`.
pub fn record_seed(dataset_seed: u64, patient_id: &str, label: &str, index: usize) -> u64 {
    SeedMixer::new(dataset_seed)
        .str(patient_id)
        .str(label)
        .u64(index as u64)
        .finish()
}

/// Unit-variance noise with power spectral density ∝ 1/f.
fn pink_noise(n: usize, fs: f64, rng: &mut impl rand::Rng) -> Vec<f64> {
    let mut buf: Vec<Complex<f64>> = (0..n)
        .map(|_| Complex::new(rng.sample::<f64, _>(StandardNormal), 0.0))
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for k in 1..n {
        let bin = k.min(n - k);
        let f = (bin as f64 * fs / n as f64).max(PINK_FLOOR_HZ);
        buf[k] *= 1.0 / f.sqrt();
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let x: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let mean = x.iter().sum::<f64>() / n as f64;
    let std = (x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
    if std == 0.0 {
        return vec![0.0; n];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Generates one record. Samples are rounded to `f32` precision so the
/// on-disk format stores them exactly.
pub fn gen_signal(
    domain: &DomainSpec,
    patient: &PatientSpec,
    label: &str,
    duration_s: f64,
    record_seed: u64,
) -> Result<Signal> {
    domain.validate()?;
    if label != NORMAL && label != ABNORMAL {
        return Err(Error::Input(format!("unknown class label {label:?}")));
    }
    let n = (duration_s * domain.fs).round();
    if !(n >= MIN_SAMPLES as f64) {
        return Err(Error::Config(format!(
            "duration {duration_s} s at {} Hz gives {n} samples, need at least {MIN_SAMPLES}",
            domain.fs
        )));
    }
    let n = n as usize;
    let mut rng = rng_from(record_seed);
    let scale = domain.gain * domain.noise_std;
    let mut x = if scale > 0.0 {
        pink_noise(n, domain.fs, &mut rng)
            .into_iter()
            .map(|v| v * scale)
            .collect()
    } else {
        vec![0.0; n]
    };
    if label == ABNORMAL {
        let f = domain.burst_hz
            + domain.burst_freq_shift
            + patient.burst_offset * domain.patient_burst_spread_hz
            + rng.random_range(-BURST_JITTER_HZ..BURST_JITTER_HZ);
        let amp = domain.gain * domain.burst_amp * patient.amp_factor;
        let env_phase = rng.random_range(0.0..2.0 * PI);
        for (i, v) in x.iter_mut().enumerate() {
            let t = i as f64 / domain.fs;
            let env = 0.5 * (1.0 - (2.0 * PI * t / BURST_ENVELOPE_S + env_phase).cos());
            *v += amp * env * (2.0 * PI * f * t + patient.phase_offset).sin();
        }
    }
    Ok(Signal {
        samples: x.into_iter().map(|v| v as f32 as f64).collect(),
        fs: domain.fs,
        patient_id: patient.patient_id.clone(),
        label: label.to_string(),
        domain: domain.name,
    })
}

pub fn patient_id(domain: DomainName, index: usize) -> String {
    format!("{domain}-p{index:03}")
}

/// Balanced dataset: every patient contributes the same number of records
/// per class. Records are ordered by domain, patient, class, index.
pub fn gen_dataset(
    domains: &[DomainSpec],
    patients_per_domain: usize,
    records_per_patient_per_class: usize,
    duration_s: f64,
    seed: u64,
) -> Result<Dataset> {
    if domains.is_empty() {
        return Err(Error::Config("at least one domain is required".into()));
    }
    if patients_per_domain == 0 || records_per_patient_per_class == 0 {
        return Err(Error::Config("patient and record counts must be positive".into()));
    }
    let classes = vec![NORMAL.to_string(), ABNORMAL.to_string()];
    let mut records = Vec::new();
    for domain in domains {
        domain.validate()?;
        for p in 0..patients_per_domain {
            let pid = patient_id(domain.name, p);
            let patient = PatientSpec::derive(&pid, seed);
            for label in &classes {
                for r in 0..records_per_patient_per_class {
                    let rs = record_seed(seed, &pid, label, r);
                    let signal = gen_signal(domain, &patient, label, duration_s, rs)?;
                    records.push(Record {
                        id: format!("{pid}-{label}-{r:03}"),
                        role: domain.name.default_role(),
                        signal,
                        provenance: json!({
                            "generator": "signalgen",
                            "record_seed": rs,
                            "record_index": r,
                            "amp_factor": patient.amp_factor,
                            "phase_offset": patient.phase_offset,
                            "burst_offset": patient.burst_offset,
                        }),
                        noisy: false,
                        duplicate_of: None,
                    });
                }
            }
        }
    }
    let provenance = json!({
        "generator": "signalgen",
        "seed": seed,
        "domains": domains,
        "patients_per_domain": patients_per_domain,
        "records_per_patient_per_class": records_per_patient_per_class,
        "duration_s": duration_s,
    });
    Dataset::new(classes, records, provenance)
}
