//! Record container, on-disk format, validation split and the
//! patient-disjoint episode sampler.
//!
//! On disk a dataset is a directory holding `manifest.json` and one raw
//! little-endian `f32` file per record under `records/`.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::path::Path;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nncore::{read_file, write_file, ByteReader};
use crate::rng::rng_from;
use crate::signalgen::{DomainName, Signal};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    New,
    Test,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::Train => "train",
            Role::New => "new",
            Role::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    pub id: String,
    pub role: Role,
    pub signal: Signal,
    pub provenance: serde_json::Value,
    /// Set when augmentation added noise to this record.
    pub noisy: bool,
    /// Source record id when this record is an augmentation duplicate.
    pub duplicate_of: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub records: Vec<Record>,
    pub provenance: serde_json::Value,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    classes: Vec<String>,
    #[serde(default)]
    provenance: serde_json::Value,
    records: Vec<ManifestRecord>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    patient_id: String,
    label: String,
    role: Role,
    domain: DomainName,
    fs: f64,
    sample_file: String,
    n_samples: usize,
    #[serde(default)]
    provenance: serde_json::Value,
    #[serde(default)]
    noisy: bool,
    #[serde(default)]
    duplicate_of: Option<String>,
}

impl Dataset {
    pub fn new(classes: Vec<String>, records: Vec<Record>, provenance: serde_json::Value) -> Result<Self> {
        let ds = Dataset {
            classes,
            records,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::Input("dataset has no classes".into()));
        }
        let mut ids = HashSet::new();
        for r in &self.records {
            if !ids.insert(r.id.as_str()) {
                return Err(Error::Input(format!("duplicate record id {:?}", r.id)));
            }
            if r.signal.patient_id.is_empty() {
                return Err(Error::Input(format!("record {} has no patient id", r.id)));
            }
            if self.class_index(&r.signal.label).is_none() {
                return Err(Error::Input(format!(
                    "record {} has label {:?} outside the class set",
                    r.id, r.signal.label
                )));
            }
            if r.signal.samples.is_empty() || !(r.signal.fs > 0.0) {
                return Err(Error::Input(format!("record {} is empty or has invalid fs", r.id)));
            }
        }
        Ok(())
    }

    pub fn class_index(&self, label: &str) -> Option<usize> {
        self.classes.iter().position(|c| c == label)
    }

    pub fn label_index(&self, record: usize) -> usize {
        self.class_index(&self.records[record].signal.label)
            .expect("validated dataset labels are in the class set")
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Sorted patient ids having at least one record of `role`.
    pub fn patients(&self, role: Role) -> Vec<String> {
        self.records
            .iter()
            .filter(|r| r.role == role)
            .map(|r| r.signal.patient_id.clone())
            .collect::<BTreeSet<_>>()
            .into_iter()
            .collect()
    }

    pub fn all_patients(&self) -> BTreeSet<String> {
        self.records.iter().map(|r| r.signal.patient_id.clone()).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.classes.len()];
        for i in 0..self.records.len() {
            counts[self.label_index(i)] += 1;
        }
        counts
    }

    /// Records of the given role, relabeled to `role`. Convenience for
    /// assembling a train + new dataset.
    pub fn with_role(mut self, role: Role) -> Self {
        for r in &mut self.records {
            r.role = role;
        }
        self
    }

    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        if self.classes != other.classes {
            return Err(Error::Input("cannot merge datasets with different class sets".into()));
        }
        let mut records = self.records.clone();
        records.extend(other.records.iter().cloned());
        Dataset::new(
            self.classes.clone(),
            records,
            serde_json::json!({ "merged": [self.provenance, other.provenance] }),
        )
    }

    fn subset(&self, keep: impl Fn(&Record) -> bool, tag: &str) -> Dataset {
        Dataset {
            classes: self.classes.clone(),
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            provenance: serde_json::json!({ "subset": tag, "of": self.provenance }),
        }
    }

    pub fn manifest_json(&self) -> String {
        let manifest = Manifest {
            format_version: MANIFEST_VERSION,
            classes: self.classes.clone(),
            provenance: self.provenance.clone(),
            records: self
                .records
                .iter()
                .map(|r| ManifestRecord {
                    id: r.id.clone(),
                    patient_id: r.signal.patient_id.clone(),
                    label: r.signal.label.clone(),
                    role: r.role,
                    domain: r.signal.domain,
                    fs: r.signal.fs,
                    sample_file: sample_file_name(&r.id),
                    n_samples: r.signal.samples.len(),
                    provenance: r.provenance.clone(),
                    noisy: r.noisy,
                    duplicate_of: r.duplicate_of.clone(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&manifest).expect("manifest serializes")
    }
}

fn sample_file_name(id: &str) -> String {
    format!("records/{id}.f32")
}

/// Writes `dir/manifest.json` and `dir/records/*.f32`. Samples are stored
/// as `f32`; generated signals are already `f32`-exact.
pub fn save_dataset(dataset: &Dataset, dir: &Path) -> Result<()> {
    let rec_dir = dir.join("records");
    std::fs::create_dir_all(&rec_dir).map_err(|e| Error::io(&rec_dir, e))?;
    for r in &dataset.records {
        let mut bytes = Vec::with_capacity(4 * r.signal.samples.len());
        for &v in &r.signal.samples {
            bytes.extend_from_slice(&(v as f32).to_le_bytes());
        }
        write_file(&dir.join(sample_file_name(&r.id)), &bytes)?;
    }
    let path = dir.join(MANIFEST_FILE);
    write_file(&path, dataset.manifest_json().as_bytes())
}

pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let path = dir.join(MANIFEST_FILE);
    let text = String::from_utf8(read_file(&path)?)
        .map_err(|_| Error::format(path.display().to_string(), "manifest is not UTF-8"))?;
    let ctx = |e: serde_json::Error| {
        Error::format(
            format!("{} line {} column {}", path.display(), e.line(), e.column()),
            e.to_string(),
        )
    };
    let raw: serde_json::Value = serde_json::from_str(&text).map_err(ctx)?;
    match raw.get("format_version").and_then(|v| v.as_u64()) {
        Some(v) if v == u64::from(MANIFEST_VERSION) => {}
        Some(v) => {
            return Err(Error::UnsupportedVersion {
                what: "dataset manifest",
                found: v.min(u64::from(u32::MAX)) as u32,
                expected: MANIFEST_VERSION,
            })
        }
        None => {
            return Err(Error::format(
                format!("{} field format_version", path.display()),
                "missing or not an unsigned integer",
            ))
        }
    }
    let manifest: Manifest = serde_json::from_str(&text).map_err(ctx)?;
    let mut records = Vec::with_capacity(manifest.records.len());
    for (i, m) in manifest.records.into_iter().enumerate() {
        let field = |name: &str| format!("{} records[{i}].{name}", path.display());
        let file = dir.join(&m.sample_file);
        let bytes = read_file(&file).map_err(|e| Error::format(field("sample_file"), e.to_string()))?;
        if bytes.len() != 4 * m.n_samples {
            return Err(Error::format(
                field("n_samples"),
                format!("{} declares {} samples but file has {} bytes", m.id, m.n_samples, bytes.len()),
            ));
        }
        let samples = ByteReader::new(&bytes, "sample file")
            .f32s(m.n_samples)?
            .into_iter()
            .map(f64::from)
            .collect();
        records.push(Record {
            id: m.id,
            role: m.role,
            signal: Signal {
                samples,
                fs: m.fs,
                patient_id: m.patient_id,
                label: m.label,
                domain: m.domain,
            },
            provenance: m.provenance,
            noisy: m.noisy,
            duplicate_of: m.duplicate_of,
        });
    }
    Dataset::new(manifest.classes, records, manifest.provenance)
        .map_err(|e| Error::format(path.display().to_string(), e.to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EpisodeSpec {
    #[serde(default = "one")]
    pub n_support_patients: usize,
    #[serde(default = "one")]
    pub n_query_patients: usize,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default)]
    pub seed: u64,
}

fn one() -> usize {
    1
}

fn default_k() -> usize {
    5
}

fn default_m() -> usize {
    15
}

impl Default for EpisodeSpec {
    fn default() -> Self {
        EpisodeSpec {
            n_support_patients: 1,
            n_query_patients: 1,
            k: default_k(),
            m: default_m(),
            seed: 0,
        }
    }
}

impl EpisodeSpec {
    pub fn with_seed(self, seed: u64) -> Self {
        EpisodeSpec { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_support_patients == 0 || self.n_query_patients == 0 || self.k == 0 || self.m == 0 {
            return Err(Error::Config(format!(
                "episode spec needs N_S, N_Q, k, m >= 1 (got {}, {}, {}, {})",
                self.n_support_patients, self.n_query_patients, self.k, self.m
            )));
        }
        Ok(())
    }
}

/// Record indices per class for support and query, plus the patients used.
#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub support: Vec<Vec<usize>>,
    pub query: Vec<Vec<usize>>,
    pub support_patients: Vec<String>,
    pub query_patients: Vec<String>,
}

/// Per-class support record indices.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub per_class: Vec<Vec<usize>>,
    pub support_patients: Vec<String>,
}

/// Per-role, per-patient, per-class record lookup. Building it once lets
/// samplers draw many episodes without rescanning the records.
#[derive(Debug, Clone)]
pub struct PatientIndex {
    n_classes: usize,
    by_patient: BTreeMap<String, Vec<Vec<usize>>>,
    patients: Vec<String>,
    role: Role,
}

impl PatientIndex {
    pub fn new(dataset: &Dataset, role: Role) -> Self {
        let n_classes = dataset.classes.len();
        let mut by_patient: BTreeMap<String, Vec<Vec<usize>>> = BTreeMap::new();
        for (i, r) in dataset.records.iter().enumerate() {
            if r.role != role {
                continue;
            }
            by_patient
                .entry(r.signal.patient_id.clone())
                .or_insert_with(|| vec![Vec::new(); n_classes])[dataset.label_index(i)]
                .push(i);
        }
        let patients = by_patient.keys().cloned().collect();
        PatientIndex {
            n_classes,
            by_patient,
            patients,
            role,
        }
    }

    pub fn patients(&self) -> &[String] {
        &self.patients
    }

    fn pool(&self, patients: &[String], class: usize) -> Vec<usize> {
        let mut pool: Vec<usize> = patients
            .iter()
            .filter_map(|p| self.by_patient.get(p))
            .flat_map(|per| per[class].iter().copied())
            .collect();
        pool.sort_unstable();
        pool
    }

    fn draw(&self, rng: &mut impl rand::Rng, patients: &[String], k: usize, classes: &[String], side: &str) -> Result<Vec<Vec<usize>>> {
        (0..self.n_classes)
            .map(|c| {
                let pool = self.pool(patients, c);
                if pool.len() < k {
                    return Err(Error::Sampling(format!(
                        "{side}: class {:?} has {} records among patients {:?}, need {k}",
                        classes[c],
                        pool.len(),
                        patients
                    )));
                }
                let mut picked: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
                picked.sort_unstable();
                Ok(picked)
            })
            .collect()
    }

    fn split_patients(&self, rng: &mut impl rand::Rng, n_s: usize, n_q: usize) -> Result<(Vec<String>, Vec<String>)> {
        let have = self.patients.len();
        if have < n_s + n_q {
            return Err(Error::Sampling(format!(
                "need {} {} patients (N_S={n_s}, N_Q={n_q}) but only {have} available; short by {}",
                n_s + n_q,
                self.role,
                n_s + n_q - have
            )));
        }
        let mut order = self.patients.clone();
        let (chosen, _) = order.partial_shuffle(rng, n_s + n_q);
        let mut support = chosen[..n_s].to_vec();
        let mut query = chosen[n_s..].to_vec();
        support.sort();
        query.sort();
        Ok((support, query))
    }

    pub fn sample_patients(&self, spec: &EpisodeSpec) -> Result<(Vec<String>, Vec<String>)> {
        spec.validate()?;
        let mut rng = rng_from(spec.seed);
        self.split_patients(&mut rng, spec.n_support_patients, spec.n_query_patients)
    }

    pub fn build_episode(&self, dataset: &Dataset, spec: &EpisodeSpec) -> Result<Episode> {
        spec.validate()?;
        let mut rng = rng_from(spec.seed);
        let (support_patients, query_patients) =
            self.split_patients(&mut rng, spec.n_support_patients, spec.n_query_patients)?;
        let support = self.draw(&mut rng, &support_patients, spec.k, &dataset.classes, "support")?;
        let query = self.draw(&mut rng, &query_patients, spec.m, &dataset.classes, "query")?;
        Ok(Episode {
            support,
            query,
            support_patients,
            query_patients,
        })
    }

    /// `n_support_patients` random patients, `k` records per class from them.
    pub fn sample_support(&self, dataset: &Dataset, n_support_patients: usize, k: usize, seed: u64) -> Result<SupportSet> {
        if n_support_patients == 0 || k == 0 {
            return Err(Error::Config("support sampling needs N_S >= 1 and k >= 1".into()));
        }
        let mut rng = rng_from(seed);
        let (support_patients, _) = self.split_patients(&mut rng, n_support_patients, 0)?;
        let per_class = self.draw(&mut rng, &support_patients, k, &dataset.classes, "support")?;
        Ok(SupportSet {
            per_class,
            support_patients,
        })
    }
}

pub fn sample_patients(dataset: &Dataset, spec: &EpisodeSpec) -> Result<(Vec<String>, Vec<String>)> {
    PatientIndex::new(dataset, Role::Train).sample_patients(spec)
}

pub fn build_episode(dataset: &Dataset, spec: &EpisodeSpec) -> Result<Episode> {
    PatientIndex::new(dataset, Role::Train).build_episode(dataset, spec)
}

/// Support for deployment: random train-role patients, `k` per class.
pub fn sample_support(dataset: &Dataset, n_support_patients: usize, k: usize, seed: u64) -> Result<SupportSet> {
    PatientIndex::new(dataset, Role::Train).sample_support(dataset, n_support_patients, k, seed)
}

/// Support rebuilt with new shots: per class, `k` records from the sampled
/// train-role support patients plus `k` records from the `new` role.
pub fn reconstruct_support_with_new(
    dataset: &Dataset,
    n_support_patients: usize,
    k: usize,
    seed: u64,
) -> Result<SupportSet> {
    if k == 0 {
        return Err(Error::Config("k must be >= 1".into()));
    }
    let new_counts = {
        let mut c = vec![0usize; dataset.classes.len()];
        for (i, r) in dataset.records.iter().enumerate() {
            if r.role == Role::New {
                c[dataset.label_index(i)] += 1;
            }
        }
        c
    };
    if let Some(c) = new_counts.iter().position(|&n| n < k) {
        return Err(Error::Sampling(format!(
            "new shots: class {:?} has {} new records, need k={k}",
            dataset.classes[c], new_counts[c]
        )));
    }
    let train = PatientIndex::new(dataset, Role::Train);
    let new = PatientIndex::new(dataset, Role::New);
    let mut rng = rng_from(seed);
    let (support_patients, _) = train.split_patients(&mut rng, n_support_patients, 0)?;
    let from_train = train.draw(&mut rng, &support_patients, k, &dataset.classes, "support")?;
    let all_new = new.patients.clone();
    let from_new = new.draw(&mut rng, &all_new, k, &dataset.classes, "new shots")?;
    let per_class = from_train
        .into_iter()
        .zip(from_new)
        .map(|(mut a, b)| {
            a.extend(b);
            a
        })
        .collect();
    Ok(SupportSet {
        per_class,
        support_patients,
    })
}

/// Patient-disjoint split; the validation side gets
/// `max(1, round(fraction * patients))` patients.
pub fn split_validation(dataset: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Config(format!("validation fraction must be in (0,1), got {fraction}")));
    }
    let patients: Vec<String> = dataset.all_patients().into_iter().collect();
    if patients.len() < 2 {
        return Err(Error::Sampling(format!(
            "validation split needs at least 2 patients, dataset has {}",
            patients.len()
        )));
    }
    let n_val = ((fraction * patients.len() as f64).round() as usize).clamp(1, patients.len() - 1);
    let mut order = patients;
    let mut rng = rng_from(seed);
    order.shuffle(&mut rng);
    let val: HashSet<String> = order[..n_val].iter().cloned().collect();
    let train_part = dataset.subset(|r| !val.contains(&r.signal.patient_id), "train");
    let val_part = dataset.subset(|r| val.contains(&r.signal.patient_id), "validation");
    Ok((train_part, val_part))
}
