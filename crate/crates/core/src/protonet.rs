//! Prototypical few-shot classification: class prototypes as mean support
//! features, softmax over negative squared distances, episodic meta-training
//! with gradients through the prototypes, and prototype updates from new
//! shots without touching the encoder.

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{reconstruct_support_with_new, split_validation, Dataset, Episode, EpisodeSpec, PatientIndex, Role, SupportSet};
use crate::error::{Error, Result};
use crate::nncore::{
    compare_with_finite_differences, encode, read_file, sgd_step, write_file, ByteReader, EncoderParams, FeatureVector, ForwardTrace,
    GradCheckReport, ParamGrads,
};
use crate::preprocess::Pipeline;
use crate::quant::{dequantize_value, quantize_value, FixedSpec};
use crate::rng::SeedMixer;
use crate::signalgen::Signal;

pub const PROTOTYPE_MAGIC: &[u8; 4] = b"MWSC";
pub const PROTOTYPE_VERSION: u32 = 1;

/// One D-dimensional vector per class, in class-index order.
#[derive(Debug, Clone, PartialEq)]
pub struct Prototypes {
    pub vectors: Vec<Vec<f64>>,
}

impl Prototypes {
    pub fn n_classes(&self) -> usize {
        self.vectors.len()
    }

    pub fn dim(&self) -> usize {
        self.vectors.first().map_or(0, Vec::len)
    }
}

/// Mean feature vector per class.
pub fn compute_prototypes(features: &[Vec<FeatureVector>]) -> Result<Prototypes> {
    if features.is_empty() {
        return Err(Error::Input("no classes given".into()));
    }
    let dim = features
        .iter()
        .flat_map(|c| c.first())
        .map(FeatureVector::dim)
        .next()
        .unwrap_or(0);
    let mut vectors = Vec::with_capacity(features.len());
    for (c, class) in features.iter().enumerate() {
        if class.is_empty() {
            return Err(Error::Input(format!("class {c} has no support features")));
        }
        let mut sum = vec![0.0; dim];
        for f in class {
            if f.dim() != dim {
                return Err(Error::Shape(format!("class {c} mixes feature dims {} and {dim}", f.dim())));
            }
            for (s, v) in sum.iter_mut().zip(&f.0) {
                *s += v;
            }
        }
        let n = class.len() as f64;
        vectors.push(sum.into_iter().map(|s| s / n).collect());
    }
    Ok(Prototypes { vectors })
}

fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// `softmax(-‖f - c_n‖²)` over classes, max-logit stabilized.
pub fn class_scores(feature: &FeatureVector, prototypes: &Prototypes) -> Result<Vec<f64>> {
    if prototypes.n_classes() == 0 {
        return Err(Error::Input("no prototypes".into()));
    }
    if feature.dim() != prototypes.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} does not match prototype dim {}",
            feature.dim(),
            prototypes.dim()
        )));
    }
    let logits: Vec<f64> = prototypes.vectors.iter().map(|c| -squared_distance(&feature.0, c)).collect();
    Ok(softmax(&logits))
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// Argmax with ties going to the lowest class index.
pub fn predict(probabilities: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in probabilities.iter().enumerate() {
        if p > probabilities[best] {
            best = i;
        }
    }
    best
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpisodeResult {
    pub loss: f64,
    pub probabilities: Vec<Vec<f64>>,
    pub labels: Vec<usize>,
    pub correct: usize,
}

/// Mean negative log-likelihood of the true class over the query set.
pub fn episode_loss(query: &[(FeatureVector, usize)], prototypes: &Prototypes) -> Result<EpisodeResult> {
    if query.is_empty() {
        return Err(Error::Input("query set is empty".into()));
    }
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(query.len());
    let mut labels = Vec::with_capacity(query.len());
    let mut correct = 0;
    for (f, y) in query {
        if *y >= prototypes.n_classes() {
            return Err(Error::Input(format!(
                "query label {y} outside the {} prototype classes",
                prototypes.n_classes()
            )));
        }
        let p = class_scores(f, prototypes)?;
        let logits: Vec<f64> = prototypes.vectors.iter().map(|c| -squared_distance(&f.0, c)).collect();
        loss += log_sum_exp(&logits) - logits[*y];
        if predict(&p) == *y {
            correct += 1;
        }
        probabilities.push(p);
        labels.push(*y);
    }
    Ok(EpisodeResult {
        loss: loss / query.len() as f64,
        probabilities,
        labels,
        correct,
    })
}

fn log_sum_exp(z: &[f64]) -> f64 {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + z.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Dataset plus the preprocessed encoder input of every record.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub dataset: Dataset,
    pub inputs: Vec<Vec<f64>>,
}

impl Prepared {
    pub fn new(dataset: Dataset, pipeline: &Pipeline) -> Result<Self> {
        pipeline.validate()?;
        let inputs = dataset
            .records
            .par_iter()
            .map(|r| pipeline.apply(&r.signal))
            .collect::<Result<Vec<_>>>()?;
        Ok(Prepared { dataset, inputs })
    }

    pub fn from_inputs(dataset: Dataset, inputs: Vec<Vec<f64>>) -> Result<Self> {
        if dataset.len() != inputs.len() {
            return Err(Error::Shape(format!(
                "{} records but {} input vectors",
                dataset.len(),
                inputs.len()
            )));
        }
        Ok(Prepared { dataset, inputs })
    }

    /// Keeps the records (and inputs) whose patient passes `keep`.
    pub fn filter_patients(&self, keep: impl Fn(&str) -> bool) -> Prepared {
        let (records, inputs): (Vec<_>, Vec<_>) = self
            .dataset
            .records
            .iter()
            .zip(&self.inputs)
            .filter(|(r, _)| keep(&r.signal.patient_id))
            .map(|(r, x)| (r.clone(), x.clone()))
            .unzip();
        Prepared {
            dataset: Dataset {
                classes: self.dataset.classes.clone(),
                records,
                provenance: self.dataset.provenance.clone(),
            },
            inputs,
        }
    }

    pub fn merge(&self, other: &Prepared) -> Result<Prepared> {
        let dataset = self.dataset.merge(&other.dataset)?;
        let mut inputs = self.inputs.clone();
        inputs.extend(other.inputs.iter().cloned());
        Prepared::from_inputs(dataset, inputs)
    }

    pub fn input_dim(&self) -> Option<usize> {
        self.inputs.first().map(Vec::len)
    }

    pub fn encode_all(&self, params: &EncoderParams) -> Result<Vec<FeatureVector>> {
        self.inputs.iter().map(|x| encode(params, x)).collect()
    }
}

/// Loss and exact parameter gradient of one sampled episode. Support
/// features feed the prototypes, so their gradient carries the
/// `1/|S^n|` factor of the mean.
pub fn episode_gradients(params: &EncoderParams, prepared: &Prepared, episode: &Episode) -> Result<(EpisodeResult, ParamGrads)> {
    let trace = |i: usize| params.forward_trace(&prepared.inputs[i]);
    let support: Vec<Vec<ForwardTrace>> = episode
        .support
        .iter()
        .map(|ids| ids.iter().map(|&i| trace(i)).collect::<Result<Vec<_>>>())
        .collect::<Result<_>>()?;
    let protos = compute_prototypes(
        &support
            .iter()
            .map(|c| c.iter().map(|t| FeatureVector(t.output().to_vec())).collect())
            .collect::<Vec<_>>(),
    )?;
    let queries: Vec<(ForwardTrace, usize)> = episode
        .query
        .iter()
        .enumerate()
        .flat_map(|(c, ids)| ids.iter().map(move |&i| (i, c)))
        .map(|(i, c)| Ok((trace(i)?, c)))
        .collect::<Result<_>>()?;

    let n_q = queries.len() as f64;
    let n_classes = protos.n_classes();
    let dim = protos.dim();
    let mut grads = ParamGrads::zeros_like(params);
    let mut d_protos = vec![vec![0.0; dim]; n_classes];
    let mut loss = 0.0;
    let mut probabilities = Vec::with_capacity(queries.len());
    let mut labels = Vec::with_capacity(queries.len());
    let mut correct = 0;
    for (t, y) in &queries {
        let f = t.output();
        let logits: Vec<f64> = protos.vectors.iter().map(|c| -squared_distance(f, c)).collect();
        let p = softmax(&logits);
        loss += log_sum_exp(&logits) - logits[*y];
        // dL/dz_n = p_n - [n == y];  z_n = -‖f - c_n‖²
        let mut d_f = vec![0.0; dim];
        for (n, c) in protos.vectors.iter().enumerate() {
            let g = (p[n] - if n == *y { 1.0 } else { 0.0 }) / n_q;
            for d in 0..dim {
                let diff = f[d] - c[d];
                d_f[d] -= 2.0 * g * diff;
                d_protos[n][d] += 2.0 * g * diff;
            }
        }
        params.backward_trace(t, &d_f, &mut grads)?;
        if predict(&p) == *y {
            correct += 1;
        }
        probabilities.push(p);
        labels.push(*y);
    }
    for (n, class) in support.iter().enumerate() {
        let scale = 1.0 / class.len() as f64;
        let up: Vec<f64> = d_protos[n].iter().map(|v| v * scale).collect();
        for t in class {
            params.backward_trace(t, &up, &mut grads)?;
        }
    }
    Ok((
        EpisodeResult {
            loss: loss / n_q,
            probabilities,
            labels,
            correct,
        },
        grads,
    ))
}

/// Episode loss only (no gradient), used for validation and finite
/// differences.
pub fn evaluate_episode(params: &EncoderParams, prepared: &Prepared, episode: &Episode) -> Result<EpisodeResult> {
    let support: Vec<Vec<FeatureVector>> = episode
        .support
        .iter()
        .map(|ids| ids.iter().map(|&i| encode(params, &prepared.inputs[i])).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    let protos = compute_prototypes(&support)?;
    let query: Vec<(FeatureVector, usize)> = episode
        .query
        .iter()
        .enumerate()
        .flat_map(|(c, ids)| ids.iter().map(move |&i| (i, c)))
        .map(|(i, c)| Ok((encode(params, &prepared.inputs[i])?, c)))
        .collect::<Result<_>>()?;
    episode_loss(&query, &protos)
}

/// Finite-difference check of [`episode_gradients`] on a fixed episode.
pub fn episode_grad_check(params: &EncoderParams, prepared: &Prepared, episode: &Episode, tolerance: f64) -> Result<GradCheckReport> {
    let (_, grads) = episode_gradients(params, prepared, episode)?;
    Ok(compare_with_finite_differences(params, &grads, tolerance, |p| {
        evaluate_episode(p, prepared, episode).map(|r| r.loss).unwrap_or(f64::NAN)
    }))
}

/// Smallest ReLU margin over every record the episode touches. Central
/// differences are only meaningful when this is well above the step size.
pub fn episode_relu_margin(params: &EncoderParams, prepared: &Prepared, episode: &Episode) -> Result<f64> {
    let mut margin = f64::INFINITY;
    for &i in episode.support.iter().chain(&episode.query).flatten() {
        margin = margin.min(params.forward_trace(&prepared.inputs[i])?.relu_margin());
    }
    Ok(margin)
}

/// Samples one patient-disjoint episode from the train-role records and
/// returns its loss and gradient.
pub fn run_meta_train_episode(params: &EncoderParams, prepared: &Prepared, spec: &EpisodeSpec) -> Result<(EpisodeResult, ParamGrads)> {
    let index = PatientIndex::new(&prepared.dataset, Role::Train);
    let episode = index.build_episode(&prepared.dataset, spec)?;
    episode_gradients(params, prepared, &episode)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_episodes")]
    pub episodes_per_epoch: usize,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_patience")]
    pub patience: usize,
    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_momentum")]
    pub momentum: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub episode: EpisodeSpec,
    /// Episode shape used on the validation split during fine-tuning.
    #[serde(default)]
    pub validation_episode: EpisodeSpec,
    #[serde(default = "default_val_fraction")]
    pub validation_fraction: f64,
    #[serde(default = "default_val_episodes")]
    pub validation_episodes: usize,
}

fn default_episodes() -> usize {
    100
}

fn default_max_epochs() -> usize {
    30
}

fn default_patience() -> usize {
    5
}

fn default_lr() -> f64 {
    1e-2
}

fn default_momentum() -> f64 {
    0.9
}

fn default_val_fraction() -> f64 {
    0.2
}

fn default_val_episodes() -> usize {
    20
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            episodes_per_epoch: default_episodes(),
            max_epochs: default_max_epochs(),
            patience: default_patience(),
            lr: default_lr(),
            momentum: default_momentum(),
            seed: 0,
            episode: EpisodeSpec::default(),
            validation_episode: EpisodeSpec::default(),
            validation_fraction: default_val_fraction(),
            validation_episodes: default_val_episodes(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_epoch == 0 || self.max_epochs == 0 {
            return Err(Error::Config("episodes_per_epoch and max_epochs must be positive".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be >= 1".into()));
        }
        self.episode.validate()?;
        Ok(())
    }

    fn episode_seed(&self, epoch: usize, episode: usize) -> u64 {
        SeedMixer::new(self.seed)
            .str("train-episode")
            .u64(epoch as u64)
            .u64(episode as u64)
            .finish()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainHistory {
    /// Mean training episode loss per completed epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean validation loss per completed epoch (fine-tuning only).
    pub validation_losses: Vec<f64>,
    /// 1-based epoch whose parameters were returned (fine-tuning only).
    pub best_epoch: Option<usize>,
    pub stopped_early: bool,
}

/// Patience rule: stop once `patience` consecutive epochs fail to improve
/// strictly on the best validation loss.
#[derive(Debug, Clone)]
pub struct EarlyStopping {
    patience: usize,
    best: f64,
    best_epoch: usize,
    since_best: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StopDecision {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            since_best: 0,
            epoch: 0,
        }
    }

    pub fn observe(&mut self, loss: f64) -> StopDecision {
        self.epoch += 1;
        let improved = loss < self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
            self.since_best = 0;
        } else {
            self.since_best += 1;
        }
        StopDecision {
            improved,
            stop: self.since_best >= self.patience,
        }
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }
}

fn train_epoch(
    params: &mut EncoderParams,
    velocity: &mut ParamGrads,
    prepared: &Prepared,
    index: &PatientIndex,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<f64> {
    let mut total = 0.0;
    for e in 0..cfg.episodes_per_epoch {
        let spec = cfg.episode.with_seed(cfg.episode_seed(epoch, e));
        let episode = index.build_episode(&prepared.dataset, &spec)?;
        let (result, grads) = episode_gradients(params, prepared, &episode)?;
        if !result.loss.is_finite() {
            return Err(Error::Numerical(format!("episode loss became {} at epoch {epoch}", result.loss)));
        }
        sgd_step(params, &grads, cfg.lr, cfg.momentum, velocity)?;
        total += result.loss;
    }
    Ok(total / cfg.episodes_per_epoch as f64)
}

/// Episodic training for `max_epochs` epochs on the train-role records.
pub fn meta_train(params: &EncoderParams, prepared: &Prepared, cfg: &TrainConfig) -> Result<(EncoderParams, TrainHistory)> {
    cfg.validate()?;
    let index = PatientIndex::new(&prepared.dataset, Role::Train);
    let mut params = params.clone();
    let mut velocity = ParamGrads::zeros_like(&params);
    let mut history = TrainHistory::default();
    for epoch in 0..cfg.max_epochs {
        let loss = train_epoch(&mut params, &mut velocity, prepared, &index, cfg, epoch)?;
        history.epoch_losses.push(loss);
    }
    Ok((params, history))
}

/// Fixed, seeded validation episodes so every epoch is scored on the same tasks.
pub fn validation_episodes(prepared: &Prepared, cfg: &TrainConfig) -> Result<Vec<Episode>> {
    let index = PatientIndex::new(&prepared.dataset, Role::Train);
    (0..cfg.validation_episodes)
        .map(|i| {
            let seed = SeedMixer::new(cfg.seed).str("validation-episode").u64(i as u64).finish();
            index.build_episode(&prepared.dataset, &cfg.validation_episode.with_seed(seed))
        })
        .collect()
}

pub fn mean_episode_loss(params: &EncoderParams, prepared: &Prepared, episodes: &[Episode]) -> Result<f64> {
    let total: f64 = episodes
        .iter()
        .map(|e| evaluate_episode(params, prepared, e).map(|r| r.loss))
        .sum::<Result<f64>>()?;
    Ok(total / episodes.len() as f64)
}

/// Fine-tuning with a patient-disjoint validation split and early stopping.
/// Returns the parameters of the best validation epoch.
pub fn fine_tune(params: &EncoderParams, prepared: &Prepared, cfg: &TrainConfig) -> Result<(EncoderParams, TrainHistory)> {
    cfg.validate()?;
    cfg.validation_episode.validate()?;
    if cfg.validation_episodes == 0 {
        return Err(Error::Config("validation_episodes must be positive".into()));
    }
    let split_seed = SeedMixer::new(cfg.seed).str("validation-split").finish();
    let (train_ds, val_ds) = split_validation(&prepared.dataset, cfg.validation_fraction, split_seed)?;
    let val_patients = val_ds.all_patients();
    let train = prepared.filter_patients(|p| !val_patients.contains(p));
    let val = prepared.filter_patients(|p| val_patients.contains(p));
    debug_assert_eq!(train.dataset.len(), train_ds.len());
    let val_episodes = validation_episodes(&val, cfg)?;

    let index = PatientIndex::new(&train.dataset, Role::Train);
    let mut current = params.clone();
    let mut best = params.clone();
    let mut velocity = ParamGrads::zeros_like(&current);
    let mut history = TrainHistory::default();
    let mut stopper = EarlyStopping::new(cfg.patience);
    for epoch in 0..cfg.max_epochs {
        let loss = train_epoch(&mut current, &mut velocity, &train, &index, cfg, epoch)?;
        history.epoch_losses.push(loss);
        let val_loss = mean_episode_loss(&current, &val, &val_episodes)?;
        history.validation_losses.push(val_loss);
        let decision = stopper.observe(val_loss);
        if decision.improved {
            best = current.clone();
        }
        if decision.stop {
            history.stopped_early = true;
            break;
        }
    }
    history.best_epoch = Some(stopper.best_epoch());
    Ok((best, history))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Inference {
    pub probabilities: Vec<f64>,
    pub predicted: usize,
}

pub fn classify(params: &EncoderParams, prototypes: &Prototypes, input: &[f64]) -> Result<Inference> {
    let f = encode(params, input)?;
    let probabilities = class_scores(&f, prototypes)?;
    Ok(Inference {
        predicted: predict(&probabilities),
        probabilities,
    })
}

/// Raw signal → preprocessing → encoder → nearest-prototype scores.
pub fn infer(params: &EncoderParams, prototypes: &Prototypes, signal: &Signal, pipeline: &Pipeline) -> Result<Inference> {
    classify(params, prototypes, &pipeline.apply(signal)?)
}

pub fn prototypes_from_support(params: &EncoderParams, prepared: &Prepared, support: &SupportSet) -> Result<Prototypes> {
    let feats: Vec<Vec<FeatureVector>> = support
        .per_class
        .iter()
        .map(|ids| ids.iter().map(|&i| encode(params, &prepared.inputs[i])).collect::<Result<_>>())
        .collect::<Result<_>>()?;
    compute_prototypes(&feats)
}

/// Support sampled from train-role patients, averaged per class.
pub fn build_prototypes_for_deployment(
    params: &EncoderParams,
    prepared: &Prepared,
    n_support_patients: usize,
    k: usize,
    seed: u64,
) -> Result<Prototypes> {
    let support = PatientIndex::new(&prepared.dataset, Role::Train).sample_support(&prepared.dataset, n_support_patients, k, seed)?;
    prototypes_from_support(params, prepared, &support)
}

/// Prototypes over the support rebuilt with `k` new shots per class. The
/// encoder is borrowed immutably: only the prototypes change.
pub fn update_prototypes(
    params: &EncoderParams,
    prepared: &Prepared,
    n_support_patients: usize,
    k: usize,
    seed: u64,
) -> Result<Prototypes> {
    let support = reconstruct_support_with_new(&prepared.dataset, n_support_patients, k, seed)?;
    prototypes_from_support(params, prepared, &support)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementType {
    F64,
    F32,
    Fixed16 { frac_bits: u8 },
}

impl ElementType {
    pub fn size(self) -> usize {
        match self {
            ElementType::F64 => 8,
            ElementType::F32 => 4,
            ElementType::Fixed16 { .. } => 2,
        }
    }

    fn code(self) -> u8 {
        match self {
            ElementType::F64 => 0,
            ElementType::F32 => 1,
            ElementType::Fixed16 { .. } => 2,
        }
    }
}

/// Serialized prototype file: magic, version, class count, D, element
/// type (with a fractional-bit byte for fixed point), then class vectors.
pub fn prototypes_to_bytes(prototypes: &Prototypes, element: ElementType) -> Result<Vec<u8>> {
    let dim = prototypes.dim();
    if prototypes.vectors.iter().any(|v| v.len() != dim) {
        return Err(Error::Shape("prototype vectors have unequal lengths".into()));
    }
    let mut out = Vec::new();
    out.extend_from_slice(PROTOTYPE_MAGIC);
    out.extend_from_slice(&PROTOTYPE_VERSION.to_le_bytes());
    out.extend_from_slice(&(prototypes.n_classes() as u32).to_le_bytes());
    out.extend_from_slice(&(dim as u32).to_le_bytes());
    out.push(element.code());
    let fixed = match element {
        ElementType::Fixed16 { frac_bits } => {
            out.push(frac_bits);
            Some(FixedSpec::new(frac_bits)?)
        }
        _ => None,
    };
    for v in prototypes.vectors.iter().flatten() {
        match element {
            ElementType::F64 => out.extend_from_slice(&v.to_le_bytes()),
            ElementType::F32 => out.extend_from_slice(&(*v as f32).to_le_bytes()),
            ElementType::Fixed16 { .. } => {
                out.extend_from_slice(&quantize_value(*v, fixed.as_ref().unwrap()).to_le_bytes())
            }
        }
    }
    Ok(out)
}

pub fn prototypes_from_bytes(bytes: &[u8]) -> Result<(Prototypes, ElementType)> {
    let mut r = ByteReader::new(bytes, "prototype file");
    if r.take(4)? != PROTOTYPE_MAGIC {
        return Err(Error::format("prototype file", "bad magic (expected MWSC)"));
    }
    let version = r.u32()?;
    if version != PROTOTYPE_VERSION {
        return Err(Error::UnsupportedVersion {
            what: "prototype file",
            found: version,
            expected: PROTOTYPE_VERSION,
        });
    }
    let n = r.u32()? as usize;
    let dim = r.u32()? as usize;
    let element = match r.u8()? {
        0 => ElementType::F64,
        1 => ElementType::F32,
        2 => ElementType::Fixed16 { frac_bits: r.u8()? },
        other => return Err(Error::format("prototype file", format!("unknown element type {other}"))),
    };
    let count = n * dim;
    let flat: Vec<f64> = match element {
        ElementType::F64 => r.f64s(count)?,
        ElementType::F32 => r.f32s(count)?.into_iter().map(f64::from).collect(),
        ElementType::Fixed16 { frac_bits } => {
            let spec = FixedSpec::new(frac_bits).map_err(|e| Error::format("prototype file", e.to_string()))?;
            r.i16s(count)?.into_iter().map(|q| dequantize_value(q, &spec)).collect()
        }
    };
    r.finish()?;
    let vectors = if dim == 0 {
        vec![Vec::new(); n]
    } else {
        flat.chunks(dim).map(<[f64]>::to_vec).collect()
    };
    Ok((Prototypes { vectors }, element))
}

pub fn save_prototypes(path: &Path, prototypes: &Prototypes, element: ElementType) -> Result<()> {
    write_file(path, &prototypes_to_bytes(prototypes, element)?)
}

pub fn load_prototypes(path: &Path) -> Result<(Prototypes, ElementType)> {
    prototypes_from_bytes(&read_file(path)?)
}

/// Header length of a prototype file with the given element type.
pub fn prototype_header_len(element: ElementType) -> usize {
    17 + usize::from(matches!(element, ElementType::Fixed16 { .. }))
}
