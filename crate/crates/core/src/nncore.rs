//! Fully-connected feature encoder with exact backpropagation.
//!
//! Hidden layers use ReLU; the final layer is affine so features can occupy
//! all of R^D. Weights are stored row-major as `rows = fan_out`,
//! `cols = fan_in`.

use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{rng_from, SeedMixer};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MWSP";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub seed: u64,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_feature_dim() -> usize {
    16
}

impl EncoderConfig {
    pub fn new(input_dim: usize, hidden_layers: Vec<usize>, feature_dim: usize, seed: u64) -> Self {
        EncoderConfig {
            input_dim,
            hidden_layers,
            feature_dim,
            activation: Activation::Relu,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::Config("input_dim must be positive".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be positive".into()));
        }
        if self.hidden_layers.is_empty() {
            return Err(Error::Config("hidden_layers must be nonempty".into()));
        }
        if let Some(i) = self.hidden_layers.iter().position(|&h| h == 0) {
            return Err(Error::Config(format!("hidden layer {i} has zero width")));
        }
        Ok(())
    }

    /// `(fan_out, fan_in)` per layer.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.hidden_layers.len() + 2);
        dims.push(self.input_dim);
        dims.extend_from_slice(&self.hidden_layers);
        dims.push(self.feature_dim);
        dims.windows(2).map(|w| (w[1], w[0])).collect()
    }

    pub fn num_params(&self) -> usize {
        self.layer_shapes().iter().map(|(r, c)| r * c + r).sum()
    }
}

/// One affine layer. `weights[r * cols + c]` maps input `c` to output `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
        }
    }

    fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.bias.iter().copied());
        for (r, o) in out.iter_mut().enumerate() {
            let row = &self.weights[r * self.cols..(r + 1) * self.cols];
            *o += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn same_shape(&self, other: &Layer) -> bool {
        self.rows == other.rows && self.cols == other.cols
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub layers: Vec<Layer>,
}

/// Gradient of a scalar objective with respect to every encoder parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGrads {
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureVector(pub Vec<f64>);

impl FeatureVector {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Layer inputs and pre-activations saved by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    inputs: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
}

impl ForwardTrace {
    pub fn output(&self) -> &[f64] {
        self.pre.last().expect("encoder has at least one layer")
    }

    /// Smallest |pre-activation| over the hidden (ReLU) layers, i.e. how far
    /// this input sits from a kink.
    pub fn relu_margin(&self) -> f64 {
        let hidden = self.pre.len().saturating_sub(1);
        self.pre[..hidden].iter().flatten().fold(f64::INFINITY, |m, z| m.min(z.abs()))
    }

    pub fn into_feature(mut self) -> FeatureVector {
        FeatureVector(self.pre.pop().expect("encoder has at least one layer"))
    }
}

/// He-normal weights, zero biases, deterministic in `config.seed`.
pub fn init_params(config: &EncoderConfig) -> Result<EncoderParams> {
    config.validate()?;
    let mut rng = rng_from(SeedMixer::new(config.seed).str("encoder-init").finish());
    let layers = config
        .layer_shapes()
        .into_iter()
        .map(|(rows, cols)| {
            let scale = (2.0 / cols as f64).sqrt();
            let weights = (0..rows * cols)
                .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Layer {
                rows,
                cols,
                weights,
                bias: vec![0.0; rows],
            }
        })
        .collect();
    Ok(EncoderParams { layers })
}

impl EncoderParams {
    pub fn zeros_like_config(config: &EncoderConfig) -> Result<Self> {
        config.validate()?;
        Ok(EncoderParams {
            layers: config
                .layer_shapes()
                .into_iter()
                .map(|(r, c)| Layer::zeros(r, c))
                .collect(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Flat parameter view: per layer, weights then biases.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn get_flat(&self, mut idx: usize) -> f64 {
        for l in &self.layers {
            if idx < l.weights.len() {
                return l.weights[idx];
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                return l.bias[idx];
            }
            idx -= l.bias.len();
        }
        panic!("flat parameter index out of range");
    }

    pub fn set_flat(&mut self, mut idx: usize, value: f64) {
        for l in &mut self.layers {
            if idx < l.weights.len() {
                l.weights[idx] = value;
                return;
            }
            idx -= l.weights.len();
            if idx < l.bias.len() {
                l.bias[idx] = value;
                return;
            }
            idx -= l.bias.len();
        }
        panic!("flat parameter index out of range");
    }

    fn check_connected(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(Error::Shape("encoder has no layers".into()));
        }
        for (i, l) in self.layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Shape(format!("layer {i} buffers do not match {}x{}", l.rows, l.cols)));
            }
        }
        for (i, w) in self.layers.windows(2).enumerate() {
            if w[0].rows != w[1].cols {
                return Err(Error::Shape(format!(
                    "layer {i} outputs {} values but layer {} expects {}",
                    w[0].rows,
                    i + 1,
                    w[1].cols
                )));
            }
        }
        Ok(())
    }

    pub fn forward_trace(&self, input: &[f64]) -> Result<ForwardTrace> {
        if input.len() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has length {}, encoder expects {}",
                input.len(),
                self.input_dim()
            )));
        }
        let n = self.layers.len();
        let mut inputs = Vec::with_capacity(n);
        let mut pre = Vec::with_capacity(n);
        let mut current = input.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = Vec::with_capacity(layer.rows);
            layer.affine(&current, &mut z);
            let next = if i + 1 < n {
                z.iter().map(|&v| v.max(0.0)).collect()
            } else {
                Vec::new()
            };
            inputs.push(std::mem::replace(&mut current, next));
            pre.push(z);
        }
        Ok(ForwardTrace { inputs, pre })
    }

    /// Accumulates `d(upstream · f(x)) / dθ` into `grads`.
    pub fn backward_trace(&self, trace: &ForwardTrace, upstream: &[f64], grads: &mut ParamGrads) -> Result<()> {
        if upstream.len() != self.feature_dim() {
            return Err(Error::Shape(format!(
                "upstream has length {}, feature dim is {}",
                upstream.len(),
                self.feature_dim()
            )));
        }
        if !grads.congruent(self) {
            return Err(Error::Shape("gradient buffer does not match parameters".into()));
        }
        let n = self.layers.len();
        let mut delta = upstream.to_vec();
        for i in (0..n).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            let x = &trace.inputs[i];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[r] += d;
                let row = &mut g.weights[r * layer.cols..(r + 1) * layer.cols];
                for (w, &xv) in row.iter_mut().zip(x) {
                    *w += d * xv;
                }
            }
            if i == 0 {
                break;
            }
            let mut prev = vec![0.0; layer.cols];
            for (r, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let row = &layer.weights[r * layer.cols..(r + 1) * layer.cols];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            // ReLU gate of the previous layer
            for (p, &z) in prev.iter_mut().zip(&trace.pre[i - 1]) {
                if z <= 0.0 {
                    *p = 0.0;
                }
            }
            delta = prev;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 8 * self.num_params() + 8 * self.layers.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.rows as u32).to_le_bytes());
            out.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "encoder checkpoint");
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::format("encoder checkpoint", "bad magic (expected MWSP)"));
        }
        let version = r.u32()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "encoder checkpoint",
                found: version,
                expected: CHECKPOINT_VERSION,
            });
        }
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weights = r.f64s(rows * cols)?;
            let bias = r.f64s(rows)?;
            layers.push(Layer {
                rows,
                cols,
                weights,
                bias,
            });
        }
        r.finish()?;
        let params = EncoderParams { layers };
        params
            .check_connected()
            .map_err(|e| Error::format("encoder checkpoint", e.to_string()))?;
        Ok(params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut buf))
        .map_err(|e| Error::io(path, e))?;
    Ok(buf)
}

/// Little-endian cursor shared by the binary artifact readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], what: &'static str) -> Self {
        ByteReader { bytes, pos: 0, what }
    }

    pub(crate) fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::format(
                self.what,
                format!("truncated at byte {} (needed {n} more)", self.pos),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub(crate) fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format(self.what, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let raw = self.take(n.checked_mul(4).ok_or_else(|| Error::format(self.what, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn i16s(&mut self, n: usize) -> Result<Vec<i16>> {
        let raw = self.take(n.checked_mul(2).ok_or_else(|| Error::format(self.what, "size overflow"))?)?;
        Ok(raw
            .chunks_exact(2)
            .map(|c| i16::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::format(
                self.what,
                format!("{} trailing bytes", self.bytes.len() - self.pos),
            ));
        }
        Ok(())
    }
}

impl ParamGrads {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        ParamGrads {
            layers: params.layers.iter().map(|l| Layer::zeros(l.rows, l.cols)).collect(),
        }
    }

    pub fn congruent(&self, params: &EncoderParams) -> bool {
        self.layers.len() == params.layers.len()
            && self.layers.iter().zip(&params.layers).all(|(g, p)| g.same_shape(p))
    }

    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn scale(&mut self, s: f64) {
        self.values_mut().for_each(|v| *v *= s);
    }

    pub fn is_zero(&self) -> bool {
        self.values().all(|v| v == 0.0)
    }

    pub fn get_flat(&self, idx: usize) -> f64 {
        self.values().nth(idx).expect("flat gradient index out of range")
    }

    pub fn set_flat(&mut self, idx: usize, value: f64) {
        *self.values_mut().nth(idx).expect("flat gradient index out of range") = value;
    }
}

/// Forward pass to the D-dimensional feature vector.
pub fn encode(params: &EncoderParams, input: &[f64]) -> Result<FeatureVector> {
    Ok(params.forward_trace(input)?.into_feature())
}

/// Exact gradient of `upstream · encode(params, input)`.
pub fn backward(params: &EncoderParams, input: &[f64], upstream: &[f64]) -> Result<ParamGrads> {
    let trace = params.forward_trace(input)?;
    let mut grads = ParamGrads::zeros_like(params);
    params.backward_trace(&trace, upstream, &mut grads)?;
    Ok(grads)
}

/// Momentum SGD: `v = momentum * v + g; θ = θ - lr * v`.
pub fn sgd_step(
    params: &mut EncoderParams,
    grads: &ParamGrads,
    lr: f64,
    momentum: f64,
    velocity: &mut ParamGrads,
) -> Result<()> {
    if !(lr >= 0.0 && lr.is_finite()) {
        return Err(Error::Config(format!("learning rate must be finite and nonnegative, got {lr}")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(Error::Config(format!("momentum must be in [0, 1), got {momentum}")));
    }
    if !grads.congruent(params) || !velocity.congruent(params) {
        return Err(Error::Shape("gradients/velocity do not match parameters".into()));
    }
    if let Some(bad) = grads.values().find(|v| !v.is_finite()) {
        return Err(Error::Numerical(format!("non-finite gradient entry {bad}")));
    }
    for ((p, g), v) in params.layers.iter_mut().zip(&grads.layers).zip(&mut velocity.layers) {
        for ((pw, gw), vw) in p
            .weights
            .iter_mut()
            .chain(p.bias.iter_mut())
            .zip(g.weights.iter().chain(&g.bias))
            .zip(v.weights.iter_mut().chain(v.bias.iter_mut()))
        {
            *vw = momentum * *vw + gw;
            *pw -= lr * *vw;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    /// Largest relative error among entries whose absolute error exceeds `abs_floor`.
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    pub abs_floor: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub const FD_STEP: f64 = 1e-4;
pub const FD_ABS_FLOOR: f64 = 1e-7;

/// Compares `analytic` against central differences of `objective` at every
/// parameter. An entry counts as exact when its absolute error is within
/// `FD_ABS_FLOOR`; otherwise its relative error enters the report.
pub fn compare_with_finite_differences<F>(
    params: &EncoderParams,
    analytic: &ParamGrads,
    tolerance: f64,
    mut objective: F,
) -> GradCheckReport
where
    F: FnMut(&EncoderParams) -> f64,
{
    let mut probe = params.clone();
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let n = params.num_params();
    for (i, a) in analytic.values().enumerate().take(n) {
        let orig = probe.get_flat(i);
        probe.set_flat(i, orig + FD_STEP);
        let up = objective(&probe);
        probe.set_flat(i, orig - FD_STEP);
        let down = objective(&probe);
        probe.set_flat(i, orig);
        let numeric = (up - down) / (2.0 * FD_STEP);
        let abs = (a - numeric).abs();
        max_abs = max_abs.max(abs);
        if abs > FD_ABS_FLOOR {
            max_rel = max_rel.max(abs / a.abs().max(numeric.abs()));
        }
    }
    GradCheckReport {
        max_rel_error: max_rel,
        max_abs_error: max_abs,
        abs_floor: FD_ABS_FLOOR,
        checked: n,
        tolerance,
        passed: max_rel <= tolerance,
    }
}

/// Finite-difference check of `backward` on a seeded random probe.
pub fn grad_check(config: &EncoderConfig, tolerance: f64) -> Result<GradCheckReport> {
    config.validate()?;
    if config.num_params() > 10_000 {
        return Err(Error::Config(format!(
            "grad_check needs at most 1e4 parameters, config has {}",
            config.num_params()
        )));
    }
    let mut params = init_params(config)?;
    let (input, upstream) = probe_inputs(config, &mut params);
    let grads = backward(&params, &input, &upstream)?;
    Ok(grad_check_against(&params, &input, &upstream, &grads, tolerance))
}

/// Same probe as [`grad_check`] but compares a caller-supplied gradient.
pub fn grad_check_against(
    params: &EncoderParams,
    input: &[f64],
    upstream: &[f64],
    grads: &ParamGrads,
    tolerance: f64,
) -> GradCheckReport {
    compare_with_finite_differences(params, grads, tolerance, |p| {
        let f = encode(p, input).expect("probe shapes are consistent");
        f.0.iter().zip(upstream).map(|(a, b)| a * b).sum()
    })
}

/// Seeded probe input/upstream. Biases are randomized too so that their
/// gradients are exercised away from the all-zero initialization.
pub fn probe_inputs(config: &EncoderConfig, params: &mut EncoderParams) -> (Vec<f64>, Vec<f64>) {
    let mut rng = rng_from(SeedMixer::new(config.seed).str("grad-check-probe").finish());
    for l in &mut params.layers {
        for b in &mut l.bias {
            *b = 0.1 * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let input = (0..config.input_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let upstream = (0..config.feature_dim)
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    (input, upstream)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn small() -> EncoderConfig {
        EncoderConfig::new(4, vec![3], 2, 7)
    }

    /// Straightforward nested-loop forward pass used as an oracle.
    fn naive_forward(params: &EncoderParams, input: &[f64]) -> Vec<f64> {
        let mut x = input.to_vec();
        let n = params.layers.len();
        for (li, l) in params.layers.iter().enumerate() {
            let mut y = vec![0.0; l.rows];
            for r in 0..l.rows {
                let mut acc = l.bias[r];
                for c in 0..l.cols {
                    acc += l.weights[r * l.cols + c] * x[c];
                }
                y[r] = if li + 1 < n && acc < 0.0 { 0.0 } else { acc };
            }
            x = y;
        }
        x
    }

    #[test]
    fn relu_margin_ignores_output_layer() {
        let mut p = init_params(&small()).unwrap();
        p.layers[0].weights.iter_mut().for_each(|w| *w = 0.0);
        p.layers[0].bias = vec![0.5, -0.25, 2.0];
        p.layers[1].bias = vec![0.0, 1e-9];
        let t = p.forward_trace(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(t.relu_margin(), 0.25);
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&small()).unwrap();
        let b = init_params(&small()).unwrap();
        assert_eq!(a.to_bytes(), b.to_bytes());
        assert!(a.layers.iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
        let other = init_params(&EncoderConfig { seed: 8, ..small() }).unwrap();
        assert_ne!(a.to_bytes(), other.to_bytes());
    }

    #[test]
    fn init_weight_scale_matches_fan_in() {
        let cfg = EncoderConfig::new(100, vec![50], 16, 1);
        let p = init_params(&cfg).unwrap();
        let w = &p.layers[0].weights;
        assert!(w.len() >= 5000);
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (w.len() - 1) as f64;
        let target = (2.0f64 / 100.0).sqrt();
        assert!((var.sqrt() - target).abs() / target < 0.15, "std {} vs {}", var.sqrt(), target);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        assert!(matches!(init_params(&EncoderConfig::new(0, vec![3], 2, 0)), Err(Error::Config(_))));
        assert!(matches!(init_params(&EncoderConfig::new(4, vec![], 2, 0)), Err(Error::Config(_))));
        assert!(matches!(init_params(&EncoderConfig::new(4, vec![0], 2, 0)), Err(Error::Config(_))));
        assert!(matches!(init_params(&EncoderConfig::new(4, vec![3], 0, 0)), Err(Error::Config(_))));
        assert!(grad_check(&EncoderConfig::new(4, vec![], 2, 0), 1e-5).is_err());
    }

    #[test]
    fn zero_params_encode_to_zero() {
        let p = EncoderParams::zeros_like_config(&EncoderConfig::new(5, vec![4, 3], 2, 0)).unwrap();
        let f = encode(&p, &[1.0, -2.0, 3.0, 0.5, 9.0]).unwrap();
        assert_eq!(f.0, vec![0.0, 0.0]);
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let mut l = Layer::zeros(3, 3);
        for i in 0..3 {
            l.weights[i * 3 + i] = 1.0;
        }
        let p = EncoderParams { layers: vec![l] };
        let v = [0.25, -1.5, 4.0];
        assert_eq!(encode(&p, &v).unwrap().0, v.to_vec());
    }

    #[test]
    fn encode_matches_naive_oracle() {
        let cfg = EncoderConfig::new(12, vec![9, 7], 5, 3);
        let mut p = init_params(&cfg).unwrap();
        let (x, _) = probe_inputs(&cfg, &mut p);
        let fast = encode(&p, &x).unwrap().0;
        let slow = naive_forward(&p, &x);
        for (a, b) in fast.iter().zip(&slow) {
            assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let p = init_params(&small()).unwrap();
        assert!(matches!(encode(&p, &[1.0; 3]), Err(Error::Shape(_))));
        assert!(matches!(backward(&p, &[1.0; 4], &[1.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let p = init_params(&small()).unwrap();
        assert!(backward(&p, &[1.0, 2.0, 3.0, 4.0], &[0.0, 0.0]).unwrap().is_zero());
    }

    #[test]
    fn single_linear_layer_weight_grad_is_outer_product() {
        let p = EncoderParams {
            layers: vec![Layer {
                rows: 2,
                cols: 3,
                weights: vec![0.1, -0.2, 0.3, 0.4, 0.5, -0.6],
                bias: vec![0.0, 1.0],
            }],
        };
        let x = [1.0, 2.0, -3.0];
        let u = [0.5, -2.0];
        let g = backward(&p, &x, &u).unwrap();
        for r in 0..2 {
            for c in 0..3 {
                assert_eq!(g.layers[0].weights[r * 3 + c], u[r] * x[c]);
            }
            assert_eq!(g.layers[0].bias[r], u[r]);
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let report = grad_check(&small(), 1e-5).unwrap();
        assert!(report.passed, "{report:?}");
        assert!(report.max_rel_error < 1e-5);
        let deeper = grad_check(&EncoderConfig::new(10, vec![8, 6], 4, 11), 1e-5).unwrap();
        assert!(deeper.passed, "{deeper:?}");
    }

    #[test]
    fn corrupted_gradient_is_detected() {
        let cfg = small();
        let mut p = init_params(&cfg).unwrap();
        let (x, u) = probe_inputs(&cfg, &mut p);
        let mut g = backward(&p, &x, &u).unwrap();
        let idx = g.values().position(|v| v.abs() > 1e-3).unwrap();
        let v = g.get_flat(idx);
        g.set_flat(idx, 2.0 * v);
        let report = grad_check_against(&p, &x, &u, &g, 1e-5);
        assert!(!report.passed);
        assert!(report.max_rel_error > 1e-5);
    }

    #[test]
    fn sgd_zero_grad_and_scalar_arithmetic() {
        let mut p = init_params(&small()).unwrap();
        let before = p.clone();
        let zero = ParamGrads::zeros_like(&p);
        let mut v = ParamGrads::zeros_like(&p);
        sgd_step(&mut p, &zero, 0.1, 0.0, &mut v).unwrap();
        assert_eq!(p, before);

        let mut s = EncoderParams {
            layers: vec![Layer {
                rows: 1,
                cols: 1,
                weights: vec![5.0],
                bias: vec![0.0],
            }],
        };
        let mut g = ParamGrads::zeros_like(&s);
        g.layers[0].weights[0] = 2.0;
        let mut v = ParamGrads::zeros_like(&s);
        sgd_step(&mut s, &g, 1.0, 0.0, &mut v).unwrap();
        assert_eq!(s.layers[0].weights[0], 3.0);
    }

    #[test]
    fn sgd_momentum_matches_unrolled_recurrence() {
        let mut s = EncoderParams {
            layers: vec![Layer {
                rows: 1,
                cols: 1,
                weights: vec![1.0],
                bias: vec![-0.5],
            }],
        };
        let (lr, mu) = (0.05, 0.9);
        let (g1, g2) = ([0.3, -0.7], [1.1, 0.25]);
        let mut v = ParamGrads::zeros_like(&s);
        for g in [g1, g2] {
            let mut grads = ParamGrads::zeros_like(&s);
            grads.layers[0].weights[0] = g[0];
            grads.layers[0].bias[0] = g[1];
            sgd_step(&mut s, &grads, lr, mu, &mut v).unwrap();
        }
        for (j, start) in [1.0, -0.5].into_iter().enumerate() {
            let v1 = g1[j];
            let p1 = start - lr * v1;
            let v2 = mu * v1 + g2[j];
            let p2 = p1 - lr * v2;
            let got = if j == 0 { s.layers[0].weights[0] } else { s.layers[0].bias[0] };
            assert!((got - p2).abs() < 1e-12);
        }
    }

    #[test]
    fn sgd_rejects_non_finite_gradients() {
        let mut p = init_params(&small()).unwrap();
        let mut g = ParamGrads::zeros_like(&p);
        g.layers[0].weights[0] = f64::NAN;
        let mut v = ParamGrads::zeros_like(&p);
        assert!(matches!(sgd_step(&mut p, &g, 0.1, 0.9, &mut v), Err(Error::Numerical(_))));
    }

    #[test]
    fn checkpoint_layout_is_exact() {
        let p = init_params(&small()).unwrap();
        let bytes = p.to_bytes();
        assert_eq!(&bytes[0..4], b"MWSP");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 3);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 4);
        let first = f64::from_le_bytes(bytes[20..28].try_into().unwrap());
        assert_eq!(first, p.layers[0].weights[0]);
        assert_eq!(bytes.len(), 12 + 2 * 8 + 8 * p.num_params());
    }

    #[test]
    fn checkpoint_rejects_bad_version_and_truncation() {
        let mut bytes = init_params(&small()).unwrap().to_bytes();
        let good = bytes.clone();
        bytes[4] = 9;
        assert!(matches!(
            EncoderParams::from_bytes(&bytes),
            Err(Error::UnsupportedVersion { found: 9, .. })
        ));
        assert!(matches!(
            EncoderParams::from_bytes(&good[..good.len() - 3]),
            Err(Error::Format { .. })
        ));
    }

    proptest! {
        #[test]
        fn checkpoint_roundtrip_is_bit_exact(seed in any::<u64>(), h in 1usize..6, d in 1usize..5) {
            let p = init_params(&EncoderConfig::new(3, vec![h], d, seed)).unwrap();
            let back = EncoderParams::from_bytes(&p.to_bytes()).unwrap();
            prop_assert_eq!(back.to_bytes(), p.to_bytes());
        }
    }
}
