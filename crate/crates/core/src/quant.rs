//! 16-bit fixed-point encoder: integer weights and linear layers with 64-bit
//! accumulators, floating-point activations between layers.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::evalmetrics::auc;
use crate::nncore::{encode, read_file, write_file, ByteReader, EncoderParams, FeatureVector};
use crate::protonet::{class_scores, predict, ElementType, Prototypes};
use crate::updatesim::{PayloadKind, UpdatePayload};

pub const QUANT_MAGIC: &[u8; 4] = b"MWSQ";
pub const QUANT_VERSION: u32 = 1;
/// Saturation share above which a quantization report carries a warning.
pub const SATURATION_WARN: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixedSpec {
    #[serde(default = "default_total_bits")]
    pub total_bits: u8,
    #[serde(default = "default_frac_bits")]
    pub frac_bits: u8,
}

fn default_total_bits() -> u8 {
    16
}

fn default_frac_bits() -> u8 {
    12
}

impl Default for FixedSpec {
    fn default() -> Self {
        FixedSpec {
            total_bits: 16,
            frac_bits: 12,
        }
    }
}

impl FixedSpec {
    pub fn new(frac_bits: u8) -> Result<Self> {
        let s = FixedSpec {
            total_bits: 16,
            frac_bits,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.total_bits != 16 {
            return Err(Error::Config(format!("only 16-bit fixed point is supported, got {}", self.total_bits)));
        }
        if !(1..=15).contains(&self.frac_bits) {
            return Err(Error::Config(format!("frac_bits must be in [1,15], got {}", self.frac_bits)));
        }
        Ok(())
    }

    pub fn scale(&self) -> f64 {
        (1u32 << self.frac_bits) as f64
    }

    pub fn lsb(&self) -> f64 {
        1.0 / self.scale()
    }

    /// Closed range of representable reals.
    pub fn range(&self) -> (f64, f64) {
        (i16::MIN as f64 * self.lsb(), i16::MAX as f64 * self.lsb())
    }
}

/// Round-half-to-even of `x · 2^frac_bits`, saturated to the i16 range.
pub fn quantize_value(x: f64, spec: &FixedSpec) -> i16 {
    saturate(x, spec).0
}

fn saturate(x: f64, spec: &FixedSpec) -> (i16, bool) {
    let v = (x * spec.scale()).round_ties_even();
    if v.is_nan() {
        (0, true)
    } else if v > i16::MAX as f64 {
        (i16::MAX, true)
    } else if v < i16::MIN as f64 {
        (i16::MIN, true)
    } else {
        (v as i16, false)
    }
}

pub fn dequantize_value(q: i16, spec: &FixedSpec) -> f64 {
    q as f64 * spec.lsb()
}

/// `acc / 2^shift` rounded half-to-even, in integer arithmetic.
fn shift_round_even(acc: i64, shift: u8) -> i64 {
    let q = acc >> shift;
    let rem = acc - (q << shift);
    let half = 1i64 << (shift - 1);
    if rem > half || (rem == half && q & 1 == 1) {
        q + 1
    } else {
        q
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedLayer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<i16>,
    pub bias: Vec<i16>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedEncoder {
    pub spec: FixedSpec,
    pub layers: Vec<QuantizedLayer>,
    pub saturated: u64,
    pub total: u64,
    /// SHA-256 of the float checkpoint bytes this image was made from.
    pub source_checksum: [u8; 32],
}

impl QuantizedEncoder {
    pub fn saturation_fraction(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.saturated as f64 / self.total as f64
        }
    }

    pub fn warning(&self) -> Option<String> {
        let f = self.saturation_fraction();
        (f > SATURATION_WARN).then(|| format!("{:.2}% of parameters saturated at frac_bits={}", 100.0 * f, self.spec.frac_bits))
    }

    pub fn input_dim(&self) -> usize {
        self.layers.first().map_or(0, |l| l.cols)
    }

    pub fn feature_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.rows)
    }

    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        self.layers.iter().map(|l| (l.rows, l.cols)).collect()
    }

    pub fn checksum_hex(&self) -> String {
        hex::encode(self.source_checksum)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(QUANT_MAGIC);
        out.extend_from_slice(&QUANT_VERSION.to_le_bytes());
        out.push(self.spec.total_bits);
        out.push(self.spec.frac_bits);
        out.extend_from_slice(&(self.layers.len() as u32).to_le_bytes());
        for l in &self.layers {
            out.extend_from_slice(&(l.rows as u32).to_le_bytes());
            out.extend_from_slice(&(l.cols as u32).to_le_bytes());
            for v in l.weights.iter().chain(&l.bias) {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out.extend_from_slice(&self.saturated.to_le_bytes());
        out.extend_from_slice(&self.total.to_le_bytes());
        out.extend_from_slice(&self.source_checksum);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "quantized checkpoint");
        if r.take(4)? != QUANT_MAGIC {
            return Err(Error::format("quantized checkpoint", "bad magic (expected MWSQ)"));
        }
        let version = r.u32()?;
        if version != QUANT_VERSION {
            return Err(Error::UnsupportedVersion {
                what: "quantized checkpoint",
                found: version,
                expected: QUANT_VERSION,
            });
        }
        let spec = FixedSpec {
            total_bits: r.u8()?,
            frac_bits: r.u8()?,
        };
        spec.validate().map_err(|e| Error::format("quantized checkpoint", e.to_string()))?;
        let n = r.u32()? as usize;
        let mut layers = Vec::with_capacity(n);
        for _ in 0..n {
            let rows = r.u32()? as usize;
            let cols = r.u32()? as usize;
            let weights = r.i16s(rows * cols)?;
            let bias = r.i16s(rows)?;
            layers.push(QuantizedLayer {
                rows,
                cols,
                weights,
                bias,
            });
        }
        let saturated = r.u64()?;
        let total = r.u64()?;
        let mut source_checksum = [0u8; 32];
        source_checksum.copy_from_slice(r.take(32)?);
        r.finish()?;
        for w in layers.windows(2) {
            if w[0].rows != w[1].cols {
                return Err(Error::format("quantized checkpoint", "consecutive layer shapes do not connect"));
            }
        }
        Ok(QuantizedEncoder {
            spec,
            layers,
            saturated,
            total,
            source_checksum,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&read_file(path)?)
    }
}

pub fn quantize_encoder(params: &EncoderParams, spec: &FixedSpec) -> Result<QuantizedEncoder> {
    spec.validate()?;
    let mut saturated = 0u64;
    let mut total = 0u64;
    let mut q = |vals: &[f64]| -> Vec<i16> {
        vals.iter()
            .map(|&v| {
                let (x, sat) = saturate(v, spec);
                saturated += sat as u64;
                total += 1;
                x
            })
            .collect()
    };
    let layers = params
        .layers
        .iter()
        .map(|l| QuantizedLayer {
            rows: l.rows,
            cols: l.cols,
            weights: q(&l.weights),
            bias: q(&l.bias),
        })
        .collect();
    Ok(QuantizedEncoder {
        spec: *spec,
        layers,
        saturated,
        total,
        source_checksum: Sha256::digest(params.to_bytes()).into(),
    })
}

/// Worst-case `|accumulator|` of a layer: every product at the i16 extreme
/// plus the bias shifted into the product scale.
pub fn accumulator_bound(cols: usize, spec: &FixedSpec) -> i128 {
    let m = 1i128 << 15;
    cols as i128 * m * m + (m << spec.frac_bits)
}

pub fn quantized_encode(qenc: &QuantizedEncoder, input: &[f64]) -> Result<FeatureVector> {
    if input.len() != qenc.input_dim() {
        return Err(Error::Shape(format!(
            "input has length {}, quantized encoder expects {}",
            input.len(),
            qenc.input_dim()
        )));
    }
    let spec = &qenc.spec;
    let f = spec.frac_bits;
    let mut x: Vec<i16> = input.iter().map(|&v| quantize_value(v, spec)).collect();
    let n = qenc.layers.len();
    for (i, l) in qenc.layers.iter().enumerate() {
        let mut out = Vec::with_capacity(l.rows);
        for r in 0..l.rows {
            let row = &l.weights[r * l.cols..(r + 1) * l.cols];
            let mut acc: i64 = (l.bias[r] as i64) << f;
            for (&w, &xi) in row.iter().zip(&x) {
                acc += w as i64 * xi as i64;
            }
            out.push(shift_round_even(acc, f));
        }
        if i + 1 == n {
            return Ok(FeatureVector(out.into_iter().map(|v| v as f64 * spec.lsb()).collect()));
        }
        x = out
            .into_iter()
            .map(|v| quantize_value((v as f64 * spec.lsb()).max(0.0), spec))
            .collect();
    }
    Ok(FeatureVector(Vec::new()))
}

/// Exact serialized payload sizes, headers excluded.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PayloadShapes {
    Model { layer_shapes: Vec<(usize, usize)> },
    Prototypes { n_classes: usize, dim: usize },
}

pub fn payload_bytes(shapes: &PayloadShapes, element: ElementType) -> u64 {
    let count: usize = match shapes {
        PayloadShapes::Model { layer_shapes } => layer_shapes.iter().map(|&(r, c)| r * c + r).sum(),
        PayloadShapes::Prototypes { n_classes, dim } => n_classes * dim,
    };
    (count * element.size()) as u64
}

pub fn payload(shapes: &PayloadShapes, element: ElementType) -> UpdatePayload {
    UpdatePayload {
        bytes: payload_bytes(shapes, element),
        kind: match shapes {
            PayloadShapes::Model { .. } => PayloadKind::Model,
            PayloadShapes::Prototypes { .. } => PayloadKind::Prototypes,
        },
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FidelityReport {
    pub samples: usize,
    pub agreement: f64,
    pub auc_float: f64,
    pub auc_quantized: f64,
    /// `auc_float − auc_quantized` in percentage points.
    pub auc_drop_points: f64,
    pub max_feature_deviation: f64,
    pub saturation_fraction: f64,
    pub warning: Option<String>,
}

/// Float vs fixed-point inference on the same inputs and prototypes.
/// `positive` is the class whose probability serves as the AUC score.
pub fn fidelity(
    params: &EncoderParams,
    qenc: &QuantizedEncoder,
    prototypes: &Prototypes,
    inputs: &[Vec<f64>],
    labels: &[usize],
    positive: usize,
) -> Result<FidelityReport> {
    if inputs.len() != labels.len() {
        return Err(Error::Shape(format!("{} inputs but {} labels", inputs.len(), labels.len())));
    }
    let mut agree = 0;
    let mut max_dev = 0.0f64;
    let mut s_float = Vec::with_capacity(inputs.len());
    let mut s_quant = Vec::with_capacity(inputs.len());
    for x in inputs {
        let ff = encode(params, x)?;
        let fq = quantized_encode(qenc, x)?;
        for (a, b) in ff.0.iter().zip(&fq.0) {
            max_dev = max_dev.max((a - b).abs());
        }
        let pf = class_scores(&ff, prototypes)?;
        let pq = class_scores(&fq, prototypes)?;
        agree += (predict(&pf) == predict(&pq)) as usize;
        s_float.push(pf[positive]);
        s_quant.push(pq[positive]);
    }
    let binary: Vec<bool> = labels.iter().map(|&l| l == positive).collect();
    let auc_float = auc(&s_float, &binary)?;
    let auc_quantized = auc(&s_quant, &binary)?;
    Ok(FidelityReport {
        samples: inputs.len(),
        agreement: agree as f64 / inputs.len() as f64,
        auc_float,
        auc_quantized,
        auc_drop_points: 100.0 * (auc_float - auc_quantized),
        max_feature_deviation: max_dev,
        saturation_fraction: qenc.saturation_fraction(),
        warning: qenc.warning(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::{init_params, EncoderConfig, Layer};
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    #[test]
    fn quantize_value_examples() {
        let s12 = FixedSpec::default();
        let s14 = FixedSpec::new(14).unwrap();
        assert_eq!(quantize_value(0.0, &s12), 0);
        assert_eq!(quantize_value(0.5, &s14), 8192);
        assert_eq!(quantize_value(10.0, &s12), 32767);
        assert_eq!(quantize_value(-10.0, &s12), -32768);
        // ties go to even
        assert_eq!(quantize_value(0.5 / 4096.0, &s12), 0);
        assert_eq!(quantize_value(1.5 / 4096.0, &s12), 2);
        assert_eq!(quantize_value(-2.5 / 4096.0, &s12), -2);
        assert!(FixedSpec::new(0).is_err());
        assert!(FixedSpec::new(16).is_err());
    }

    #[test]
    fn integer_rescale_rounds_half_even() {
        assert_eq!(shift_round_even(6, 2), 2); // 1.5 → 2
        assert_eq!(shift_round_even(10, 2), 2); // 2.5 → 2
        assert_eq!(shift_round_even(-6, 2), -2);
        assert_eq!(shift_round_even(-10, 2), -2);
        assert_eq!(shift_round_even(-7, 2), -2); // -1.75
        assert_eq!(shift_round_even(9, 2), 2);
    }

    #[test]
    fn zero_params_quantize_to_zero() {
        let cfg = EncoderConfig::new(8, vec![4], 3, 0);
        let params = EncoderParams::zeros_like_config(&cfg).unwrap();
        let q = quantize_encoder(&params, &FixedSpec::default()).unwrap();
        assert!(q.layers.iter().all(|l| l.weights.iter().chain(&l.bias).all(|&v| v == 0)));
        assert_eq!(quantized_encode(&q, &[0.0; 8]).unwrap().0, vec![0.0; 3]);
        assert_eq!(q, quantize_encoder(&params, &FixedSpec::default()).unwrap());
    }

    #[test]
    fn identity_layer_is_exact() {
        let mut l = Layer::zeros(4, 4);
        for i in 0..4 {
            l.weights[i * 4 + i] = 1.0;
        }
        let params = EncoderParams { layers: vec![l] };
        let q = quantize_encoder(&params, &FixedSpec::default()).unwrap();
        let x = [0.25, -1.5, 3.0, 0.000244140625];
        assert_eq!(quantized_encode(&q, &x).unwrap().0, x.to_vec());
    }

    #[test]
    fn small_encoder_tracks_float() {
        let cfg = EncoderConfig::new(32, vec![16, 8], 4, 7);
        let params = init_params(&cfg).unwrap();
        let q = quantize_encoder(&params, &FixedSpec::default()).unwrap();
        let mut rng = rng_from(3);
        for _ in 0..50 {
            let x: Vec<f64> = (0..32).map(|_| rng.random_range(0.0..1.0)).collect();
            let a = encode(&params, &x).unwrap();
            let b = quantized_encode(&q, &x).unwrap();
            for (u, v) in a.0.iter().zip(&b.0) {
                assert!((u - v).abs() < 0.01, "{u} vs {v}");
            }
        }
        assert!(matches!(quantized_encode(&q, &[0.0; 3]), Err(Error::Shape(_))));
    }

    #[test]
    fn accumulator_cannot_overflow_for_default_architecture() {
        let spec = FixedSpec { total_bits: 16, frac_bits: 15 };
        // default encoder on the default 64-bin, 4-frame input
        let cfg = EncoderConfig::new(256, vec![64, 32], 16, 0);
        for (_, cols) in cfg.layer_shapes() {
            assert!(accumulator_bound(cols, &spec) <= i64::MAX as i128);
        }
        // and it still holds for a thousand-fold larger fan-in
        assert!(accumulator_bound(256_000, &spec) <= i64::MAX as i128);
    }

    #[test]
    fn checkpoint_roundtrip_and_version_check() {
        let params = init_params(&EncoderConfig::new(10, vec![6], 3, 1)).unwrap();
        let q = quantize_encoder(&params, &FixedSpec::default()).unwrap();
        let bytes = q.to_bytes();
        assert_eq!(QuantizedEncoder::from_bytes(&bytes).unwrap(), q);
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(QuantizedEncoder::from_bytes(&bad), Err(Error::UnsupportedVersion { .. })));
        assert!(QuantizedEncoder::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn payload_examples() {
        let p = PayloadShapes::Prototypes { n_classes: 2, dim: 16 };
        assert_eq!(payload_bytes(&p, ElementType::Fixed16 { frac_bits: 12 }), 64);
        let p = PayloadShapes::Prototypes { n_classes: 4, dim: 32 };
        assert_eq!(payload_bytes(&p, ElementType::F32), 512);
        let p = PayloadShapes::Model { layer_shapes: vec![] };
        assert_eq!(payload_bytes(&p, ElementType::F32), 0);
        let shapes = EncoderConfig::new(256, vec![64, 32], 16, 0).layer_shapes();
        let m = payload(&PayloadShapes::Model { layer_shapes: shapes }, ElementType::Fixed16 { frac_bits: 12 });
        assert_eq!(m.bytes, 2 * (256 * 64 + 64 + 64 * 32 + 32 + 32 * 16 + 16));
        assert_eq!(m.kind, PayloadKind::Model);
    }

    #[test]
    fn saturation_is_counted() {
        let mut l = Layer::zeros(1, 4);
        l.weights = vec![100.0, 0.1, -0.2, 0.3];
        let q = quantize_encoder(&EncoderParams { layers: vec![l] }, &FixedSpec::default()).unwrap();
        assert_eq!((q.saturated, q.total), (1, 5));
        assert!(q.warning().is_some());
    }

    proptest! {
        #[test]
        fn roundtrip_within_half_lsb(x in -20.0f64..20.0, frac in 1u8..=15) {
            let spec = FixedSpec::new(frac).unwrap();
            let (lo, hi) = spec.range();
            let clamped = x.clamp(lo, hi);
            let back = dequantize_value(quantize_value(x, &spec), &spec);
            prop_assert!((back - clamped).abs() <= spec.lsb() / 2.0 + 1e-15);
        }

        #[test]
        fn integer_rescale_matches_float_rounding(acc in -(1i64 << 40)..(1i64 << 40), shift in 1u8..=15) {
            let expected = (acc as f64 / (1u64 << shift) as f64).round_ties_even() as i64;
            prop_assert_eq!(shift_round_even(acc, shift), expected);
        }
    }
}
