//! ROC-AUC, the iteration-averaged meta-test protocol, a one-sided
//! one-sample t-test and 2-D PCA projections of features and prototypes.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use rayon::prelude::*;
use serde::Serialize;
use statrs::function::beta::beta_reg;

use crate::dataset::{PatientIndex, Role, SupportSet};
use crate::error::{Error, Result};
use crate::nncore::{encode, EncoderParams, FeatureVector};
use crate::protonet::{build_prototypes_for_deployment, class_scores, prototypes_from_support, update_prototypes, Prepared, Prototypes};
use crate::rng::SeedMixer;
use crate::signalgen::ABNORMAL;
use crate::dataset::reconstruct_support_with_new;

/// Mann-Whitney AUC: `(concordant + ½·ties) / (n_pos · n_neg)`.
///
/// Pair counts are kept as integers (twice the statistic) so the result is
/// the same float a brute-force pairwise count would produce.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores but {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Input("scores contain NaN".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l).count() as u128;
    let n_neg = labels.len() as u128 - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Input("AUC needs both positive and negative samples".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut twice: u128 = 0;
    let mut neg_below: u128 = 0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u128, 0u128);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        twice += pos * (2 * neg_below + neg);
        neg_below += neg;
        i = j;
    }
    Ok(twice as f64 / (2 * n_pos * n_neg) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Summary {
    pub mean: f64,
    /// Sample standard deviation (n − 1); 0 for a single value.
    pub std: f64,
    pub median: f64,
}

pub fn summarize(values: &[f64]) -> Summary {
    let n = values.len();
    if n == 0 {
        return Summary {
            mean: f64::NAN,
            std: f64::NAN,
            median: f64::NAN,
        };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let median = if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    };
    Summary { mean, std, median }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub seeds: Vec<u64>,
    pub aucs: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub median: f64,
    pub fingerprint: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub baseline_aucs: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

impl MetricsReport {
    pub fn new(seeds: Vec<u64>, aucs: Vec<f64>, fingerprint: impl Into<String>) -> Self {
        let s = summarize(&aucs);
        MetricsReport {
            seeds,
            aucs,
            mean: s.mean,
            std: s.std,
            median: s.median,
            fingerprint: fingerprint.into(),
            baseline_aucs: None,
            deltas: None,
        }
    }

    /// Attaches paired baseline AUCs; deltas are `self − baseline`.
    pub fn with_baseline(mut self, baseline: Vec<f64>) -> Result<Self> {
        if baseline.len() != self.aucs.len() {
            return Err(Error::Shape(format!(
                "{} baseline AUCs for {} iterations",
                baseline.len(),
                self.aucs.len()
            )));
        }
        self.deltas = Some(self.aucs.iter().zip(&baseline).map(|(a, b)| a - b).collect());
        self.baseline_aucs = Some(baseline);
        Ok(self)
    }

    pub fn standard_error(&self) -> f64 {
        self.std / (self.aucs.len() as f64).sqrt()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("seed,auc\n");
        for (s, a) in self.seeds.iter().zip(&self.aucs) {
            let _ = writeln!(out, "{s},{a}");
        }
        let _ = writeln!(out, "mean,{}", self.mean);
        let _ = writeln!(out, "std,{}", self.std);
        out
    }
}

/// Where each meta-test iteration gets its prototypes from.
#[derive(Debug, Clone, Copy)]
pub enum SupportSource<'a> {
    /// The same prototypes every iteration (e.g. a deployed file).
    Fixed(&'a Prototypes),
    /// Fresh support drawn from the train-role records of `pool` each
    /// iteration; with `new_shots`, `k` of the new-role records per class
    /// join the support.
    Sample {
        pool: &'a Prepared,
        n_support_patients: usize,
        k: usize,
        new_shots: Option<usize>,
    },
}

impl SupportSource<'_> {
    fn prototypes(&self, params: &EncoderParams, seed: u64) -> Result<Prototypes> {
        match *self {
            SupportSource::Fixed(p) => Ok(p.clone()),
            SupportSource::Sample {
                pool,
                n_support_patients,
                k,
                new_shots: None,
            } => build_prototypes_for_deployment(params, pool, n_support_patients, k, seed),
            SupportSource::Sample {
                pool,
                n_support_patients,
                new_shots: Some(kn),
                ..
            } => update_prototypes(params, pool, n_support_patients, kn, seed),
        }
    }

    fn patients(&self) -> BTreeSet<String> {
        match self {
            SupportSource::Fixed(_) => BTreeSet::new(),
            SupportSource::Sample { pool, .. } => pool.dataset.all_patients(),
        }
    }
}

/// Index of the class scored as positive: "abnormal" when present, else 1.
pub fn positive_class(classes: &[String]) -> usize {
    classes.iter().position(|c| c == ABNORMAL).unwrap_or(1)
}

/// Refuses to evaluate when any test patient also appears in training data.
pub fn check_disjoint(test: &Prepared, training_patients: &BTreeSet<String>) -> Result<()> {
    let overlap: Vec<String> = test
        .dataset
        .all_patients()
        .intersection(training_patients)
        .cloned()
        .collect();
    if !overlap.is_empty() {
        return Err(Error::Protocol(format!(
            "test patients also used for training: {}",
            overlap.join(", ")
        )));
    }
    if let Some(r) = test.dataset.records.iter().find(|r| r.role != Role::Test) {
        return Err(Error::Protocol(format!("record {} in the test set has role {}", r.id, r.role)));
    }
    Ok(())
}

/// Iteration-averaged meta-test: per iteration, seeded prototypes from
/// `source`, then AUC of `p(positive)` over every test sample.
pub fn meta_test(
    params: &EncoderParams,
    source: SupportSource<'_>,
    test: &Prepared,
    iterations: usize,
    seed: u64,
    training_patients: &BTreeSet<String>,
) -> Result<MetricsReport> {
    if iterations == 0 {
        return Err(Error::Config("iterations must be >= 1".into()));
    }
    let mut excluded = training_patients.clone();
    excluded.extend(source.patients());
    check_disjoint(test, &excluded)?;
    let positive = positive_class(&test.dataset.classes);
    let labels: Vec<bool> = (0..test.dataset.len()).map(|i| test.dataset.label_index(i) == positive).collect();
    let features = test.encode_all(params)?;
    let seeds: Vec<u64> = (0..iterations)
        .map(|i| SeedMixer::new(seed).str("meta-test").u64(i as u64).finish())
        .collect();
    let aucs = seeds
        .par_iter()
        .map(|&s| {
            let protos = source.prototypes(params, s)?;
            score_auc(&features, &labels, &protos, positive)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MetricsReport::new(seeds, aucs, String::new()))
}

pub fn score_auc(features: &[FeatureVector], labels: &[bool], prototypes: &Prototypes, positive: usize) -> Result<f64> {
    let scores = features
        .iter()
        .map(|f| class_scores(f, prototypes).map(|p| p[positive]))
        .collect::<Result<Vec<_>>>()?;
    auc(&scores, labels)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TTest {
    pub n: usize,
    pub mean: f64,
    pub t: f64,
    pub df: f64,
    /// One-sided p-value for H0: mean ≤ 0.
    pub p: f64,
}

/// Student-t CDF through the regularized incomplete beta function.
pub fn student_t_cdf(t: f64, df: f64) -> f64 {
    let x = df / (df + t * t);
    let tail = 0.5 * beta_reg(df / 2.0, 0.5, x);
    if t >= 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

pub fn one_sample_ttest_greater(deltas: &[f64]) -> Result<TTest> {
    let n = deltas.len();
    if n < 2 {
        return Err(Error::Input(format!("t-test needs at least 2 values, got {n}")));
    }
    let s = summarize(deltas);
    if !(s.std > 0.0) {
        return Err(Error::Degenerate("t-test deltas have zero variance".into()));
    }
    let t = s.mean / (s.std / (n as f64).sqrt());
    let df = (n - 1) as f64;
    let x = df / (df + t * t);
    // upper tail directly, avoiding 1 − CDF cancellation for large t
    let upper = 0.5 * beta_reg(df / 2.0, 0.5, x);
    let p = if t >= 0.0 { upper } else { 1.0 - upper };
    Ok(TTest {
        n,
        mean: s.mean,
        t,
        df,
        p,
    })
}

/// Eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
/// Returns eigenvalues (descending) and eigenvectors as rows.
pub fn jacobi_eigen(matrix: &[Vec<f64>]) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let n = matrix.len();
    if matrix.iter().any(|r| r.len() != n) {
        return Err(Error::Shape("matrix is not square".into()));
    }
    let mut a: Vec<Vec<f64>> = matrix.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum::<f64>().sqrt();
        if off <= 1e-15 * scale.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    Ok((values, vectors))
}

/// Flips `v` so its largest-magnitude entry is positive.
fn fix_sign(v: &mut [f64]) {
    let mut best = 0;
    for i in 0..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    if v[best] < 0.0 {
        v.iter_mut().for_each(|x| *x = -*x);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PcaProjection {
    pub mean: Vec<f64>,
    /// Two orthonormal rows.
    pub components: [Vec<f64>; 2],
    pub explained_variance: [f64; 2],
    pub points: Vec<[f64; 2]>,
}

impl PcaProjection {
    pub fn project(&self, v: &[f64]) -> [f64; 2] {
        let proj = |c: &[f64]| v.iter().zip(&self.mean).zip(c).map(|((x, m), w)| (x - m) * w).sum();
        [proj(&self.components[0]), proj(&self.components[1])]
    }
}

pub fn pca2(points: &[Vec<f64>]) -> Result<PcaProjection> {
    let n = points.len();
    if n < 3 {
        return Err(Error::Input(format!("PCA needs at least 3 points, got {n}")));
    }
    let d = points[0].len();
    if d < 2 {
        return Err(Error::Input("PCA needs at least 2 dimensions".into()));
    }
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::Shape("PCA points have unequal dimensions".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| points.iter().map(|p| p[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for p in points {
        for i in 0..d {
            let di = p[i] - mean[i];
            for j in i..d {
                cov[i][j] += di * (p[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let (values, mut vectors) = jacobi_eigen(&cov)?;
    if !(values[0] > 1e-300) {
        return Err(Error::Degenerate("all points coincide (rank-0 data)".into()));
    }
    fix_sign(&mut vectors[0]);
    fix_sign(&mut vectors[1]);
    let mut out = PcaProjection {
        mean,
        components: [vectors[0].clone(), vectors[1].clone()],
        explained_variance: [values[0], values[1].max(0.0)],
        points: Vec::new(),
    };
    out.points = points.iter().map(|p| out.project(p)).collect();
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointKind {
    Support,
    Query,
    Test,
    Prototype,
}

impl PointKind {
    pub fn as_str(self) -> &'static str {
        match self {
            PointKind::Support => "support",
            PointKind::Query => "query",
            PointKind::Test => "test",
            PointKind::Prototype => "prototype",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PlotPoint {
    pub x: f64,
    pub y: f64,
    pub kind: PointKind,
    pub class: usize,
    pub k: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub projection: PcaProjection,
    pub k_values: Vec<usize>,
    pub points: Vec<PlotPoint>,
}

impl Trajectory {
    /// Prototype points of `class` in `k_values` order.
    pub fn prototype_path(&self, class: usize) -> Vec<[f64; 2]> {
        self.points
            .iter()
            .filter(|p| p.kind == PointKind::Prototype && p.class == class)
            .map(|p| [p.x, p.y])
            .collect()
    }

    pub fn to_csv(&self, classes: &[String]) -> String {
        let mut out = String::from("x,y,kind,class,k\n");
        for p in &self.points {
            let class = classes.get(p.class).cloned().unwrap_or_else(|| p.class.to_string());
            let k = p.k.map(|k| k.to_string()).unwrap_or_default();
            let _ = writeln!(out, "{},{},{},{},{}", p.x, p.y, p.kind.as_str(), class, k);
        }
        out
    }
}

/// Prototypes after each number of new shots, projected with test and
/// support features into one PCA basis fit on train and test features.
/// `k = 0` is the deployment support of `deploy_k` train-role shots.
pub fn prototype_trajectory(
    params: &EncoderParams,
    pool: &Prepared,
    test: &Prepared,
    n_support_patients: usize,
    deploy_k: usize,
    k_values: &[usize],
    seed: u64,
) -> Result<Trajectory> {
    if k_values.is_empty() {
        return Err(Error::Config("k_values is empty".into()));
    }
    let pool_feats = pool.encode_all(params)?;
    let test_feats = test.encode_all(params)?;
    let basis_points: Vec<Vec<f64>> = pool
        .dataset
        .records
        .iter()
        .zip(&pool_feats)
        .filter(|(r, _)| r.role == Role::Train)
        .map(|(_, f)| f.0.clone())
        .chain(test_feats.iter().map(|f| f.0.clone()))
        .collect();
    let mut projection = pca2(&basis_points)?;
    projection.points.clear();
    let mut points = Vec::new();
    for (i, f) in test_feats.iter().enumerate() {
        let [x, y] = projection.project(&f.0);
        points.push(PlotPoint {
            x,
            y,
            kind: PointKind::Test,
            class: test.dataset.label_index(i),
            k: None,
        });
    }
    for &k in k_values {
        let support_seed = SeedMixer::new(seed).str("trajectory").u64(k as u64).finish();
        let support: SupportSet = if k == 0 {
            PatientIndex::new(&pool.dataset, Role::Train).sample_support(&pool.dataset, n_support_patients, deploy_k, support_seed)?
        } else {
            reconstruct_support_with_new(&pool.dataset, n_support_patients, k, support_seed)?
        };
        let protos = prototypes_from_support(params, pool, &support)?;
        for (c, ids) in support.per_class.iter().enumerate() {
            for &i in ids {
                let [x, y] = projection.project(&pool_feats[i].0);
                points.push(PlotPoint {
                    x,
                    y,
                    kind: PointKind::Support,
                    class: c,
                    k: Some(k),
                });
            }
        }
        for (c, v) in protos.vectors.iter().enumerate() {
            let [x, y] = projection.project(v);
            points.push(PlotPoint {
                x,
                y,
                kind: PointKind::Prototype,
                class: c,
                k: Some(k),
            });
        }
    }
    Ok(Trajectory {
        projection,
        k_values: k_values.to_vec(),
        points,
    })
}

/// Encodes one raw input for plotting outside the trajectory helper.
pub fn project_input(params: &EncoderParams, projection: &PcaProjection, input: &[f64]) -> Result<[f64; 2]> {
    Ok(projection.project(&encode(params, input)?.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
        let (mut twice, mut pairs) = (0u64, 0u64);
        for (i, &si) in scores.iter().enumerate() {
            if !labels[i] {
                continue;
            }
            for (j, &sj) in scores.iter().enumerate() {
                if labels[j] {
                    continue;
                }
                pairs += 1;
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
        twice as f64 / (2 * pairs) as f64
    }

    #[test]
    fn auc_examples() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[false, false, true, true]).unwrap(), 1.0);
        assert_eq!(auc(&[0.3; 6], &[true, false, true, false, false, true]).unwrap(), 0.5);
        assert_eq!(auc(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap(), 0.75);
        assert!(matches!(auc(&[0.1, 0.2], &[true, true]), Err(Error::Input(_))));
    }

    proptest! {
        #[test]
        fn auc_equals_pairwise_oracle(data in prop::collection::vec((0u8..12, any::<bool>()), 2..200)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            prop_assert_eq!(auc(&scores, &labels).unwrap(), brute_auc(&scores, &labels));
        }

        #[test]
        fn auc_invariant_under_monotone_transform(data in prop::collection::vec((-5.0f64..5.0, any::<bool>()), 2..100)) {
            let scores: Vec<f64> = data.iter().map(|(s, _)| *s).collect();
            let labels: Vec<bool> = data.iter().map(|(_, l)| *l).collect();
            prop_assume!(labels.iter().any(|&l| l) && labels.iter().any(|&l| !l));
            let moved: Vec<f64> = scores.iter().map(|s| (2.0 * s).exp() + 3.0).collect();
            prop_assert_eq!(auc(&scores, &labels).unwrap(), auc(&moved, &labels).unwrap());
        }
    }

    #[test]
    fn summary_and_report() {
        let r = MetricsReport::new(vec![1], vec![0.7], "x");
        assert_eq!((r.mean, r.std, r.median), (0.7, 0.0, 0.7));
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.5);
        assert!((s.std - (5.0f64 / 3.0).sqrt()).abs() < 1e-15);
        let r = MetricsReport::new(vec![1, 2], vec![0.6, 0.8], "").with_baseline(vec![0.5, 0.5]).unwrap();
        assert_eq!(r.deltas.as_ref().unwrap().len(), 2);
        assert!(r.to_csv().starts_with("seed,auc\n1,0.6\n"));
    }

    /// Simpson integration of the t density from 0 to |t|.
    fn t_cdf_numeric(t: f64, df: f64) -> f64 {
        let ln_c = statrs::function::gamma::ln_gamma((df + 1.0) / 2.0)
            - statrs::function::gamma::ln_gamma(df / 2.0)
            - 0.5 * (df * std::f64::consts::PI).ln();
        let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
        let n = 20_000;
        let h = t.abs() / n as f64;
        let mut s = dens(0.0) + dens(t.abs());
        for i in 1..n {
            s += dens(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
        }
        let half = s * h / 3.0;
        if t >= 0.0 {
            0.5 + half
        } else {
            0.5 - half
        }
    }

    #[test]
    fn t_cdf_matches_numeric_integration() {
        for df in [3.0, 9.0, 19.0] {
            for t in [-3.5, -1.2, -0.3, 0.0, 0.4, 1.0, 2.2, 4.0, 7.5] {
                let a = student_t_cdf(t, df);
                let b = t_cdf_numeric(t, df);
                assert!((a - b).abs() < 1e-6, "df={df} t={t}: {a} vs {b}");
            }
        }
    }

    #[test]
    fn ttest_examples() {
        assert!(matches!(one_sample_ttest_greater(&[0.0; 4]), Err(Error::Degenerate(_))));
        let r = one_sample_ttest_greater(&[1.0, 1.1, 0.9, 1.0]).unwrap();
        let s = (0.02f64 / 3.0).sqrt();
        assert!((r.t - 1.0 / (s / 2.0)).abs() < 1e-9);
        assert!(r.p < 0.001);
        assert!((r.p - (1.0 - t_cdf_numeric(r.t, 3.0))).abs() < 1e-6);
        let r = one_sample_ttest_greater(&[-1.0, 1.0]).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 0.5).abs() < 1e-12);
    }

    #[test]
    fn pca_axis_aligned() {
        let pts: Vec<Vec<f64>> = [-2.0, -1.0, 0.5, 3.0].iter().map(|&x| vec![x, 0.0, 0.0]).collect();
        let p = pca2(&pts).unwrap();
        assert!((p.components[0][0] - 1.0).abs() < 1e-12);
        assert!(p.explained_variance[1].abs() < 1e-12);
        assert!(matches!(pca2(&vec![vec![1.0, 1.0]; 5]), Err(Error::Degenerate(_))));
        assert!(matches!(pca2(&vec![vec![1.0, 1.0]; 2]), Err(Error::Input(_))));
    }

    #[test]
    fn pca_matches_dense_oracle() {
        let mut rng = rng_from(17);
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..16).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.3)).collect())
            .collect();
        let p = pca2(&pts).unwrap();
        let mean: Vec<f64> = (0..16).map(|j| pts.iter().map(|v| v[j]).sum::<f64>() / 50.0).collect();
        let cov = nalgebra::DMatrix::from_fn(16, 16, |i, j| {
            pts.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / 49.0
        });
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..16).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for c in 0..2 {
            let mut v: Vec<f64> = eig.eigenvectors.column(order[c]).iter().copied().collect();
            fix_sign(&mut v);
            for (a, b) in p.components[c].iter().zip(&v) {
                assert!((a - b).abs() < 1e-8);
            }
            assert!((p.explained_variance[c] - eig.eigenvalues[order[c]]).abs() < 1e-8);
        }
        let dot: f64 = p.components[0].iter().zip(&p.components[1]).map(|(a, b)| a * b).sum();
        assert!(dot.abs() < 1e-9);
        for c in 0..2 {
            let norm: f64 = p.components[c].iter().map(|a| a * a).sum();
            assert!((norm - 1.0).abs() < 1e-9);
            let var = p.points.iter().map(|q| q[c] * q[c]).sum::<f64>() / 49.0;
            assert!((var - p.explained_variance[c]).abs() < 1e-9);
        }
        assert!(p.explained_variance[0] >= p.explained_variance[1]);
    }
}
