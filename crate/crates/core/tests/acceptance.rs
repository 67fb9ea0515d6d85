//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::collections::HashSet;
use std::time::{Duration, Instant};

use rand::Rng as _;
use rayon::prelude::*;

use metawears::dataset::{load_dataset, save_dataset, EpisodeSpec, PatientIndex, Role};
use metawears::evalmetrics::{auc, one_sample_ttest_greater, pca2, student_t_cdf, summarize, SupportSource};
use metawears::experiment::RunConfig;
use metawears::nncore::{init_params, EncoderConfig, EncoderParams, FeatureVector};
use metawears::protonet::{compute_prototypes, episode_grad_check, episode_relu_margin, prototypes_to_bytes, prototype_header_len, ElementType, Prepared};
use metawears::quant::{fidelity, payload_bytes, quantize_encoder, PayloadShapes};
use metawears::rng::rng_from;
use metawears::signalgen::DomainName;
use metawears::updatesim::{
    battery_life_hours, check_memory, preset, transfer_time, update_overhead_fraction, update_savings_ratio, LinkSpec, MemoryBudget,
};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

fn c1_battery() -> Outcome {
    let t = Instant::now();
    let e = preset("epilepsy").unwrap();
    let af = preset("af").unwrap();
    let cases = [
        ("epilepsy low-latency", &e.low_latency, 24.3),
        ("AF low-latency", &af.low_latency, 27.3),
        ("epilepsy low-power", &e.low_power, 103.8),
        ("AF low-power", &af.low_power, 202.1),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (name, p, want) in cases {
        let got = battery_life_hours(p).unwrap();
        pass &= rel(got, want) <= 0.01;
        parts.push(format!("{name} {got:.2}h (expected {want})"));
    }
    let el = t.elapsed();
    pass &= el < Duration::from_secs(1);
    outcome(pass, format!("{}; {}", parts.join(", "), secs(el)))
}

fn c2_savings() -> Outcome {
    let t = Instant::now();
    let link = LinkSpec::default();
    let e = preset("epilepsy").unwrap();
    let af = preset("af").unwrap();
    let r_e = update_savings_ratio(&e.model, &e.prototypes).unwrap();
    let r_af = update_savings_ratio(&af.model, &af.prototypes).unwrap();
    let t_e = transfer_time(&e.model, &link).unwrap();
    let t_af = transfer_time(&af.model, &link).unwrap();
    let o_e = update_overhead_fraction(&e.model, &link, &e.low_latency).unwrap();
    let o_af = update_overhead_fraction(&af.model, &link, &af.low_latency).unwrap();
    let el = t.elapsed();
    let pass = rel(r_e, 456.0) <= 0.01
        && rel(r_af, 418.0) <= 0.01
        && rel(t_e, 0.239) <= 0.03
        && rel(t_af, 1.7) <= 0.02
        && rel(o_e, 0.12) <= 0.03
        && rel(o_af, 2.25) <= 0.03
        && el < Duration::from_secs(1);
    outcome(
        pass,
        format!(
            "ratios {r_e:.2}x / {r_af:.2}x, transfers {:.1} ms / {:.3} s, overhead {:.1}% / {:.1}%; {}",
            1e3 * t_e,
            t_af,
            100.0 * o_e,
            100.0 * o_af,
            secs(el)
        ),
    )
}

fn c3_payloads() -> Outcome {
    let fixed = ElementType::Fixed16 { frac_bits: 12 };
    let e = payload_bytes(&PayloadShapes::Prototypes { n_classes: 2, dim: 16 }, fixed);
    let af = payload_bytes(&PayloadShapes::Prototypes { n_classes: 4, dim: 32 }, ElementType::F32);
    let file = |n: usize, d: usize, el: ElementType| {
        let p = metawears::protonet::Prototypes {
            vectors: vec![vec![0.5; d]; n],
        };
        prototypes_to_bytes(&p, el).unwrap().len() - prototype_header_len(el)
    };
    let fe = file(2, 16, fixed);
    let faf = file(4, 32, ElementType::F32);
    outcome(
        e == 64 && af == 512 && fe == 64 && faf == 512,
        format!("2x16x2 B = {e} B (file payload {fe} B), 4x32x4 B = {af} B (file payload {faf} B)"),
    )
}

const EPISODES: usize = 3;
const KINK_MARGIN: f64 = 1e-3;

fn c4_gradients(test: &Prepared) -> Outcome {
    let t = Instant::now();
    let dim = test.input_dim().unwrap();
    let cfg = EncoderConfig::new(dim, vec![24, 16], 8, 41);
    let mut params = init_params(&cfg).unwrap();
    let _ = metawears::nncore::probe_inputs(&cfg, &mut params);
    let index = PatientIndex::new(&test.dataset, Role::Test);
    let mut worst: f64 = 0.0;
    let mut worst_abs: f64 = 0.0;
    let mut pass = cfg.num_params() <= 10_000;
    // Central differences straddle a ReLU kink when a pre-activation is
    // within roughly one step of zero; only differentiable points count.
    let mut checked = 0;
    let mut skipped = 0;
    for seed in 0..500 {
        if checked == EPISODES {
            break;
        }
        let spec = EpisodeSpec {
            n_support_patients: 1,
            n_query_patients: 1,
            k: 3,
            m: 5,
            seed,
        };
        let ep = index.build_episode(&test.dataset, &spec).unwrap();
        if episode_relu_margin(&params, test, &ep).unwrap() < KINK_MARGIN {
            skipped += 1;
            continue;
        }
        let r = episode_grad_check(&params, test, &ep, 1e-5).unwrap();
        worst = worst.max(r.max_rel_error);
        worst_abs = worst_abs.max(r.max_abs_error);
        pass &= r.passed;
        checked += 1;
    }
    let el = t.elapsed();
    pass &= checked == EPISODES && el < Duration::from_secs(30);
    outcome(
        pass,
        format!(
            "{} params, {checked} episodes ({skipped} skipped with a ReLU input within {KINK_MARGIN:e} of zero), max rel error {worst:.2e} (tol 1e-5, abs floor 1e-7), max abs error {worst_abs:.2e}; {}",
            cfg.num_params(),
            secs(el)
        ),
    )
}

fn brute_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let (mut twice, mut pairs) = (0u64, 0u64);
    for i in 0..scores.len() {
        for j in 0..scores.len() {
            if labels[i] && !labels[j] {
                pairs += 1;
                twice += if scores[i] > scores[j] {
                    2
                } else if scores[i] == scores[j] {
                    1
                } else {
                    0
                };
            }
        }
    }
    twice as f64 / (2 * pairs) as f64
}

fn t_cdf_simpson(t: f64, df: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    let ln_c = ln_gamma((df + 1.0) / 2.0) - ln_gamma(df / 2.0) - 0.5 * (df * std::f64::consts::PI).ln();
    let dens = |x: f64| (ln_c - (df + 1.0) / 2.0 * (1.0 + x * x / df).ln()).exp();
    let n = 40_000;
    let h = t.abs() / n as f64;
    let mut s = dens(0.0) + dens(t.abs());
    for i in 1..n {
        s += dens(i as f64 * h) * if i % 2 == 1 { 4.0 } else { 2.0 };
    }
    0.5 + t.signum() * s * h / 3.0
}

fn c5_oracles() -> Outcome {
    let mut rng = rng_from(2024);
    // AUC
    let mut auc_ok = true;
    let mut auc_cases = 0;
    for _ in 0..500 {
        let n = rng.random_range(2..=200);
        let levels = rng.random_range(1..20);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0..levels) as f64 * 0.1).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        if !labels.iter().any(|&l| l) || labels.iter().all(|&l| l) {
            continue;
        }
        auc_cases += 1;
        auc_ok &= auc(&scores, &labels).unwrap() == brute_auc(&scores, &labels);
    }
    // PCA
    let mut pca_err: f64 = 0.0;
    for trial in 0..5 {
        let d = 8 + trial * 2;
        let pts: Vec<Vec<f64>> = (0..50)
            .map(|_| (0..d).map(|j| rng.random_range(-1.0..1.0) * (1.0 + j as f64 * 0.4)).collect())
            .collect();
        let p = pca2(&pts).unwrap();
        let mean: Vec<f64> = (0..d).map(|j| pts.iter().map(|v| v[j]).sum::<f64>() / 50.0).collect();
        let cov = nalgebra::DMatrix::from_fn(d, d, |i, j| pts.iter().map(|v| (v[i] - mean[i]) * (v[j] - mean[j])).sum::<f64>() / 49.0);
        let eig = cov.symmetric_eigen();
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        for (c, &col) in order.iter().take(2).enumerate() {
            let mut v: Vec<f64> = eig.eigenvectors.column(col).iter().copied().collect();
            let big = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
            if v[big] < 0.0 {
                v.iter_mut().for_each(|x| *x = -*x);
            }
            for (a, b) in p.components[c].iter().zip(&v) {
                pca_err = pca_err.max((a - b).abs());
            }
            pca_err = pca_err.max((p.explained_variance[c] - eig.eigenvalues[col]).abs());
        }
    }
    // prototype mean
    let mut proto_err: f64 = 0.0;
    for _ in 0..50 {
        let k = rng.random_range(1..30);
        let d = rng.random_range(1..40);
        let class: Vec<FeatureVector> = (0..k).map(|_| FeatureVector((0..d).map(|_| rng.random_range(-5.0..5.0)).collect())).collect();
        let p = compute_prototypes(std::slice::from_ref(&class)).unwrap();
        for j in 0..d {
            let mut acc = 0.0;
            for f in &class {
                acc += f.0[j];
            }
            proto_err = proto_err.max((p.vectors[0][j] - acc / k as f64).abs());
        }
    }
    // t-test
    let mut t_err: f64 = 0.0;
    for df in [3.0, 9.0, 19.0] {
        for &t in &[-4.0, -2.0, -0.5, 0.0, 0.3, 1.1, 2.5, 5.0] {
            t_err = t_err.max((student_t_cdf(t, df) - t_cdf_simpson(t, df)).abs());
        }
        let n = df as usize + 1;
        let deltas: Vec<f64> = (0..n).map(|_| rng.random_range(-0.5..1.0)).collect();
        let r = one_sample_ttest_greater(&deltas).unwrap();
        t_err = t_err.max((r.p - (1.0 - t_cdf_simpson(r.t, df))).abs());
    }
    let pass = auc_ok && pca_err <= 1e-8 && proto_err <= 1e-12 && t_err <= 1e-6;
    outcome(
        pass,
        format!(
            "AUC exact on {auc_cases} cases: {auc_ok}; PCA max dev {pca_err:.1e}; prototype mean max dev {proto_err:.1e}; t-test p max dev {t_err:.1e}"
        ),
    )
}

struct SeedRun {
    scratch: f64,
    pretrain_only: f64,
    finetuned: f64,
    by_k: Vec<f64>,
    finetuned_params: EncoderParams,
}

struct Data {
    target: Prepared,
    new: Prepared,
    test: Prepared,
    base: Prepared,
}

fn prepare_all(cfg: &RunConfig) -> Data {
    let ds = cfg.generate().unwrap();
    Data {
        base: cfg.prepare(ds.base).unwrap(),
        target: cfg.prepare(ds.target).unwrap(),
        new: cfg.prepare(ds.new).unwrap(),
        test: cfg.prepare(ds.test).unwrap(),
    }
}

fn dynamics_seed(seed: u64) -> SeedRun {
    let cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    let d = prepare_all(&cfg);
    let training = [&d.base.dataset, &d.target.dataset, &d.new.dataset];
    let (pre, _) = cfg.run_pretrain(&d.base).unwrap();
    let (ft, _) = cfg.run_finetune(&pre, &d.target).unwrap();
    let init = cfg.init_encoder(d.target.input_dim().unwrap()).unwrap();
    let (scratch, _) = cfg.run_finetune(&init, &d.target).unwrap();
    let src = SupportSource::Sample {
        pool: &d.target,
        n_support_patients: cfg.deploy.n_support_patients,
        k: cfg.deploy.k,
        new_shots: None,
    };
    let eval = |p: &EncoderParams, s: SupportSource<'_>| cfg.run_eval(p, s, &d.test, &training).unwrap().mean;
    let pool = d.target.merge(&d.new).unwrap();
    let by_k = cfg
        .eval
        .k_values
        .iter()
        .map(|&k| {
            eval(
                &ft,
                SupportSource::Sample {
                    pool: &pool,
                    n_support_patients: cfg.deploy.n_support_patients,
                    k,
                    new_shots: Some(k),
                },
            )
        })
        .collect();
    SeedRun {
        scratch: eval(&scratch, src),
        pretrain_only: eval(&pre, src),
        finetuned: eval(&ft, src),
        by_k,
        finetuned_params: ft,
    }
}

const SEEDS: u64 = 20;
const SWEEP_LIMIT: Duration = Duration::from_secs(300);

fn c6_dynamics(runs: &[SeedRun], elapsed: Duration) -> Vec<Outcome> {
    let s = |f: &dyn Fn(&SeedRun) -> f64| summarize(&runs.iter().map(f).collect::<Vec<_>>());
    let sc = s(&|r| r.scratch);
    let pre = s(&|r| r.pretrain_only);
    let ft = s(&|r| r.finetuned);
    let n = runs.len() as f64;
    let fast = elapsed < SWEEP_LIMIT;
    let p_a = one_sample_ttest_greater(&runs.iter().map(|r| r.finetuned - r.scratch).collect::<Vec<_>>())
        .map(|t| format!("{:.1e}", t.p))
        .unwrap_or_else(|e| e.to_string());
    let p_b = one_sample_ttest_greater(&runs.iter().map(|r| r.finetuned - r.pretrain_only).collect::<Vec<_>>())
        .map(|t| format!("{:.1e}", t.p))
        .unwrap_or_else(|e| e.to_string());
    let a = outcome(
        runs.len() >= 20 && ft.mean > sc.mean && fast,
        format!(
            "(a) {} seeds: pretrain+finetune {:.4} vs no pretraining {:.4} (one-sided t-test p={p_a}); {}",
            runs.len(),
            ft.mean,
            sc.mean,
            secs(elapsed)
        ),
    );
    let b = outcome(
        runs.len() >= 20 && ft.mean > pre.mean && fast,
        format!("(b) finetuned {:.4} vs pretrain-only {:.4} (p={p_b}); {}", ft.mean, pre.mean, secs(elapsed)),
    );
    let ks = RunConfig::default().eval.k_values;
    let per_k: Vec<_> = (0..ks.len()).map(|i| summarize(&runs.iter().map(|r| r.by_k[i]).collect::<Vec<_>>())).collect();
    let mut mono = true;
    for i in 0..per_k.len() - 1 {
        let se = (per_k[i].std / n.sqrt()).max(per_k[i + 1].std / n.sqrt());
        mono &= per_k[i + 1].mean >= per_k[i].mean - se;
    }
    let c = outcome(
        runs.len() >= 20 && mono && fast,
        format!(
            "(c) mean AUC by k {}: {}; {}",
            ks.iter().map(|k| k.to_string()).collect::<Vec<_>>().join("/"),
            per_k
                .iter()
                .map(|s| format!("{:.4}±{:.4}", s.mean, s.std / n.sqrt()))
                .collect::<Vec<_>>()
                .join(", "),
            secs(elapsed)
        ),
    );
    vec![a, b, c]
}

fn c7_quant(params: &EncoderParams) -> Outcome {
    let cfg = RunConfig::default();
    let d = prepare_all(&cfg);
    let protos = cfg.run_deploy(params, &d.target).unwrap();
    let q = quantize_encoder(params, &cfg.quant).unwrap();
    let labels: Vec<usize> = (0..d.test.dataset.len()).map(|i| d.test.dataset.label_index(i)).collect();
    let positive = metawears::evalmetrics::positive_class(&d.test.dataset.classes);
    let r = fidelity(params, &q, &protos, &d.test.inputs, &labels, positive).unwrap();
    outcome(
        r.samples >= 500 && r.agreement >= 0.99 && r.auc_drop_points <= 1.0,
        format!(
            "{} samples, argmax agreement {:.2}%, AUC {:.4} -> {:.4} (drop {:.3} points), saturation {:.2}%",
            r.samples,
            100.0 * r.agreement,
            r.auc_float,
            r.auc_quantized,
            r.auc_drop_points,
            100.0 * r.saturation_fraction
        ),
    )
}

fn c8_protocol(params: &EncoderParams) -> Outcome {
    let cfg = RunConfig::default();
    let ds = cfg.generate().unwrap();
    let base = &ds.base;
    let index = PatientIndex::new(base, Role::Train);
    let mut overlaps = 0;
    for seed in 0..1000 {
        let ep = index
            .build_episode(base, &EpisodeSpec {
                n_support_patients: 2,
                n_query_patients: 2,
                seed,
                ..EpisodeSpec::default()
            })
            .unwrap();
        let s: HashSet<_> = ep.support.iter().flatten().map(|&i| &base.records[i].signal.patient_id).collect();
        let q: HashSet<_> = ep.query.iter().flatten().map(|&i| &base.records[i].signal.patient_id).collect();
        overlaps += s.intersection(&q).count();
        let declared: HashSet<_> = ep.support_patients.iter().collect();
        overlaps += ep.query_patients.iter().filter(|p| declared.contains(p)).count();
    }

    let pool = cfg.prepare(ds.target.merge(&ds.new).unwrap()).unwrap();
    let before = params.to_bytes();
    let _ = cfg.run_update(params, &pool, 5).unwrap();
    let unchanged = params.to_bytes() == before;

    let dir = tempfile::tempdir().unwrap();
    let mut ds_exact = true;
    for name in [DomainName::Target, DomainName::Test] {
        let path = dir.path().join(name.as_str());
        let d = ds.get(name);
        save_dataset(d, &path).unwrap();
        let back = load_dataset(&path).unwrap();
        ds_exact &= back.records.len() == d.records.len()
            && back
                .records
                .iter()
                .zip(&d.records)
                .all(|(a, b)| a.signal.samples.iter().map(|v| v.to_bits()).eq(b.signal.samples.iter().map(|v| v.to_bits())) && a == b);
        save_dataset(&back, &dir.path().join("again")).unwrap();
        ds_exact &= std::fs::read(path.join("manifest.json")).unwrap() == std::fs::read(dir.path().join("again/manifest.json")).unwrap();
        std::fs::remove_dir_all(dir.path().join("again")).unwrap();
    }
    let ck = dir.path().join("enc.mwsp");
    params.save(&ck).unwrap();
    let ck_exact = EncoderParams::load(&ck).unwrap().to_bytes() == before && std::fs::read(&ck).unwrap() == before;
    outcome(
        overlaps == 0 && unchanged && ds_exact && ck_exact,
        format!(
            "1000 episodes, {overlaps} overlapping patients; encoder bytes unchanged by update: {unchanged}; dataset round-trip bit-exact: {ds_exact}; checkpoint round-trip bit-exact: {ck_exact}"
        ),
    )
}

fn c9_memory() -> Outcome {
    let e = check_memory(&preset("epilepsy").unwrap().memory);
    let af = check_memory(&preset("af").unwrap().memory);
    let over = MemoryBudget::standard(120 * 1024, 200 * 1024, 1024, 64 * 1024);
    let err = check_memory(&over).err().map(|e| e.to_string()).unwrap_or_default();
    let listed = ["input", "model", "prototypes", "intermediate"].iter().all(|n| err.contains(n));
    match (e, af) {
        (Ok(e), Ok(af)) => outcome(
            e.fits && af.fits && listed,
            format!(
                "epilepsy {} B used, slack {} B; AF {} B used, slack {} B; over-budget case rejected with region listing: {listed}",
                e.used_bytes, e.slack_bytes, af.used_bytes, af.slack_bytes
            ),
        ),
        (e, af) => outcome(false, format!("preset failed to fit: {:?} / {:?}", e.err(), af.err())),
    }
}

fn main() {
    let mut results: Vec<(String, Outcome)> = Vec::new();
    results.push(("C1 hardware-table battery life".into(), c1_battery()));
    results.push(("C2 update savings".into(), c2_savings()));
    results.push(("C3 prototype payload sizes".into(), c3_payloads()));

    let cfg = RunConfig::default();
    let test = cfg.prepare(cfg.generate_dataset(DomainName::Test).unwrap()).unwrap();
    results.push(("C4 episode gradient check".into(), c4_gradients(&test)));
    results.push(("C5 oracle equivalences".into(), c5_oracles()));

    let t = Instant::now();
    let mut runs: Vec<SeedRun> = (0..SEEDS).into_par_iter().map(dynamics_seed).collect();
    let elapsed = t.elapsed();
    for (i, o) in c6_dynamics(&runs, elapsed).into_iter().enumerate() {
        results.push((format!("C6{} learning dynamics", ['a', 'b', 'c'][i]), o));
    }
    let params = runs.swap_remove(0).finetuned_params;
    results.push(("C7 quantization fidelity".into(), c7_quant(&params)));
    results.push(("C8 protocol invariants".into(), c8_protocol(&params)));
    results.push(("C9 memory budget".into(), c9_memory()));

    let mut failed = 0;
    for (name, o) in &results {
        println!("[{}] {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        failed += !o.pass as usize;
    }
    println!("acceptance: {} passed, {failed} failed", results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
