//! `metawears` command-line driver.
//!
//! Every command writes its artifacts under the output directory together
//! with a resolved copy of the config (`<command>.config.json`) and a
//! `<artifact>.meta.json` sidecar carrying the config hash. Wall-clock
//! timestamps only ever go to `metawears.log`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use metawears::dataset::{load_dataset, save_dataset, Dataset};
use metawears::evalmetrics::{positive_class, prototype_trajectory, SupportSource};
use metawears::experiment::{RunConfig, DOMAINS};
use metawears::nncore::EncoderParams;
use metawears::protonet::{
    classify, load_prototypes, save_prototypes, ElementType, Prepared, Prototypes, TrainHistory,
};
use metawears::quant::{fidelity, payload, quantize_encoder, PayloadShapes};
use metawears::signalgen::{DomainName, Signal};
use metawears::updatesim::{check_memory, simulate, transfer_time, update_savings_ratio, Scenario};
use metawears::Error;

const PRETRAINED: &str = "pretrained.mwsp";
const FINETUNED: &str = "finetuned.mwsp";
const PROTOTYPES: &str = "prototypes.mwsc";
const LOG_FILE: &str = "metawears.log";

#[derive(Parser)]
#[command(name = "metawears", version, about = "Few-shot prototypical-network lifecycle for wearable biosignals")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Run config (JSON). Defaults are used when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the config's output directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the base, target, new and test datasets.
    Generate(Common),
    /// Episodic pretraining on the base dataset.
    Pretrain(Common),
    /// Fine-tune a checkpoint on the target dataset.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Build deployment prototypes from target support shots.
    Deploy {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Rebuild prototypes with k new shots per class and report payload sizes.
    Update {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        k: usize,
    },
    /// Classify one raw sample file; prints JSON probabilities.
    Infer {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prototypes: Option<PathBuf>,
        /// JSON (`[..]` or `{"samples": [..], "fs": ..}`) or little-endian f32.
        #[arg(long)]
        sample: PathBuf,
        /// Sampling rate of the sample file; defaults to the target domain's.
        #[arg(long)]
        fs: Option<f64>,
    },
    /// Meta-test AUC over seeded support draws.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Evaluate fixed prototypes instead of sampling support each iteration.
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Fixed-point checkpoint plus float-vs-quantized fidelity report.
    Quantize {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        prototypes: Option<PathBuf>,
    },
    /// Update-cost, battery and memory report.
    Simulate {
        /// Scenario file, or a run config whose `simulator` section is used.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, conflicts_with = "config")]
        preset: Option<String>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-k AUC with new shots and the PCA prototype trajectory.
    SweepK {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        k_values: Option<Vec<usize>>,
    },
    /// Print the default run config.
    DefaultConfig,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Core(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::Config(_)) => 1,
            CliError::Core(Error::Numerical(_) | Error::Degenerate(_)) => 3,
            CliError::Core(_) => 2,
        }
    }

    fn to_json(&self) -> Value {
        let (kind, message) = match self {
            CliError::Usage(m) => ("usage", m.clone()),
            CliError::Core(e) => (e.kind(), e.to_string()),
        };
        json!({ "error": { "kind": kind, "message": message, "exit_code": self.exit_code() } })
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

struct Run {
    cfg: RunConfig,
    out: PathBuf,
    command: &'static str,
    written: Vec<PathBuf>,
}

impl Run {
    fn open(common: &Common, command: &'static str) -> CliResult<Self> {
        let mut cfg = match &common.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(s) = common.seed {
            cfg.seed = s;
        }
        if let Some(o) = &common.out {
            cfg.out_dir = o.clone();
        }
        let out = cfg.out_dir.clone();
        std::fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
        let mut run = Run {
            cfg,
            out,
            command,
            written: Vec::new(),
        };
        let resolved = run.out.join(format!("{command}.config.json"));
        run.write_raw(&resolved, run.cfg.canonical_json().as_bytes())?;
        Ok(run)
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn write_raw(&mut self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
        self.written.push(path.to_path_buf());
        Ok(())
    }

    fn sidecar(&mut self, artifact: &Path, format: &str) -> CliResult<()> {
        let meta = json!({
            "artifact": artifact.file_name().map(|n| n.to_string_lossy().into_owned()),
            "format": format,
            "command": self.command,
            "config_hash": self.cfg.hash(),
            "seed": self.cfg.seed,
        });
        let mut path = artifact.as_os_str().to_owned();
        path.push(".meta.json");
        self.write_raw(Path::new(&path), pretty(&meta).as_bytes())
    }

    /// Writes a file and its sidecar.
    fn artifact(&mut self, name: &str, format: &str, bytes: &[u8]) -> CliResult<PathBuf> {
        let path = self.path(name);
        self.write_raw(&path, bytes)?;
        self.sidecar(&path, format)?;
        Ok(path)
    }

    fn checkpoint(&self, flag: &Option<PathBuf>, default: &str) -> CliResult<EncoderParams> {
        let path = flag.clone().unwrap_or_else(|| self.path(default));
        self.warn_on_hash_mismatch(&path);
        Ok(EncoderParams::load(&path)?)
    }

    fn prototypes(&self, flag: &Option<PathBuf>) -> CliResult<Prototypes> {
        let path = flag.clone().unwrap_or_else(|| self.path(PROTOTYPES));
        self.warn_on_hash_mismatch(&path);
        Ok(load_prototypes(&path)?.0)
    }

    fn warn_on_hash_mismatch(&self, artifact: &Path) {
        let mut meta = artifact.as_os_str().to_owned();
        meta.push(".meta.json");
        let Ok(text) = std::fs::read_to_string(&meta) else { return };
        let Ok(v) = serde_json::from_str::<Value>(&text) else { return };
        if let Some(h) = v.get("config_hash").and_then(Value::as_str) {
            if h != self.cfg.hash() {
                eprintln!(
                    "warning: {} was produced by a different config (hash {h})",
                    artifact.display()
                );
            }
        }
    }

    fn dataset(&self, name: DomainName) -> CliResult<Dataset> {
        Ok(load_dataset(&self.cfg.dataset_dir(name))?)
    }

    fn prepared(&self, name: DomainName) -> CliResult<Prepared> {
        Ok(self.cfg.prepare(self.dataset(name)?)?)
    }

    fn update_pool(&self) -> CliResult<Prepared> {
        let pool = self.dataset(DomainName::Target)?.merge(&self.dataset(DomainName::New)?)?;
        Ok(self.cfg.prepare(pool)?)
    }

    fn training_sets(&self) -> CliResult<Vec<Dataset>> {
        [DomainName::Base, DomainName::Target, DomainName::New]
            .into_iter()
            .map(|n| self.dataset(n))
            .collect()
    }

    fn finish(self) -> CliResult<()> {
        let ts = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs_f64()).unwrap_or(0.0);
        let mut line = format!("{ts:.3} {} seed={} hash={}", self.command, self.cfg.seed, self.cfg.hash());
        for p in &self.written {
            let _ = write!(line, " {}", p.display());
        }
        let log = self.path(LOG_FILE);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{line}").map_err(|e| Error::io(&log, e))?;
        for p in &self.written {
            println!("wrote {}", p.display());
        }
        Ok(())
    }
}

fn pretty(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s
}

fn history_csv(h: &TrainHistory) -> String {
    let mut out = String::from("epoch,train_loss,validation_loss\n");
    for (i, l) in h.epoch_losses.iter().enumerate() {
        let v = h.validation_losses.get(i).map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(out, "{},{l},{v}", i + 1);
    }
    out
}

fn cmd_generate(common: &Common) -> CliResult<()> {
    let mut run = Run::open(common, "generate")?;
    for name in DOMAINS {
        let ds = run.cfg.generate_dataset(name)?;
        let dir = run.cfg.dataset_dir(name);
        save_dataset(&ds, &dir)?;
        let manifest = dir.join("manifest.json");
        run.written.push(manifest.clone());
        run.sidecar(&manifest, "dataset")?;
    }
    run.finish()
}

fn cmd_pretrain(common: &Common) -> CliResult<()> {
    let mut run = Run::open(common, "pretrain")?;
    let base = run.prepared(DomainName::Base)?;
    let (params, history) = run.cfg.run_pretrain(&base)?;
    run.artifact(PRETRAINED, "checkpoint", &params.to_bytes())?;
    run.artifact("pretrain_history.csv", "csv", history_csv(&history).as_bytes())?;
    run.finish()
}

fn cmd_finetune(common: &Common, checkpoint: &Option<PathBuf>) -> CliResult<()> {
    let mut run = Run::open(common, "finetune")?;
    let start = run.checkpoint(checkpoint, PRETRAINED)?;
    let target = run.prepared(DomainName::Target)?;
    let (params, history) = run.cfg.run_finetune(&start, &target)?;
    run.artifact(FINETUNED, "checkpoint", &params.to_bytes())?;
    run.artifact("finetune_history.csv", "csv", history_csv(&history).as_bytes())?;
    let best = json!({
        "best_epoch": history.best_epoch,
        "best_validation_loss": history.best_epoch.and_then(|e| history.validation_losses.get(e - 1)),
        "epochs_run": history.epoch_losses.len(),
        "stopped_early": history.stopped_early,
    });
    run.artifact("finetune_best.json", "json", pretty(&best).as_bytes())?;
    run.finish()
}

fn cmd_deploy(common: &Common, checkpoint: &Option<PathBuf>) -> CliResult<()> {
    let mut run = Run::open(common, "deploy")?;
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let protos = run.cfg.run_deploy(&params, &run.prepared(DomainName::Target)?)?;
    let path = run.path(PROTOTYPES);
    save_prototypes(&path, &protos, ElementType::F64)?;
    run.written.push(path.clone());
    run.sidecar(&path, "prototypes")?;
    run.finish()
}

fn cmd_update(common: &Common, checkpoint: &Option<PathBuf>, k: usize) -> CliResult<()> {
    let mut run = Run::open(common, "update")?;
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let protos = run.cfg.run_update(&params, &run.update_pool()?, k)?;
    let name = format!("prototypes_k{k}.mwsc");
    let path = run.path(&name);
    save_prototypes(&path, &protos, ElementType::F64)?;
    run.written.push(path.clone());
    run.sidecar(&path, "prototypes")?;

    let element = ElementType::Fixed16 {
        frac_bits: run.cfg.quant.frac_bits,
    };
    let model = payload(
        &PayloadShapes::Model {
            layer_shapes: params.layers.iter().map(|l| (l.rows, l.cols)).collect(),
        },
        element,
    );
    let proto = payload(
        &PayloadShapes::Prototypes {
            n_classes: protos.n_classes(),
            dim: protos.dim(),
        },
        element,
    );
    let link = run.cfg.simulator.link.unwrap_or_default();
    let report = json!({
        "k": k,
        "prototypes_file": name,
        "element": format!("fixed16 (Q{}.{})", 15 - run.cfg.quant.frac_bits, run.cfg.quant.frac_bits),
        "prototype_payload_bytes": proto.bytes,
        "model_payload_bytes": model.bytes,
        "savings_ratio": update_savings_ratio(&model, &proto)?,
        "link_throughput_bps": link.throughput_bps,
        "prototype_transfer_s": transfer_time(&proto, &link)?,
        "model_transfer_s": transfer_time(&model, &link)?,
    });
    run.artifact(&format!("update_k{k}_report.json"), "json", pretty(&report).as_bytes())?;
    run.finish()
}

fn read_sample(path: &Path, fs: Option<f64>) -> CliResult<(Vec<f64>, Option<f64>)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let ctx = path.display().to_string();
    if path.extension().is_some_and(|e| e == "json") {
        let v: Value = serde_json::from_slice(&bytes).map_err(|e| Error::format(&ctx, e.to_string()))?;
        let (arr, file_fs) = match &v {
            Value::Array(a) => (a, None),
            Value::Object(o) => (
                o.get("samples")
                    .and_then(Value::as_array)
                    .ok_or_else(|| Error::format(&ctx, "missing \"samples\" array"))?,
                o.get("fs").and_then(Value::as_f64),
            ),
            _ => return Err(Error::format(&ctx, "expected an array or an object").into()),
        };
        let samples = arr
            .iter()
            .map(|x| x.as_f64().ok_or_else(|| Error::format(&ctx, "non-numeric sample")))
            .collect::<Result<Vec<_>, _>>()?;
        return Ok((samples, fs.or(file_fs)));
    }
    if bytes.len() % 4 != 0 {
        return Err(Error::format(&ctx, format!("{} bytes is not a whole number of f32 samples", bytes.len())).into());
    }
    let samples = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Ok((samples, fs))
}

fn cmd_infer(
    common: &Common,
    checkpoint: &Option<PathBuf>,
    prototypes: &Option<PathBuf>,
    sample: &Path,
    fs: Option<f64>,
) -> CliResult<()> {
    let mut cfg = match &common.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(o) = &common.out {
        cfg.out_dir = o.clone();
    }
    let run = Run {
        out: cfg.out_dir.clone(),
        cfg,
        command: "infer",
        written: Vec::new(),
    };
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let protos = run.prototypes(prototypes)?;
    let (samples, fs) = read_sample(sample, fs)?;
    let fs = fs.unwrap_or_else(|| run.cfg.data.domain_spec(DomainName::Target).fs);
    let signal = Signal {
        samples,
        fs,
        patient_id: "sample".into(),
        label: String::new(),
        domain: DomainName::Target,
    };
    let input = run.cfg.pipeline.apply(&signal)?;
    let inf = classify(&params, &protos, &input)?;
    let classes = [metawears::signalgen::NORMAL, metawears::signalgen::ABNORMAL];
    let probs: BTreeMap<String, f64> = inf
        .probabilities
        .iter()
        .enumerate()
        .map(|(i, p)| (classes.get(i).map(|c| c.to_string()).unwrap_or_else(|| i.to_string()), *p))
        .collect();
    let out = json!({
        "probabilities": probs,
        "predicted": classes.get(inf.predicted).map(|c| c.to_string()).unwrap_or_else(|| inf.predicted.to_string()),
        "predicted_index": inf.predicted,
    });
    print!("{}", pretty(&out));
    Ok(())
}

fn cmd_eval(common: &Common, checkpoint: &Option<PathBuf>, prototypes: &Option<PathBuf>) -> CliResult<()> {
    let mut run = Run::open(common, "eval")?;
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let test = run.prepared(DomainName::Test)?;
    let training = run.training_sets()?;
    let training: Vec<&Dataset> = training.iter().collect();
    let fixed;
    let target;
    let source = match prototypes {
        Some(_) => {
            fixed = run.prototypes(prototypes)?;
            SupportSource::Fixed(&fixed)
        }
        None => {
            target = run.prepared(DomainName::Target)?;
            SupportSource::Sample {
                pool: &target,
                n_support_patients: run.cfg.deploy.n_support_patients,
                k: run.cfg.deploy.k,
                new_shots: None,
            }
        }
    };
    let report = run.cfg.run_eval(&params, source, &test, &training)?;
    run.artifact("eval_metrics.csv", "csv", report.to_csv().as_bytes())?;
    let json = serde_json::to_value(&report).expect("report serializes");
    run.artifact("eval_metrics.json", "json", pretty(&json).as_bytes())?;
    println!("mean AUC {:.4} (std {:.4}, n={})", report.mean, report.std, report.aucs.len());
    run.finish()
}

fn cmd_quantize(common: &Common, checkpoint: &Option<PathBuf>, prototypes: &Option<PathBuf>) -> CliResult<()> {
    let mut run = Run::open(common, "quantize")?;
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let protos = match prototypes {
        Some(_) => run.prototypes(prototypes)?,
        None => run.cfg.run_deploy(&params, &run.prepared(DomainName::Target)?)?,
    };
    let q = quantize_encoder(&params, &run.cfg.quant)?;
    run.artifact("quantized.mwsq", "quantized-checkpoint", &q.to_bytes())?;
    let test = run.prepared(DomainName::Test)?;
    let labels: Vec<usize> = (0..test.dataset.len()).map(|i| test.dataset.label_index(i)).collect();
    let report = fidelity(&params, &q, &protos, &test.inputs, &labels, positive_class(&test.dataset.classes))?;
    if let Some(w) = &report.warning {
        eprintln!("warning: {w}");
    }
    let json = serde_json::to_value(&report).expect("report serializes");
    run.artifact("quant_fidelity.json", "json", pretty(&json).as_bytes())?;
    run.finish()
}

fn load_scenario(path: &Path) -> CliResult<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match Scenario::from_json(&text) {
        Ok(s) => Ok(s),
        Err(scenario_err) => match RunConfig::from_json(&text) {
            Ok(cfg) => Ok(cfg.simulator),
            Err(_) => Err(scenario_err.into()),
        },
    }
}

fn cmd_simulate(config: &Option<PathBuf>, preset: &Option<String>, out: &Option<PathBuf>) -> CliResult<()> {
    let scenario = match (config, preset) {
        (Some(p), _) => load_scenario(p)?,
        (None, Some(name)) => Scenario::from_preset(name)?,
        (None, None) => return Err(CliError::Usage("simulate needs --config or --preset".into())),
    };
    let resolved = scenario.resolve()?;
    let report = simulate(&resolved)?;
    let text = report.to_text();
    print!("{text}");
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let json = serde_json::to_value(&report).expect("report serializes");
        for (name, body) in [("simulation.txt", text.clone()), ("simulation.json", pretty(&json))] {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))?;
        }
    }
    if let Some(m) = &resolved.memory {
        check_memory(m)?;
    }
    Ok(())
}

fn cmd_sweep_k(common: &Common, checkpoint: &Option<PathBuf>, k_values: &Option<Vec<usize>>) -> CliResult<()> {
    let mut run = Run::open(common, "sweep-k")?;
    let ks = k_values.clone().unwrap_or_else(|| run.cfg.eval.k_values.clone());
    if ks.is_empty() || ks.contains(&0) {
        return Err(Error::Config("k values must be positive".into()).into());
    }
    let params = run.checkpoint(checkpoint, FINETUNED)?;
    let pool = run.update_pool()?;
    let test = run.prepared(DomainName::Test)?;
    let training = run.training_sets()?;
    let training: Vec<&Dataset> = training.iter().collect();
    let mut csv = String::from("k,mean_auc,std,median,standard_error,iterations\n");
    for &k in &ks {
        let source = SupportSource::Sample {
            pool: &pool,
            n_support_patients: run.cfg.deploy.n_support_patients,
            k,
            new_shots: Some(k),
        };
        let r = run.cfg.run_eval(&params, source, &test, &training)?;
        let _ = writeln!(csv, "{k},{},{},{},{},{}", r.mean, r.std, r.median, r.standard_error(), r.aucs.len());
    }
    run.artifact("sweep_k.csv", "csv", csv.as_bytes())?;
    let traj = prototype_trajectory(
        &params,
        &pool,
        &test,
        run.cfg.deploy.n_support_patients,
        run.cfg.deploy.k,
        &ks,
        run.cfg.seeds().update,
    )?;
    run.artifact("trajectory.csv", "csv", traj.to_csv(&test.dataset.classes).as_bytes())?;
    run.finish()
}

fn dispatch(cmd: Command) -> CliResult<()> {
    match cmd {
        Command::Generate(c) => cmd_generate(&c),
        Command::Pretrain(c) => cmd_pretrain(&c),
        Command::Finetune { common, checkpoint } => cmd_finetune(&common, &checkpoint),
        Command::Deploy { common, checkpoint } => cmd_deploy(&common, &checkpoint),
        Command::Update { common, checkpoint, k } => cmd_update(&common, &checkpoint, k),
        Command::Infer {
            common,
            checkpoint,
            prototypes,
            sample,
            fs,
        } => cmd_infer(&common, &checkpoint, &prototypes, &sample, fs),
        Command::Eval {
            common,
            checkpoint,
            prototypes,
        } => cmd_eval(&common, &checkpoint, &prototypes),
        Command::Quantize {
            common,
            checkpoint,
            prototypes,
        } => cmd_quantize(&common, &checkpoint, &prototypes),
        Command::Simulate { config, preset, out } => cmd_simulate(&config, &preset, &out),
        Command::SweepK {
            common,
            checkpoint,
            k_values,
        } => cmd_sweep_k(&common, &checkpoint, &k_values),
        Command::DefaultConfig => {
            print!("{}", RunConfig::default().canonical_json());
            println!();
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                let _ = e.print();
                return ExitCode::SUCCESS;
            }
            let err = CliError::Usage(e.to_string().trim().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code());
        }
    };
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code())
        }
    }
}
