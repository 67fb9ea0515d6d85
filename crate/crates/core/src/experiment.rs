//! Run configuration and the lifecycle steps shared by the command-line
//! tool and the integration tests: generate, pretrain, fine-tune, deploy,
//! update, evaluate.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::evalmetrics::{meta_test, MetricsReport, SupportSource};
use crate::nncore::{init_params, EncoderConfig, EncoderParams};
use crate::preprocess::Pipeline;
use crate::protonet::{build_prototypes_for_deployment, fine_tune, meta_train, update_prototypes, Prepared, Prototypes, TrainConfig, TrainHistory};
use crate::quant::FixedSpec;
use crate::rng::{substream, SeedMixer};
use crate::signalgen::{gen_dataset, DomainName, DomainSpec};
use crate::updatesim::Scenario;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainData {
    pub patients: usize,
    pub records_per_class: usize,
    /// Defaults to the standard spec for the domain name.
    #[serde(default)]
    pub spec: Option<DomainSpec>,
}

impl DomainData {
    fn new(patients: usize, records_per_class: usize) -> Self {
        DomainData {
            patients,
            records_per_class,
            spec: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    #[serde(default = "default_duration")]
    pub duration_s: f64,
    #[serde(default = "default_base")]
    pub base: DomainData,
    #[serde(default = "default_target")]
    pub target: DomainData,
    #[serde(default = "default_new")]
    pub new: DomainData,
    #[serde(default = "default_test")]
    pub test: DomainData,
}

fn default_duration() -> f64 {
    4.0
}

fn default_base() -> DomainData {
    DomainData::new(16, 16)
}

fn default_target() -> DomainData {
    DomainData::new(10, 20)
}

fn default_new() -> DomainData {
    DomainData::new(4, 10)
}

fn default_test() -> DomainData {
    DomainData::new(10, 25)
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            duration_s: default_duration(),
            base: default_base(),
            target: default_target(),
            new: default_new(),
            test: default_test(),
        }
    }
}

impl DataConfig {
    pub fn section(&self, name: DomainName) -> &DomainData {
        match name {
            DomainName::Base => &self.base,
            DomainName::Target => &self.target,
            DomainName::New => &self.new,
            DomainName::Test => &self.test,
        }
    }

    pub fn domain_spec(&self, name: DomainName) -> DomainSpec {
        self.section(name).spec.clone().unwrap_or_else(|| DomainSpec::default_for(name))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderSection {
    #[serde(default = "default_hidden")]
    pub hidden_layers: Vec<usize>,
    #[serde(default = "default_feature_dim")]
    pub feature_dim: usize,
}

fn default_hidden() -> Vec<usize> {
    vec![64, 32]
}

fn default_feature_dim() -> usize {
    16
}

impl Default for EncoderSection {
    fn default() -> Self {
        EncoderSection {
            hidden_layers: default_hidden(),
            feature_dim: default_feature_dim(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DeployConfig {
    #[serde(default = "one")]
    pub n_support_patients: usize,
    #[serde(default = "five")]
    pub k: usize,
}

fn one() -> usize {
    1
}

fn five() -> usize {
    5
}

impl Default for DeployConfig {
    fn default() -> Self {
        DeployConfig {
            n_support_patients: 1,
            k: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    #[serde(default = "default_iterations")]
    pub iterations: usize,
    #[serde(default = "default_k_values")]
    pub k_values: Vec<usize>,
}

fn default_iterations() -> usize {
    10
}

fn default_k_values() -> Vec<usize> {
    vec![1, 3, 5, 10, 20]
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            iterations: default_iterations(),
            k_values: default_k_values(),
        }
    }
}

fn default_pretrain() -> TrainConfig {
    TrainConfig {
        episodes_per_epoch: 50,
        max_epochs: 10,
        ..TrainConfig::default()
    }
}

fn default_finetune() -> TrainConfig {
    TrainConfig {
        episodes_per_epoch: 25,
        max_epochs: 20,
        ..TrainConfig::default()
    }
}

fn default_out_dir() -> PathBuf {
    PathBuf::from("run")
}

fn default_scenario() -> Scenario {
    Scenario {
        preset: Some("epilepsy".into()),
        ..Scenario::default()
    }
}

/// Everything a run needs. Unknown keys are rejected. Relative paths are
/// resolved against the directory of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_out_dir")]
    pub out_dir: PathBuf,
    /// Dataset root; defaults to `<out_dir>/data`.
    #[serde(default)]
    pub data_dir: Option<PathBuf>,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub pipeline: Pipeline,
    #[serde(default)]
    pub encoder: EncoderSection,
    #[serde(default = "default_pretrain")]
    pub pretrain: TrainConfig,
    #[serde(default = "default_finetune")]
    pub finetune: TrainConfig,
    #[serde(default)]
    pub deploy: DeployConfig,
    #[serde(default)]
    pub eval: EvalConfig,
    #[serde(default)]
    pub quant: FixedSpec,
    #[serde(default = "default_scenario")]
    pub simulator: Scenario,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

/// Named substreams of the global seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub dataset: u64,
    pub init: u64,
    pub pretrain: u64,
    pub finetune: u64,
    pub deploy: u64,
    pub update: u64,
    pub eval: u64,
}

/// The four generated datasets, each tagged with its role.
#[derive(Debug, Clone)]
pub struct Datasets {
    pub base: Dataset,
    pub target: Dataset,
    pub new: Dataset,
    pub test: Dataset,
}

impl Datasets {
    pub fn get(&self, name: DomainName) -> &Dataset {
        match name {
            DomainName::Base => &self.base,
            DomainName::Target => &self.target,
            DomainName::New => &self.new,
            DomainName::Test => &self.test,
        }
    }
}

pub const DOMAINS: [DomainName; 4] = [DomainName::Base, DomainName::Target, DomainName::New, DomainName::Test];

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: RunConfig = serde_json::from_str(text)
            .map_err(|e| Error::Config(format!("config line {} column {}: {e}", e.line(), e.column())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_json(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.out_dir = base.join(&cfg.out_dir);
        cfg.data_dir = cfg.data_dir.map(|d| base.join(d));
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.pipeline.validate()?;
        self.pretrain.validate()?;
        self.finetune.validate()?;
        self.quant.validate()?;
        if self.encoder.feature_dim == 0 || self.encoder.hidden_layers.contains(&0) {
            return Err(Error::Config("encoder dimensions must be positive".into()));
        }
        if self.deploy.k == 0 || self.deploy.n_support_patients == 0 {
            return Err(Error::Config("deploy.k and deploy.n_support_patients must be positive".into()));
        }
        if self.eval.iterations == 0 {
            return Err(Error::Config("eval.iterations must be positive".into()));
        }
        for name in DOMAINS {
            let d = self.data.section(name);
            if d.patients == 0 || d.records_per_class == 0 {
                return Err(Error::Config(format!("data.{name}: patients and records_per_class must be positive")));
            }
            let spec = self.data.domain_spec(name);
            if spec.name != name {
                return Err(Error::Config(format!("data.{name}.spec has name {}", spec.name)));
            }
            spec.validate()?;
        }
        Ok(())
    }

    pub fn data_root(&self) -> PathBuf {
        self.data_dir.clone().unwrap_or_else(|| self.out_dir.join("data"))
    }

    pub fn dataset_dir(&self, name: DomainName) -> PathBuf {
        self.data_root().join(name.as_str())
    }

    /// Canonical JSON of the resolved config (what the run hash covers).
    pub fn canonical_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// SHA-256 of the canonical JSON with output locations blanked, so
    /// moving a run directory does not change its hash.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.out_dir = PathBuf::new();
        c.data_dir = None;
        hex::encode(Sha256::digest(serde_json::to_vec(&c).expect("config serializes")))
    }

    pub fn seeds(&self) -> Seeds {
        let s = |name| substream(self.seed, name);
        Seeds {
            dataset: s("dataset"),
            init: s("init"),
            pretrain: s("pretrain"),
            finetune: s("finetune"),
            deploy: s("deploy"),
            update: s("update"),
            eval: s("eval"),
        }
    }

    pub fn generate_dataset(&self, name: DomainName) -> Result<Dataset> {
        let d = self.data.section(name);
        gen_dataset(&[self.data.domain_spec(name)], d.patients, d.records_per_class, self.data.duration_s, self.seeds().dataset)
    }

    pub fn generate(&self) -> Result<Datasets> {
        Ok(Datasets {
            base: self.generate_dataset(DomainName::Base)?,
            target: self.generate_dataset(DomainName::Target)?,
            new: self.generate_dataset(DomainName::New)?,
            test: self.generate_dataset(DomainName::Test)?,
        })
    }

    pub fn prepare(&self, dataset: Dataset) -> Result<Prepared> {
        Prepared::new(dataset, &self.pipeline)
    }

    pub fn encoder_config(&self, input_dim: usize) -> EncoderConfig {
        EncoderConfig::new(input_dim, self.encoder.hidden_layers.clone(), self.encoder.feature_dim, self.seeds().init)
    }

    pub fn init_encoder(&self, input_dim: usize) -> Result<EncoderParams> {
        init_params(&self.encoder_config(input_dim))
    }

    fn with_seed(train: &TrainConfig, stream: u64) -> TrainConfig {
        TrainConfig {
            seed: SeedMixer::new(stream).u64(train.seed).finish(),
            ..train.clone()
        }
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        Self::with_seed(&self.pretrain, self.seeds().pretrain)
    }

    pub fn finetune_config(&self) -> TrainConfig {
        Self::with_seed(&self.finetune, self.seeds().finetune)
    }

    /// Episodic training on the base dataset from a fresh initialization.
    pub fn run_pretrain(&self, base: &Prepared) -> Result<(EncoderParams, TrainHistory)> {
        let dim = base.input_dim().ok_or_else(|| Error::Input("base dataset is empty".into()))?;
        meta_train(&self.init_encoder(dim)?, base, &self.pretrain_config())
    }

    pub fn run_finetune(&self, params: &EncoderParams, target: &Prepared) -> Result<(EncoderParams, TrainHistory)> {
        fine_tune(params, target, &self.finetune_config())
    }

    pub fn run_deploy(&self, params: &EncoderParams, target: &Prepared) -> Result<Prototypes> {
        build_prototypes_for_deployment(params, target, self.deploy.n_support_patients, self.deploy.k, self.seeds().deploy)
    }

    /// `pool` holds the train-role target records and the new-role records.
    pub fn run_update(&self, params: &EncoderParams, pool: &Prepared, k: usize) -> Result<Prototypes> {
        let seed = SeedMixer::new(self.seeds().update).u64(k as u64).finish();
        update_prototypes(params, pool, self.deploy.n_support_patients, k, seed)
    }

    /// Meta-test on `test` against every patient of the given training sets.
    pub fn run_eval(
        &self,
        params: &EncoderParams,
        source: SupportSource<'_>,
        test: &Prepared,
        training: &[&Dataset],
    ) -> Result<MetricsReport> {
        let patients: BTreeSet<String> = training.iter().flat_map(|d| d.all_patients()).collect();
        let mut report = meta_test(params, source, test, self.eval.iterations, self.seeds().eval, &patients)?;
        report.fingerprint = self.hash();
        Ok(report)
    }
}
