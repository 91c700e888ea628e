//! Typed configuration documents, schema validation and provenance.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use efy_core::conjugate::SolverConfig;
use efy_core::data::{LabelBase, SyntheticSpec};
use efy_core::instances::EnergyFamily;
use efy_core::training::{GradientRoute, SearchGrid};
use efy_core::{Architecture, LossKind, RegularizerKind, TrainConfig};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::failure::Failure;

/// The published schema; every document is checked against it before use.
pub const SCHEMA: &str = include_str!("../schema/efy-config.schema.json");

pub const SEED_ENV: &str = "EFY_SEED";

/// Which definition of the schema a document must satisfy.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Document {
    Run,
    Gradcheck,
    Conjbench,
    Calibcheck,
}

impl Document {
    pub fn definition(self) -> &'static str {
        match self {
            Document::Run => "run_config",
            Document::Gradcheck => "gradcheck_config",
            Document::Conjbench => "conjbench_config",
            Document::Calibcheck => "calibcheck_config",
        }
    }
}

/// Config documents carry a seed that `EFY_SEED` may override.
pub trait Seeded {
    fn seed(&self) -> u64;
}

fn default_loss() -> LossKind {
    LossKind::Gfy
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_k() -> usize {
    3
}

fn default_d() -> usize {
    4
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DatasetSource {
    Synthetic(SyntheticSpec),
    Libsvm(LibsvmSource),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibsvmSource {
    pub train: PathBuf,
    /// Held-out file; without it the test split is drawn from `train`.
    #[serde(default)]
    pub test: Option<PathBuf>,
    #[serde(default)]
    pub label_base: LabelBase,
    #[serde(default)]
    pub n_labels: Option<usize>,
    #[serde(default)]
    pub n_features: Option<usize>,
}

/// Optimizer hyperparameters. The seed and inner solver live at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub lambda: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub gradient: GradientRoute,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            lambda: t.lambda,
            learning_rate: t.learning_rate,
            batch_size: t.batch_size,
            epochs: t.epochs,
            beta1: t.beta1,
            beta2: t.beta2,
            epsilon: t.epsilon,
            gradient: t.gradient,
        }
    }
}

impl TrainSection {
    pub fn to_train_config(&self, seed: u64, solver: SolverConfig) -> TrainConfig {
        TrainConfig {
            lambda: self.lambda,
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            epochs: self.epochs,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
            seed,
            solver,
            gradient: self.gradient,
        }
    }
}

/// Grid search over `λ` and the learning rate. Missing lists fall back to the
/// default log-spaced grid; `seeds` consecutive seeds start at the run seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSection {
    #[serde(default)]
    pub lambdas: Option<Vec<f64>>,
    #[serde(default)]
    pub learning_rates: Option<Vec<f64>>,
    #[serde(default = "SearchSection::default_seeds")]
    pub seeds: usize,
    #[serde(default = "SearchSection::default_holdout")]
    pub holdout: f64,
}

impl SearchSection {
    fn default_seeds() -> usize {
        3
    }

    fn default_holdout() -> f64 {
        0.25
    }

    pub fn grid(&self) -> SearchGrid {
        let d = SearchGrid::default();
        SearchGrid {
            lambdas: self.lambdas.clone().unwrap_or(d.lambdas),
            learning_rates: self.learning_rates.clone().unwrap_or(d.learning_rates),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    /// Also fixes the energy: unary is bilinear, pairwise is quadratic, spen
    /// adds the prior network.
    pub architecture: Architecture,
    #[serde(default)]
    pub hidden: Option<usize>,
    #[serde(default)]
    pub prior_hidden: Option<usize>,
    pub regularizer: RegularizerKind,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default = "SolverConfig::loose")]
    pub solver: SolverConfig,
    #[serde(default)]
    pub search: Option<SearchSection>,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
    #[serde(default)]
    pub dev_fraction: f64,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
}

impl Seeded for RunConfig {
    fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GradcheckConfig {
    /// Check the loss gradient in `v` for random instances of this family.
    #[serde(default)]
    pub energy: Option<EnergyFamily>,
    /// Or check the parameter gradient of a randomly initialized model.
    #[serde(default)]
    pub architecture: Option<Architecture>,
    #[serde(default = "default_loss")]
    pub loss: LossKind,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub regularizer: RegularizerKind,
    #[serde(default = "GradcheckConfig::default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    /// Defaults to 1e-5 when every solve was closed form, 1e-4 otherwise.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
}

impl GradcheckConfig {
    fn default_instances() -> usize {
        100
    }
}

impl Seeded for GradcheckConfig {
    fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConjbenchConfig {
    pub energy: EnergyFamily,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_d")]
    pub d: usize,
    pub regularizer: RegularizerKind,
    #[serde(default = "ConjbenchConfig::default_instances")]
    pub instances: usize,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl ConjbenchConfig {
    fn default_instances() -> usize {
        50
    }
}

impl Seeded for ConjbenchConfig {
    fn seed(&self) -> u64 {
        self.seed
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub lo: f64,
    pub hi: f64,
    pub step: f64,
}

impl GridSpec {
    pub fn points(&self) -> Vec<f64> {
        let n = ((self.hi - self.lo) / self.step + 1e-9).floor().max(0.0) as usize;
        (0..=n).map(|i| self.lo + i as f64 * self.step).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DistributionSpec {
    /// Independent labels with these means.
    Bernoulli(Vec<f64>),
    /// Weights over `{0,1}^k` in binary order, label 0 as the lowest bit.
    Weights(Vec<f64>),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibcheckConfig {
    pub energy: EnergyFamily,
    #[serde(default = "default_k")]
    pub k: usize,
    pub regularizer: RegularizerKind,
    pub distribution: DistributionSpec,
    /// Full grid over `[lo, hi]^k` (bilinear only); otherwise random samples.
    #[serde(default)]
    pub grid: Option<GridSpec>,
    #[serde(default = "CalibcheckConfig::default_samples")]
    pub samples: usize,
    /// Half-width of the sampling box for `v`.
    #[serde(default = "CalibcheckConfig::default_scale")]
    pub scale: f64,
    #[serde(default)]
    pub smoothness: Option<f64>,
    #[serde(default)]
    pub solver: SolverConfig,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
}

impl CalibcheckConfig {
    fn default_samples() -> usize {
        500
    }

    fn default_scale() -> f64 {
        3.0
    }
}

impl Seeded for CalibcheckConfig {
    fn seed(&self) -> u64 {
        self.seed
    }
}

/// A parsed document with its provenance.
#[derive(Clone, Debug)]
pub struct Loaded<T> {
    pub config: T,
    pub hash: String,
    /// Config seed, or the `EFY_SEED` override.
    pub seed: u64,
    /// Directory against which relative paths resolve.
    pub base_dir: PathBuf,
}

impl<T> Loaded<T> {
    pub fn resolve(&self, path: &Path) -> PathBuf {
        if path.is_absolute() {
            path.to_path_buf()
        } else {
            self.base_dir.join(path)
        }
    }

    pub fn provenance(&self, command: &'static str) -> Provenance {
        Provenance { command, hash: self.hash.clone(), seed: self.seed }
    }
}

/// Reads, schema-validates and parses a config document.
pub fn load<T>(path: &Path, doc: Document) -> Result<Loaded<T>, Failure>
where
    T: DeserializeOwned + Serialize + Seeded,
{
    let text = std::fs::read_to_string(path)
        .map_err(|e| Failure::Config(format!("cannot read config {}: {e}", path.display())))?;
    let raw: Value = serde_json::from_str(&text)
        .map_err(|e| Failure::Config(format!("{} is not valid JSON: {e}", path.display())))?;
    let problems = schema_violations(&raw, doc);
    if !problems.is_empty() {
        return Err(Failure::Config(format!("{} failed validation:\n  {}", path.display(), problems.join("\n  "))));
    }
    let config: T = serde_json::from_value(raw).map_err(|e| Failure::Config(format!("{}: {e}", path.display())))?;
    let hash = config_hash(&config)?;
    let seed = seed_override(config.seed())?;
    let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok(Loaded { config, hash, seed, base_dir })
}

/// Schema violations as `key: message`, keys dotted from the document root.
pub fn schema_violations(doc_value: &Value, doc: Document) -> Vec<String> {
    let mut schema: Value = serde_json::from_str(SCHEMA).expect("bundled schema is valid JSON");
    schema["$ref"] = Value::String(format!("#/$defs/{}", doc.definition()));
    let validator = jsonschema::validator_for(&schema).expect("bundled schema compiles");
    validator
        .iter_errors(doc_value)
        .map(|e| {
            let pointer = e.instance_path().to_string();
            let key = pointer.trim_start_matches('/').replace('/', ".");
            let key = if key.is_empty() { "(root)".to_string() } else { key };
            format!("{key}: {e}")
        })
        .collect()
}

/// SHA-256 of the canonical (key-sorted, compact) serialization.
pub fn config_hash<T: Serialize>(config: &T) -> Result<String, Failure> {
    let canonical = serde_json::to_vec(&serde_json::to_value(config)?)?;
    Ok(hex::encode(Sha256::digest(&canonical)))
}

fn seed_override(seed: u64) -> Result<u64, Failure> {
    match std::env::var(SEED_ENV) {
        Ok(s) => s
            .trim()
            .parse()
            .map_err(|_| Failure::Config(format!("{SEED_ENV}: expected a nonnegative integer, got {s:?}"))),
        Err(_) => Ok(seed),
    }
}

/// Identifies the config and seed that produced an output file.
#[derive(Clone, Debug)]
pub struct Provenance {
    pub command: &'static str,
    pub hash: String,
    pub seed: u64,
}

impl Provenance {
    pub fn header(&self) -> String {
        format!("# efy {} config_hash={} seed={}", self.command, self.hash, self.seed)
    }

    /// CSV writer whose first line is the provenance header.
    pub fn csv(&self, path: &Path) -> Result<csv::Writer<File>, Failure> {
        let mut file = File::create(path).map_err(|e| Failure::Io(format!("cannot create {}: {e}", path.display())))?;
        writeln!(file, "{}", self.header())?;
        Ok(csv::Writer::from_writer(file))
    }

    /// JSON document wrapped with the provenance fields.
    pub fn write_json<T: Serialize>(&self, path: &Path, key: &str, body: &T) -> Result<(), Failure> {
        let doc = serde_json::json!({
            "command": self.command,
            "config_hash": self.hash,
            "seed": self.seed,
            key: body,
        });
        std::fs::write(path, serde_json::to_string_pretty(&doc)? + "\n")
            .map_err(|e| Failure::Io(format!("cannot write {}: {e}", path.display())))
    }
}

pub fn ensure_dir(dir: &Path) -> Result<(), Failure> {
    std::fs::create_dir_all(dir).map_err(|e| Failure::Io(format!("cannot create {}: {e}", dir.display())))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeSet;

    fn schema_keys(def: &str) -> BTreeSet<String> {
        let schema: Value = serde_json::from_str(SCHEMA).unwrap();
        schema["$defs"][def]["properties"].as_object().unwrap().keys().cloned().collect()
    }

    fn struct_keys<T: Serialize>(value: &T) -> BTreeSet<String> {
        serde_json::to_value(value).unwrap().as_object().unwrap().keys().cloned().collect()
    }

    fn full_run_config() -> RunConfig {
        RunConfig {
            dataset: DatasetSource::Synthetic(SyntheticSpec::default()),
            architecture: Architecture::Pairwise,
            hidden: Some(4),
            prior_hidden: Some(3),
            regularizer: RegularizerKind::GiniBinary { gamma: 1.0 },
            loss: LossKind::Gfy,
            train: TrainSection::default(),
            solver: SolverConfig::loose(),
            search: Some(SearchSection { lambdas: None, learning_rates: None, seeds: 3, holdout: 0.25 }),
            test_fraction: 0.2,
            dev_fraction: 0.1,
            output_dir: "out".into(),
            seed: 0,
        }
    }

    #[test]
    fn schema_keys_match_the_config_types() {
        let run = full_run_config();
        assert_eq!(schema_keys("run_config"), struct_keys(&run));
        assert_eq!(schema_keys("train"), struct_keys(&run.train));
        assert_eq!(schema_keys("solver"), struct_keys(&run.solver));
        assert_eq!(schema_keys("search"), struct_keys(run.search.as_ref().unwrap()));
        assert_eq!(schema_keys("synthetic"), struct_keys(&SyntheticSpec::default()));
        let lib = LibsvmSource {
            train: "a".into(),
            test: None,
            label_base: LabelBase::One,
            n_labels: None,
            n_features: None,
        };
        assert_eq!(schema_keys("libsvm"), struct_keys(&lib));
        let reg = RegularizerKind::GiniBinary { gamma: 1.0 };
        let grad = GradcheckConfig {
            energy: Some(EnergyFamily::Pairwise),
            architecture: None,
            loss: LossKind::Gfy,
            k: 3,
            d: 4,
            regularizer: reg,
            instances: 1,
            solver: SolverConfig::default(),
            threshold: None,
            seed: 0,
            output_dir: None,
        };
        assert_eq!(schema_keys("gradcheck_config"), struct_keys(&grad));
        let bench = ConjbenchConfig {
            energy: EnergyFamily::Pairwise,
            k: 3,
            d: 4,
            regularizer: reg,
            instances: 1,
            solver: SolverConfig::default(),
            seed: 0,
            output_dir: "o".into(),
        };
        assert_eq!(schema_keys("conjbench_config"), struct_keys(&bench));
        let calib = CalibcheckConfig {
            energy: EnergyFamily::Bilinear,
            k: 1,
            regularizer: reg,
            distribution: DistributionSpec::Bernoulli(vec![0.3]),
            grid: Some(GridSpec { lo: -1.0, hi: 1.0, step: 0.5 }),
            samples: 1,
            scale: 1.0,
            smoothness: None,
            solver: SolverConfig::default(),
            seed: 0,
            output_dir: "o".into(),
        };
        assert_eq!(schema_keys("calibcheck_config"), struct_keys(&calib));
        assert_eq!(schema_keys("grid"), struct_keys(calib.grid.as_ref().unwrap()));
    }

    #[test]
    fn schema_accepts_the_serialized_defaults() {
        let mut run = serde_json::to_value(full_run_config()).unwrap();
        // optional sections are omitted rather than null
        let search = run["search"].take();
        run["search"] = serde_json::json!({ "seeds": search["seeds"], "holdout": search["holdout"] });
        assert!(schema_violations(&run, Document::Run).is_empty(), "{:?}", schema_violations(&run, Document::Run));
    }

    #[test]
    fn violations_name_the_offending_keys() {
        let doc = serde_json::json!({
            "dataset": { "synthetic": {} },
            "architecture": "unary",
            "regularizer": { "kind": "gini_binary", "gamma": -1.0 },
            "output_dir": "out",
            "colour": "blue"
        });
        let problems = schema_violations(&doc, Document::Run).join("\n");
        assert!(problems.contains("regularizer.gamma"), "{problems}");
        assert!(problems.contains("colour"), "{problems}");
    }

    #[test]
    fn indicator_takes_no_gamma() {
        let ok = serde_json::json!({ "energy": "pairwise", "regularizer": { "kind": "indicator" } });
        assert!(schema_violations(&ok, Document::Gradcheck).is_empty());
        let bad = serde_json::json!({ "energy": "pairwise", "regularizer": { "kind": "indicator", "gamma": 1.0 } });
        assert!(!schema_violations(&bad, Document::Gradcheck).is_empty());
        let missing = serde_json::json!({ "energy": "pairwise", "regularizer": { "kind": "gini_binary" } });
        assert!(!schema_violations(&missing, Document::Gradcheck).is_empty());
    }

    #[test]
    fn hash_ignores_key_order_and_whitespace() {
        let a: RunConfig = serde_json::from_str(
            r#"{"dataset":{"synthetic":{"n":50}},"architecture":"unary","regularizer":{"kind":"gini_binary","gamma":1},"output_dir":"o"}"#,
        )
        .unwrap();
        let b: RunConfig = serde_json::from_str(
            r#"{ "output_dir": "o", "regularizer": {"gamma": 1, "kind": "gini_binary"},
                 "architecture": "unary", "dataset": {"synthetic": {"n": 50}} }"#,
        )
        .unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        let c = RunConfig { seed: 1, ..a };
        assert_ne!(config_hash(&c).unwrap(), config_hash(&b).unwrap());
    }

    #[test]
    fn grid_points_include_both_ends() {
        let g = GridSpec { lo: -1.0, hi: 1.0, step: 0.5 };
        assert_eq!(g.points(), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
    }
}
