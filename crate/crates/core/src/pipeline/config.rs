use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::intervene::LAMBDA_GRID;
use crate::model::PositionScope;
use crate::synth::{SplitSizes, TypeMix};
use crate::train::{Plausibility, TrainConfig};

/// Environment variable naming the config file used when none is given.
pub const CONFIG_ENV: &str = "CONFLICT_HEADS_CONFIG";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub seed: u64,
    pub n: usize,
    pub mix: TypeMix,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { seed: 7, n: 20_000, mix: TypeMix::OBJECT_ONLY }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub seed: u64,
    pub proto: usize,
    pub train_probe: usize,
    pub validation: usize,
    pub test: usize,
    /// Explicit prototype ids replacing the drawn prototype set.
    pub proto_ids: Option<Vec<u64>>,
}

impl Default for SplitConfig {
    fn default() -> Self {
        let s = SplitSizes::default();
        Self {
            seed: 11,
            proto: s.proto,
            train_probe: s.train_probe,
            validation: s.validation,
            test: s.test,
            proto_ids: None,
        }
    }
}

impl SplitConfig {
    pub fn sizes(&self) -> SplitSizes {
        SplitSizes { proto: self.proto, train_probe: self.train_probe, validation: self.validation, test: self.test }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// Seed of the initial weights.
    pub seed: u64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { seed: 3 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdPolicy {
    /// F1-maximizing threshold on the validation split.
    MaxF1,
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisConfig {
    pub scope: PositionScope,
    pub k_plus: usize,
    pub k_minus: usize,
    pub random_seeds: Vec<u64>,
    pub lambda_grid: Vec<f64>,
    pub threshold: ThresholdPolicy,
    pub asymmetry_top_n: usize,
    pub overlap_k: usize,
    pub overlap_seeds: Vec<u64>,
    pub sweep_k_plus: Vec<usize>,
    pub sweep_k_minus: Vec<usize>,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            scope: PositionScope::LastToken,
            k_plus: 3,
            k_minus: 3,
            random_seeds: (0..5).collect(),
            lambda_grid: LAMBDA_GRID.to_vec(),
            threshold: ThresholdPolicy::MaxF1,
            asymmetry_top_n: 2,
            overlap_k: 10,
            overlap_seeds: vec![1, 2, 3],
            sweep_k_plus: vec![0, 1, 2, 3, 4, 6, 8],
            sweep_k_minus: vec![1, 2, 3, 16],
        }
    }
}

/// Artifact locations; relative paths resolve against `out_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub out_dir: PathBuf,
    pub dataset: PathBuf,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
    pub importance: PathBuf,
    pub groups: PathBuf,
    pub probe: PathBuf,
    pub results: PathBuf,
    pub reports: PathBuf,
}

impl Default for PathsConfig {
    fn default() -> Self {
        Self {
            out_dir: "runs/reference".into(),
            dataset: "dataset.jsonl".into(),
            checkpoint: "model.json".into(),
            curve: "train_curve.csv".into(),
            importance: "importance.csv".into(),
            groups: "groups.json".into(),
            probe: "probe.json".into(),
            results: "results".into(),
            reports: "report".into(),
        }
    }
}

impl PathsConfig {
    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.out_dir.join(p)
        }
    }

    pub fn result(&self, stage: &str) -> PathBuf {
        self.resolve(&self.results).join(format!("{stage}.json"))
    }
}

/// Everything one end-to-end run depends on.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Worker threads; `None` uses every available core.
    pub workers: Option<usize>,
    pub data: DataConfig,
    pub split: SplitConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
    pub analysis: AnalysisConfig,
    pub paths: PathsConfig,
}

impl Default for RunConfig {
    /// The reference configuration.
    fn default() -> Self {
        Self {
            workers: None,
            data: DataConfig::default(),
            split: SplitConfig::default(),
            model: ModelSection::default(),
            train: reference_train_config(),
            analysis: AnalysisConfig::default(),
            paths: PathsConfig::default(),
        }
    }
}

/// Two-phase schedule of the reference model: a warm-up in which every
/// conflict item follows its premise, then the main phase at `bias_mix` 0.5
/// where cross-category object premises are never followed.
pub fn reference_train_config() -> TrainConfig {
    TrainConfig {
        steps: 1200,
        batch_size: 32,
        learning_rate: 0.3,
        bias_mix: 0.5,
        seed: 1,
        head_dropout: 0.2,
        eval_every: 200,
        warmup_steps: 800,
        warmup_bias_mix: 1.0,
        warmup_head_dropout: 0.25,
        plausibility: Plausibility::Category,
        implausible_damp: 0.0,
        plausible_boost: 2.0,
        ..TrainConfig::default()
    }
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

#[derive(Serialize)]
struct Hashed<'a> {
    data: &'a DataConfig,
    split: &'a SplitConfig,
    model: &'a ModelSection,
    train: &'a TrainConfig,
    analysis: &'a AnalysisConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Parses a TOML config; keys it leaves out keep their reference values.
    pub fn from_toml(text: &str) -> Result<Self> {
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let mut root = toml::Value::try_from(Self::default()).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut root, toml::Value::Table(table));
        root.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Hash of every setting that affects results (paths and worker count
    /// excluded), as 16 hex digits of SHA-256 over the JSON encoding.
    pub fn hash(&self) -> String {
        let view = Hashed {
            data: &self.data,
            split: &self.split,
            model: &self.model,
            train: &self.train,
            analysis: &self.analysis,
        };
        let digest = Sha256::digest(serde_json::to_vec(&view).expect("config serializes"));
        hex::encode(&digest[..8])
    }

    /// Applies a `section.key=value` override; the value is read as a TOML
    /// value, falling back to a bare string.
    pub fn set(&mut self, assignment: &str) -> Result<()> {
        let (key, raw) = assignment
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("override `{assignment}` is not of the form key=value")))?;
        let value = match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
            Ok(mut t) => t.remove("v").expect("parsed key present"),
            Err(_) => toml::Value::String(raw.trim().to_string()),
        };
        let mut root = toml::Value::try_from(&*self).map_err(|e| Error::Config(e.to_string()))?;
        let mut node = &mut root;
        let parts: Vec<&str> = key.trim().split('.').collect();
        for (i, part) in parts.iter().enumerate() {
            let table = node.as_table_mut().ok_or_else(|| Error::Config(format!("`{key}` does not name a setting")))?;
            if i + 1 == parts.len() {
                table.insert(part.to_string(), value);
                break;
            }
            node = table.entry(part.to_string()).or_insert_with(|| toml::Value::Table(Default::default()));
        }
        *self = root.try_into().map_err(|e: toml::de::Error| Error::Config(format!("override `{assignment}`: {e}")))?;
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate().map_err(|e| Error::Config(e.to_string()))?;
        self.data.mix.validate().map_err(|e| Error::Config(e.to_string()))?;
        let sizes = self.split.sizes();
        if sizes.total() > self.data.n {
            return Err(Error::Config(format!("splits need {} samples but data.n is {}", sizes.total(), self.data.n)));
        }
        if sizes.proto < 2 || sizes.train_probe == 0 || sizes.validation == 0 || sizes.test == 0 {
            return Err(Error::Config("every split needs samples (and proto at least two)".into()));
        }
        let a = &self.analysis;
        if a.lambda_grid.is_empty() || a.lambda_grid.iter().any(|l| !(*l >= 0.0 && l.is_finite())) {
            return Err(Error::Config("lambda_grid must be nonempty and hold finite values >= 0".into()));
        }
        if a.random_seeds.is_empty() {
            return Err(Error::Config("random_seeds must be nonempty".into()));
        }
        if a.sweep_k_plus.is_empty() || a.sweep_k_minus.is_empty() {
            return Err(Error::Config("sweep grids must be nonempty".into()));
        }
        if a.overlap_k == 0 || a.asymmetry_top_n == 0 {
            return Err(Error::Config("overlap_k and asymmetry_top_n must be positive".into()));
        }
        if let ThresholdPolicy::Fixed(t) = a.threshold {
            if !(0.0..=1.0).contains(&t) {
                return Err(Error::Config(format!("fixed threshold {t} is not in [0, 1]")));
            }
        }
        if self.workers == Some(0) {
            return Err(Error::Config("workers must be positive".into()));
        }
        Ok(())
    }

    /// Seeds recorded in the report.
    pub fn seeds(&self) -> Vec<(&'static str, u64)> {
        vec![
            ("data", self.data.seed),
            ("split", self.split.seed),
            ("init", self.model.seed),
            ("train", self.train.seed),
        ]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn toml_round_trip() {
        let cfg = RunConfig::default();
        let back = RunConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
    }

    #[test]
    fn partial_file_uses_defaults() {
        let cfg = RunConfig::from_toml("[train]\nsteps = 10\n").unwrap();
        assert_eq!(cfg.train.steps, 10);
        assert_eq!(cfg.train.warmup_steps, 800);
        assert_eq!(cfg.analysis, AnalysisConfig::default());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("[train]\nstepz = 10\n").is_err());
    }

    #[test]
    fn overrides() {
        let mut cfg = RunConfig::default();
        cfg.set("train.steps=12").unwrap();
        cfg.set("analysis.scope=all-positions").unwrap();
        cfg.set("paths.out_dir=/tmp/x").unwrap();
        cfg.set("split.proto_ids=[1, 2]").unwrap();
        cfg.set("workers=2").unwrap();
        assert_eq!(cfg.train.steps, 12);
        assert_eq!(cfg.analysis.scope, PositionScope::AllPositions);
        assert_eq!(cfg.paths.out_dir, PathBuf::from("/tmp/x"));
        assert_eq!(cfg.split.proto_ids, Some(vec![1, 2]));
        assert_eq!(cfg.workers, Some(2));
        assert!(cfg.set("train.steps=-1").is_err());
        assert!(cfg.set("nonsense").is_err());
    }

    #[test]
    fn hash_ignores_paths_and_workers() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out_dir = "elsewhere".into();
        b.workers = Some(3);
        assert_eq!(a.hash(), b.hash());
        b.analysis.k_plus += 1;
        assert_ne!(a.hash(), b.hash());
    }
}
