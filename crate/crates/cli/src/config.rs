//! Run configuration (TOML).
//!
//! ```toml
//! seed = 125
//! out_dir = "out"
//!
//! [data]
//! schema = "schema.toml"
//! root = "../data"              # group files are relative to this
//!
//! [[data.groups]]
//! name = "anomaly-free"
//! role = "train_valid"          # or "test"
//! files = ["anomaly-free/anomaly-free.csv"]
//! normal_only = false           # keep only rows labeled normal
//! labeled = true                # false when the files lack the label column
//! train_fraction = 0.8          # chronological split within each file
//!
//! [window]
//! length = 64
//! stride = 1
//! label_rule = "any"            # or { fraction = 0.5 }
//!
//! [model]
//! architecture = "skab"         # or "industrial"
//!
//! [train]                       # see aecf::train::TrainConfig
//! [detector]
//! k = 8.0
//! [selector]                    # m, percentile, duration_fraction
//! [explainer]                   # lambda, eta, max_iters, early_stop
//! [evaluation]
//! epsilon = 0.005
//! [synth]                       # see aecf::synth::SynthConfig
//! ```
//!
//! Relative paths are resolved against the directory holding the config
//! file; they are written to reports as given.

use std::path::{Path, PathBuf};

use aecf::data::{LabelRule, Schema};
use aecf::explainer::{ExplainConfig, SelectorConfig};
use aecf::model::Architecture;
use aecf::synth::SynthConfig;
use aecf::train::TrainConfig;
use anyhow::{bail, ensure, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Seeds model initialisation and batch shuffling; overrides `train.seed`.
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_out")]
    pub out_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataConfig>,
    #[serde(default)]
    pub window: WindowConfig,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub detector: DetectorConfig,
    #[serde(default)]
    pub selector: SelectorConfig,
    #[serde(default)]
    pub explainer: ExplainConfig,
    #[serde(default)]
    pub evaluation: EvaluationConfig,
    #[serde(default)]
    pub synth: SynthConfig,
    /// Directory of the config file; set on load.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_out() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub schema: PathBuf,
    /// Directory the group files are relative to; itself relative to the
    /// config file. Defaults to the config directory.
    #[serde(default)]
    pub root: Option<PathBuf>,
    pub groups: Vec<GroupConfig>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    TrainValid,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroupConfig {
    pub name: String,
    pub role: Role,
    pub files: Vec<PathBuf>,
    #[serde(default)]
    pub normal_only: bool,
    /// Whether the files carry the schema's label column.
    #[serde(default = "default_labeled")]
    pub labeled: bool,
    #[serde(default = "default_fraction")]
    pub train_fraction: f64,
}

fn default_labeled() -> bool {
    true
}

fn default_fraction() -> f64 {
    0.8
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WindowConfig {
    pub length: usize,
    pub stride: usize,
    /// Stride for the test split; defaults to `stride`.
    #[serde(default)]
    pub test_stride: Option<usize>,
    pub label_rule: LabelRule,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            length: 64,
            stride: 1,
            test_stride: None,
            label_rule: LabelRule::Any,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub architecture: String,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            architecture: "skab".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectorConfig {
    /// Defaults to 8 for "skab" and 10 for "industrial".
    #[serde(default)]
    pub k: Option<f64>,
}

impl Default for DetectorConfig {
    fn default() -> Self {
        DetectorConfig { k: None }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvaluationConfig {
    pub epsilon: f64,
}

impl Default for EvaluationConfig {
    fn default() -> Self {
        EvaluationConfig {
            epsilon: aecf::evalx::DEFAULT_EPSILON,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    /// Defaults for every section, relative to the working directory.
    pub fn empty() -> Self {
        toml::from_str("").expect("all sections have defaults")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    /// Path of a data file listed in a group.
    pub fn data_file(&self, f: &Path) -> PathBuf {
        match self.data.as_ref().and_then(|d| d.root.as_ref()) {
            Some(root) => self.resolve(&self.resolve(root).join(f)),
            None => self.resolve(f),
        }
    }

    /// Output root; `out_dir` is resolved against the config directory.
    pub fn out(&self) -> PathBuf {
        self.resolve(&self.out_dir)
    }

    pub fn effective_seed(&self) -> u64 {
        self.seed.unwrap_or_else(|| self.train_config_base().seed)
    }

    fn train_config_base(&self) -> TrainConfig {
        self.train.clone().unwrap_or_else(|| match self.model.architecture.as_str() {
            "industrial" => TrainConfig::industrial(),
            _ => TrainConfig::skab(),
        })
    }

    /// Training settings with the run seed applied.
    pub fn train_config(&self) -> TrainConfig {
        let mut t = self.train_config_base();
        t.seed = self.effective_seed();
        t
    }

    pub fn detector_k(&self) -> f64 {
        self.detector.k.unwrap_or(match self.model.architecture.as_str() {
            "industrial" => 10.0,
            _ => 8.0,
        })
    }

    pub fn architecture(&self, features: usize) -> Result<Architecture> {
        Ok(Architecture::from_name(&self.model.architecture, features, self.window.length)?)
    }

    pub fn data(&self) -> Result<&DataConfig> {
        self.data
            .as_ref()
            .context("config has no [data] section (schema and file groups)")
    }

    pub fn schema(&self) -> Result<Schema> {
        let path = self.resolve(&self.data()?.schema);
        Ok(Schema::load(&path).with_context(|| format!("loading schema {}", path.display()))?)
    }

    /// Settings shared by every stage.
    pub fn validate(&self) -> Result<()> {
        let w = &self.window;
        ensure!(w.length >= 1, "window.length must be >= 1");
        ensure!(w.stride >= 1, "window.stride must be >= 1");
        ensure!(w.test_stride.map_or(true, |s| s >= 1), "window.test_stride must be >= 1");
        if let LabelRule::Fraction(f) = w.label_rule {
            ensure!(f > 0.0 && f <= 1.0, "window.label_rule fraction must lie in (0, 1], got {f}");
        }
        if !["skab", "industrial"].contains(&self.model.architecture.as_str()) {
            bail!(
                "model.architecture must be \"skab\" or \"industrial\", got {:?}",
                self.model.architecture
            );
        }
        self.train_config().validate()?;
        let k = self.detector_k();
        ensure!(k.is_finite() && k >= 0.0, "detector.k must be a finite non-negative number");
        self.selector.validate()?;
        self.explainer.validate()?;
        ensure!(
            self.evaluation.epsilon >= 0.0 && self.evaluation.epsilon.is_finite(),
            "evaluation.epsilon must be >= 0"
        );
        Ok(())
    }

    /// [`RunConfig::validate`] plus the data section: the schema and every
    /// listed file must exist, fractions must lie in (0, 1).
    pub fn validate_data(&self) -> Result<()> {
        self.validate()?;
        let data = self.data()?;
        ensure!(!data.groups.is_empty(), "data.groups is empty");
        let schema = self.resolve(&data.schema);
        ensure!(schema.is_file(), "schema file {} not found", schema.display());
        ensure!(
            data.groups.iter().any(|g| g.role == Role::TrainValid),
            "no data group has role \"train_valid\""
        );
        for g in &data.groups {
            ensure!(!g.files.is_empty(), "group {:?} lists no files", g.name);
            ensure!(
                g.labeled || !g.normal_only,
                "group {:?}: normal_only needs labeled files",
                g.name
            );
            ensure!(
                g.train_fraction > 0.0 && g.train_fraction < 1.0,
                "group {:?}: train_fraction must lie in (0, 1), got {}",
                g.name,
                g.train_fraction
            );
            for f in &g.files {
                let p = self.data_file(f);
                ensure!(p.is_file(), "group {:?}: file {} not found", g.name, p.display());
            }
        }
        Ok(())
    }
}
