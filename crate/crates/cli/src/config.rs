//! Run configuration: a TOML document with `dataset`, `models`, `scenario`,
//! `pools`, `analysis` and `output` sections.
//!
//! Every optional key has a serde default, so the deserialized value is
//! already the fully resolved config that reports echo back.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use wargame_core::attacks::{AttackConfig, AttackerKind, AttackerPolicy};
use wargame_core::defense::{DefenderPolicy, ThreatModel};
use wargame_core::game::{ScenarioConfig, WinCondition, DEFAULT_MAX_ROUNDS, DEFAULT_NUM_TRIALS};
use wargame_core::network::{LayerSpec, ModelSpec};
use wargame_core::zoo::{TrainMode, TrainingConfig};

use crate::error::CliError;

/// Round cap for similarity analysis when `analysis.max_rounds` is omitted.
pub const DEFAULT_ANALYSIS_ROUNDS: usize = 10;
pub const DEFAULT_ANALYSIS_TRIALS: usize = 20;
pub const DEFAULT_EPS: f64 = 8.0 / 255.0;
pub const DEFAULT_ALPHA: f64 = 2.0 / 255.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetConfig,
    pub models: Vec<ModelConfig>,
    #[serde(default)]
    pub scenario: ScenarioSection,
    #[serde(default)]
    pub pools: Vec<PoolConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub analysis: Option<AnalysisConfig>,
    #[serde(default)]
    pub output: OutputConfig,
    /// Directory relative paths are resolved against.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Blobs,
    Idx,
}

/// `kind = "blobs"` uses the generator keys, `kind = "idx"` the file keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    pub kind: DatasetKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub samples_per_class: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub center_spread: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub images: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<PathBuf>,
    /// Keep only the first `limit` samples of an IDX file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<usize>,
    /// Share of samples used for training; the rest is the evaluation split.
    #[serde(default = "default_train_fraction")]
    pub train_fraction: f64,
    #[serde(default = "default_split_seed")]
    pub split_seed: u64,
}

impl DatasetConfig {
    /// Fills generator defaults and checks that the keys match `kind`.
    fn resolve(&mut self) -> Result<(), CliError> {
        let missing = |key: &str| CliError::Config(format!("dataset: kind {:?} needs `{key}`", self.kind));
        match self.kind {
            DatasetKind::Blobs => {
                for (key, present) in [
                    ("num_classes", self.num_classes.is_some()),
                    ("dim", self.dim.is_some()),
                    ("samples_per_class", self.samples_per_class.is_some()),
                    ("noise_std", self.noise_std.is_some()),
                ] {
                    if !present {
                        return Err(missing(key));
                    }
                }
                if self.images.is_some() || self.labels.is_some() || self.limit.is_some() {
                    return Err(CliError::Config("dataset: images/labels/limit apply to kind \"idx\" only".into()));
                }
                self.center_spread.get_or_insert(1.0);
                self.seed.get_or_insert(0);
            }
            DatasetKind::Idx => {
                if self.images.is_none() {
                    return Err(missing("images"));
                }
                if self.labels.is_none() {
                    return Err(missing("labels"));
                }
                if self.num_classes.is_some()
                    || self.dim.is_some()
                    || self.samples_per_class.is_some()
                    || self.center_spread.is_some()
                    || self.noise_std.is_some()
                    || self.seed.is_some()
                {
                    return Err(CliError::Config("dataset: generator keys apply to kind \"blobs\" only".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LayerConfig {
    Dense { in_dim: usize, out_dim: usize },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub name: String,
    /// Hidden widths of a dense/ReLU stack sized to the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hidden: Option<Vec<usize>>,
    /// Explicit layer list; overrides `hidden`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub layers: Option<Vec<LayerConfig>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub load: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub training: Option<TrainingSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModeName {
    Natural,
    Adversarial,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainingSection {
    pub mode: ModeName,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    #[serde(default = "default_eps")]
    pub adv_eps: f64,
    #[serde(default = "default_alpha")]
    pub adv_alpha: f64,
    #[serde(default = "default_steps")]
    pub adv_steps: usize,
    #[serde(default)]
    pub adv_random_start: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreatName {
    WhiteBox,
    SoftBlackBox,
    HardBlackBox,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WinName {
    ResponderMisclassifies,
    AllModelsMisclassify,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackerName {
    PgdWhitebox,
    NesSoftbox,
    RandomSignHardbox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackSection {
    #[serde(default = "default_attacker")]
    pub kind: AttackerName,
    #[serde(default = "default_eps")]
    pub eps: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    /// Step cap for offline evaluation (`train` reports); the game uses
    /// `max_rounds`.
    #[serde(default = "default_steps")]
    pub steps: usize,
    #[serde(default)]
    pub random_start: bool,
    #[serde(default = "default_sigma")]
    pub sigma: f64,
    #[serde(default = "default_nes_samples")]
    pub n_samples: usize,
}

impl Default for AttackSection {
    fn default() -> Self {
        Self {
            kind: default_attacker(),
            eps: DEFAULT_EPS,
            alpha: DEFAULT_ALPHA,
            steps: default_steps(),
            random_start: false,
            sigma: default_sigma(),
            n_samples: default_nes_samples(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    #[serde(default = "default_threat")]
    pub threat_model: ThreatName,
    #[serde(default = "default_max_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_num_trials")]
    pub num_trials: usize,
    #[serde(default = "default_win")]
    pub win_condition: WinName,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default)]
    pub strict_budget: bool,
    #[serde(default)]
    pub attack: AttackSection,
}

impl Default for ScenarioSection {
    fn default() -> Self {
        Self {
            threat_model: default_threat(),
            max_rounds: DEFAULT_MAX_ROUNDS,
            num_trials: DEFAULT_NUM_TRIALS,
            win_condition: default_win(),
            master_seed: 0,
            strict_budget: false,
            attack: AttackSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolConfig {
    pub name: String,
    pub models: Vec<String>,
    /// `"uniform_random"` or `"static"`; `static` answers from `static_index`.
    #[serde(default = "default_policy")]
    pub policy: PolicyName,
    #[serde(default)]
    pub static_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PolicyName {
    UniformRandom,
    Static,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalysisConfig {
    pub pairs: Vec<(String, String)>,
    #[serde(default = "default_analysis_rounds")]
    pub max_rounds: usize,
    #[serde(default = "default_analysis_trials")]
    pub num_trials: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormatName {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: PathBuf,
    #[serde(default = "default_formats")]
    pub formats: Vec<FormatName>,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            formats: default_formats(),
        }
    }
}

fn default_train_fraction() -> f64 {
    0.7
}
fn default_split_seed() -> u64 {
    0
}
fn default_eps() -> f64 {
    DEFAULT_EPS
}
fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}
fn default_steps() -> usize {
    10
}
fn default_sigma() -> f64 {
    0.001
}
fn default_nes_samples() -> usize {
    50
}
fn default_attacker() -> AttackerName {
    AttackerName::PgdWhitebox
}
fn default_threat() -> ThreatName {
    ThreatName::WhiteBox
}
fn default_max_rounds() -> usize {
    DEFAULT_MAX_ROUNDS
}
fn default_num_trials() -> usize {
    DEFAULT_NUM_TRIALS
}
fn default_win() -> WinName {
    WinName::ResponderMisclassifies
}
fn default_policy() -> PolicyName {
    PolicyName::UniformRandom
}
fn default_analysis_rounds() -> usize {
    DEFAULT_ANALYSIS_ROUNDS
}
fn default_analysis_trials() -> usize {
    DEFAULT_ANALYSIS_TRIALS
}
fn default_out_dir() -> PathBuf {
    PathBuf::from("out")
}
fn default_formats() -> Vec<FormatName> {
    vec![FormatName::Json, FormatName::Csv]
}

impl RunConfig {
    /// Parses `text`; `path` only labels diagnostics.
    pub fn parse(text: &str, path: &Path) -> Result<Self, CliError> {
        let mut cfg: RunConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        cfg.dataset.resolve()?;
        cfg.check()?;
        Ok(cfg)
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// its directory.
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = Self::parse(&text, path)?;
        cfg.base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(cfg)
    }

    pub fn resolve_path(&self, p: &Path) -> PathBuf {
        if p.is_relative() {
            self.base_dir.join(p)
        } else {
            p.to_path_buf()
        }
    }

    /// Name resolution and value checks that need no data.
    fn check(&self) -> Result<(), CliError> {
        let mut names = BTreeSet::new();
        if self.models.is_empty() {
            return Err(CliError::Config("models: at least one model is required".into()));
        }
        for m in &self.models {
            if !names.insert(m.name.as_str()) {
                return Err(CliError::Config(format!("models: duplicate name {:?}", m.name)));
            }
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(CliError::Config(format!("models: invalid name {:?}", m.name)));
            }
            if m.load.is_none() && m.training.is_none() {
                return Err(CliError::Config(format!(
                    "models.{}: needs either `load` or a `training` table",
                    m.name
                )));
            }
            if m.load.is_none() && m.hidden.is_none() && m.layers.is_none() {
                return Err(CliError::Config(format!(
                    "models.{}: needs `hidden` or `layers` to be trained",
                    m.name
                )));
            }
            if let Some(t) = &m.training {
                t.to_core()
                    .validate()
                    .map_err(|e| CliError::Config(format!("models.{}.training: {e}", m.name)))?;
            }
        }
        let mut pool_names = BTreeSet::new();
        for p in &self.pools {
            if !pool_names.insert(p.name.as_str()) {
                return Err(CliError::Config(format!("pools: duplicate name {:?}", p.name)));
            }
            if p.models.is_empty() {
                return Err(CliError::Config(format!("pools.{}: no models listed", p.name)));
            }
            for m in &p.models {
                if !names.contains(m.as_str()) {
                    return Err(CliError::Config(format!("pools.{}: undefined model {m:?}", p.name)));
                }
            }
            if p.policy == PolicyName::Static && p.static_index >= p.models.len() {
                return Err(CliError::Config(format!(
                    "pools.{}: static_index {} out of range",
                    p.name, p.static_index
                )));
            }
        }
        if let Some(a) = &self.analysis {
            for (x, y) in &a.pairs {
                for m in [x, y] {
                    if !names.contains(m.as_str()) {
                        return Err(CliError::Config(format!("analysis.pairs: undefined model {m:?}")));
                    }
                }
            }
            if a.max_rounds == 0 || a.num_trials == 0 {
                return Err(CliError::Config("analysis: max_rounds and num_trials must be positive".into()));
            }
        }
        if !(self.dataset.train_fraction > 0.0 && self.dataset.train_fraction < 1.0) {
            return Err(CliError::Config("dataset.train_fraction must lie in (0, 1)".into()));
        }
        self.scenario_config()
            .validate()
            .map_err(|e| CliError::Config(format!("scenario: {e}")))?;
        Ok(())
    }

    pub fn model(&self, name: &str) -> Option<&ModelConfig> {
        self.models.iter().find(|m| m.name == name)
    }

    pub fn attack_config(&self) -> AttackConfig {
        let a = &self.scenario.attack;
        AttackConfig {
            eps: a.eps,
            alpha: a.alpha,
            max_steps: a.steps,
            random_start: a.random_start,
        }
    }

    pub fn scenario_config(&self) -> ScenarioConfig {
        let s = &self.scenario;
        let kind = match s.attack.kind {
            AttackerName::PgdWhitebox => AttackerKind::PgdWhiteBox,
            AttackerName::NesSoftbox => AttackerKind::NesSoftBox {
                sigma: s.attack.sigma,
                n_samples: s.attack.n_samples,
            },
            AttackerName::RandomSignHardbox => AttackerKind::RandomSignHardBox,
        };
        ScenarioConfig {
            threat_model: match s.threat_model {
                ThreatName::WhiteBox => ThreatModel::WhiteBox,
                ThreatName::SoftBlackBox => ThreatModel::SoftBlackBox,
                ThreatName::HardBlackBox => ThreatModel::HardBlackBox,
            },
            max_rounds: s.max_rounds,
            num_trials: s.num_trials,
            attacker: AttackerPolicy {
                kind,
                attack: self.attack_config(),
            },
            defender: DefenderPolicy::UniformRandom,
            win_condition: match s.win_condition {
                WinName::ResponderMisclassifies => WinCondition::ResponderMisclassifies,
                WinName::AllModelsMisclassify => WinCondition::AllModelsMisclassify,
            },
            master_seed: s.master_seed,
            strict_budget: s.strict_budget,
        }
    }
}

impl TrainingSection {
    pub fn to_core(&self) -> TrainingConfig {
        TrainingConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            mode: match self.mode {
                ModeName::Natural => TrainMode::Natural,
                ModeName::Adversarial => TrainMode::Adversarial,
            },
            adv_eps: self.adv_eps,
            adv_alpha: self.adv_alpha,
            adv_steps: self.adv_steps,
            adv_random_start: self.adv_random_start,
        }
    }
}

impl ModelConfig {
    pub fn spec(&self, input_dim: usize, num_classes: usize) -> ModelSpec {
        match (&self.layers, &self.hidden) {
            (Some(layers), _) => ModelSpec {
                name: self.name.clone(),
                layers: layers
                    .iter()
                    .map(|l| match *l {
                        LayerConfig::Dense { in_dim, out_dim } => LayerSpec::Dense { in_dim, out_dim },
                        LayerConfig::Relu => LayerSpec::Relu,
                    })
                    .collect(),
                num_classes,
            },
            (None, hidden) => ModelSpec::mlp(
                self.name.clone(),
                input_dim,
                hidden.as_deref().unwrap_or(&[]),
                num_classes,
            ),
        }
    }
}

impl PoolConfig {
    pub fn policy(&self) -> DefenderPolicy {
        match self.policy {
            PolicyName::UniformRandom => DefenderPolicy::UniformRandom,
            PolicyName::Static => DefenderPolicy::Static(self.static_index),
        }
    }
}
