//! Experiment configuration: profiles, TOML overrides and validation.
//!
//! A config file only lists the keys it changes; they are merged onto the
//! defaults of the selected profile, then the merged tree is validated.
//! Unknown keys anywhere in the tree are rejected.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::MetricConfig;
use crate::model::{Architecture, BackboneVariant, ModelConfig};
use crate::msrcr::MsrcrConfig;
use crate::train::Scheme;

/// Environment variable that forces deterministic mode.
pub const DETERMINISTIC_ENV: &str = "APGNET_DETERMINISTIC";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Profile {
    /// CPU-sized defaults: 128×128 inputs, tiny backbone.
    Desk,
    /// Full-scale training recipe.
    Paper,
}

impl FromStr for Profile {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            _ => Err(Error::Config(format!("unknown profile `{s}` (expected desk or paper)"))),
        }
    }
}

/// Rungs of the ablation ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AblationId {
    M1,
    M2,
    M3,
    M4,
    M5,
    #[serde(rename = "full")]
    Full,
}

impl AblationId {
    pub const LADDER: [AblationId; 5] = [Self::M1, Self::M2, Self::M3, Self::M4, Self::M5];

    pub fn architecture(self) -> Architecture {
        match self {
            Self::M1 => Architecture::Plain,
            Self::M2 => Architecture::Progressive,
            _ => Architecture::PriorGuided,
        }
    }

    pub fn scheme(self) -> Scheme {
        match self {
            Self::M1 | Self::M2 | Self::M3 => Scheme::Single,
            Self::M4 => Scheme::MixedAugment,
            Self::M5 | Self::Full => Scheme::Siamese,
        }
    }

    pub fn description(self) -> &'static str {
        match self {
            Self::M1 => "backbone + ERF, plain decoder",
            Self::M2 => "+ progressive decoder",
            Self::M3 => "+ prior guidance",
            Self::M4 => "+ enhancement as augmentation",
            Self::M5 => "+ Siamese alignment",
            Self::Full => "full model",
        }
    }
}

impl fmt::Display for AblationId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::M1 => "M1",
            Self::M2 => "M2",
            Self::M3 => "M3",
            Self::M4 => "M4",
            Self::M5 => "M5",
            Self::Full => "full",
        })
    }
}

impl FromStr for AblationId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "M1" => Ok(Self::M1),
            "M2" => Ok(Self::M2),
            "M3" => Ok(Self::M3),
            "M4" => Ok(Self::M4),
            "M5" => Ok(Self::M5),
            "FULL" => Ok(Self::Full),
            _ => Err(Error::Config(format!("unknown ablation id `{s}` (expected M1..M5 or full)"))),
        }
    }
}

/// Parses `M1..M5`, `M1,M3,M5` or a mix of both.
pub fn parse_ladder(spec: &str) -> Result<Vec<AblationId>> {
    let mut out = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|p| !p.is_empty()) {
        if let Some((a, b)) = part.split_once("..") {
            let (a, b) = (a.parse::<AblationId>()?, b.parse::<AblationId>()?);
            if a == AblationId::Full || b == AblationId::Full || a > b {
                return Err(Error::Config(format!("invalid ablation range `{part}`")));
            }
            out.extend(AblationId::LADDER.iter().copied().filter(|id| (a..=b).contains(id)));
        } else {
            out.push(part.parse()?);
        }
    }
    if out.is_empty() {
        return Err(Error::Config("empty ablation ladder".into()));
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub root: Option<PathBuf>,
    /// Square input side; a multiple of 32.
    pub size: usize,
    /// Directory for cached enhanced images.
    pub cache_dir: Option<PathBuf>,
    pub image_dir: String,
    pub mask_dir: String,
    /// Datasets up to this many images are held in memory during training.
    pub preload_max: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            root: None,
            size: 128,
            cache_dir: None,
            image_dir: "Image".into(),
            mask_dir: "GT".into(),
            preload_max: 256,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many optimizer steps, whatever the epoch count.
    pub max_steps: Option<usize>,
    pub align_on_m1: bool,
    pub shuffle: bool,
    pub deterministic: bool,
    /// Score the training set every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Write an intermediate checkpoint every this many epochs; 0 writes
    /// only the final one.
    pub checkpoint_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            weight_decay: 0.0,
            batch_size: 8,
            epochs: 200,
            max_steps: None,
            align_on_m1: false,
            shuffle: true,
            deterministic: false,
            eval_every: 0,
            checkpoint_every: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub profile: Profile,
    pub ablation_id: AblationId,
    pub seed: u64,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub msrcr: MsrcrConfig,
    pub metric: MetricConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::profile_defaults(Profile::Desk)
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

impl ExperimentConfig {
    pub fn profile_defaults(profile: Profile) -> Self {
        let mut c = Self {
            profile,
            ablation_id: AblationId::Full,
            seed: 0,
            data: DataConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            msrcr: MsrcrConfig::default(),
            metric: MetricConfig::default(),
        };
        match profile {
            Profile::Desk => {
                c.model.erf.channels = 32;
                c.train.eval_every = 50;
            }
            Profile::Paper => {
                c.data.size = 352;
                c.model.backbone.variant = BackboneVariant::PretrainedPvt;
                c.model.backbone.channels = [64, 128, 320, 512];
                c.model.erf.channels = 64;
                c.train.lr = 8e-5;
                c.train.weight_decay = 0.1;
                c.train.batch_size = 16;
                c.train.epochs = 100;
                c.train.eval_every = 10;
                c.train.checkpoint_every = 10;
            }
        }
        c
    }

    /// Merges TOML `text` onto the selected profile. `profile` overrides a
    /// `profile` key in the text; without either the desk profile is used.
    pub fn from_toml_str(text: &str, profile: Option<Profile>) -> Result<Self> {
        let over: toml::Value = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let from_file = over
            .get("profile")
            .and_then(toml::Value::as_str)
            .map(str::parse)
            .transpose()?;
        let profile = profile.or(from_file).unwrap_or(Profile::Desk);
        let mut tree = toml::Value::try_from(Self::profile_defaults(profile))
            .map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut tree, over);
        if let toml::Value::Table(t) = &mut tree {
            t.insert("profile".into(), toml::Value::try_from(profile).expect("profile serializes"));
        }
        let config: Self = tree.try_into().map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: Option<&Path>, profile: Option<Profile>) -> Result<Self> {
        let text = match path {
            Some(p) => std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
            None => String::new(),
        };
        Self::from_toml_str(&text, profile)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.msrcr
            .validate()
            .map_err(|e| Error::Config(format!("msrcr: {e}")))?;
        self.metric
            .validate()
            .map_err(|e| Error::Config(format!("metric: {e}")))?;
        let d = &self.data;
        if d.size == 0 || d.size % crate::model::backbone::MAX_STRIDE != 0 {
            return Err(Error::Config(format!("data.size {} must be a positive multiple of 32", d.size)));
        }
        let t = &self.train;
        if !(t.lr > 0.0 && t.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr {} must be positive", t.lr)));
        }
        if !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return Err(Error::Config("train.weight_decay must be non-negative".into()));
        }
        if t.batch_size == 0 || t.epochs == 0 {
            return Err(Error::Config("train.batch_size and train.epochs must be positive".into()));
        }
        Ok(())
    }

    /// Deterministic mode from the config or the environment.
    pub fn deterministic(&self) -> bool {
        self.train.deterministic || std::env::var(DETERMINISTIC_ENV).is_ok_and(|v| v == "1")
    }
}
