//! Service configuration: one TOML file plus `XFR_` environment overrides.
//!
//! Precedence is environment, then file, then built-in defaults. A nested
//! key maps to an upper-cased variable with dots replaced by underscores,
//! so `grid.window` is overridden by `XFR_GRID_WINDOW`.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, BackendOptions, BackendRegistry, Backends};
use crate::calibration::{CalibrationError, PicModel};
use crate::pipeline::Pipeline;
use crate::qa::{QaEngine, QaError, DEFAULT_K, DEFAULT_TAU};
use crate::regions::TemplateRegionLocator;
use crate::saliency::{OcclusionGrid, SaliencyError};

pub const ENV_PREFIX: &str = "XFR_";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("parsing config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("loading PIC model: {0}")]
    Pic(#[from] CalibrationError),
    #[error(transparent)]
    Grid(#[from] SaliencyError),
    #[error(transparent)]
    Qa(#[from] QaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub window: u32,
    pub stride: u32,
}

impl Default for GridConfig {
    fn default() -> Self {
        let g = OcclusionGrid::default();
        Self {
            window: g.window(),
            stride: g.stride(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendConfig {
    pub detector: String,
    pub embedder: String,
    pub qa: String,
    pub sentence_embedder: String,
    pub embedding_dim: usize,
}

impl Default for BackendConfig {
    fn default() -> Self {
        Self {
            detector: crate::backend::FractionalTemplateDetector::NAME.into(),
            embedder: crate::backend::DownsampleEmbedder::NAME.into(),
            qa: crate::qa::KeywordOverlapQa::NAME.into(),
            sentence_embedder: crate::qa::BagOfWordsEmbedder::NAME.into(),
            embedding_dim: BackendOptions::default().embedding_dim,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub threshold: f64,
    /// Fitted PIC model JSON. Without one every decision gets confidence 0.5.
    pub pic_model: Option<PathBuf>,
    pub tau: f64,
    pub k: usize,
    pub greedy_steps: usize,
    pub ttl_s: u64,
    pub listen: String,
    pub grid: GridConfig,
    pub backends: BackendConfig,
}

pub const DEFAULT_THRESHOLD: f64 = 0.995;

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            pic_model: None,
            tau: DEFAULT_TAU,
            k: DEFAULT_K,
            greedy_steps: crate::saliency::DEFAULT_GREEDY_STEPS,
            ttl_s: 3600,
            listen: "127.0.0.1:8080".into(),
            grid: GridConfig::default(),
            backends: BackendConfig::default(),
        }
    }
}

/// Dotted key paths of every setting, in file order.
pub const KEYS: &[&str] = &[
    "threshold",
    "pic_model",
    "tau",
    "k",
    "greedy_steps",
    "ttl_s",
    "listen",
    "grid.window",
    "grid.stride",
    "backends.detector",
    "backends.embedder",
    "backends.qa",
    "backends.sentence_embedder",
    "backends.embedding_dim",
];

const STRING_KEYS: &[&str] = &[
    "pic_model",
    "listen",
    "backends.detector",
    "backends.embedder",
    "backends.qa",
    "backends.sentence_embedder",
];

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.replace('.', "_").to_uppercase())
}

impl ServiceConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        Self::layered(Some(text), |_| None)
    }

    /// Reads `path` if given and applies overrides from the process
    /// environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ConfigError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let text = match path {
            Some(p) => Some(std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                path: p.to_path_buf(),
                source,
            })?),
            None => None,
        };
        let mut cfg = Self::layered(text.as_deref(), env)?;
        // a relative model path is relative to the config file
        if let (Some(p), Some(model)) = (path, cfg.pic_model.as_mut()) {
            if model.is_relative() {
                if let Some(dir) = p.parent() {
                    *model = dir.join(&*model);
                }
            }
        }
        Ok(cfg)
    }

    fn layered(file: Option<&str>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let mut table: toml::Table = match file {
            Some(t) => toml::from_str(t).map_err(|e| ConfigError::Parse(e.to_string()))?,
            None => toml::Table::new(),
        };
        for key in KEYS {
            let Some(raw) = env(&env_var_name(key)) else { continue };
            let value = if STRING_KEYS.contains(key) {
                toml::Value::String(raw)
            } else {
                parse_scalar(&raw).ok_or_else(|| {
                    ConfigError::Parse(format!("{}={raw:?} is not a number or boolean", env_var_name(key)))
                })?
            };
            set_path(&mut table, key, value);
        }
        let cfg: Self = toml::Value::Table(table).try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(-1.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [-1, 1]", self.threshold));
        }
        if !(self.tau > 0.0 && self.tau < 1.0) {
            return bad(format!("tau {} outside (0, 1)", self.tau));
        }
        if self.k == 0 {
            return bad("k must be at least 1".into());
        }
        if self.ttl_s == 0 {
            return bad("ttl_s must be positive".into());
        }
        if self.backends.embedding_dim == 0 {
            return bad("backends.embedding_dim must be positive".into());
        }
        let grid = self.occlusion_grid()?;
        let cells = grid.cells().len();
        if self.greedy_steps == 0 || self.greedy_steps > cells {
            return bad(format!("greedy_steps must be in 1..={cells}, got {}", self.greedy_steps));
        }
        Ok(())
    }

    pub fn occlusion_grid(&self) -> Result<OcclusionGrid, ConfigError> {
        Ok(OcclusionGrid::new(self.grid.window, self.grid.stride)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    pub fn load_pic(&self) -> Result<PicModel, ConfigError> {
        match &self.pic_model {
            None => Ok(PicModel::neutral()),
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ConfigError::Io {
                    path: p.clone(),
                    source,
                })?;
                Ok(PicModel::from_json(&text)?)
            }
        }
    }

    /// Resolves every backend name and loads the PIC model.
    pub fn build_pipeline(&self, registry: &BackendRegistry) -> Result<Pipeline, ConfigError> {
        self.validate()?;
        let opts = BackendOptions {
            embedding_dim: self.backends.embedding_dim,
        };
        let backends = Backends::new(
            registry.detector(&self.backends.detector, &opts)?,
            registry.embedder(&self.backends.embedder, &opts)?,
        );
        let qa = QaEngine::new(
            registry.qa(&self.backends.qa, &opts)?,
            registry.sentence_embedder(&self.backends.sentence_embedder, &opts)?,
        )
        .with_params(self.tau, self.k)?;
        Ok(Pipeline {
            backends: Arc::new(backends),
            threshold: self.threshold,
            pic: self.load_pic()?,
            grid: self.occlusion_grid()?,
            greedy_steps: self.greedy_steps,
            locator: Arc::new(TemplateRegionLocator),
            qa,
        })
    }
}

fn parse_scalar(raw: &str) -> Option<toml::Value> {
    let t = raw.trim();
    if let Ok(i) = t.parse::<i64>() {
        return Some(toml::Value::Integer(i));
    }
    if let Ok(f) = t.parse::<f64>() {
        return Some(toml::Value::Float(f));
    }
    t.parse::<bool>().ok().map(toml::Value::Boolean)
}

fn set_path(table: &mut toml::Table, key: &str, value: toml::Value) {
    match key.split_once('.') {
        None => {
            table.insert(key.to_string(), value);
        }
        Some((head, rest)) => {
            let entry = table
                .entry(head.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            if !entry.is_table() {
                *entry = toml::Value::Table(toml::Table::new());
            }
            set_path(entry.as_table_mut().expect("table"), rest, value);
        }
    }
}
