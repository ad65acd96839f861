//! Global configuration: defaults, the `skillforge.toml` file, and overrides
//! from flags or the environment, applied in that order.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::abstraction::Granularity;
use crate::http::BackendConfig;
use crate::planner::DEFAULT_RETRY_LIMIT;

pub const CONFIG_FILE: &str = "skillforge.toml";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("invalid config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error("{what} `{path}` does not exist")]
    MissingPath { what: &'static str, path: String },
    #[error("--seed is required for `{0}` in CI mode")]
    SeedRequired(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PlannerBackendId {
    #[default]
    Mock,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum AbstractionBackendId {
    #[default]
    Lexicon,
    Http,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum PerceptionBackendId {
    #[default]
    Fixture,
    Http,
}

/// HTTP settings per external service; only read when that backend is `http`.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackendsSection {
    pub planner: Option<BackendConfig>,
    pub abstraction: Option<BackendConfig>,
    pub perception: Option<BackendConfig>,
}

/// Contents of a config file. Every key is optional.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FileConfig {
    pub fixtures_dir: Option<PathBuf>,
    pub library_path: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub profiles_dir: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub granularity: Option<Granularity>,
    pub seed: Option<u64>,
    pub planner_backend: Option<PlannerBackendId>,
    pub abstraction_backend: Option<AbstractionBackendId>,
    pub perception_backend: Option<PerceptionBackendId>,
    pub replan_each_step: Option<bool>,
    pub retry_limit: Option<u32>,
    pub ci: Option<bool>,
    pub backends: BackendsSection,
}

impl FileConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text).map_err(|message| ConfigError::Parse { path: path.display().to_string(), message })
    }

    pub fn parse(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }
}

/// Values supplied on the command line or through `SKILLFORGE_*` variables.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub fixtures_dir: Option<PathBuf>,
    pub library_path: Option<PathBuf>,
    pub templates_dir: Option<PathBuf>,
    pub profiles_dir: Option<PathBuf>,
    pub lexicon_path: Option<PathBuf>,
    pub granularity: Option<Granularity>,
    pub seed: Option<u64>,
    pub planner_backend: Option<PlannerBackendId>,
    pub abstraction_backend: Option<AbstractionBackendId>,
    pub perception_backend: Option<PerceptionBackendId>,
    pub replan_each_step: Option<bool>,
    pub retry_limit: Option<u32>,
    pub ci: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GlobalConfig {
    pub fixtures_dir: PathBuf,
    pub library_path: PathBuf,
    pub templates_dir: PathBuf,
    pub profiles_dir: PathBuf,
    /// `None` uses the built-in lexicon.
    pub lexicon_path: Option<PathBuf>,
    pub granularity: Granularity,
    pub seed: Option<u64>,
    pub planner_backend: PlannerBackendId,
    pub abstraction_backend: AbstractionBackendId,
    pub perception_backend: PerceptionBackendId,
    pub replan_each_step: bool,
    /// Extra attempts per failed stage.
    pub retry_limit: u32,
    pub ci: bool,
    pub backends: BackendsSection,
}

impl GlobalConfig {
    /// Defaults with every path under `root`.
    pub fn defaults_at(root: impl AsRef<Path>) -> Self {
        let root = root.as_ref();
        Self {
            fixtures_dir: root.join("fixtures"),
            library_path: root.join("library.json"),
            templates_dir: root.join("templates"),
            profiles_dir: root.join("profiles"),
            lexicon_path: None,
            granularity: Granularity::Medium,
            seed: None,
            planner_backend: PlannerBackendId::Mock,
            abstraction_backend: AbstractionBackendId::Lexicon,
            perception_backend: PerceptionBackendId::Fixture,
            replan_each_step: false,
            retry_limit: DEFAULT_RETRY_LIMIT,
            ci: false,
            backends: BackendsSection::default(),
        }
    }

    /// Layers `file` and then `overrides` on top of the defaults.
    pub fn resolve(root: impl AsRef<Path>, file: Option<FileConfig>, overrides: Overrides) -> Result<Self, ConfigError> {
        let mut cfg = Self::defaults_at(root);
        let file = file.unwrap_or_default();
        macro_rules! layer {
            ($($field:ident),*) => {$(
                if let Some(v) = file.$field { cfg.$field = v; }
                if let Some(v) = overrides.$field { cfg.$field = v; }
            )*};
        }
        layer!(
            fixtures_dir,
            library_path,
            templates_dir,
            profiles_dir,
            granularity,
            planner_backend,
            abstraction_backend,
            perception_backend,
            replan_each_step,
            retry_limit,
            ci
        );
        cfg.lexicon_path = overrides.lexicon_path.or(file.lexicon_path);
        cfg.seed = overrides.seed.or(file.seed);
        cfg.backends = file.backends;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let need = |id: bool, section: &Option<BackendConfig>, name: &str| -> Result<(), ConfigError> {
            if !id {
                return Ok(());
            }
            match section {
                Some(b) => b.validate().map_err(|e| ConfigError::Invalid(format!("backends.{name}: {e}"))),
                None => Err(ConfigError::Invalid(format!("http {name} backend needs a [backends.{name}] section"))),
            }
        };
        need(self.planner_backend == PlannerBackendId::Http, &self.backends.planner, "planner")?;
        need(self.abstraction_backend == AbstractionBackendId::Http, &self.backends.abstraction, "abstraction")?;
        need(self.perception_backend == PerceptionBackendId::Http, &self.backends.perception, "perception")?;
        Ok(())
    }

    pub fn scenes_dir(&self) -> PathBuf {
        self.fixtures_dir.join("scenes")
    }

    pub fn rules_path(&self) -> PathBuf {
        self.fixtures_dir.join("planner_rules.json")
    }

    pub fn template_path(&self) -> PathBuf {
        self.templates_dir.join("vlp_prompt.txt")
    }

    /// The seed to use for `command`; CI mode refuses to fall back.
    pub fn seed_for(&self, command: &'static str, flag: Option<u64>) -> Result<u64, ConfigError> {
        match flag {
            Some(s) => Ok(s),
            None if self.ci => Err(ConfigError::SeedRequired(command)),
            None => Ok(self.seed.unwrap_or(0)),
        }
    }

    pub fn require_dir(what: &'static str, path: &Path) -> Result<(), ConfigError> {
        if path.is_dir() {
            Ok(())
        } else {
            Err(ConfigError::MissingPath { what, path: path.display().to_string() })
        }
    }
}
