//! Gateway configuration file.
//!
//! Relative paths are resolved against the directory holding the config
//! file. Example:
//!
//! ```json
//! {
//!   "store_root": "vault",
//!   "owner": {"id": "alice", "token": "owner-secret"},
//!   "device_tokens": ["meter-secret"],
//!   "consumers": [{"id": "marketer", "display_name": "Acme", "profile_category": "marketer",
//!                  "token": "acme-secret", "ratings": [0.2]}],
//!   "calibration": "fixtures/calibration/default.json",
//!   "rules": ["rules/inference_chain.rules", "rules/smart_home.rules"],
//!   "context_facts": "fixtures/alice/context.facts",
//!   "auto_accept": true,
//!   "policy": {...},
//!   "context_flags": {"habits": 1, "device_use": 1, "personal_information": 0}
//! }
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use pdv_core::query::SensitivityBounds;
use pdv_core::rules::{parse_facts, parse_rules, Fact, RuleError, RuleSet};
use pdv_core::tradeoff::{LeakageCalibration, RiskModel};
use pdv_core::domain::validate_policy;
use pdv_core::{Consumer, ConsumerId, OwnerPolicy, PolicyViolation, PrivacyParameter, ProfileCategory};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: io::Error },
    #[error("invalid JSON in {path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
    #[error("{path}: {source}")]
    Rules { path: PathBuf, source: RuleError },
    #[error("invalid policy: {}", .0.iter().map(|v| v.to_string()).collect::<Vec<_>>().join("; "))]
    Policy(Vec<PolicyViolation>),
    #[error("token {0:?} is assigned more than once")]
    DuplicateToken(String),
    #[error("consumer {0} is listed more than once")]
    DuplicateConsumer(ConsumerId),
    #[error("consumer {0} has a rating outside [0, 1]")]
    InvalidRating(ConsumerId),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OwnerConfig {
    /// Constant naming the owner in facts.
    pub id: String,
    pub token: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConsumerConfig {
    pub id: ConsumerId,
    #[serde(default)]
    pub display_name: Option<String>,
    pub profile_category: ProfileCategory,
    pub token: String,
    #[serde(default)]
    pub ratings: Vec<f64>,
}

impl ConsumerConfig {
    pub fn consumer(&self) -> Consumer {
        Consumer {
            id: self.id.clone(),
            display_name: self.display_name.clone().unwrap_or_else(|| self.id.0.clone()),
            profile_category: self.profile_category,
            ratings: self.ratings.clone(),
        }
    }
}

fn default_listen() -> SocketAddr {
    SocketAddr::from(([127, 0, 0, 1], 8080))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Config {
    pub store_root: PathBuf,
    /// Where gateway state and the audit log live; defaults to `store_root`.
    #[serde(default)]
    pub state_dir: Option<PathBuf>,
    pub owner: OwnerConfig,
    #[serde(default)]
    pub device_tokens: Vec<String>,
    #[serde(default)]
    pub consumers: Vec<ConsumerConfig>,
    /// Leakage calibration file; the built-in curves when absent.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub rules: Vec<PathBuf>,
    #[serde(default)]
    pub context_facts: Option<PathBuf>,
    #[serde(default)]
    pub auto_accept: bool,
    #[serde(default = "default_policy")]
    pub policy: OwnerPolicy,
    /// Initial manual relevance flags; unlisted parameters start at 1.
    #[serde(default)]
    pub context_flags: BTreeMap<PrivacyParameter, u8>,
    #[serde(default)]
    pub sensitivity_bounds: SensitivityBounds,
    /// Seed for release noise; each release derives its own stream from it.
    #[serde(default)]
    pub noise_seed: u64,
    /// Requests still open after this many seconds become expired.
    #[serde(default)]
    pub request_ttl_secs: Option<u64>,
    /// Lifetime of grants created by the gateway.
    #[serde(default)]
    pub grant_ttl_secs: Option<u64>,
    #[serde(default = "default_listen")]
    pub listen: SocketAddr,
}

fn default_policy() -> OwnerPolicy {
    OwnerPolicy::uniform(0.5)
}

/// Everything loaded from the files a config points at.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub config: Config,
    pub model: RiskModel,
    pub context_facts: Vec<Fact>,
}

fn read(path: &Path) -> Result<String, ConfigError> {
    fs::read_to_string(path).map_err(|source| ConfigError::Read {
        path: path.into(),
        source,
    })
}

fn json<T: serde::de::DeserializeOwned>(path: &Path, text: &str) -> Result<T, ConfigError> {
    serde_json::from_str(text).map_err(|source| ConfigError::Json {
        path: path.into(),
        source,
    })
}

impl Config {
    /// Reads a config file and resolves its relative paths.
    pub fn from_file(path: &Path) -> Result<Config, ConfigError> {
        let mut config: Config = json(path, &read(path)?)?;
        let base = path.parent().unwrap_or(Path::new("."));
        config.resolve(base);
        Ok(config)
    }

    pub fn resolve(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.store_root);
        self.state_dir.as_mut().map(fix);
        self.calibration.as_mut().map(fix);
        self.context_facts.as_mut().map(fix);
        self.rules.iter_mut().for_each(fix);
    }

    pub fn state_dir(&self) -> &Path {
        self.state_dir.as_deref().unwrap_or(&self.store_root)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_policy(&self.policy).map_err(ConfigError::Policy)?;
        let mut tokens = std::collections::BTreeSet::new();
        let all = std::iter::once(&self.owner.token)
            .chain(&self.device_tokens)
            .chain(self.consumers.iter().map(|c| &c.token));
        for t in all {
            if !tokens.insert(t) {
                return Err(ConfigError::DuplicateToken(t.clone()));
            }
        }
        let mut ids = std::collections::BTreeSet::new();
        for c in &self.consumers {
            if !ids.insert(&c.id) {
                return Err(ConfigError::DuplicateConsumer(c.id.clone()));
            }
            if !c.consumer().ratings_valid() {
                return Err(ConfigError::InvalidRating(c.id.clone()));
            }
        }
        Ok(())
    }

    /// Validates the config and loads rules, calibration and context facts.
    pub fn load(self) -> Result<Loaded, ConfigError> {
        self.validate()?;
        let mut rules = RuleSet::default();
        for path in &self.rules {
            let parsed = parse_rules(&read(path)?).map_err(|source| ConfigError::Rules {
                path: path.clone(),
                source,
            })?;
            rules.extend(parsed).map_err(|source| ConfigError::Rules {
                path: path.clone(),
                source,
            })?;
        }
        let calibration = match &self.calibration {
            Some(path) => json::<LeakageCalibration>(path, &read(path)?)?,
            None => LeakageCalibration::default(),
        };
        let context_facts = match &self.context_facts {
            Some(path) => parse_facts(&read(path)?).map_err(|source| ConfigError::Rules {
                path: path.clone(),
                source,
            })?,
            None => Vec::new(),
        };
        Ok(Loaded {
            model: RiskModel::new(rules, calibration),
            context_facts,
            config: self,
        })
    }
}
