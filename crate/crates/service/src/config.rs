//! Service configuration, read from one canonical-JSON file.

use std::collections::{BTreeMap, BTreeSet};
use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use microcrowd_core::harness::{AdapterCommand, HarnessConfig};
use microcrowd_core::value;
use microcrowd_core::{EngineConfig, FsyncPolicy, SchedulerConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("malformed config: {0}")]
    Malformed(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuthTokens {
    /// Tokens that may create projects and read status, bundles, metrics.
    #[serde(default)]
    pub client: Vec<String>,
    /// Enrollment tokens; each registered worker gets its own token
    /// derived from the one it enrolled with.
    #[serde(default)]
    pub worker: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    System,
    /// Time only moves through `POST /clock`.
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase", default)]
pub struct ApiConfig {
    pub listen_address: String,
    pub auth_tokens: AuthTokens,
    pub scheduler: SchedulerConfig,
    /// languageTag -> runner adapter command.
    pub runner_adapters: BTreeMap<String, AdapterCommand>,
    pub case_timeout_millis: u64,
    pub suite_timeout_millis: u64,
    /// Event log file; absent means an in-memory log.
    pub log_path: Option<PathBuf>,
    pub snapshot_path: Option<PathBuf>,
    /// Write a snapshot every this many commits; 0 turns it off.
    pub snapshot_every: u64,
    pub fsync: FsyncPolicy,
    pub clock_mode: ClockMode,
    /// Starting time for the manual clock, in milliseconds.
    pub manual_start_millis: u64,
    pub http_threads: usize,
}

impl Default for ApiConfig {
    fn default() -> Self {
        let harness = HarnessConfig::default();
        ApiConfig {
            listen_address: "127.0.0.1:8080".to_string(),
            auth_tokens: AuthTokens::default(),
            scheduler: SchedulerConfig::default(),
            runner_adapters: BTreeMap::new(),
            case_timeout_millis: harness.case_timeout_millis,
            suite_timeout_millis: harness.suite_timeout_millis,
            log_path: None,
            snapshot_path: None,
            snapshot_every: 0,
            fsync: FsyncPolicy::Always,
            clock_mode: ClockMode::System,
            manual_start_millis: 0,
            http_threads: 4,
        }
    }
}

impl ApiConfig {
    pub fn load(path: &Path) -> Result<ApiConfig, ConfigError> {
        let text =
            std::fs::read_to_string(path).map_err(|source| ConfigError::Read { path: path.to_path_buf(), source })?;
        ApiConfig::parse(&text)
    }

    pub fn parse(text: &str) -> Result<ApiConfig, ConfigError> {
        let config: ApiConfig = value::from_canonical(text).map_err(|e| ConfigError::Malformed(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_canonical(&self) -> String {
        value::to_canonical(self)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        self.listen_address
            .parse::<SocketAddr>()
            .map_err(|_| ConfigError::Invalid(format!("listenAddress {:?} is not host:port", self.listen_address)))?;
        let client: BTreeSet<&str> = self.auth_tokens.client.iter().map(String::as_str).collect();
        let worker: BTreeSet<&str> = self.auth_tokens.worker.iter().map(String::as_str).collect();
        if client.iter().chain(worker.iter()).any(|t| t.is_empty()) {
            return Err(ConfigError::Invalid("empty auth token".into()));
        }
        if client.intersection(&worker).next().is_some() {
            return Err(ConfigError::Invalid("client and worker token sets overlap".into()));
        }
        let s = &self.scheduler;
        if s.lease_seconds == 0 || s.max_skips_before_flag == 0 || s.max_attempts == 0 || s.identify_quorum == 0 {
            return Err(ConfigError::Invalid("scheduler settings must be positive".into()));
        }
        if self.case_timeout_millis == 0 || self.suite_timeout_millis == 0 {
            return Err(ConfigError::Invalid("timeouts must be positive".into()));
        }
        if self.http_threads == 0 {
            return Err(ConfigError::Invalid("httpThreads must be positive".into()));
        }
        Ok(())
    }

    pub fn engine_config(&self) -> EngineConfig {
        EngineConfig {
            scheduler: self.scheduler.clone(),
            harness: HarnessConfig {
                case_timeout_millis: self.case_timeout_millis,
                suite_timeout_millis: self.suite_timeout_millis,
                adapters: self.runner_adapters.clone(),
            },
        }
    }
}
