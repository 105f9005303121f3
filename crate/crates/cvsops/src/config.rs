//! Declarative TOML configuration with environment overrides.
//!
//! Any key can be overridden with `CVSOPS_<SECTION>__<KEY>`; for example
//! `CVSOPS_SCHEDULER__BUCKET_SIZE=10` or `CVSOPS_SERVER__API_TOKEN=secret`.
//! An override takes the type of the value it replaces; keys with no file
//! or default value are read as strings.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use cvs_core::evaluation::VariantSplitDef;
use cvs_core::orchestrator::{PlatformConfig, RetryPolicy};
use cvs_core::scheduler::SchedulerConfig;
use serde::{Deserialize, Serialize};

pub const ENV_PREFIX: &str = "CVSOPS_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OpsConfig {
    /// Holds the event log, snapshot, error log and notification outbox.
    pub data_dir: PathBuf,
    /// Seed for assignment shuffling.
    pub seed: u64,
    pub scheduler: SchedulerConfig,
    pub retry: RetryPolicy,
    pub evaluation: EvaluationConfig,
    pub notifier: NotifierBinding,
    pub server: ServerConfig,
}

impl Default for OpsConfig {
    fn default() -> Self {
        Self {
            data_dir: PathBuf::from("cvsops-data"),
            seed: 0,
            scheduler: SchedulerConfig::default(),
            retry: RetryPolicy::default(),
            evaluation: EvaluationConfig::default(),
            notifier: NotifierBinding::default(),
            server: ServerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct EvaluationConfig {
    /// Variant split definitions; the shipped ten when absent.
    pub splits: Option<Vec<VariantSplitDef>>,
    /// Score in exact rationals instead of `f64`.
    pub exact: bool,
}

/// Where reminder and organizer notifications go.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum NotifierBinding {
    /// Appends each message to a JSON-lines outbox, relative to `data_dir`.
    Outbox { path: PathBuf },
    /// Writes each message to the log only.
    Log,
}

impl Default for NotifierBinding {
    fn default() -> Self {
        NotifierBinding::Outbox {
            path: PathBuf::from("outbox.jsonl"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServerConfig {
    pub bind: String,
    /// Static bearer token; the server refuses to start without one.
    pub api_token: Option<String>,
    /// Seconds between background passes over due effects.
    pub effect_poll_secs: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            api_token: None,
            effect_poll_secs: 60,
        }
    }
}

impl OpsConfig {
    /// Reads `path` (defaults when `None`) and applies overrides from `env`.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> anyhow::Result<Self> {
        let mut table = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading config {}", p.display()))?;
                toml::from_str::<toml::Table>(&text).with_context(|| format!("parsing config {}", p.display()))?
            }
            None => toml::Table::new(),
        };
        let defaults = toml::Table::try_from(OpsConfig::default()).context("encoding defaults")?;
        for (key, raw) in env {
            let Some(rest) = key.strip_prefix(ENV_PREFIX) else { continue };
            if rest == "CONFIG" || rest.is_empty() {
                continue;
            }
            let path: Vec<String> = rest.split("__").map(str::to_ascii_lowercase).collect();
            let like = lookup(&table, &path).or_else(|| lookup(&defaults, &path));
            let value = typed(&raw, like).with_context(|| format!("applying {key}"))?;
            set_path(&mut table, &path, value).with_context(|| format!("applying {key}"))?;
        }
        let cfg: OpsConfig = toml::Value::Table(table).try_into().context("invalid configuration")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_env(path: Option<&Path>) -> anyhow::Result<Self> {
        Self::load(path, std::env::vars())
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        let s = &self.scheduler;
        if s.bucket_size == 0 || s.coverage_target == 0 || s.cadence_days <= 0 {
            bail!("scheduler.bucket_size, coverage_target and cadence_days must be positive");
        }
        let r = &self.retry;
        if r.max_attempts == 0 || r.base_hours <= 0 || r.factor < 1 {
            bail!("retry.max_attempts and base_hours must be positive and factor at least 1");
        }
        Ok(())
    }

    pub fn platform(&self) -> PlatformConfig {
        PlatformConfig {
            scheduler: self.scheduler.clone(),
            retry: self.retry.clone(),
        }
    }

    pub fn events_path(&self) -> PathBuf {
        self.data_dir.join("events.jsonl")
    }

    pub fn snapshot_path(&self) -> PathBuf {
        self.data_dir.join("snapshot.json")
    }

    pub fn error_log_path(&self) -> PathBuf {
        self.data_dir.join("errors.jsonl")
    }
}

/// Types an override by the value it replaces: the file's, else the
/// default's, else a string.
fn typed(raw: &str, like: Option<&toml::Value>) -> anyhow::Result<toml::Value> {
    Ok(match like {
        Some(toml::Value::Integer(_)) => toml::Value::Integer(raw.parse().context("expected an integer")?),
        Some(toml::Value::Float(_)) => toml::Value::Float(raw.parse().context("expected a number")?),
        Some(toml::Value::Boolean(_)) => toml::Value::Boolean(raw.parse().context("expected true or false")?),
        _ => toml::Value::String(raw.to_string()),
    })
}

fn lookup<'a>(table: &'a toml::Table, path: &[String]) -> Option<&'a toml::Value> {
    let (first, rest) = path.split_first()?;
    let v = table.get(first)?;
    match (rest.is_empty(), v) {
        (true, v) => Some(v),
        (false, toml::Value::Table(t)) => lookup(t, rest),
        _ => None,
    }
}

fn set_path(table: &mut toml::Table, path: &[String], value: toml::Value) -> anyhow::Result<()> {
    let (last, parents) = path.split_last().expect("non-empty key path");
    let mut cur = table;
    for p in parents {
        let entry = cur.entry(p.clone()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => bail!("{p} is not a table"),
        };
    }
    cur.insert(last.clone(), value);
    Ok(())
}
