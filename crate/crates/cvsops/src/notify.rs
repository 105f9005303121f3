//! Notification adapters bound from configuration.

use std::collections::BTreeSet;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use cvs_core::jsonl;
use cvs_core::orchestrator::{Notification, Notifier, NotifyError};
use serde::{Deserialize, Serialize};

use crate::config::{NotifierBinding, OpsConfig};

/// One delivered message in the outbox file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutboxEntry {
    pub key: String,
    #[serde(flatten)]
    pub message: Notification,
}

/// Appends messages to a JSON-lines outbox that a mail relay drains. Keys
/// already in the file are treated as delivered.
#[derive(Debug)]
pub struct OutboxNotifier {
    path: PathBuf,
    file: File,
    delivered: BTreeSet<String>,
}

impl OutboxNotifier {
    pub fn open(path: impl AsRef<Path>) -> anyhow::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let delivered = if path.exists() {
            jsonl::read_path::<OutboxEntry>(&path)?.into_iter().map(|e| e.key).collect()
        } else {
            BTreeSet::new()
        };
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self { path, file, delivered })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl Notifier for OutboxNotifier {
    fn send(&mut self, key: &str, message: &Notification) -> Result<(), NotifyError> {
        if self.delivered.contains(key) {
            return Ok(());
        }
        let entry = OutboxEntry {
            key: key.to_string(),
            message: message.clone(),
        };
        let line = serde_json::to_string(&entry).map_err(|e| NotifyError(e.to_string()))?;
        writeln!(self.file, "{line}")
            .and_then(|_| self.file.flush())
            .map_err(|e| NotifyError(e.to_string()))?;
        self.delivered.insert(key.to_string());
        Ok(())
    }
}

/// Logs each message and keeps nothing.
#[derive(Debug, Default)]
pub struct LogNotifier;

impl Notifier for LogNotifier {
    fn send(&mut self, key: &str, message: &Notification) -> Result<(), NotifyError> {
        tracing::info!(key, to = %message.to, subject = %message.subject, "{}", message.body);
        Ok(())
    }
}

pub fn bind(cfg: &OpsConfig) -> anyhow::Result<Box<dyn Notifier + Send>> {
    Ok(match &cfg.notifier {
        NotifierBinding::Outbox { path } => Box::new(OutboxNotifier::open(cfg.data_dir.join(path))?),
        NotifierBinding::Log => Box::new(LogNotifier),
    })
}
