use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::domain::Timestamp;

/// One line of the structured error log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub at: Timestamp,
    pub entity: String,
    pub event: String,
    pub error_class: String,
    pub message: String,
}

/// Keeps records in memory and, when opened on a path, appends each one as
/// a JSON line.
#[derive(Debug, Default)]
pub struct ErrorLog {
    records: Vec<ErrorRecord>,
    sink: Option<File>,
}

impl ErrorLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let sink = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            records: Vec::new(),
            sink: Some(sink),
        })
    }

    pub fn record(&mut self, rec: ErrorRecord) {
        tracing::warn!(entity = %rec.entity, event = %rec.event, class = %rec.error_class, "{}", rec.message);
        if let Some(f) = self.sink.as_mut() {
            let line = serde_json::to_string(&rec).expect("error record serializes");
            if let Err(e) = writeln!(f, "{line}") {
                tracing::error!("error log write failed: {e}");
            }
        }
        self.records.push(rec);
    }

    pub fn records(&self) -> &[ErrorRecord] {
        &self.records
    }
}
