use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{apply_event, ApplyError, Event, PlatformConfig, PlatformState};
use crate::jsonl::{self, JsonlError};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("event log i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("event log: {0}")]
    Jsonl(#[from] JsonlError),
}

/// Append-only event log.
pub trait EventStore {
    fn append(&mut self, event: &Event) -> Result<(), StoreError>;
    fn load(&self) -> Result<Vec<Event>, StoreError>;
}

#[derive(Debug, Default, Clone)]
pub struct MemoryStore {
    pub events: Vec<Event>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl EventStore for MemoryStore {
    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        self.events.push(event.clone());
        Ok(())
    }

    fn load(&self) -> Result<Vec<Event>, StoreError> {
        Ok(self.events.clone())
    }
}

/// JSON-lines log on disk, one event per line.
#[derive(Debug)]
pub struct FileStore {
    path: PathBuf,
    writer: BufWriter<File>,
}

impl FileStore {
    pub fn open(path: impl AsRef<Path>) -> Result<Self, StoreError> {
        let path = path.as_ref().to_path_buf();
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        Ok(Self {
            path,
            writer: BufWriter::new(file),
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }
}

impl EventStore for FileStore {
    fn append(&mut self, event: &Event) -> Result<(), StoreError> {
        let line = serde_json::to_string(event).map_err(JsonlError::Encode)?;
        writeln!(self.writer, "{line}")?;
        self.writer.flush()?;
        Ok(())
    }

    fn load(&self) -> Result<Vec<Event>, StoreError> {
        Ok(jsonl::read_path(&self.path)?)
    }
}

/// State at a log position, with a checksum over its canonical encoding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Snapshot {
    pub at_seq: u64,
    pub checksum: String,
    pub state: PlatformState,
}

fn checksum(state: &PlatformState) -> String {
    let bytes = serde_json::to_vec(state).expect("state serializes");
    hex::encode(Sha256::digest(bytes))
}

pub fn snapshot(state: &PlatformState) -> Snapshot {
    Snapshot {
        at_seq: state.last_seq,
        checksum: checksum(state),
        state: state.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RestoreSource {
    Snapshot { at_seq: u64 },
    FullReplay,
    /// The snapshot was unusable; state came from a full replay.
    CorruptSnapshotFallback,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestoreReport {
    pub source: RestoreSource,
    pub replayed: usize,
    pub warning: Option<String>,
}

fn parse_snapshot(encoded: &str, config: &PlatformConfig) -> Result<Snapshot, String> {
    let snap: Snapshot = serde_json::from_str(encoded).map_err(|e| format!("unreadable snapshot: {e}"))?;
    if checksum(&snap.state) != snap.checksum {
        return Err("snapshot checksum mismatch".into());
    }
    if snap.state.last_seq != snap.at_seq {
        return Err(format!("snapshot claims seq {} but holds {}", snap.at_seq, snap.state.last_seq));
    }
    if &snap.state.config != config {
        return Err("snapshot taken under a different configuration".into());
    }
    Ok(snap)
}

/// Rebuilds state from an optional encoded snapshot plus the log tail. A
/// corrupt snapshot is reported and replaced by a full replay.
pub fn restore(
    config: PlatformConfig,
    encoded_snapshot: Option<&str>,
    events: &[Event],
) -> Result<(PlatformState, RestoreReport), ApplyError> {
    let (mut state, source, warning) = match encoded_snapshot.map(|s| parse_snapshot(s, &config)) {
        None => (PlatformState::new(config), RestoreSource::FullReplay, None),
        Some(Ok(snap)) => {
            let at_seq = snap.at_seq;
            (snap.state, RestoreSource::Snapshot { at_seq }, None)
        }
        Some(Err(why)) => {
            tracing::warn!("{why}; falling back to full replay");
            (PlatformState::new(config), RestoreSource::CorruptSnapshotFallback, Some(why))
        }
    };
    let mut replayed = 0;
    let start = state.last_seq;
    for e in events.iter().filter(|e| e.seq > start) {
        apply_event(&mut state, e)?;
        replayed += 1;
    }
    Ok((
        state,
        RestoreReport {
            source,
            replayed,
            warning,
        },
    ))
}
