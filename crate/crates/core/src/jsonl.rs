//! JSON-lines helpers shared by every file format in the platform.

use std::io::{BufRead, Write};

use serde::de::DeserializeOwned;
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum JsonlError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {source}")]
    Parse {
        line: usize,
        #[source]
        source: serde_json::Error,
    },
    #[error("serialization failed: {0}")]
    Encode(#[source] serde_json::Error),
}

/// Reads one record per non-blank line.
pub fn read<T: DeserializeOwned>(reader: impl BufRead) -> Result<Vec<T>, JsonlError> {
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|source| JsonlError::Parse { line: i + 1, source })?;
        out.push(record);
    }
    Ok(out)
}

pub fn write<T: Serialize>(mut writer: impl Write, records: &[T]) -> Result<(), JsonlError> {
    for r in records {
        serde_json::to_writer(&mut writer, r).map_err(JsonlError::Encode)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()?;
    Ok(())
}

pub fn read_path<T: DeserializeOwned>(path: impl AsRef<std::path::Path>) -> Result<Vec<T>, JsonlError> {
    let f = std::fs::File::open(path)?;
    read(std::io::BufReader::new(f))
}

pub fn write_path<T: Serialize>(path: impl AsRef<std::path::Path>, records: &[T]) -> Result<(), JsonlError> {
    let f = std::fs::File::create(path)?;
    write(std::io::BufWriter::new(f), records)
}
