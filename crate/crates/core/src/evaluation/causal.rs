//! Causal-contract audit for streaming predictors.
//!
//! A predictor is replayed on truncated copies of a clip. Its outputs for
//! the visible frames must not change when later frames are hidden.

use std::io::{BufRead, BufReader, Write};
use std::path::PathBuf;
use std::process::{Child, ChildStdin, Command, Stdio};
use std::sync::mpsc::{self, Receiver, RecvTimeoutError};
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::domain::{ClipId, PerCriterion};

/// Prefix end frames probed by the audit (inclusive).
pub const PROBES: [usize; 3] = [10, 45, 89];
pub const CAUSAL_TOLERANCE: f64 = 1e-6;

/// One line sent to a predictor.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub clip_id: ClipId,
    pub frame_index: u32,
    pub media_uri: String,
}

/// Clip media as seen by a predictor: one feature value per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClipMedia {
    pub clip_id: ClipId,
    pub frames: Vec<f64>,
}

impl ClipMedia {
    /// Frames `0..=last`.
    pub fn prefix(&self, last: usize) -> ClipMedia {
        ClipMedia {
            clip_id: self.clip_id.clone(),
            frames: self.frames[..=last.min(self.frames.len().saturating_sub(1))].to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AuditError {
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("no reply for frame {frame} within {timeout:?}")]
    Timeout { frame: u32, timeout: Duration },
    #[error("predictor i/o: {0}")]
    Io(String),
}

pub trait StreamingPredictor {
    /// Starts a fresh run over `media` and returns the URI frame
    /// descriptors should carry.
    fn begin(&mut self, media: &ClipMedia) -> Result<String, AuditError>;

    fn predict(&mut self, frame: &FrameDescriptor) -> Result<PerCriterion<f64>, AuditError>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "outcome", rename_all = "UPPERCASE")]
pub enum AuditOutcome {
    Pass,
    Violation { clip_id: ClipId, frame_index: u32, probe: usize },
}

fn run(predictor: &mut dyn StreamingPredictor, media: &ClipMedia) -> Result<Vec<PerCriterion<f64>>, AuditError> {
    let uri = predictor.begin(media)?;
    (0..media.frames.len())
        .map(|i| {
            let out = predictor.predict(&FrameDescriptor {
                clip_id: media.clip_id.clone(),
                frame_index: i as u32,
                media_uri: uri.clone(),
            })?;
            if out.values().iter().any(|p| !(0.0..=1.0).contains(*p)) {
                return Err(AuditError::Protocol(format!("frame {i}: probability outside [0, 1]")));
            }
            Ok(out)
        })
        .collect()
}

pub fn causal_audit(predictor: &mut dyn StreamingPredictor, media: &ClipMedia) -> Result<AuditOutcome, AuditError> {
    let full = run(predictor, media)?;
    for probe in PROBES {
        if probe >= media.frames.len() {
            continue;
        }
        let prefix = run(predictor, &media.prefix(probe))?;
        let first_diff = prefix.iter().zip(&full).position(|(p, f)| {
            p.values()
                .iter()
                .zip(f.values())
                .any(|(a, b)| (**a - *b).abs() > CAUSAL_TOLERANCE)
        });
        if let Some(frame) = first_diff {
            return Ok(AuditOutcome::Violation {
                clip_id: media.clip_id.clone(),
                frame_index: frame as u32,
                probe,
            });
        }
    }
    Ok(AuditOutcome::Pass)
}

/// In-process predictor driven by a closure over the visible media.
pub struct FnPredictor<F> {
    media: Vec<f64>,
    f: F,
}

impl<F: FnMut(&[f64], usize) -> PerCriterion<f64>> FnPredictor<F> {
    /// `f(visible_frames, t)` gives the prediction at frame `t`.
    pub fn new(f: F) -> Self {
        Self { media: Vec::new(), f }
    }
}

impl<F: FnMut(&[f64], usize) -> PerCriterion<f64>> StreamingPredictor for FnPredictor<F> {
    fn begin(&mut self, media: &ClipMedia) -> Result<String, AuditError> {
        self.media = media.frames.clone();
        Ok(format!("mem://{}?frames={}", media.clip_id, media.frames.len()))
    }

    fn predict(&mut self, frame: &FrameDescriptor) -> Result<PerCriterion<f64>, AuditError> {
        let t = frame.frame_index as usize;
        if t >= self.media.len() {
            return Err(AuditError::Protocol(format!("frame {t} beyond visible media")));
        }
        Ok((self.f)(&self.media, t))
    }
}

/// External executable speaking the line protocol on stdin/stdout. One
/// process is spawned per run; media is handed over as a JSON file.
pub struct ProcessPredictor {
    program: String,
    args: Vec<String>,
    timeout: Duration,
    workdir: tempfile::TempDir,
    runs: usize,
    active: Option<Session>,
}

struct Session {
    child: Child,
    stdin: ChildStdin,
    lines: Receiver<std::io::Result<String>>,
}

impl Drop for Session {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl ProcessPredictor {
    pub fn new(program: impl Into<String>, args: Vec<String>, timeout: Duration) -> Result<Self, AuditError> {
        Ok(Self {
            program: program.into(),
            args,
            timeout,
            workdir: tempfile::tempdir().map_err(|e| AuditError::Io(e.to_string()))?,
            runs: 0,
            active: None,
        })
    }

    fn media_path(&self) -> PathBuf {
        self.workdir.path().join(format!("media-{}.json", self.runs))
    }
}

impl StreamingPredictor for ProcessPredictor {
    fn begin(&mut self, media: &ClipMedia) -> Result<String, AuditError> {
        self.active = None;
        self.runs += 1;
        let path = self.media_path();
        let body = serde_json::to_vec(media).map_err(|e| AuditError::Io(e.to_string()))?;
        std::fs::write(&path, body).map_err(|e| AuditError::Io(e.to_string()))?;

        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| AuditError::Io(format!("spawn {}: {e}", self.program)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = child.stdout.take().expect("piped stdout");
        let (tx, rx) = mpsc::channel();
        std::thread::spawn(move || {
            for line in BufReader::new(stdout).lines() {
                if tx.send(line).is_err() {
                    break;
                }
            }
        });
        self.active = Some(Session { child, stdin, lines: rx });
        Ok(format!("file://{}", path.display()))
    }

    fn predict(&mut self, frame: &FrameDescriptor) -> Result<PerCriterion<f64>, AuditError> {
        let session = self
            .active
            .as_mut()
            .ok_or_else(|| AuditError::Protocol("predict before begin".into()))?;
        let mut line = serde_json::to_string(frame).map_err(|e| AuditError::Io(e.to_string()))?;
        line.push('\n');
        session
            .stdin
            .write_all(line.as_bytes())
            .and_then(|_| session.stdin.flush())
            .map_err(|e| AuditError::Io(e.to_string()))?;
        match session.lines.recv_timeout(self.timeout) {
            Ok(Ok(reply)) => serde_json::from_str(&reply)
                .map_err(|e| AuditError::Protocol(format!("frame {}: bad reply {reply:?}: {e}", frame.frame_index))),
            Ok(Err(e)) => Err(AuditError::Io(e.to_string())),
            Err(RecvTimeoutError::Timeout) => Err(AuditError::Timeout {
                frame: frame.frame_index,
                timeout: self.timeout,
            }),
            Err(RecvTimeoutError::Disconnected) => {
                Err(AuditError::Protocol(format!("predictor exited before frame {}", frame.frame_index)))
            }
        }
    }
}
