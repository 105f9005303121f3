use std::collections::BTreeMap;

use chrono::Duration;
use serde::{Deserialize, Serialize};

use crate::domain::{AnnotatorId, ClipId, Timestamp};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "SCREAMING_SNAKE_CASE")]
pub enum EffectKind {
    /// Nudge for unfinished work from one batch.
    Reminder { annotator_id: AnnotatorId, tick_id: u64 },
    /// The next scheduling tick is due.
    TickDue { tick_id: u64 },
    NotifyOrganizer { subject: String },
    /// A clip reached full coverage and can be fused.
    FusionJob { clip_id: ClipId },
}

impl EffectKind {
    pub fn target(&self) -> String {
        match self {
            EffectKind::Reminder { annotator_id, .. } => annotator_id.to_string(),
            EffectKind::TickDue { .. } => "campaign".into(),
            EffectKind::NotifyOrganizer { .. } => "organizers".into(),
            EffectKind::FusionJob { clip_id } => clip_id.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum EffectStatus {
    Pending,
    Done,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "result", rename_all = "UPPERCASE")]
pub enum EffectOutcome {
    Ok,
    /// Executed as a no-op because the condition no longer holds.
    Skipped { reason: String },
    Error { message: String },
}

/// Exponential backoff: retry `n` waits `base * factor^(n-1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RetryPolicy {
    pub base_hours: i64,
    pub factor: i64,
    /// Total attempts allowed, the first one included.
    pub max_attempts: u32,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            base_hours: 1,
            factor: 2,
            max_attempts: 3,
        }
    }
}

impl RetryPolicy {
    pub fn backoff(&self, failed_attempts: u32) -> Duration {
        let exp = failed_attempts.saturating_sub(1);
        Duration::hours(self.base_hours * self.factor.pow(exp))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Effect {
    pub effect_id: String,
    pub kind: EffectKind,
    pub target: String,
    pub due_at: Timestamp,
    pub attempts: u32,
    pub status: EffectStatus,
    pub last_error: Option<String>,
}

impl Effect {
    pub fn new(effect_id: String, kind: EffectKind, due_at: Timestamp) -> Self {
        Self {
            effect_id,
            target: kind.target(),
            kind,
            due_at,
            attempts: 0,
            status: EffectStatus::Pending,
            last_error: None,
        }
    }

    pub(super) fn record_attempt(&mut self, outcome: &EffectOutcome, at: Timestamp, policy: &RetryPolicy) {
        self.attempts += 1;
        match outcome {
            EffectOutcome::Ok | EffectOutcome::Skipped { .. } => self.status = EffectStatus::Done,
            EffectOutcome::Error { message } => {
                self.last_error = Some(message.clone());
                if self.attempts >= policy.max_attempts {
                    self.status = EffectStatus::Failed;
                } else {
                    self.due_at = at + policy.backoff(self.attempts);
                }
            }
        }
    }
}

/// Outbound message produced by reminder and notification effects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Notification {
    pub to: String,
    pub subject: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("notification failed: {0}")]
pub struct NotifyError(pub String);

/// Outbound notification port. Implementations must treat a repeated
/// idempotency key as already delivered.
pub trait Notifier {
    fn send(&mut self, idempotency_key: &str, message: &Notification) -> Result<(), NotifyError>;
}

/// In-memory notifier that records deliveries and can inject failures.
#[derive(Debug, Default)]
pub struct RecordingNotifier {
    pub delivered: BTreeMap<String, Notification>,
    /// Every call, duplicates included.
    pub calls: Vec<String>,
    fail_next: BTreeMap<String, u32>,
    fail_all: u32,
}

impl RecordingNotifier {
    pub fn new() -> Self {
        Self::default()
    }

    /// The next `n` sends with `key` fail.
    pub fn fail_times(&mut self, key: impl Into<String>, n: u32) {
        self.fail_next.insert(key.into(), n);
    }

    /// The next `n` sends, whatever the key, fail.
    pub fn fail_any(&mut self, n: u32) {
        self.fail_all = n;
    }
}

impl Notifier for RecordingNotifier {
    fn send(&mut self, key: &str, message: &Notification) -> Result<(), NotifyError> {
        self.calls.push(key.to_string());
        if self.fail_all > 0 {
            self.fail_all -= 1;
            return Err(NotifyError("injected failure".into()));
        }
        if let Some(n) = self.fail_next.get_mut(key) {
            if *n > 0 {
                *n -= 1;
                return Err(NotifyError("injected failure".into()));
            }
        }
        self.delivered.entry(key.to_string()).or_insert_with(|| message.clone());
        Ok(())
    }
}

/// Summary of one `run_due_effects` pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EffectReport {
    pub executed: Vec<String>,
    pub skipped: Vec<String>,
    pub retrying: Vec<String>,
    pub failed: Vec<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::TimeZone;

    #[test]
    fn backoff_doubles_from_one_hour() {
        let p = RetryPolicy::default();
        assert_eq!(p.backoff(1), Duration::hours(1));
        assert_eq!(p.backoff(2), Duration::hours(2));
        assert_eq!(p.backoff(3), Duration::hours(4));
    }

    #[test]
    fn fails_only_after_attempts_exhausted() {
        let t = chrono::Utc.with_ymd_and_hms(2023, 1, 1, 0, 0, 0).unwrap();
        let p = RetryPolicy::default();
        let mut e = Effect::new("e".into(), EffectKind::TickDue { tick_id: 1 }, t);
        let err = EffectOutcome::Error { message: "x".into() };
        e.record_attempt(&err, t, &p);
        assert_eq!((e.status, e.due_at), (EffectStatus::Pending, t + Duration::hours(1)));
        e.record_attempt(&err, t, &p);
        assert_eq!((e.status, e.due_at), (EffectStatus::Pending, t + Duration::hours(2)));
        e.record_attempt(&err, t, &p);
        assert_eq!((e.status, e.attempts), (EffectStatus::Failed, 3));
    }

    #[test]
    fn recorder_delivers_once_per_key() {
        let mut n = RecordingNotifier::new();
        let m = Notification {
            to: "a".into(),
            subject: "s".into(),
            body: String::new(),
        };
        n.send("k", &m).unwrap();
        n.send("k", &m).unwrap();
        assert_eq!(n.calls.len(), 2);
        assert_eq!(n.delivered.len(), 1);
    }
}
