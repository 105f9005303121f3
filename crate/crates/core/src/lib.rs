//! Operations core for a surgical-video annotation challenge: case intake
//! and screening, annotator recruitment, assignment scheduling, label
//! fusion, submission scoring, the event-sourced orchestrator tying them
//! together, and a seeded simulator that exercises the whole pipeline.
//!
//! The fusion and evaluation math is generic over [`Scalar`]; the aliases
//! below fix the common instantiations.

pub mod annotator_flow;
pub mod domain;
pub mod evaluation;
pub mod fusion;
pub mod jsonl;
pub mod orchestrator;
pub mod scalar;
pub mod scheduler;
pub mod simulator;
pub mod video_flow;

pub use scalar::{Exact, Scalar};

/// Fused per-frame labels in double precision.
pub type FusedFrameF64 = fusion::FusedFrame<f64>;
/// Fused per-frame labels in exact rationals.
pub type FusedFrameExact = fusion::FusedFrame<Exact>;
pub type GroundTruthF64 = evaluation::GroundTruth<f64>;
pub type GroundTruthExact = evaluation::GroundTruth<Exact>;
pub type MetricsReportF64 = evaluation::MetricsReport<f64>;
pub type MetricsReportExact = evaluation::MetricsReport<Exact>;
pub type ClassificationReportF64 = fusion::ClassificationReport<f64>;
pub type ClassificationReportExact = fusion::ClassificationReport<Exact>;
