//! Command-line tool and HTTP API over the challenge operations core.

pub mod api;
pub mod cli;
pub mod config;
pub mod notify;
pub mod platform;
