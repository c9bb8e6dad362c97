//! Replay verification: re-run every logged decision and compare
//! byte-for-byte.
//!
//! Because `decide` is pure and the log carries its full input (snapshot,
//! config, current green, green elapsed), any divergence means either a
//! tampered log or a non-deterministic implementation; both are findings.

use std::path::Path;

use edgelight_core::decide;

use crate::formats::{read_decision_log, LogHeader};
use crate::{Error, Result};
use edgelight_core::LogEntry;

/// Outcome of replaying a decision log.
#[derive(Debug, Clone, PartialEq)]
pub enum Verdict {
    Consistent { epochs: u64 },
    Divergence { entry_index: usize, epoch_ms: u64, logged: String, recomputed: String },
}

impl Verdict {
    pub fn is_consistent(&self) -> bool {
        matches!(self, Verdict::Consistent { .. })
    }
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Consistent { epochs } => write!(f, "consistent ({epochs} epochs)"),
            Verdict::Divergence { entry_index, epoch_ms, logged, recomputed } => write!(
                f,
                "divergence at entry {entry_index} (epoch {epoch_ms}ms):\n  logged:     {logged}\n  recomputed: {recomputed}"
            ),
        }
    }
}

/// Replays parsed log entries against the header's configuration.
pub fn replay_entries(header: &LogHeader, entries: &[LogEntry]) -> Result<Verdict> {
    header
        .config
        .validate()
        .map_err(|e| Error::validation(format!("log header config: {e}")))?;
    for (i, entry) in entries.iter().enumerate() {
        let recomputed =
            decide(&entry.snapshot, &header.config, entry.current_green, entry.green_elapsed_ms)
                .map_err(|e| {
                    Error::validation(format!("entry {i} (epoch {}ms): {e}", entry.epoch_ms))
                })?;
        let logged_json = serde_json::to_string(&entry.decision).expect("decision serializes");
        let recomputed_json = serde_json::to_string(&recomputed).expect("decision serializes");
        if logged_json != recomputed_json {
            return Ok(Verdict::Divergence {
                entry_index: i,
                epoch_ms: entry.epoch_ms,
                logged: logged_json,
                recomputed: recomputed_json,
            });
        }
    }
    Ok(Verdict::Consistent { epochs: entries.len() as u64 })
}

/// Reads a log file and replays it.
pub fn replay_file(path: &Path) -> Result<Verdict> {
    let (header, entries) = read_decision_log(path)?;
    replay_entries(&header, &entries)
}
