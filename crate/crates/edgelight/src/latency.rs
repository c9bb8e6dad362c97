//! Latency analysis over decision and actuation logs.
//!
//! Two distributions matter:
//! - frame-to-decision: frame capture at the lane to decision emission at
//!   the server, counted once per frame at its first use in an epoch. This
//!   covers uplink transit, the wait for the epoch boundary, and compute.
//! - decision-to-actuation: decision emission to the agent applying the
//!   phase, covering downlink transit.
//!
//! All timestamps come from the shared clock domain (one host, or an
//! injected logical clock), so cross-log arithmetic is meaningful.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use edgelight_core::{LaneId, LogEntry};

use crate::agent::ActuationRecord;
use crate::formats::read_decision_log;
use crate::server::ServerStats;
use crate::{Error, Result, SCHEMA_VERSION};

/// Nearest-rank percentile summary of a sample set, in milliseconds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LatencyStats {
    pub samples: u64,
    pub p50_ms: f64,
    pub p95_ms: f64,
    pub max_ms: f64,
    pub mean_ms: f64,
}

impl LatencyStats {
    pub fn from_samples(mut samples: Vec<u64>) -> LatencyStats {
        if samples.is_empty() {
            return LatencyStats::default();
        }
        samples.sort_unstable();
        let n = samples.len();
        let rank = |q: f64| -> f64 {
            let idx = ((q * n as f64).ceil() as usize).clamp(1, n) - 1;
            samples[idx] as f64
        };
        LatencyStats {
            samples: n as u64,
            p50_ms: rank(0.50),
            p95_ms: rank(0.95),
            max_ms: samples[n - 1] as f64,
            mean_ms: samples.iter().sum::<u64>() as f64 / n as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencyReport {
    pub schema: u32,
    pub frame_to_decision: LatencyStats,
    pub decision_to_actuation: LatencyStats,
    /// Epoch entries or actuation records that could not be paired or
    /// ordered; reported, never fatal.
    pub unmatched: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_from_agents_per_epoch: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bytes_to_agents_per_epoch: Option<f64>,
}

/// Frame-to-decision samples from a decision log: one sample per distinct
/// frame per lane, at the epoch that first used it.
pub fn frame_to_decision_samples(entries: &[LogEntry]) -> (Vec<u64>, u64) {
    let mut last_seen: BTreeMap<LaneId, u64> = BTreeMap::new();
    let mut samples = Vec::new();
    let mut unmatched = 0u64;
    for entry in entries {
        for lane in &entry.snapshot.lanes {
            let captured = lane.last_frame_at.as_ms();
            if captured == 0 {
                continue; // never reported
            }
            if last_seen.get(&lane.lane_id) == Some(&captured) {
                continue; // same frame as the previous epoch
            }
            last_seen.insert(lane.lane_id, captured);
            if entry.decided_at_ms >= captured {
                samples.push(entry.decided_at_ms - captured);
            } else {
                unmatched += 1;
            }
        }
    }
    (samples, unmatched)
}

/// Decision-to-actuation samples from agent actuation logs.
pub fn decision_to_actuation_samples(records: &[ActuationRecord]) -> (Vec<u64>, u64) {
    let mut samples = Vec::new();
    let mut unmatched = 0u64;
    for record in records {
        if record.applied_at_ms >= record.decided_at_ms {
            samples.push(record.applied_at_ms - record.decided_at_ms);
        } else {
            unmatched += 1;
        }
    }
    (samples, unmatched)
}

pub fn read_actuation_log(path: &Path) -> Result<Vec<ActuationRecord>> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("agent log {}: {e}", path.display())))?;
    let mut records = Vec::new();
    for (i, line) in raw.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: ActuationRecord = serde_json::from_str(line).map_err(|e| {
            Error::validation(format!("agent log {} line {}: {e}", path.display(), i + 1))
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn read_server_stats(path: &Path) -> Result<ServerStats> {
    let raw = std::fs::read_to_string(path)
        .map_err(|e| Error::validation(format!("stats {}: {e}", path.display())))?;
    serde_json::from_str(&raw)
        .map_err(|e| Error::validation(format!("stats {}: {e}", path.display())))
}

/// Builds the full report from a decision log, any number of agent logs,
/// and optionally the server's stats file for byte accounting.
pub fn measure(
    decision_log: &Path,
    agent_logs: &[std::path::PathBuf],
    stats: Option<&Path>,
) -> Result<LatencyReport> {
    let (_, entries) = read_decision_log(decision_log)?;
    let (ftd, mut unmatched) = frame_to_decision_samples(&entries);

    let mut actuations = Vec::new();
    for path in agent_logs {
        actuations.extend(read_actuation_log(path)?);
    }
    let (dta, unmatched_dta) = decision_to_actuation_samples(&actuations);
    unmatched += unmatched_dta;

    let (bytes_from, bytes_to) = match stats {
        Some(path) => {
            let stats = read_server_stats(path)?;
            if stats.epochs > 0 {
                (
                    Some(stats.bytes_from_agents as f64 / stats.epochs as f64),
                    Some(stats.bytes_to_agents as f64 / stats.epochs as f64),
                )
            } else {
                (None, None)
            }
        }
        None => (None, None),
    };

    Ok(LatencyReport {
        schema: SCHEMA_VERSION,
        frame_to_decision: LatencyStats::from_samples(ftd),
        decision_to_actuation: LatencyStats::from_samples(dta),
        unmatched,
        bytes_from_agents_per_epoch: bytes_from,
        bytes_to_agents_per_epoch: bytes_to,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use edgelight_core::{
        CongestionIndex, Decision, DecisionReason, EvDetection, IntersectionSnapshot, LaneState,
        Phase, Timestamp,
    };

    #[test]
    fn percentiles_nearest_rank() {
        let stats = LatencyStats::from_samples((1..=100).collect());
        assert_eq!(stats.p50_ms, 50.0);
        assert_eq!(stats.p95_ms, 95.0);
        assert_eq!(stats.max_ms, 100.0);
        assert_eq!(stats.samples, 100);

        let empty = LatencyStats::from_samples(vec![]);
        assert_eq!(empty.samples, 0);
        assert_eq!(empty.p50_ms, 0.0);
    }

    fn entry(epoch_ms: u64, decided_at_ms: u64, captured: &[(u32, u64)]) -> LogEntry {
        let lanes = captured
            .iter()
            .map(|(lane, at)| LaneState {
                lane_id: LaneId(*lane),
                index: CongestionIndex(0.0),
                ev: EvDetection::default(),
                red_elapsed_ms: 0,
                last_frame_at: Timestamp::from_ms(*at),
                stale: false,
            })
            .collect();
        LogEntry {
            epoch_ms,
            decided_at_ms,
            current_green: LaneId(1),
            green_elapsed_ms: 0,
            snapshot: IntersectionSnapshot { epoch: Timestamp::from_ms(epoch_ms), lanes },
            decision: Decision {
                green_lane: LaneId(1),
                phases: [(LaneId(1), Phase::Green)].into_iter().collect(),
                next_sample_interval_ms: Default::default(),
                reason: DecisionReason::CongestionFallback,
            },
            frame_received_at_ms: None,
        }
    }

    #[test]
    fn frames_counted_once_at_first_use() {
        let entries = vec![
            entry(100, 101, &[(1, 95), (2, 0)]),
            // Lane 1's frame unchanged: no new sample. Lane 2 reports.
            entry(200, 202, &[(1, 95), (2, 190)]),
            // Both refresh.
            entry(300, 303, &[(1, 290), (2, 295)]),
        ];
        let (samples, unmatched) = frame_to_decision_samples(&entries);
        assert_eq!(samples, vec![6, 12, 13, 8]);
        assert_eq!(unmatched, 0);
    }
}
