//! Line-delimited wire protocol between lane agents and the edge server.
//!
//! One JSON object per line, UTF-8, `\n` terminated. Every message carries
//! the schema version, a per-connection strictly increasing sequence number,
//! and the sender's timestamp. Field names are frozen in PROTOCOL.md at the
//! repository root.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use edgelight_core::{ControllerConfig, DecisionReason, DetectionFrame, LaneId, Phase};

use crate::{Error, Result, SCHEMA_VERSION};

/// Envelope common to every message.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    pub schema: u32,
    /// Strictly increasing per connection, starting at 1.
    pub seq: u64,
    pub sent_at_ms: u64,
    #[serde(flatten)]
    pub body: WireBody,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum WireBody {
    /// Handshake. The agent announces its lane; the server's reply carries
    /// the decision epoch instead.
    Hello {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        lane_id: Option<LaneId>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epoch_interval_ms: Option<u64>,
    },
    /// One detection frame for the agent's lane.
    Frame { frame: DetectionFrame },
    /// Phase plan broadcast after every decision epoch.
    PhaseCmd {
        epoch_ms: u64,
        decided_at_ms: u64,
        green_lane: LaneId,
        phases: BTreeMap<LaneId, Phase>,
        cadence_ms: BTreeMap<LaneId, u64>,
        reason: DecisionReason,
    },
    /// Pushed to agents when the server adopts a new configuration.
    ConfigSync { controller: ControllerConfig },
    /// Keep-alive when an agent has nothing to send.
    Heartbeat,
    /// Fatal protocol complaint; the sender closes the connection after it.
    Error { message: String },
}

pub fn encode(msg: &WireMessage) -> String {
    let mut s = serde_json::to_string(msg).expect("wire message serializes");
    s.push('\n');
    s
}

pub fn decode(line: &str) -> Result<WireMessage> {
    let msg: WireMessage = serde_json::from_str(line)
        .map_err(|e| Error::validation(format!("malformed wire message: {e}")))?;
    if msg.schema != SCHEMA_VERSION {
        return Err(Error::validation(format!(
            "schema mismatch: peer speaks {}, this build speaks {SCHEMA_VERSION}",
            msg.schema
        )));
    }
    Ok(msg)
}

/// Tracks per-connection sequence numbers on the receive side: rejects
/// regressions, counts gaps.
#[derive(Debug, Default)]
pub struct SeqTracker {
    last: u64,
    pub gaps: u64,
}

impl SeqTracker {
    pub fn observe(&mut self, seq: u64) -> Result<()> {
        if seq <= self.last {
            return Err(Error::validation(format!(
                "sequence regression: got {seq} after {}",
                self.last
            )));
        }
        if seq > self.last + 1 {
            self.gaps += seq - self.last - 1;
        }
        self.last = seq;
        Ok(())
    }
}
