//! Scenario files: a versioned JSON document of timed events.
//!
//! ```json
//! {
//!   "schema": 1,
//!   "events": [
//!     {"at_s": 0.0,  "event": "arrival",        "lane_id": 1, "n_vehicles": 5},
//!     {"at_s": 3.5,  "event": "ev_arrival",     "lane_id": 3, "ev_kind": "ambulance"},
//!     {"at_s": 10.0, "event": "weather_change", "profile": "foggy"},
//!     {"at_s": 60.0, "event": "end"}
//!   ]
//! }
//! ```
//!
//! Timestamps are decimal seconds and must be non-decreasing; the single
//! `end` event closes the horizon.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use edgelight_core::sim::{Scenario, ScenarioEvent, ScenarioEventKind};
use edgelight_core::Timestamp;

use crate::config::seconds_to_ms;
use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioDoc {
    pub schema: u32,
    pub events: Vec<ScenarioEventDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEventDoc {
    pub at_s: f64,
    #[serde(flatten)]
    pub kind: ScenarioEventKind,
}

impl ScenarioDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("scenario {}: {e}", path.display())))?;
        Self::parse(&raw)
            .map_err(|e| Error::validation(format!("scenario {}: {e}", path.display())))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let doc: ScenarioDoc =
            serde_json::from_str(raw).map_err(|e| Error::validation(e.to_string()))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "schema: expected {SCHEMA_VERSION}, got {}",
                doc.schema
            )));
        }
        Ok(doc)
    }

    /// Converts to the core scenario, validating against the lane count.
    pub fn to_scenario(&self, lane_count: u32) -> Result<Scenario> {
        let mut events = Vec::with_capacity(self.events.len());
        for (i, ev) in self.events.iter().enumerate() {
            let at_ms = seconds_to_ms(&format!("events[{i}].at_s"), ev.at_s)?;
            events.push(ScenarioEvent { at: Timestamp::from_ms(at_ms), kind: ev.kind.clone() });
        }
        let scenario = Scenario { events };
        scenario
            .validate(lane_count)
            .map_err(|e| Error::validation(format!("scenario: {e}")))?;
        Ok(scenario)
    }

    pub fn from_scenario(scenario: &Scenario) -> Self {
        ScenarioDoc {
            schema: SCHEMA_VERSION,
            events: scenario
                .events
                .iter()
                .map(|e| ScenarioEventDoc { at_s: e.at.as_ms() as f64 / 1000.0, kind: e.kind.clone() })
                .collect(),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(self).expect("scenario serializes");
        raw.push('\n');
        crate::formats::atomic_write(path, raw.as_bytes())
    }
}
