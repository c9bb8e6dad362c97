//! The config document: one versioned JSON file shared by every subcommand.
//!
//! Durations are decimal seconds in the file and integer milliseconds in
//! memory. Every field has a default, so an absent file or an empty object
//! is a valid configuration.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use edgelight_core::sim::WeatherKind;
use edgelight_core::{ControllerConfig, EvKeywordSet, LaneGeometry, SimParams, Thresholds};

use crate::{Error, Result, SCHEMA_VERSION};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConfigDoc {
    pub schema: u32,
    #[serde(default)]
    pub controller: ControllerSection,
    /// Decision epoch used by the simulator and the edge server.
    #[serde(default = "default_epoch_interval_s")]
    pub epoch_interval_s: f64,
    /// Monitored road geometry, identical for every lane.
    #[serde(default)]
    pub lanes: LanesSection,
    #[serde(default)]
    pub sim: SimSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LanesSection {
    pub width_m: f64,
    pub coverage_m: f64,
}

impl Default for LanesSection {
    fn default() -> Self {
        LanesSection { width_m: 10.0, coverage_m: 10.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ControllerSection {
    pub c1: f64,
    pub c3: f64,
    pub threshold_time_s: f64,
    pub sample_interval_low_s: f64,
    pub sample_interval_mid_s: f64,
    pub min_green_s: f64,
    pub ev_preempts_min_green: bool,
    pub ambulance_keywords: Vec<String>,
    pub fire_keywords: Vec<String>,
    pub min_confidence: f64,
    pub lane_count: u32,
}

impl Default for ControllerSection {
    fn default() -> Self {
        ControllerSection {
            c1: 0.10,
            c3: 0.25,
            threshold_time_s: 120.0,
            sample_interval_low_s: 7.0,
            sample_interval_mid_s: 3.0,
            min_green_s: 10.0,
            ev_preempts_min_green: false,
            ambulance_keywords: vec!["AMBULANCE".into()],
            fire_keywords: vec!["FIRE".into()],
            min_confidence: 0.5,
            lane_count: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimSection {
    pub actuation_latency_s: f64,
    pub saturation_rate_vps: f64,
    pub initial_weather: WeatherKind,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            actuation_latency_s: 0.1,
            saturation_rate_vps: 0.5,
            initial_weather: WeatherKind::ClearSunny,
        }
    }
}

fn default_epoch_interval_s() -> f64 {
    1.0
}

impl Default for ConfigDoc {
    fn default() -> Self {
        ConfigDoc {
            schema: SCHEMA_VERSION,
            controller: ControllerSection::default(),
            epoch_interval_s: default_epoch_interval_s(),
            lanes: LanesSection::default(),
            sim: SimSection::default(),
        }
    }
}

/// Converts decimal seconds to milliseconds, rejecting anything that is not
/// a finite non-negative number.
pub fn seconds_to_ms(field: &str, seconds: f64) -> Result<u64> {
    if !seconds.is_finite() || seconds < 0.0 {
        return Err(Error::validation(format!(
            "{field}: expected a finite non-negative number of seconds, got {seconds}"
        )));
    }
    Ok((seconds * 1000.0).round() as u64)
}

impl ConfigDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|e| {
            Error::validation(format!("config {}: {e}", path.display()))
        })?;
        Self::parse(&raw).map_err(|e| match e {
            Error::Validation(msg) => Error::validation(format!("config {}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let doc: ConfigDoc =
            serde_json::from_str(raw).map_err(|e| Error::validation(e.to_string()))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "schema: expected {SCHEMA_VERSION}, got {}",
                doc.schema
            )));
        }
        doc.validate()?;
        Ok(doc)
    }

    /// Loads the file when given, otherwise the built-in defaults.
    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        match path {
            Some(p) => Self::load(p),
            None => Ok(ConfigDoc::default()),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.controller_config()?;
        self.sim_params()?;
        self.epoch_interval_ms()?;
        Ok(())
    }

    pub fn controller_config(&self) -> Result<ControllerConfig> {
        let c = &self.controller;
        let thresholds = Thresholds::new(c.c1, c.c3)
            .map_err(|e| Error::validation(format!("controller.c1/c3: {e}")))?;
        let config = ControllerConfig {
            thresholds,
            threshold_time_ms: seconds_to_ms("controller.threshold_time_s", c.threshold_time_s)?,
            sample_interval_low_ms: seconds_to_ms(
                "controller.sample_interval_low_s",
                c.sample_interval_low_s,
            )?,
            sample_interval_mid_ms: seconds_to_ms(
                "controller.sample_interval_mid_s",
                c.sample_interval_mid_s,
            )?,
            min_green_ms: seconds_to_ms("controller.min_green_s", c.min_green_s)?,
            ev_preempts_min_green: c.ev_preempts_min_green,
            keywords: EvKeywordSet {
                ambulance_keywords: c.ambulance_keywords.clone(),
                fire_keywords: c.fire_keywords.clone(),
            },
            min_confidence: c.min_confidence,
            lane_count: c.lane_count,
        };
        config.validate().map_err(|e| Error::validation(format!("controller: {e}")))?;
        Ok(config)
    }

    pub fn sim_params(&self) -> Result<SimParams> {
        let s = &self.sim;
        let params = SimParams {
            epoch_interval_ms: self.epoch_interval_ms()?,
            actuation_latency_ms: seconds_to_ms("sim.actuation_latency_s", s.actuation_latency_s)?,
            saturation_rate_vps: s.saturation_rate_vps,
            geometry: self.geometry()?,
            initial_weather: s.initial_weather,
        };
        params.validate().map_err(|e| Error::validation(format!("sim: {e}")))?;
        Ok(params)
    }

    pub fn epoch_interval_ms(&self) -> Result<u64> {
        let ms = seconds_to_ms("epoch_interval_s", self.epoch_interval_s)?;
        if ms == 0 {
            return Err(Error::validation("epoch_interval_s: must be positive".to_string()));
        }
        Ok(ms)
    }

    pub fn geometry(&self) -> Result<LaneGeometry> {
        LaneGeometry::new(self.lanes.width_m, self.lanes.coverage_m)
            .map_err(|e| Error::validation(format!("lanes.width_m/coverage_m: {e}")))
    }

    pub fn to_json_pretty(&self) -> String {
        let mut out = serde_json::to_string_pretty(self).expect("config serializes");
        out.push('\n');
        out
    }

    /// Atomic write: temp file in the same directory, then rename.
    pub fn save(&self, path: &Path) -> Result<()> {
        crate::formats::atomic_write(path, self.to_json_pretty().as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let doc = ConfigDoc::default();
        let cfg = doc.controller_config().unwrap();
        assert_eq!(cfg.thresholds.c1, 0.10);
        assert_eq!(cfg.thresholds.c3, 0.25);
        assert_eq!(cfg.sample_interval_low_ms, 7_000);
        assert_eq!(cfg.sample_interval_mid_ms, 3_000);
        assert_eq!(cfg.threshold_time_ms, 120_000);
        assert_eq!(cfg.min_green_ms, 10_000);
        assert_eq!(cfg.lane_count, 4);
        let params = doc.sim_params().unwrap();
        assert_eq!(params.epoch_interval_ms, 1_000);
        assert_eq!(params.actuation_latency_ms, 100);
    }

    #[test]
    fn empty_object_is_default() {
        let doc = ConfigDoc::parse(r#"{"schema":1}"#).unwrap();
        assert_eq!(doc, ConfigDoc::default());
    }

    #[test]
    fn partial_sections_fill_from_defaults() {
        let doc = ConfigDoc::parse(r#"{"schema":1,"controller":{"lane_count":6}}"#).unwrap();
        assert_eq!(doc.controller.lane_count, 6);
        assert_eq!(doc.controller.c1, 0.10);
    }

    #[test]
    fn rejects_unknown_fields_and_bad_values() {
        assert!(ConfigDoc::parse(r#"{"schema":1,"bogus":true}"#).is_err());
        assert!(ConfigDoc::parse(r#"{"schema":2}"#).is_err());
        let err = ConfigDoc::parse(r#"{"schema":1,"controller":{"c1":0.3,"c3":0.25}}"#).unwrap_err();
        assert!(err.to_string().contains("c1"), "{err}");
    }

    #[test]
    fn round_trips_through_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("config.json");
        let doc = ConfigDoc::default();
        doc.save(&path).unwrap();
        assert_eq!(ConfigDoc::load(&path).unwrap(), doc);
    }
}
