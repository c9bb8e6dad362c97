//! On-disk formats: decision logs, metrics documents, run manifests, and
//! the one-shot snapshot document.
//!
//! The decision log is line-delimited JSON: a single header record followed
//! by one epoch record per decision. It is the replay substrate, so the
//! header carries the exact controller configuration the decisions were
//! made under.

use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use edgelight_core::{
    classify, compute_index, detect_emergency, CongestionBand, CongestionIndex, ControllerConfig,
    Decision, EvDetection, IntersectionSnapshot, LaneGeometry, LaneId, LaneState, LogEntry,
    MetricsReport, OcrReading, Timestamp,
};

use crate::config::seconds_to_ms;
use crate::{Error, Result, SCHEMA_VERSION, TOOL_VERSION};

/// First record of every decision log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogHeader {
    pub schema: u32,
    pub tool_version: String,
    /// "simulate" or "serve".
    pub mode: String,
    pub config: ControllerConfig,
    pub epoch_interval_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<LaneGeometry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Wall-clock start for live runs; omitted by the simulator so that
    /// equal-seed runs are byte-identical.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub started_at_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LogLine {
    Header(LogHeader),
    Epoch(LogEntry),
}

pub fn encode_log_line(line: &LogLine) -> String {
    let mut s = serde_json::to_string(line).expect("log line serializes");
    s.push('\n');
    s
}

/// Incremental decision-log writer used by the live server.
pub struct LogWriter {
    out: BufWriter<File>,
    path: PathBuf,
    entries: u64,
}

impl LogWriter {
    pub fn create(path: &Path, header: &LogHeader) -> Result<Self> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)
                .map_err(|e| Error::internal(format!("create {}: {e}", parent.display())))?;
        }
        let file = File::create(path)
            .map_err(|e| Error::internal(format!("create {}: {e}", path.display())))?;
        let mut writer = LogWriter { out: BufWriter::new(file), path: path.to_path_buf(), entries: 0 };
        writer.write_line(&LogLine::Header(header.clone()))?;
        Ok(writer)
    }

    pub fn append(&mut self, entry: &LogEntry) -> Result<()> {
        self.entries += 1;
        self.write_line(&LogLine::Epoch(entry.clone()))
    }

    fn write_line(&mut self, line: &LogLine) -> Result<()> {
        self.out
            .write_all(encode_log_line(line).as_bytes())
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::internal(format!("write {}: {e}", self.path.display())))
    }

    pub fn entries(&self) -> u64 {
        self.entries
    }
}

/// Writes a complete decision log in one go (simulator path).
pub fn write_decision_log(path: &Path, header: &LogHeader, entries: &[LogEntry]) -> Result<()> {
    let mut buf = String::new();
    buf.push_str(&encode_log_line(&LogLine::Header(header.clone())));
    for entry in entries {
        buf.push_str(&encode_log_line(&LogLine::Epoch(entry.clone())));
    }
    atomic_write(path, buf.as_bytes())
}

/// Reads and structurally validates a decision log. Parse failures name the
/// 1-based line number.
pub fn read_decision_log(path: &Path) -> Result<(LogHeader, Vec<LogEntry>)> {
    let file = File::open(path)
        .map_err(|e| Error::validation(format!("log {}: {e}", path.display())))?;
    let reader = BufReader::new(file);
    let mut header: Option<LogHeader> = None;
    let mut entries = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line
            .map_err(|e| Error::validation(format!("log {} line {line_no}: {e}", path.display())))?;
        if line.trim().is_empty() {
            continue;
        }
        let parsed: LogLine = serde_json::from_str(&line).map_err(|e| {
            Error::validation(format!("log {} line {line_no}: {e}", path.display()))
        })?;
        match parsed {
            LogLine::Header(h) => {
                if header.is_some() {
                    return Err(Error::validation(format!(
                        "log {} line {line_no}: duplicate header",
                        path.display()
                    )));
                }
                if h.schema != SCHEMA_VERSION {
                    return Err(Error::validation(format!(
                        "log {} line {line_no}: schema {} unsupported",
                        path.display(),
                        h.schema
                    )));
                }
                header = Some(h);
            }
            LogLine::Epoch(e) => {
                if header.is_none() {
                    return Err(Error::validation(format!(
                        "log {} line {line_no}: epoch record before header",
                        path.display()
                    )));
                }
                entries.push(e);
            }
        }
    }
    let header = header
        .ok_or_else(|| Error::validation(format!("log {}: missing header", path.display())))?;
    Ok((header, entries))
}

/// Run manifest: enough to reproduce the run exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: u32,
    pub tool_version: String,
    pub command: String,
    /// The exact invocation, argv[1..].
    #[serde(default)]
    pub argv: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scenario_path: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub outputs: Vec<String>,
    pub started_at_ms: u64,
    pub finished_at_ms: u64,
}

impl RunManifest {
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(self).expect("manifest serializes");
        raw.push('\n');
        atomic_write(path, raw.as_bytes())
    }
}

pub fn write_metrics_json(path: &Path, metrics: &MetricsReport) -> Result<()> {
    let mut raw = serde_json::to_string_pretty(metrics).expect("metrics serialize");
    raw.push('\n');
    atomic_write(path, raw.as_bytes())
}

/// Flat per-lane table for spreadsheets.
pub fn metrics_csv(metrics: &MetricsReport) -> String {
    let mut out = String::from(
        "lane_id,arrived,discharged,queued_at_end,ev_arrived,mean_wait_s,max_wait_s,green_share\n",
    );
    for (lane, m) in &metrics.per_lane {
        out.push_str(&format!(
            "{},{},{},{},{},{:.3},{:.3},{:.6}\n",
            lane.0, m.arrived, m.discharged, m.queued_at_end, m.ev_arrived, m.mean_wait_s,
            m.max_wait_s, m.green_share
        ));
    }
    out
}

pub fn write_metrics_csv(path: &Path, metrics: &MetricsReport) -> Result<()> {
    atomic_write(path, metrics_csv(metrics).as_bytes())
}

/// One-shot snapshot document for `edgelight decide`.
///
/// Each lane supplies either a raw `count` (converted through the configured
/// geometry) or a precomputed `index`, and either OCR `readings` or direct
/// `ev` counts. `current_green` defaults to the lowest lane and
/// `green_elapsed_s` to the configured minimum green, so a bare snapshot
/// exercises the arbitration rather than the hold rule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SnapshotDoc {
    pub schema: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub current_green: Option<LaneId>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub green_elapsed_s: Option<f64>,
    pub lanes: Vec<SnapshotLaneDoc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SnapshotLaneDoc {
    pub lane_id: LaneId,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub index: Option<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readings: Vec<OcrReading>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ev: Option<EvDetection>,
    #[serde(default)]
    pub red_elapsed_s: f64,
    #[serde(default)]
    pub stale: bool,
}

impl SnapshotDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("frames {}: {e}", path.display())))?;
        Self::parse(&raw)
            .map_err(|e| Error::validation(format!("frames {}: {e}", path.display())))
    }

    pub fn parse(raw: &str) -> Result<Self> {
        let doc: SnapshotDoc =
            serde_json::from_str(raw).map_err(|e| Error::validation(e.to_string()))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "schema: expected {SCHEMA_VERSION}, got {}",
                doc.schema
            )));
        }
        if doc.lanes.is_empty() {
            return Err(Error::validation("lanes: must not be empty".to_string()));
        }
        Ok(doc)
    }

    /// Resolves the document against a configuration into decide() inputs.
    pub fn resolve(
        &self,
        config: &ControllerConfig,
        geometry: &LaneGeometry,
    ) -> Result<(IntersectionSnapshot, LaneId, u64)> {
        let mut lanes = Vec::with_capacity(self.lanes.len());
        for doc in &self.lanes {
            let index = match (doc.count, doc.index) {
                (Some(_), Some(_)) => {
                    return Err(Error::validation(format!(
                        "lane {}: give either count or index, not both",
                        doc.lane_id.0
                    )));
                }
                (Some(count), None) => compute_index(count, geometry),
                (None, Some(value)) => {
                    if !(value.is_finite() && value >= 0.0) {
                        return Err(Error::validation(format!(
                            "lane {}: index must be finite and non-negative",
                            doc.lane_id.0
                        )));
                    }
                    CongestionIndex(value)
                }
                (None, None) => {
                    return Err(Error::validation(format!(
                        "lane {}: needs a count or an index",
                        doc.lane_id.0
                    )));
                }
            };
            let ev = match (&doc.ev, doc.readings.is_empty()) {
                (Some(_), false) => {
                    return Err(Error::validation(format!(
                        "lane {}: give either readings or ev counts, not both",
                        doc.lane_id.0
                    )));
                }
                (Some(ev), true) => EvDetection::new(ev.ambulance_count, ev.fire_count),
                (None, _) => {
                    detect_emergency(&doc.readings, &config.keywords, config.min_confidence)
                }
            };
            lanes.push(LaneState {
                lane_id: doc.lane_id,
                index,
                ev,
                red_elapsed_ms: seconds_to_ms(
                    &format!("lane {} red_elapsed_s", doc.lane_id.0),
                    doc.red_elapsed_s,
                )?,
                last_frame_at: Timestamp::ZERO,
                stale: doc.stale,
            });
        }
        let snapshot = IntersectionSnapshot { epoch: Timestamp::ZERO, lanes };
        snapshot.validate().map_err(|e| Error::validation(e.to_string()))?;
        let current_green = match self.current_green {
            Some(lane) => lane,
            None => snapshot.lanes.iter().map(|l| l.lane_id).min().expect("non-empty"),
        };
        let green_elapsed_ms = match self.green_elapsed_s {
            Some(s) => seconds_to_ms("green_elapsed_s", s)?,
            None => config.min_green_ms,
        };
        Ok((snapshot, current_green, green_elapsed_ms))
    }
}

/// What `edgelight decide` prints: the decision plus the band per lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionPrintout {
    pub green_lane: LaneId,
    pub reason: edgelight_core::DecisionReason,
    pub phases: std::collections::BTreeMap<LaneId, edgelight_core::Phase>,
    pub bands: std::collections::BTreeMap<LaneId, CongestionBand>,
    pub next_sample_interval_ms: std::collections::BTreeMap<LaneId, u64>,
}

impl DecisionPrintout {
    pub fn new(snapshot: &IntersectionSnapshot, config: &ControllerConfig, decision: &Decision) -> Self {
        let bands = snapshot
            .lanes
            .iter()
            .map(|l| (l.lane_id, classify(l.index, &config.thresholds)))
            .collect();
        DecisionPrintout {
            green_lane: decision.green_lane,
            reason: decision.reason,
            phases: decision.phases.clone(),
            bands,
            next_sample_interval_ms: decision.next_sample_interval_ms.clone(),
        }
    }
}

/// Writes via a temp file in the same directory, then renames into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::internal(format!("create {}: {e}", dir.display())))?;
    let tmp = dir.join(format!(
        ".{}.tmp-{}",
        path.file_name().and_then(|n| n.to_str()).unwrap_or("out"),
        std::process::id()
    ));
    fs::write(&tmp, bytes).map_err(|e| Error::internal(format!("write {}: {e}", tmp.display())))?;
    fs::rename(&tmp, path).map_err(|e| {
        let _ = fs::remove_file(&tmp);
        Error::internal(format!("rename {} -> {}: {e}", tmp.display(), path.display()))
    })
}

pub fn sim_log_header(
    config: &ControllerConfig,
    epoch_interval_ms: u64,
    geometry: LaneGeometry,
    seed: u64,
) -> LogHeader {
    LogHeader {
        schema: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        mode: "simulate".to_string(),
        config: config.clone(),
        epoch_interval_ms,
        geometry: Some(geometry),
        seed: Some(seed),
        started_at_ms: None,
    }
}
