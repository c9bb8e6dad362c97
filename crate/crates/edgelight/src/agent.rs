//! The lane agent: the per-lane process standing in for a camera.
//!
//! It streams detection frames to the edge server at whatever cadence the
//! latest phase command prescribes for its lane, applies received phase
//! commands to its local signal-head model, and logs actuation timestamps
//! for latency analysis. Frames come either from a replay file or from a
//! small built-in traffic model.
//!
//! Remote-cloud emulation: `inject_rtt_ms` delays each frame by half the
//! round trip before it is sent and each received command by the other half
//! before it is applied. Delays are modelled as due-queues, not sleeps, so
//! an agent under emulation never falls behind its cadence.

use std::collections::VecDeque;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, ErrorKind, Write};
use std::net::TcpStream;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use edgelight_core::{DetectionFrame, LaneId, OcrReading, Phase, Timestamp};

use crate::clock::Clock;
use crate::wire::{decode, encode, WireBody, WireMessage};
use crate::{Error, Result, SCHEMA_VERSION};

/// One frame's worth of content in a replay file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameContent {
    pub count: u32,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub readings: Vec<OcrReading>,
}

/// Replay file: `{"schema": 1, "frames": [{"count": 5}, ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReplayDoc {
    pub schema: u32,
    pub frames: Vec<FrameContent>,
}

impl ReplayDoc {
    pub fn load(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path)
            .map_err(|e| Error::validation(format!("replay {}: {e}", path.display())))?;
        let doc: ReplayDoc = serde_json::from_str(&raw)
            .map_err(|e| Error::validation(format!("replay {}: {e}", path.display())))?;
        if doc.schema != SCHEMA_VERSION {
            return Err(Error::validation(format!(
                "replay {}: schema {} unsupported",
                path.display(),
                doc.schema
            )));
        }
        Ok(doc)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut raw = serde_json::to_string_pretty(self).expect("replay doc serializes");
        raw.push('\n');
        crate::formats::atomic_write(path, raw.as_bytes())
    }
}

/// Parameters of the built-in live traffic model: periodic arrivals,
/// constant-rate discharge while the local head shows green.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveTraffic {
    pub arrival_period_ms: u64,
    pub discharge_rate_vps: f64,
}

#[derive(Debug, Clone)]
pub enum FrameSource {
    Replay(Vec<FrameContent>),
    Live(LiveTraffic),
}

#[derive(Debug, Clone)]
pub struct AgentOptions {
    pub server: String,
    pub lane: LaneId,
    pub source: FrameSource,
    /// Actuation log destination; omitted in throwaway runs.
    pub actuation_log_path: Option<PathBuf>,
    pub run_for_ms: Option<u64>,
    /// Emulated round trip to a far-away decision server; 0 is edge-local.
    pub inject_rtt_ms: u64,
    /// Cadence before the first phase command arrives.
    pub initial_cadence_ms: u64,
    pub heartbeat_interval_ms: u64,
    /// Reconnect with capped exponential backoff instead of exiting when
    /// the server goes away.
    pub reconnect: bool,
}

impl AgentOptions {
    pub fn new(server: impl Into<String>, lane: LaneId, source: FrameSource) -> Self {
        AgentOptions {
            server: server.into(),
            lane,
            source,
            actuation_log_path: None,
            run_for_ms: None,
            inject_rtt_ms: 0,
            initial_cadence_ms: 1_000,
            heartbeat_interval_ms: 1_000,
            reconnect: true,
        }
    }
}

/// One applied phase command, as written to the actuation log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActuationRecord {
    pub schema: u32,
    pub lane_id: LaneId,
    pub epoch_ms: u64,
    pub decided_at_ms: u64,
    pub green_lane: LaneId,
    pub phase: Phase,
    pub received_at_ms: u64,
    pub applied_at_ms: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct AgentReport {
    pub frames_sent: u64,
    pub commands_applied: u64,
    pub heartbeats_sent: u64,
    pub reconnects: u64,
    pub replay_exhausted: bool,
    pub fatal_error: Option<String>,
}

pub struct AgentHandle {
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<AgentReport>>>,
}

impl AgentHandle {
    pub fn stop(mut self) -> Result<AgentReport> {
        self.stop.store(true, Ordering::SeqCst);
        self.join
            .take()
            .expect("stop called once")
            .join()
            .map_err(|_| Error::internal("agent thread panicked".to_string()))?
    }

    pub fn wait(mut self) -> Result<AgentReport> {
        self.join
            .take()
            .expect("wait called once")
            .join()
            .map_err(|_| Error::internal("agent thread panicked".to_string()))?
    }
}

impl Drop for AgentHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Spawns an agent on its own thread.
pub fn start_agent(options: AgentOptions, clock: Arc<dyn Clock>) -> AgentHandle {
    let stop = Arc::new(AtomicBool::new(false));
    let thread_stop = stop.clone();
    let join = std::thread::Builder::new()
        .name(format!("edgelight-agent-{}", options.lane.0))
        .spawn(move || run_agent(options, clock, thread_stop))
        .expect("spawn agent");
    AgentHandle { stop, join: Some(join) }
}

struct DelayedCmd {
    apply_due_ms: u64,
    record: ActuationRecord,
    cadence_ms: Option<u64>,
    phase: Option<Phase>,
}

struct LiveState {
    started_ms: u64,
    green_accum_ms: u64,
    green_since_ms: Option<u64>,
}

/// Runs the agent until stop, deadline, replay exhaustion, or a fatal
/// protocol error.
pub fn run_agent(options: AgentOptions, clock: Arc<dyn Clock>, stop: Arc<AtomicBool>) -> Result<AgentReport> {
    let mut report = AgentReport::default();
    let start_ms = clock.now_ms();
    let deadline_ms = options.run_for_ms.map(|ms| start_ms + ms);
    let one_way_ms = options.inject_rtt_ms / 2;

    let mut log = match &options.actuation_log_path {
        Some(path) => {
            if let Some(parent) = path.parent() {
                fs::create_dir_all(parent)
                    .map_err(|e| Error::internal(format!("create {}: {e}", parent.display())))?;
            }
            Some(BufWriter::new(File::create(path).map_err(|e| {
                Error::internal(format!("create {}: {e}", path.display()))
            })?))
        }
        None => None,
    };

    let mut replay_cursor = 0usize;
    let mut live = LiveState { started_ms: start_ms, green_accum_ms: 0, green_since_ms: None };
    let mut backoff_ms = 100u64;
    let mut first_session = true;

    let expired = |clock: &dyn Clock| deadline_ms.is_some_and(|d| clock.now_ms() >= d);

    'outer: while !stop.load(Ordering::SeqCst) && !expired(clock.as_ref()) {
        if !first_session {
            report.reconnects += 1;
        }
        let stream = match connect_with_backoff(&options.server, &stop, &mut backoff_ms, clock.as_ref(), deadline_ms) {
            Some(stream) => stream,
            None => break,
        };
        first_session = false;
        backoff_ms = 100;

        match run_session(
            &options,
            clock.as_ref(),
            &stop,
            deadline_ms,
            stream,
            &mut report,
            &mut replay_cursor,
            &mut live,
            log.as_mut(),
            one_way_ms,
        ) {
            SessionEnd::Disconnected if options.reconnect => continue 'outer,
            SessionEnd::Disconnected => break,
            SessionEnd::Finished => break,
            SessionEnd::Fatal(msg) => {
                report.fatal_error = Some(msg);
                break;
            }
        }
    }

    if let Some(log) = log.as_mut() {
        log.flush().map_err(|e| Error::internal(format!("flush actuation log: {e}")))?;
    }
    Ok(report)
}

fn connect_with_backoff(
    server: &str,
    stop: &AtomicBool,
    backoff_ms: &mut u64,
    clock: &dyn Clock,
    deadline_ms: Option<u64>,
) -> Option<TcpStream> {
    loop {
        if stop.load(Ordering::SeqCst) || deadline_ms.is_some_and(|d| clock.now_ms() >= d) {
            return None;
        }
        match TcpStream::connect(server) {
            Ok(stream) => {
                stream.set_nodelay(true).ok();
                stream.set_read_timeout(Some(Duration::from_millis(2))).ok();
                return Some(stream);
            }
            Err(e) => {
                log::debug!("connect {server}: {e}; retrying in {backoff_ms}ms");
                let mut waited = 0;
                while waited < *backoff_ms && !stop.load(Ordering::SeqCst) {
                    std::thread::sleep(Duration::from_millis(10));
                    waited += 10;
                }
                *backoff_ms = (*backoff_ms * 2).min(2_000);
            }
        }
    }
}

enum SessionEnd {
    Disconnected,
    Finished,
    Fatal(String),
}

/// Attempts one non-blocking line read. `Ok(true)` means a full line is in
/// `line`; `Ok(false)` means nothing complete yet.
fn try_read_line(reader: &mut BufReader<TcpStream>, line: &mut String) -> std::io::Result<bool> {
    match reader.read_line(line) {
        Ok(0) => Err(std::io::Error::new(ErrorKind::UnexpectedEof, "peer closed")),
        Ok(_) if line.ends_with('\n') => Ok(true),
        Ok(_) => Ok(false),
        Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => Ok(false),
        Err(e) if e.kind() == ErrorKind::Interrupted => Ok(false),
        Err(e) => Err(e),
    }
}

#[allow(clippy::too_many_arguments)]
fn run_session(
    options: &AgentOptions,
    clock: &dyn Clock,
    stop: &AtomicBool,
    deadline_ms: Option<u64>,
    stream: TcpStream,
    report: &mut AgentReport,
    replay_cursor: &mut usize,
    live: &mut LiveState,
    mut log: Option<&mut BufWriter<File>>,
    one_way_ms: u64,
) -> SessionEnd {
    let mut writer = match stream.try_clone() {
        Ok(w) => w,
        Err(_) => return SessionEnd::Disconnected,
    };
    let mut reader = BufReader::new(stream);
    let mut seq = 0u64;
    let send = |body: WireBody, writer: &mut TcpStream, seq: &mut u64, clock: &dyn Clock| -> std::io::Result<usize> {
        *seq += 1;
        let msg = WireMessage { schema: SCHEMA_VERSION, seq: *seq, sent_at_ms: clock.now_ms(), body };
        let line = encode(&msg);
        writer.write_all(line.as_bytes()).map(|_| line.len())
    };

    if send(
        WireBody::Hello { lane_id: Some(options.lane), epoch_interval_ms: None },
        &mut writer,
        &mut seq,
        clock,
    )
    .is_err()
    {
        return SessionEnd::Disconnected;
    }

    // Await the server's hello.
    let mut line = String::new();
    let handshake_deadline = clock.now_ms() + 5_000;
    loop {
        if stop.load(Ordering::SeqCst) {
            return SessionEnd::Finished;
        }
        if clock.now_ms() > handshake_deadline {
            return SessionEnd::Disconnected;
        }
        match try_read_line(&mut reader, &mut line) {
            Ok(true) => break,
            Ok(false) => continue,
            Err(_) => return SessionEnd::Disconnected,
        }
    }
    match decode(line.trim_end()) {
        Ok(WireMessage { body: WireBody::Hello { .. }, .. }) => {}
        Ok(WireMessage { body: WireBody::Error { message }, .. }) => {
            return SessionEnd::Fatal(message)
        }
        Ok(_) | Err(_) => return SessionEnd::Disconnected,
    }
    line.clear();

    let mut cadence_ms = options.initial_cadence_ms;
    let mut last_capture_ms: Option<u64> = None;
    let mut last_sent_ms = clock.now_ms();
    let mut outbox: VecDeque<(u64, DetectionFrame)> = VecDeque::new();
    let mut delayed_cmds: VecDeque<DelayedCmd> = VecDeque::new();

    loop {
        if stop.load(Ordering::SeqCst) || deadline_ms.is_some_and(|d| clock.now_ms() >= d) {
            return SessionEnd::Finished;
        }

        // Inbound.
        match try_read_line(&mut reader, &mut line) {
            Ok(true) => {
                let received_at_ms = clock.now_ms();
                match decode(line.trim_end()) {
                    Ok(msg) => match msg.body {
                        WireBody::PhaseCmd { epoch_ms, decided_at_ms, green_lane, phases, cadence_ms: cadences, reason: _ } => {
                            let record = ActuationRecord {
                                schema: SCHEMA_VERSION,
                                lane_id: options.lane,
                                epoch_ms,
                                decided_at_ms,
                                green_lane,
                                phase: phases.get(&options.lane).copied().unwrap_or(Phase::Red),
                                received_at_ms,
                                applied_at_ms: 0,
                            };
                            delayed_cmds.push_back(DelayedCmd {
                                apply_due_ms: received_at_ms + one_way_ms,
                                record,
                                cadence_ms: cadences.get(&options.lane).copied(),
                                phase: phases.get(&options.lane).copied(),
                            });
                        }
                        WireBody::ConfigSync { .. } => {
                            log::info!("lane {}: configuration updated upstream", options.lane.0);
                        }
                        WireBody::Error { message } => return SessionEnd::Fatal(message),
                        WireBody::Heartbeat | WireBody::Hello { .. } | WireBody::Frame { .. } => {}
                    },
                    Err(e) => log::warn!("lane {}: dropping bad line: {e}", options.lane.0),
                }
                line.clear();
            }
            Ok(false) => {}
            Err(_) => return SessionEnd::Disconnected,
        }

        let now_ms = clock.now_ms();

        // Apply commands whose emulated transit has elapsed.
        while delayed_cmds.front().is_some_and(|c| c.apply_due_ms <= now_ms) {
            let mut cmd = delayed_cmds.pop_front().expect("checked front");
            cmd.record.applied_at_ms = clock.now_ms();
            if let Some(new_cadence) = cmd.cadence_ms {
                cadence_ms = new_cadence;
            }
            if let Some(phase) = cmd.phase {
                match phase {
                    Phase::Green => {
                        if live.green_since_ms.is_none() {
                            live.green_since_ms = Some(cmd.record.applied_at_ms);
                        }
                    }
                    Phase::Red => {
                        if let Some(since) = live.green_since_ms.take() {
                            live.green_accum_ms += cmd.record.applied_at_ms.saturating_sub(since);
                        }
                    }
                }
            }
            report.commands_applied += 1;
            if let Some(out) = log.as_deref_mut() {
                let mut raw = serde_json::to_string(&cmd.record).expect("record serializes");
                raw.push('\n');
                if out.write_all(raw.as_bytes()).and_then(|_| out.flush()).is_err() {
                    log::warn!("lane {}: actuation log write failed", options.lane.0);
                }
            }
        }

        // Capture a frame when the cadence says so.
        let capture_due = match last_capture_ms {
            None => true,
            Some(last) => now_ms >= last + cadence_ms,
        };
        if capture_due {
            let content = match &options.source {
                FrameSource::Replay(frames) => {
                    if *replay_cursor >= frames.len() {
                        report.replay_exhausted = true;
                        return SessionEnd::Finished;
                    }
                    let content = frames[*replay_cursor].clone();
                    *replay_cursor += 1;
                    content
                }
                FrameSource::Live(model) => {
                    let arrived = (now_ms - live.started_ms) / model.arrival_period_ms.max(1);
                    let green_total = live.green_accum_ms
                        + live.green_since_ms.map_or(0, |since| now_ms.saturating_sub(since));
                    let discharged = (green_total as f64 * model.discharge_rate_vps / 1000.0) as u64;
                    FrameContent { count: arrived.saturating_sub(discharged) as u32, readings: Vec::new() }
                }
            };
            last_capture_ms = Some(now_ms);
            let frame = DetectionFrame {
                lane_id: options.lane,
                count: content.count,
                readings: content.readings,
                captured_at: Timestamp::from_ms(now_ms),
            };
            outbox.push_back((now_ms + one_way_ms, frame));
        }

        // Ship frames whose emulated uplink transit has elapsed.
        while outbox.front().is_some_and(|(due, _)| *due <= clock.now_ms()) {
            let (_, frame) = outbox.pop_front().expect("checked front");
            match send(WireBody::Frame { frame }, &mut writer, &mut seq, clock) {
                Ok(_) => {
                    report.frames_sent += 1;
                    last_sent_ms = clock.now_ms();
                }
                Err(_) => return SessionEnd::Disconnected,
            }
        }

        // Keep-alive.
        if clock.now_ms().saturating_sub(last_sent_ms) >= options.heartbeat_interval_ms {
            match send(WireBody::Heartbeat, &mut writer, &mut seq, clock) {
                Ok(_) => {
                    report.heartbeats_sent += 1;
                    last_sent_ms = clock.now_ms();
                }
                Err(_) => return SessionEnd::Disconnected,
            }
        }

        std::thread::sleep(Duration::from_millis(1));
    }
}
