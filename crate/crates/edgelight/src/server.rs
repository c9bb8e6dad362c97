//! The edge decision server.
//!
//! Lane agents connect over TCP and stream detection frames; the server
//! keeps the latest frame per lane, runs one decision epoch on a fixed
//! cadence, appends to the decision log, and broadcasts the phase plan to
//! every connected agent. The decision path is a single thread; connection
//! handling is one reader thread per agent feeding it through a channel, so
//! a slow or dead camera never stalls arbitration.
//!
//! The cloud is consulted only for configuration, from a separate thread,
//! and never blocks serving: if it is unreachable the local configuration
//! stays in force.

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, ErrorKind, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::mpsc::{RecvTimeoutError, Sender};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use edgelight_core::{
    compute_index, detect_emergency, DetectionFrame, LaneId, LaneObservation, Timestamp,
};

use crate::clock::Clock;
use crate::cloud::{config_sync, CloudTraffic, SyncOutcome};
use crate::config::ConfigDoc;
use crate::formats::{atomic_write, LogHeader, LogWriter};
use crate::wire::{decode, encode, SeqTracker, WireBody, WireMessage};
use crate::{Error, Result, SCHEMA_VERSION, TOOL_VERSION};

pub struct ServerOptions {
    pub listen: String,
    pub config: ConfigDoc,
    /// Where configuration syncs persist; required when `cloud` is set.
    pub local_config_path: Option<PathBuf>,
    /// Cloud stub endpoint, `host:port`. Absent means fully offline.
    pub cloud: Option<String>,
    /// How often to re-sync configuration; 0 syncs only at startup.
    pub cloud_sync_interval_ms: u64,
    pub epoch_interval_override_ms: Option<u64>,
    pub out_dir: PathBuf,
    pub run_for_ms: Option<u64>,
}

impl ServerOptions {
    pub fn new(listen: impl Into<String>, config: ConfigDoc, out_dir: impl Into<PathBuf>) -> Self {
        ServerOptions {
            listen: listen.into(),
            config,
            local_config_path: None,
            cloud: None,
            cloud_sync_interval_ms: 5_000,
            epoch_interval_override_ms: None,
            out_dir: out_dir.into(),
            run_for_ms: None,
        }
    }
}

/// Counters shared across the server's threads.
#[derive(Debug, Default)]
struct Counters {
    frames_rx: AtomicU64,
    heartbeats_rx: AtomicU64,
    bytes_from_agents: AtomicU64,
    bytes_to_agents: AtomicU64,
    seq_gaps: AtomicU64,
    malformed_messages: AtomicU64,
    rejected_connections: AtomicU64,
    errors_sent: AtomicU64,
}

/// End-of-run accounting, serialized to `server_stats.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerStats {
    pub schema: u32,
    pub epochs: u64,
    pub frames_rx: u64,
    pub heartbeats_rx: u64,
    pub bytes_from_agents: u64,
    pub bytes_to_agents: u64,
    pub cloud_bytes_tx: u64,
    pub cloud_bytes_rx: u64,
    /// Size of the serialized effective configuration document.
    pub config_size_bytes: u64,
    pub config_syncs: u64,
    pub seq_gaps: u64,
    pub malformed_messages: u64,
    pub rejected_connections: u64,
    pub errors_sent: u64,
}

enum Event {
    Frame { frame: DetectionFrame, received_at_ms: u64 },
    ConfigUpdate { doc: ConfigDoc, traffic: CloudTraffic, outcome: SyncOutcome },
}

struct AgentConn {
    conn_id: u64,
    stream: TcpStream,
    seq: u64,
}

type Registry = Arc<Mutex<BTreeMap<LaneId, AgentConn>>>;

pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    join: Option<JoinHandle<Result<ServerStats>>>,
}

impl ServerHandle {
    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Signals shutdown and waits for the final stats.
    pub fn stop(mut self) -> Result<ServerStats> {
        self.stop.store(true, Ordering::SeqCst);
        self.join
            .take()
            .expect("stop called once")
            .join()
            .map_err(|_| Error::internal("server thread panicked".to_string()))?
    }

    /// Waits without signalling; pair with `run_for_ms`.
    pub fn wait(mut self) -> Result<ServerStats> {
        self.join
            .take()
            .expect("wait called once")
            .join()
            .map_err(|_| Error::internal("server thread panicked".to_string()))?
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(join) = self.join.take() {
            let _ = join.join();
        }
    }
}

/// Binds, spawns the serving threads, and returns immediately.
pub fn serve(options: ServerOptions, clock: Arc<dyn Clock>) -> Result<ServerHandle> {
    if options.cloud.is_some() && options.local_config_path.is_none() {
        return Err(Error::validation(
            "cloud sync needs a local config file to persist into; pass a config path".to_string(),
        ));
    }
    let listener = TcpListener::bind(&options.listen)
        .map_err(|e| Error::internal(format!("bind {}: {e}", options.listen)))?;
    listener.set_nonblocking(true).map_err(|e| Error::internal(e.to_string()))?;
    let addr = listener.local_addr().map_err(|e| Error::internal(e.to_string()))?;

    let stop = Arc::new(AtomicBool::new(false));
    let handle_stop = stop.clone();
    let join = std::thread::Builder::new()
        .name("edgelight-server".to_string())
        .spawn(move || run_server(listener, options, clock, stop))
        .map_err(|e| Error::internal(e.to_string()))?;
    Ok(ServerHandle { addr, stop: handle_stop, join: Some(join) })
}

fn run_server(
    listener: TcpListener,
    options: ServerOptions,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
) -> Result<ServerStats> {
    let mut cloud_traffic = CloudTraffic::default();
    let mut config_syncs = 0u64;

    // Startup sync; failures fall back to the local document.
    let effective = match (&options.cloud, &options.local_config_path) {
        (Some(endpoint), Some(path)) => {
            let (doc, outcome) =
                config_sync(Some(endpoint), path, Duration::from_millis(500), &mut cloud_traffic)?;
            match &outcome {
                SyncOutcome::Synced { changed } => {
                    config_syncs += 1;
                    log::info!("config synced from cloud (changed: {changed})");
                }
                SyncOutcome::SkippedOffline { reason } => {
                    log::warn!("cloud sync skipped, using local config: {reason}");
                }
                SyncOutcome::Disabled => {}
            }
            doc
        }
        _ => options.config.clone(),
    };

    let controller = effective.controller_config()?;
    let geometry = effective.geometry()?;
    let epoch_interval_ms = match options.epoch_interval_override_ms {
        Some(ms) if ms > 0 => ms,
        Some(_) => return Err(Error::validation("epoch interval must be positive".to_string())),
        None => effective.epoch_interval_ms()?,
    };
    let config_size_bytes = effective.to_json_pretty().len() as u64;

    let start_ms = clock.now_ms();
    let mut engine = edgelight_core::DecisionEngine::new(controller.clone(), Timestamp::from_ms(start_ms))
        .map_err(|e| Error::validation(format!("controller config: {e}")))?;

    let header = LogHeader {
        schema: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        mode: "serve".to_string(),
        config: controller.clone(),
        epoch_interval_ms,
        geometry: Some(geometry),
        seed: None,
        started_at_ms: Some(start_ms),
    };
    let log_path = options.out_dir.join("decisions.jsonl");
    let mut log = LogWriter::create(&log_path, &header)?;

    let counters = Arc::new(Counters::default());
    let registry: Registry = Arc::new(Mutex::new(BTreeMap::new()));
    let (tx, rx) = std::sync::mpsc::channel::<Event>();

    let acceptor = spawn_acceptor(
        listener,
        registry.clone(),
        tx.clone(),
        counters.clone(),
        clock.clone(),
        stop.clone(),
        controller.lane_count,
        epoch_interval_ms,
    );

    let sync_thread = match (&options.cloud, &options.local_config_path) {
        (Some(endpoint), Some(path)) if options.cloud_sync_interval_ms > 0 => Some(spawn_cloud_sync(
            endpoint.clone(),
            path.clone(),
            options.cloud_sync_interval_ms,
            tx.clone(),
            stop.clone(),
        )),
        _ => None,
    };
    drop(tx);

    let deadline_ms = options.run_for_ms.map(|ms| start_ms + ms);
    let mut latest: BTreeMap<LaneId, (DetectionFrame, u64)> = BTreeMap::new();
    let mut controller = controller;
    let mut epochs = 0u64;
    let mut next_epoch_ms = start_ms + epoch_interval_ms;

    loop {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let now_ms = clock.now_ms();
        if let Some(deadline) = deadline_ms {
            if now_ms >= deadline {
                stop.store(true, Ordering::SeqCst);
                break;
            }
        }
        if now_ms < next_epoch_ms {
            match rx.recv_timeout(Duration::from_millis((next_epoch_ms - now_ms).min(50))) {
                Ok(Event::Frame { frame, received_at_ms }) => {
                    latest.insert(frame.lane_id, (frame, received_at_ms));
                }
                Ok(Event::ConfigUpdate { doc, traffic, outcome }) => {
                    cloud_traffic.bytes_tx += traffic.bytes_tx;
                    cloud_traffic.bytes_rx += traffic.bytes_rx;
                    if let SyncOutcome::Synced { changed } = outcome {
                        config_syncs += 1;
                        if changed {
                            match doc.controller_config() {
                                Ok(new_controller) => {
                                    if engine.set_config(new_controller.clone()).is_ok() {
                                        controller = new_controller;
                                        log::info!("adopted synced configuration");
                                        broadcast(
                                            &registry,
                                            &counters,
                                            clock.as_ref(),
                                            WireBody::ConfigSync { controller: controller.clone() },
                                        );
                                    }
                                }
                                Err(e) => log::warn!("synced config rejected: {e}"),
                            }
                        }
                    }
                }
                Err(RecvTimeoutError::Timeout) => {}
                Err(RecvTimeoutError::Disconnected) => break,
            }
            continue;
        }

        // Epoch boundary: assemble, decide, log, broadcast.
        let mut observations = BTreeMap::new();
        let mut received_at = BTreeMap::new();
        for (lane, (frame, received_at_ms)) in &latest {
            observations.insert(
                *lane,
                LaneObservation {
                    index: compute_index(frame.count, &geometry),
                    ev: detect_emergency(&frame.readings, &controller.keywords, controller.min_confidence),
                    last_frame_at: frame.captured_at,
                    has_frame: true,
                },
            );
            received_at.insert(*lane, *received_at_ms);
        }
        match engine.epoch(Timestamp::from_ms(now_ms), &observations) {
            Ok(outcome) => {
                epochs += 1;
                let decided_at_ms = clock.now_ms();
                let entry = edgelight_core::LogEntry {
                    epoch_ms: now_ms,
                    decided_at_ms,
                    current_green: outcome.previous_green,
                    green_elapsed_ms: outcome.green_elapsed_ms,
                    snapshot: outcome.snapshot,
                    decision: outcome.decision.clone(),
                    frame_received_at_ms: Some(received_at),
                };
                log.append(&entry)?;
                broadcast(
                    &registry,
                    &counters,
                    clock.as_ref(),
                    WireBody::PhaseCmd {
                        epoch_ms: now_ms,
                        decided_at_ms,
                        green_lane: outcome.decision.green_lane,
                        phases: outcome.decision.phases.clone(),
                        cadence_ms: outcome.decision.next_sample_interval_ms.clone(),
                        reason: outcome.decision.reason,
                    },
                );
            }
            Err(e) => {
                // Keep the previous decision; this epoch emits nothing.
                log::warn!("epoch at {now_ms}ms skipped: {e}");
            }
        }
        next_epoch_ms += epoch_interval_ms;
        if next_epoch_ms <= clock.now_ms() {
            // Fell behind; slip the grid rather than bursting.
            next_epoch_ms = clock.now_ms() + epoch_interval_ms;
        }
    }

    stop.store(true, Ordering::SeqCst);
    let _ = acceptor.join();
    if let Some(t) = sync_thread {
        let _ = t.join();
    }

    let stats = ServerStats {
        schema: SCHEMA_VERSION,
        epochs,
        frames_rx: counters.frames_rx.load(Ordering::SeqCst),
        heartbeats_rx: counters.heartbeats_rx.load(Ordering::SeqCst),
        bytes_from_agents: counters.bytes_from_agents.load(Ordering::SeqCst),
        bytes_to_agents: counters.bytes_to_agents.load(Ordering::SeqCst),
        cloud_bytes_tx: cloud_traffic.bytes_tx,
        cloud_bytes_rx: cloud_traffic.bytes_rx,
        config_size_bytes,
        config_syncs,
        seq_gaps: counters.seq_gaps.load(Ordering::SeqCst),
        malformed_messages: counters.malformed_messages.load(Ordering::SeqCst),
        rejected_connections: counters.rejected_connections.load(Ordering::SeqCst),
        errors_sent: counters.errors_sent.load(Ordering::SeqCst),
    };
    let stats_path = options.out_dir.join("server_stats.json");
    let mut raw = serde_json::to_string_pretty(&stats).expect("stats serialize");
    raw.push('\n');
    atomic_write(&stats_path, raw.as_bytes())?;
    log::info!("server stopped after {epochs} epochs, log at {}", log_path.display());
    Ok(stats)
}

fn broadcast(registry: &Registry, counters: &Counters, clock: &dyn Clock, body: WireBody) {
    let mut dead = Vec::new();
    let mut reg = registry.lock().expect("registry lock");
    for (lane, conn) in reg.iter_mut() {
        conn.seq += 1;
        let msg = WireMessage {
            schema: SCHEMA_VERSION,
            seq: conn.seq,
            sent_at_ms: clock.now_ms(),
            body: body.clone(),
        };
        let line = encode(&msg);
        if conn.stream.write_all(line.as_bytes()).is_err() {
            dead.push(*lane);
        } else {
            counters.bytes_to_agents.fetch_add(line.len() as u64, Ordering::SeqCst);
        }
    }
    for lane in dead {
        reg.remove(&lane);
        log::warn!("dropping unwritable connection for {lane}");
    }
}

#[allow(clippy::too_many_arguments)]
fn spawn_acceptor(
    listener: TcpListener,
    registry: Registry,
    tx: Sender<Event>,
    counters: Arc<Counters>,
    clock: Arc<dyn Clock>,
    stop: Arc<AtomicBool>,
    lane_count: u32,
    epoch_interval_ms: u64,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("edgelight-acceptor".to_string())
        .spawn(move || {
            let mut next_conn_id = 0u64;
            while !stop.load(Ordering::SeqCst) {
                match listener.accept() {
                    Ok((stream, peer)) => {
                        next_conn_id += 1;
                        let conn_id = next_conn_id;
                        let registry = registry.clone();
                        let tx = tx.clone();
                        let counters = counters.clone();
                        let clock = clock.clone();
                        let stop = stop.clone();
                        let _ = std::thread::Builder::new()
                            .name(format!("edgelight-conn-{conn_id}"))
                            .spawn(move || {
                                if let Err(e) = handle_connection(
                                    stream,
                                    conn_id,
                                    registry,
                                    tx,
                                    &counters,
                                    clock.as_ref(),
                                    stop,
                                    lane_count,
                                    epoch_interval_ms,
                                ) {
                                    log::debug!("connection from {peer} ended: {e}");
                                }
                            });
                    }
                    Err(e) if e.kind() == ErrorKind::WouldBlock => {
                        std::thread::sleep(Duration::from_millis(5));
                    }
                    Err(e) => {
                        log::warn!("accept failed: {e}");
                        break;
                    }
                }
            }
        })
        .expect("spawn acceptor")
}

fn send_error(stream: &mut TcpStream, counters: &Counters, clock: &dyn Clock, seq: u64, message: String) {
    let msg = WireMessage {
        schema: SCHEMA_VERSION,
        seq,
        sent_at_ms: clock.now_ms(),
        body: WireBody::Error { message },
    };
    let _ = stream.write_all(encode(&msg).as_bytes());
    counters.errors_sent.fetch_add(1, Ordering::SeqCst);
}

/// Reads one line, tolerating read timeouts so the stop flag stays live.
/// Returns None on EOF or a fatal IO error.
fn read_line_patient(
    reader: &mut BufReader<TcpStream>,
    line: &mut String,
    stop: &AtomicBool,
) -> Option<()> {
    loop {
        match reader.read_line(line) {
            Ok(0) => return None,
            Ok(_) => {
                if line.ends_with('\n') {
                    return Some(());
                }
                // Timed out mid-line; keep appending.
            }
            Err(e) if e.kind() == ErrorKind::WouldBlock || e.kind() == ErrorKind::TimedOut => {}
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(_) => return None,
        }
        if stop.load(Ordering::SeqCst) {
            return None;
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn handle_connection(
    stream: TcpStream,
    conn_id: u64,
    registry: Registry,
    tx: Sender<Event>,
    counters: &Counters,
    clock: &dyn Clock,
    stop: Arc<AtomicBool>,
    lane_count: u32,
    epoch_interval_ms: u64,
) -> Result<()> {
    stream
        .set_read_timeout(Some(Duration::from_millis(100)))
        .map_err(|e| Error::internal(e.to_string()))?;
    let mut write_half = stream.try_clone().map_err(|e| Error::internal(e.to_string()))?;
    let mut reader = BufReader::new(stream);
    let mut line = String::new();
    let mut tracker = SeqTracker::default();

    // Handshake: first message must be a lane announcement.
    if read_line_patient(&mut reader, &mut line, &stop).is_none() {
        return Ok(());
    }
    counters.bytes_from_agents.fetch_add(line.len() as u64, Ordering::SeqCst);
    let hello = match decode(line.trim_end()) {
        Ok(msg) => msg,
        Err(e) => {
            counters.malformed_messages.fetch_add(1, Ordering::SeqCst);
            counters.rejected_connections.fetch_add(1, Ordering::SeqCst);
            send_error(&mut write_half, counters, clock, 1, e.to_string());
            return Ok(());
        }
    };
    tracker.observe(hello.seq).ok();
    let lane = match hello.body {
        WireBody::Hello { lane_id: Some(lane), .. } if lane.0 >= 1 && lane.0 <= lane_count => lane,
        WireBody::Hello { lane_id: Some(lane), .. } => {
            counters.rejected_connections.fetch_add(1, Ordering::SeqCst);
            send_error(
                &mut write_half,
                counters,
                clock,
                1,
                format!("lane {} outside 1..={lane_count}", lane.0),
            );
            return Ok(());
        }
        _ => {
            counters.rejected_connections.fetch_add(1, Ordering::SeqCst);
            send_error(&mut write_half, counters, clock, 1, "expected hello with lane_id".to_string());
            return Ok(());
        }
    };

    // One live connection per lane.
    {
        let mut reg = registry.lock().expect("registry lock");
        if reg.contains_key(&lane) {
            drop(reg);
            counters.rejected_connections.fetch_add(1, Ordering::SeqCst);
            send_error(&mut write_half, counters, clock, 1, format!("{lane} already connected"));
            return Ok(());
        }
        let mut conn = AgentConn {
            conn_id,
            stream: write_half.try_clone().map_err(|e| Error::internal(e.to_string()))?,
            seq: 1,
        };
        let reply = WireMessage {
            schema: SCHEMA_VERSION,
            seq: 1,
            sent_at_ms: clock.now_ms(),
            body: WireBody::Hello { lane_id: None, epoch_interval_ms: Some(epoch_interval_ms) },
        };
        let reply_line = encode(&reply);
        if conn.stream.write_all(reply_line.as_bytes()).is_err() {
            return Ok(());
        }
        counters.bytes_to_agents.fetch_add(reply_line.len() as u64, Ordering::SeqCst);
        reg.insert(lane, conn);
    }
    log::info!("{lane} connected");

    let cleanup = |registry: &Registry| {
        let mut reg = registry.lock().expect("registry lock");
        if reg.get(&lane).map(|c| c.conn_id) == Some(conn_id) {
            reg.remove(&lane);
        }
    };

    loop {
        line.clear();
        if read_line_patient(&mut reader, &mut line, &stop).is_none() {
            break;
        }
        counters.bytes_from_agents.fetch_add(line.len() as u64, Ordering::SeqCst);
        let msg = match decode(line.trim_end()) {
            Ok(msg) => msg,
            Err(e) => {
                counters.malformed_messages.fetch_add(1, Ordering::SeqCst);
                send_error(&mut write_half, counters, clock, u64::MAX, e.to_string());
                break;
            }
        };
        if let Err(e) = tracker.observe(msg.seq) {
            counters.malformed_messages.fetch_add(1, Ordering::SeqCst);
            send_error(&mut write_half, counters, clock, u64::MAX, e.to_string());
            break;
        }
        match msg.body {
            WireBody::Frame { frame } => {
                if frame.lane_id != lane {
                    counters.malformed_messages.fetch_add(1, Ordering::SeqCst);
                    send_error(
                        &mut write_half,
                        counters,
                        clock,
                        u64::MAX,
                        format!("frame for {} on {lane}'s connection", frame.lane_id),
                    );
                    break;
                }
                counters.frames_rx.fetch_add(1, Ordering::SeqCst);
                if tx.send(Event::Frame { frame, received_at_ms: clock.now_ms() }).is_err() {
                    break;
                }
            }
            WireBody::Heartbeat => {
                counters.heartbeats_rx.fetch_add(1, Ordering::SeqCst);
            }
            WireBody::Error { message } => {
                log::warn!("{lane} reported: {message}");
                break;
            }
            _ => {
                counters.malformed_messages.fetch_add(1, Ordering::SeqCst);
                send_error(&mut write_half, counters, clock, u64::MAX, "unexpected message type".to_string());
                break;
            }
        }
    }
    counters.seq_gaps.fetch_add(tracker.gaps, Ordering::SeqCst);
    cleanup(&registry);
    log::info!("{lane} disconnected");
    Ok(())
}

fn spawn_cloud_sync(
    endpoint: String,
    path: PathBuf,
    interval_ms: u64,
    tx: Sender<Event>,
    stop: Arc<AtomicBool>,
) -> JoinHandle<()> {
    std::thread::Builder::new()
        .name("edgelight-cloudsync".to_string())
        .spawn(move || {
            let mut elapsed = 0u64;
            while !stop.load(Ordering::SeqCst) {
                std::thread::sleep(Duration::from_millis(50));
                elapsed += 50;
                if elapsed < interval_ms {
                    continue;
                }
                elapsed = 0;
                let mut traffic = CloudTraffic::default();
                match config_sync(Some(&endpoint), &path, Duration::from_millis(500), &mut traffic) {
                    Ok((doc, outcome)) => {
                        if tx.send(Event::ConfigUpdate { doc, traffic, outcome }).is_err() {
                            break;
                        }
                    }
                    Err(e) => log::warn!("cloud sync failed: {e}"),
                }
            }
        })
        .expect("spawn cloud sync")
}
