//! The `edgelight` command line: simulate, decide, serve, agent, cloud,
//! replay, latency.
//!
//! Exit codes are a stable contract: 0 success, 2 input or validation
//! problems, 1 internal failures. All randomness flows from `--seed`, and
//! environment variables configure nothing but log verbosity (`RUST_LOG`).

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use edgelight_core::sim::run_scenario;
use edgelight_core::{decide, LaneId};

use crate::agent::{AgentOptions, FrameSource, LiveTraffic, ReplayDoc};
use crate::clock::WallClock;
use crate::cloud::CloudStub;
use crate::config::{seconds_to_ms, ConfigDoc};
use crate::formats::{
    sim_log_header, write_decision_log, write_metrics_csv, write_metrics_json, DecisionPrintout,
    RunManifest, SnapshotDoc,
};
use crate::latency::measure;
use crate::replay::replay_file;
use crate::scenario::ScenarioDoc;
use crate::server::{serve, ServerOptions};
use crate::{Error, Result, SCHEMA_VERSION, TOOL_VERSION};

#[derive(Debug, Parser)]
#[command(
    name = "edgelight",
    version,
    about = "Edge-local adaptive traffic signal system: deterministic simulator, edge decision server, lane agents, and log tooling."
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario through the deterministic intersection simulator.
    Simulate(SimulateArgs),
    /// Make one decision from a snapshot document and print it.
    Decide(DecideArgs),
    /// Run the edge decision server.
    Serve(ServeArgs),
    /// Run one lane agent against an edge server.
    Agent(AgentArgs),
    /// Serve the config document the way the cloud would.
    Cloud(CloudArgs),
    /// Re-run every decision in a log and verify it byte-for-byte.
    Replay(ReplayArgs),
    /// Summarize frame-to-decision and decision-to-actuation latency.
    Latency(LatencyArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// Scenario document (JSON).
    #[arg(long)]
    scenario: PathBuf,
    /// Config document; built-in defaults when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed for all simulation randomness.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output directory for the decision log, metrics, and manifest.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct DecideArgs {
    /// Snapshot document holding one frame set.
    #[arg(long)]
    frames: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ServeArgs {
    /// Listen address; port 0 picks a free one.
    #[arg(long, default_value = "127.0.0.1:7700")]
    listen: String,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Cloud stub endpoint (host:port); requires --config to persist syncs.
    #[arg(long)]
    cloud: Option<String>,
    /// Seconds between configuration re-syncs; 0 syncs only at startup.
    #[arg(long, default_value_t = 5.0)]
    cloud_sync_interval_s: f64,
    /// Override the config document's decision epoch.
    #[arg(long)]
    epoch_interval_s: Option<f64>,
    #[arg(long, default_value = "edgelight-out")]
    out: PathBuf,
    /// Stop after this many seconds; runs until killed when omitted.
    #[arg(long)]
    run_for_s: Option<f64>,
}

#[derive(Debug, Args)]
struct AgentArgs {
    /// Edge server address (host:port).
    #[arg(long)]
    server: String,
    /// Lane this agent reports for.
    #[arg(long)]
    lane: u32,
    /// Replay file of frame contents; mutually exclusive with the live model.
    #[arg(long, conflicts_with_all = ["arrival_period_s", "discharge_rate_vps"])]
    replay: Option<PathBuf>,
    /// Live model: seconds between vehicle arrivals.
    #[arg(long)]
    arrival_period_s: Option<f64>,
    /// Live model: vehicles per second discharged while green.
    #[arg(long, default_value_t = 0.5)]
    discharge_rate_vps: f64,
    /// Directory for the actuation log (agent_lane<N>.jsonl).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    run_for_s: Option<f64>,
    /// Emulate a remote decision server with this round trip, split evenly
    /// between uplink and downlink.
    #[arg(long, default_value_t = 0)]
    inject_rtt_ms: u64,
    /// Frame cadence before the first phase command arrives.
    #[arg(long, default_value_t = 1000)]
    initial_cadence_ms: u64,
    #[arg(long, default_value_t = 1000)]
    heartbeat_interval_ms: u64,
    /// Exit on disconnect instead of reconnecting with backoff.
    #[arg(long)]
    no_reconnect: bool,
}

#[derive(Debug, Args)]
struct CloudArgs {
    #[arg(long, default_value = "127.0.0.1:7800")]
    listen: String,
    /// Config document to serve.
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    run_for_s: Option<f64>,
}

#[derive(Debug, Args)]
struct ReplayArgs {
    /// Decision log to verify.
    #[arg(long)]
    log: PathBuf,
}

#[derive(Debug, Args)]
struct LatencyArgs {
    #[arg(long)]
    decision_log: PathBuf,
    /// Agent actuation logs; repeatable.
    #[arg(long = "agent-log")]
    agent_logs: Vec<PathBuf>,
    /// Server stats file for bytes-per-epoch accounting.
    #[arg(long)]
    stats: Option<PathBuf>,
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();
    match cli.command {
        Command::Simulate(args) => cmd_simulate(args),
        Command::Decide(args) => cmd_decide(args),
        Command::Serve(args) => cmd_serve(args),
        Command::Agent(args) => cmd_agent(args),
        Command::Cloud(args) => cmd_cloud(args),
        Command::Replay(args) => cmd_replay(args),
        Command::Latency(args) => cmd_latency(args),
    }
}

fn now_wall_ms() -> u64 {
    use crate::clock::Clock;
    WallClock.now_ms()
}

fn manifest_skeleton(command: &str) -> RunManifest {
    RunManifest {
        schema: SCHEMA_VERSION,
        tool_version: TOOL_VERSION.to_string(),
        command: command.to_string(),
        argv: std::env::args().skip(1).collect(),
        config_path: None,
        scenario_path: None,
        seed: None,
        outputs: Vec::new(),
        started_at_ms: now_wall_ms(),
        finished_at_ms: 0,
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let mut manifest = manifest_skeleton("simulate");
    manifest.config_path = args.config.as_ref().map(|p| p.display().to_string());
    manifest.scenario_path = Some(args.scenario.display().to_string());
    manifest.seed = Some(args.seed);

    let config = ConfigDoc::load_or_default(args.config.as_deref())?;
    let controller = config.controller_config()?;
    let params = config.sim_params()?;
    let scenario = ScenarioDoc::load(&args.scenario)?.to_scenario(controller.lane_count)?;

    let (entries, metrics) = run_scenario(&scenario, &controller, &params, args.seed)
        .map_err(|e| Error::validation(e.to_string()))?;

    let log_path = args.out.join("decisions.jsonl");
    let metrics_path = args.out.join("metrics.json");
    let csv_path = args.out.join("metrics.csv");
    let manifest_path = args.out.join("manifest.json");
    let header = sim_log_header(&controller, params.epoch_interval_ms, params.geometry, args.seed);
    write_decision_log(&log_path, &header, &entries)?;
    write_metrics_json(&metrics_path, &metrics)?;
    write_metrics_csv(&csv_path, &metrics)?;

    manifest.outputs = vec![
        log_path.display().to_string(),
        metrics_path.display().to_string(),
        csv_path.display().to_string(),
    ];
    manifest.finished_at_ms = now_wall_ms();
    manifest.save(&manifest_path)?;

    println!(
        "simulated {:.1}s: {} decisions, {} starvation violations, log at {}",
        metrics.horizon_s,
        metrics.total_decisions,
        metrics.starvation_violations,
        log_path.display()
    );
    Ok(())
}

fn cmd_decide(args: DecideArgs) -> Result<()> {
    let config = ConfigDoc::load_or_default(args.config.as_deref())?;
    let controller = config.controller_config()?;
    let geometry = config.geometry()?;
    let doc = SnapshotDoc::load(&args.frames)?;
    let (snapshot, current_green, green_elapsed_ms) = doc.resolve(&controller, &geometry)?;
    let decision = decide(&snapshot, &controller, current_green, green_elapsed_ms)
        .map_err(|e| Error::validation(e.to_string()))?;
    let printout = DecisionPrintout::new(&snapshot, &controller, &decision);
    println!("{}", serde_json::to_string_pretty(&printout).expect("printout serializes"));
    Ok(())
}

fn cmd_serve(args: ServeArgs) -> Result<()> {
    let mut manifest = manifest_skeleton("serve");
    manifest.config_path = args.config.as_ref().map(|p| p.display().to_string());

    let config = ConfigDoc::load_or_default(args.config.as_deref())?;
    let mut options = ServerOptions::new(args.listen.clone(), config, args.out.clone());
    options.local_config_path = args.config.clone();
    options.cloud = args.cloud.clone();
    options.cloud_sync_interval_ms = seconds_to_ms("cloud_sync_interval_s", args.cloud_sync_interval_s)?;
    options.epoch_interval_override_ms = match args.epoch_interval_s {
        Some(s) => Some(seconds_to_ms("epoch_interval_s", s)?),
        None => None,
    };
    options.run_for_ms = match args.run_for_s {
        Some(s) => Some(seconds_to_ms("run_for_s", s)?),
        None => None,
    };

    let handle = serve(options, Arc::new(WallClock))?;
    println!("listening on {}", handle.addr());
    let stats = handle.wait()?;
    manifest.outputs = vec![
        args.out.join("decisions.jsonl").display().to_string(),
        args.out.join("server_stats.json").display().to_string(),
    ];
    manifest.finished_at_ms = now_wall_ms();
    manifest.save(&args.out.join("manifest.json"))?;
    println!(
        "served {} epochs, {} frames from agents, stats at {}",
        stats.epochs,
        stats.frames_rx,
        args.out.join("server_stats.json").display()
    );
    Ok(())
}

fn cmd_agent(args: AgentArgs) -> Result<()> {
    let lane = LaneId(args.lane);
    if args.lane == 0 {
        return Err(Error::validation("lane ids start at 1".to_string()));
    }
    let source = match (&args.replay, args.arrival_period_s) {
        (Some(path), _) => FrameSource::Replay(ReplayDoc::load(path)?.frames),
        (None, period) => {
            let period_s = period.unwrap_or(2.0);
            let arrival_period_ms = seconds_to_ms("arrival_period_s", period_s)?;
            if arrival_period_ms == 0 {
                return Err(Error::validation("arrival_period_s: must be positive".to_string()));
            }
            FrameSource::Live(LiveTraffic {
                arrival_period_ms,
                discharge_rate_vps: args.discharge_rate_vps,
            })
        }
    };
    let mut options = AgentOptions::new(args.server.clone(), lane, source);
    options.actuation_log_path =
        args.out.as_ref().map(|dir| dir.join(format!("agent_lane{}.jsonl", args.lane)));
    options.run_for_ms = match args.run_for_s {
        Some(s) => Some(seconds_to_ms("run_for_s", s)?),
        None => None,
    };
    options.inject_rtt_ms = args.inject_rtt_ms;
    options.initial_cadence_ms = args.initial_cadence_ms;
    options.heartbeat_interval_ms = args.heartbeat_interval_ms;
    options.reconnect = !args.no_reconnect;

    let mut manifest = args.out.as_ref().map(|_| manifest_skeleton("agent"));
    let log_path = options.actuation_log_path.clone();

    let report = crate::agent::run_agent(options, Arc::new(WallClock), Arc::new(AtomicBool::new(false)))?;
    if let Some(mut m) = manifest.take() {
        if let Some(log_path) = &log_path {
            m.outputs = vec![log_path.display().to_string()];
        }
        m.finished_at_ms = now_wall_ms();
        m.save(&args.out.as_ref().expect("out set").join(format!("agent_lane{}_manifest.json", args.lane)))?;
    }
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if let Some(fatal) = report.fatal_error {
        return Err(Error::internal(format!("agent stopped: {fatal}")));
    }
    Ok(())
}

fn cmd_cloud(args: CloudArgs) -> Result<()> {
    // Validate the document up front so the stub never serves garbage.
    ConfigDoc::load(&args.config)?;
    let stub = CloudStub::start(&args.listen, &args.config)?;
    println!("cloud stub serving {} on {}", args.config.display(), stub.addr());
    match args.run_for_s {
        Some(s) => std::thread::sleep(Duration::from_millis(seconds_to_ms("run_for_s", s)?)),
        None => loop {
            std::thread::sleep(Duration::from_secs(3600));
        },
    }
    Ok(())
}

fn cmd_replay(args: ReplayArgs) -> Result<()> {
    let verdict = replay_file(&args.log)?;
    println!("{verdict}");
    if verdict.is_consistent() {
        Ok(())
    } else {
        Err(Error::internal("replay diverged from the logged decisions".to_string()))
    }
}

fn cmd_latency(args: LatencyArgs) -> Result<()> {
    let report = measure(&args.decision_log, &args.agent_logs, args.stats.as_deref())?;
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    Ok(())
}
