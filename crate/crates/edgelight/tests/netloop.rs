//! Loopback integration tests for the agent/server harness: wire safety,
//! partial failure, protocol rejection, reconnection, and cadence control.

mod common;

use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use edgelight::agent::{start_agent, AgentOptions, FrameSource, LiveTraffic};
use edgelight::clock::WallClock;
use edgelight::formats::read_decision_log;
use edgelight::server::{serve, ServerOptions};
use edgelight::wire::{decode, encode, WireBody, WireMessage};
use edgelight::SCHEMA_VERSION;
use edgelight_core::{LaneId, Phase};

use common::{compressed_config, constant_frames, net_lock, out_dir};

fn agent_options(server: &str, lane: u32, frames: Vec<edgelight::agent::FrameContent>) -> AgentOptions {
    let mut options =
        AgentOptions::new(server, LaneId(lane), FrameSource::Replay(frames));
    options.initial_cadence_ms = 50;
    options.heartbeat_interval_ms = 200;
    options
}

#[test]
fn four_agents_exactly_one_green_on_the_wire() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(2_000);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr().to_string();

    let mut agents = Vec::new();
    for lane in 1..=4u32 {
        let mut options = agent_options(&addr, lane, constant_frames(lane * 7, 200));
        options.actuation_log_path = Some(out.join(format!("agent_lane{lane}.jsonl")));
        options.run_for_ms = Some(1_800);
        agents.push(start_agent(options, Arc::new(WallClock)));
    }
    let reports: Vec<_> = agents.into_iter().map(|a| a.wait().unwrap()).collect();
    let stats = server.wait().unwrap();

    assert!(stats.epochs > 10, "expected steady epochs, got {}", stats.epochs);
    assert!(stats.frames_rx > 20, "expected frames, got {}", stats.frames_rx);
    for report in &reports {
        assert!(report.frames_sent > 0);
        assert!(report.commands_applied > 0, "agents should see phase commands");
        assert!(report.fatal_error.is_none());
    }

    // Decision log safety.
    let (_, entries) = read_decision_log(&out.join("decisions.jsonl")).unwrap();
    assert!(!entries.is_empty());
    for entry in &entries {
        assert!(entry.decision.check_exactly_one_green());
    }

    // Wire-level safety: across the four actuation logs, every epoch that
    // all four agents saw has exactly one green lane.
    let mut phases_by_epoch: BTreeMap<u64, Vec<(u32, Phase)>> = BTreeMap::new();
    for lane in 1..=4u32 {
        let records =
            edgelight::latency::read_actuation_log(&out.join(format!("agent_lane{lane}.jsonl")))
                .unwrap();
        assert!(!records.is_empty());
        for record in records {
            phases_by_epoch.entry(record.epoch_ms).or_default().push((lane, record.phase));
        }
    }
    let mut complete_epochs = 0;
    for (epoch, phases) in phases_by_epoch {
        if phases.len() == 4 {
            complete_epochs += 1;
            let greens = phases.iter().filter(|(_, p)| *p == Phase::Green).count();
            assert_eq!(greens, 1, "epoch {epoch} broadcast {greens} greens");
        }
    }
    assert!(complete_epochs > 5, "expected complete broadcast epochs, saw {complete_epochs}");
}

#[test]
fn decisions_continue_when_an_agent_dies() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(2_500);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr().to_string();

    let mut short = agent_options(&addr, 1, constant_frames(30, 500));
    short.run_for_ms = Some(600);
    short.reconnect = false;
    let short = start_agent(short, Arc::new(WallClock));

    let mut long = agent_options(&addr, 2, constant_frames(3, 500));
    long.run_for_ms = Some(2_300);
    let long = start_agent(long, Arc::new(WallClock));

    short.wait().unwrap();
    long.wait().unwrap();
    let stats = server.wait().unwrap();
    assert!(stats.epochs > 20);

    let (_, entries) = read_decision_log(&out.join("decisions.jsonl")).unwrap();
    // Lane 1 stops reporting early; later epochs must still decide, carry
    // lane 1's last index, and mark it stale.
    let last = entries.last().unwrap();
    assert!(last.epoch_ms > entries[0].epoch_ms + 1_500);
    let lane1 = last.snapshot.lane(LaneId(1)).unwrap();
    assert!(lane1.stale, "dead agent's lane should go stale");
    assert!(lane1.index.value() > 0.0, "last known index is retained");
    for entry in &entries {
        assert!(entry.decision.check_exactly_one_green());
    }
}

#[test]
fn duplicate_lane_is_rejected() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(1_500);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr().to_string();

    let mut first = agent_options(&addr, 1, constant_frames(5, 500));
    first.run_for_ms = Some(1_200);
    let first = start_agent(first, Arc::new(WallClock));
    std::thread::sleep(Duration::from_millis(300));

    let mut second = agent_options(&addr, 1, constant_frames(5, 500));
    second.run_for_ms = Some(600);
    second.reconnect = false;
    let second = start_agent(second, Arc::new(WallClock));

    let second_report = second.wait().unwrap();
    let first_report = first.wait().unwrap();
    let stats = server.wait().unwrap();

    assert!(second_report.fatal_error.is_some(), "duplicate lane must be turned away");
    assert!(first_report.fatal_error.is_none());
    assert!(first_report.frames_sent > 0);
    assert!(stats.rejected_connections >= 1);
}

#[test]
fn malformed_and_mismatched_messages_get_an_error() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(1_500);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr();

    // Garbage instead of a hello.
    let mut stream = TcpStream::connect(addr).unwrap();
    stream.write_all(b"this is not a wire message\n").unwrap();
    let mut reply = String::new();
    BufReader::new(stream.try_clone().unwrap()).read_line(&mut reply).unwrap();
    let msg = decode(reply.trim_end()).unwrap();
    assert!(matches!(msg.body, WireBody::Error { .. }), "got {msg:?}");

    // Wrong schema version in the hello.
    let mut stream = TcpStream::connect(addr).unwrap();
    let bad = WireMessage {
        schema: 999,
        seq: 1,
        sent_at_ms: 0,
        body: WireBody::Hello { lane_id: Some(LaneId(1)), epoch_interval_ms: None },
    };
    stream.write_all(encode(&bad).as_bytes()).unwrap();
    let mut reply = String::new();
    BufReader::new(stream.try_clone().unwrap()).read_line(&mut reply).unwrap();
    let msg = decode(reply.trim_end()).unwrap();
    assert!(matches!(msg.body, WireBody::Error { .. }));

    // Lane outside the configured range.
    let mut stream = TcpStream::connect(addr).unwrap();
    let bad = WireMessage {
        schema: SCHEMA_VERSION,
        seq: 1,
        sent_at_ms: 0,
        body: WireBody::Hello { lane_id: Some(LaneId(99)), epoch_interval_ms: None },
    };
    stream.write_all(encode(&bad).as_bytes()).unwrap();
    let mut reply = String::new();
    BufReader::new(stream.try_clone().unwrap()).read_line(&mut reply).unwrap();
    let msg = decode(reply.trim_end()).unwrap();
    assert!(matches!(msg.body, WireBody::Error { .. }));

    // The server is still alive and serving well-formed agents.
    let mut ok_agent = agent_options(&addr.to_string(), 2, constant_frames(4, 100));
    ok_agent.run_for_ms = Some(400);
    let report = start_agent(ok_agent, Arc::new(WallClock)).wait().unwrap();
    assert!(report.frames_sent > 0);
    assert!(report.fatal_error.is_none());
    let stats = server.wait().unwrap();
    assert!(stats.malformed_messages >= 1);
    assert!(stats.rejected_connections >= 2);
}

#[test]
fn agent_reconnects_after_server_restart() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out1 = out_dir(tmp.path(), "first");
    let out2 = out_dir(tmp.path(), "second");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut first_options = ServerOptions::new("127.0.0.1:0", config.clone(), &out1);
    first_options.run_for_ms = Some(700);
    let first = serve(first_options, Arc::new(WallClock)).unwrap();
    let addr = first.addr();

    let mut options = agent_options(&addr.to_string(), 1, constant_frames(6, 2_000));
    options.run_for_ms = Some(3_500);
    let agent = start_agent(options, Arc::new(WallClock));

    let first_stats = first.wait().unwrap();
    assert!(first_stats.frames_rx > 0);

    // Same port, fresh server; the agent is expected to find it again.
    let mut second_options = ServerOptions::new(addr.to_string(), config, &out2);
    second_options.run_for_ms = Some(2_000);
    let second = match serve(second_options, Arc::new(WallClock)) {
        Ok(s) => s,
        Err(e) => panic!("rebind {addr}: {e}"),
    };

    let report = agent.wait().unwrap();
    let second_stats = second.wait().unwrap();
    assert!(report.reconnects >= 1, "agent should have reconnected: {report:?}");
    assert!(second_stats.frames_rx > 0, "second server saw no frames");
    assert!(report.fatal_error.is_none());
}

#[test]
fn cadence_commands_change_the_interframe_gap() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    // Low band samples at 600 ms, mid/high at 150 ms.
    let config = compressed_config(0.05, 0.6, 0.15, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(4_000);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr().to_string();

    // Empty lane for 5 frames (low band), then persistently congested
    // (index 0.30, high band): the commanded cadence drops 600 -> 150.
    let mut frames = constant_frames(0, 5);
    frames.extend(constant_frames(30, 60));
    let mut options = agent_options(&addr, 1, frames);
    options.initial_cadence_ms = 600;
    options.run_for_ms = Some(3_800);
    let agent = start_agent(options, Arc::new(WallClock));
    agent.wait().unwrap();
    server.wait().unwrap();

    let (_, entries) = read_decision_log(&out.join("decisions.jsonl")).unwrap();
    let mut captures: Vec<u64> = Vec::new();
    for entry in &entries {
        let lane = entry.snapshot.lane(LaneId(1)).unwrap();
        let at = lane.last_frame_at.as_ms();
        if at != 0 && captures.last() != Some(&at) {
            captures.push(at);
        }
    }
    let gaps: Vec<u64> = captures.windows(2).map(|w| w[1] - w[0]).collect();
    assert!(gaps.len() >= 8, "not enough frames observed: {gaps:?}");
    let slack = |expected: u64| (expected / 10).max(20);
    // First gaps follow the low cadence.
    assert!(
        gaps[1].abs_diff(600) <= slack(600),
        "early gap {} should be near 600ms ({gaps:?})",
        gaps[1]
    );
    // Once the congested frames flow, gaps settle near the fast cadence
    // within one frame of the switch.
    let late = &gaps[gaps.len() - 3..];
    for gap in late {
        assert!(gap.abs_diff(150) <= slack(150), "late gap {gap} should be near 150ms ({gaps:?})");
    }
}

#[test]
fn live_source_agent_streams_counts() {
    let _guard = net_lock();
    let tmp = tempfile::tempdir().unwrap();
    let out = out_dir(tmp.path(), "server");
    let config = compressed_config(0.05, 0.1, 0.05, 0.2);

    let mut server_options = ServerOptions::new("127.0.0.1:0", config, &out);
    server_options.run_for_ms = Some(1_500);
    let server = serve(server_options, Arc::new(WallClock)).unwrap();
    let addr = server.addr().to_string();

    let mut options = AgentOptions::new(
        &addr,
        LaneId(3),
        FrameSource::Live(LiveTraffic { arrival_period_ms: 100, discharge_rate_vps: 0.5 }),
    );
    options.initial_cadence_ms = 50;
    options.run_for_ms = Some(1_300);
    let report = start_agent(options, Arc::new(WallClock)).wait().unwrap();
    let stats = server.wait().unwrap();

    assert!(report.frames_sent > 5);
    assert!(stats.frames_rx > 5);
    let (_, entries) = read_decision_log(&out.join("decisions.jsonl")).unwrap();
    let max_count_seen = entries
        .iter()
        .filter_map(|e| e.snapshot.lane(LaneId(3)).map(|l| l.index.value()))
        .fold(0.0f64, f64::max);
    assert!(max_count_seen > 0.0, "live queue should have produced nonzero counts");
}
