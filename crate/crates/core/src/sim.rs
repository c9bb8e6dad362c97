//! Deterministic discrete-event intersection simulator.
//!
//! A scenario is a sorted list of arrival, emergency-arrival, and weather
//! events closed by a single end marker. The simulator runs the full
//! perception-to-actuation loop against it: lanes are sampled at their
//! commanded cadence through a weather-perturbed detector model, the
//! decision engine arbitrates at a fixed epoch, phase commands take effect
//! after an actuation latency, and green lanes discharge vehicles at a
//! constant saturation rate, emergency vehicles first.
//!
//! Runs are fully deterministic for a fixed (scenario, config, params,
//! seed): the event queue orders by (time, kind class, insertion sequence)
//! and all noise comes from per-lane streams of the documented generator.

use alloc::collections::{BTreeMap, BinaryHeap, VecDeque};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::congestion::{compute_index, CongestionIndex, LaneGeometry};
use crate::controller::{
    ControllerConfig, Decision, DecisionEngine, EpochError, IntersectionSnapshot, LaneId,
    LaneObservation,
};
use crate::emergency::{detect_emergency, EvDetection, OcrReading, Orientation};
use crate::frame::DetectionFrame;
use crate::rng::SplitMix64;
use crate::time::Timestamp;

/// Emergency-vehicle class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvKind {
    Ambulance,
    Fire,
}

/// Named weather condition with its detection-noise profile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WeatherKind {
    ClearSunny,
    Rainy,
    HeavySnowfall,
    Foggy,
    RainyNight,
    Night,
}

/// How a weather condition perturbs perception: a multiplicative count
/// scale, a per-vehicle dropout probability, and a penalty subtracted from
/// OCR confidence.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WeatherProfile {
    pub kind: WeatherKind,
    /// Fraction of queued vehicles the detector sees, in `(0, 1]`.
    pub detection_scale: f64,
    /// Probability that a seen vehicle is dropped anyway, in `[0, 1)`.
    pub dropout_prob: f64,
    /// Subtracted from every OCR reading's confidence, in `[0, 1)`.
    pub ocr_confidence_penalty: f64,
}

impl WeatherProfile {
    pub fn validate(&self) -> Result<(), SimError> {
        let ok = self.detection_scale > 0.0
            && self.detection_scale <= 1.0
            && (0.0..1.0).contains(&self.dropout_prob)
            && (0.0..1.0).contains(&self.ocr_confidence_penalty);
        if ok {
            Ok(())
        } else {
            Err(SimError::BadWeatherProfile(self.kind))
        }
    }
}

impl WeatherKind {
    /// The built-in noise calibration for each condition. Clear weather is
    /// the identity; the others degrade progressively. The foggy scale is
    /// set so a 26-vehicle queue on the default 10 m x 10 m patch reads as
    /// 4 vehicles.
    pub fn profile(self) -> WeatherProfile {
        let (detection_scale, dropout_prob, ocr_confidence_penalty) = match self {
            WeatherKind::ClearSunny => (1.0, 0.0, 0.0),
            WeatherKind::Rainy => (0.9, 0.05, 0.10),
            WeatherKind::HeavySnowfall => (0.6, 0.10, 0.25),
            WeatherKind::Foggy => (0.15, 0.0, 0.35),
            WeatherKind::RainyNight => (0.5, 0.10, 0.30),
            WeatherKind::Night => (0.75, 0.05, 0.20),
        };
        WeatherProfile { kind: self, detection_scale, dropout_prob, ocr_confidence_penalty }
    }
}

/// One scheduled scenario event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioEvent {
    pub at: Timestamp,
    #[serde(flatten)]
    pub kind: ScenarioEventKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum ScenarioEventKind {
    Arrival { lane_id: LaneId, n_vehicles: u32 },
    EvArrival { lane_id: LaneId, ev_kind: EvKind },
    WeatherChange { profile: WeatherKind },
    End,
}

/// A validated scenario: events sorted by time, closed by exactly one end
/// marker in final position.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub events: Vec<ScenarioEvent>,
}

impl Scenario {
    pub fn validate(&self, lane_count: u32) -> Result<(), SimError> {
        let mut last_at = Timestamp::ZERO;
        let mut end_seen = false;
        if self.events.is_empty() {
            return Err(SimError::MissingEnd);
        }
        for (i, ev) in self.events.iter().enumerate() {
            if ev.at < last_at {
                return Err(SimError::Unsorted { index: i, at_ms: ev.at.as_ms() });
            }
            last_at = ev.at;
            if end_seen {
                return Err(SimError::EventAfterEnd { index: i });
            }
            match &ev.kind {
                ScenarioEventKind::End => end_seen = true,
                ScenarioEventKind::Arrival { lane_id, .. }
                | ScenarioEventKind::EvArrival { lane_id, .. } => {
                    if lane_id.0 == 0 || lane_id.0 > lane_count {
                        return Err(SimError::UnknownLane { index: i, lane: *lane_id });
                    }
                }
                ScenarioEventKind::WeatherChange { profile } => profile.profile().validate()?,
            }
        }
        if !end_seen {
            return Err(SimError::MissingEnd);
        }
        Ok(())
    }

    pub fn end_ms(&self) -> u64 {
        self.events.last().map(|e| e.at.as_ms()).unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimError {
    Unsorted { index: usize, at_ms: u64 },
    MissingEnd,
    EventAfterEnd { index: usize },
    UnknownLane { index: usize, lane: LaneId },
    BadWeatherProfile(WeatherKind),
    BadParams(&'static str),
    Epoch(EpochError),
}

impl core::fmt::Display for SimError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SimError::Unsorted { index, at_ms } => {
                write!(f, "scenario event {index} at {at_ms}ms is earlier than its predecessor")
            }
            SimError::MissingEnd => write!(f, "scenario must contain exactly one end event, last"),
            SimError::EventAfterEnd { index } => {
                write!(f, "scenario event {index} occurs after the end event")
            }
            SimError::UnknownLane { index, lane } => {
                write!(f, "scenario event {index} references unknown {lane}")
            }
            SimError::BadWeatherProfile(kind) => write!(f, "weather profile {kind:?} out of range"),
            SimError::BadParams(what) => write!(f, "invalid simulation parameter: {what}"),
            SimError::Epoch(e) => write!(f, "decision epoch failed: {e}"),
        }
    }
}

impl core::error::Error for SimError {}

/// Tunables of the physical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    /// Decision epoch length.
    pub epoch_interval_ms: u64,
    /// Delay between a decision and the signal heads changing.
    pub actuation_latency_ms: u64,
    /// Vehicles per second a green lane discharges.
    pub saturation_rate_vps: f64,
    /// Monitored geometry, identical for every lane.
    pub geometry: LaneGeometry,
    pub initial_weather: WeatherKind,
}

impl Default for SimParams {
    fn default() -> Self {
        SimParams {
            epoch_interval_ms: 1_000,
            actuation_latency_ms: 100,
            saturation_rate_vps: 0.5,
            geometry: LaneGeometry { width_m: 10.0, coverage_length_m: 10.0 },
            initial_weather: WeatherKind::ClearSunny,
        }
    }
}

impl SimParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.epoch_interval_ms == 0 {
            return Err(SimError::BadParams("epoch_interval_ms must be > 0"));
        }
        if !(self.saturation_rate_vps.is_finite() && self.saturation_rate_vps > 0.0) {
            return Err(SimError::BadParams("saturation_rate_vps must be finite and > 0"));
        }
        LaneGeometry::new(self.geometry.width_m, self.geometry.coverage_length_m)
            .map_err(|_| SimError::BadParams("geometry dimensions must be finite and > 0"))?;
        self.initial_weather.profile().validate()?;
        Ok(())
    }

    /// Milliseconds between successive discharges while green.
    pub fn headway_ms(&self) -> u64 {
        ((1000.0 / self.saturation_rate_vps) + 0.5) as u64
    }
}

/// Detector-facing view of one lane's queue.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LaneQueue {
    pub lane_id: LaneId,
    /// Total vehicles waiting, emergency vehicles included.
    pub queued: u32,
    pub ambulances_queued: u32,
    pub fires_queued: u32,
    pub geometry: LaneGeometry,
}

impl LaneQueue {
    pub fn ev_queued(&self) -> u32 {
        self.ambulances_queued + self.fires_queued
    }
}

/// Samples one lane through a weather profile.
///
/// The visible count is `round(queued * detection_scale)` minus one dropout
/// draw per visible vehicle; emergency vehicles emit the OCR tokens a
/// mirror-lettered hood produces, with confidence reduced by the weather
/// penalty. Dropout draws only touch the generator when the probability is
/// nonzero, so clear-weather runs consume no randomness.
pub fn detector_model(
    queue: &LaneQueue,
    weather: &WeatherProfile,
    rng: &mut SplitMix64,
    at: Timestamp,
) -> DetectionFrame {
    let base = ((queue.queued as f64 * weather.detection_scale) + 0.5) as u32;
    let mut dropped = 0u32;
    if weather.dropout_prob > 0.0 {
        for _ in 0..base {
            if rng.next_f64() < weather.dropout_prob {
                dropped += 1;
            }
        }
    }
    let confidence = 1.0 - weather.ocr_confidence_penalty;
    let mut readings = Vec::new();
    for _ in 0..queue.ambulances_queued {
        readings.push(OcrReading::new("ECNALUBMA", Orientation::AsCaptured, confidence));
    }
    for _ in 0..queue.fires_queued {
        readings.push(OcrReading::new("FIRE", Orientation::AsCaptured, confidence));
    }
    DetectionFrame { lane_id: queue.lane_id, count: base - dropped, readings, captured_at: at }
}

/// One decision-log record: everything needed to re-run the decision and
/// compare it bit-for-bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub epoch_ms: u64,
    /// When the decision was emitted; equals `epoch_ms` in simulation,
    /// wall-clock in live runs.
    pub decided_at_ms: u64,
    /// Green lane going into this epoch.
    pub current_green: LaneId,
    pub green_elapsed_ms: u64,
    pub snapshot: IntersectionSnapshot,
    pub decision: Decision,
    /// Server-side frame receipt times, present only in networked runs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frame_received_at_ms: Option<BTreeMap<LaneId, u64>>,
}

/// Aggregate outcome of a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub horizon_s: f64,
    pub total_decisions: u64,
    /// Number of red spells that exceeded threshold_time + one epoch +
    /// min_green. Always zero when no emergency vehicles are present;
    /// emergency preemption and simultaneous multi-lane expiries can
    /// legitimately exceed the bound.
    pub starvation_violations: u64,
    pub per_lane: BTreeMap<LaneId, LaneMetrics>,
    pub ev_response: EvResponseMetrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct LaneMetrics {
    pub arrived: u64,
    pub discharged: u64,
    pub queued_at_end: u64,
    pub ev_arrived: u64,
    /// Mean wait of discharged vehicles, seconds.
    pub mean_wait_s: f64,
    pub max_wait_s: f64,
    /// Fraction of the horizon this lane's head showed green.
    pub green_share: f64,
}

/// Arrival-to-green delay statistics for emergency vehicles.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct EvResponseMetrics {
    pub count: u64,
    /// Arrivals whose lane turned green within the horizon.
    pub resolved: u64,
    pub mean_response_s: f64,
    pub max_response_s: f64,
}

#[derive(Debug, Clone)]
enum SimEvent {
    Scenario(usize),
    Actuation { green: LaneId },
    Departure { lane: LaneId, generation: u64 },
    Sample { lane: LaneId },
    Epoch,
}

// Ordering class keeps simultaneous events deterministic and sensible:
// scenario inputs land before the infrastructure reacts to them.
fn event_class(ev: &SimEvent) -> u8 {
    match ev {
        SimEvent::Scenario(_) => 0,
        SimEvent::Actuation { .. } => 1,
        SimEvent::Departure { .. } => 2,
        SimEvent::Sample { .. } => 3,
        SimEvent::Epoch => 4,
    }
}

struct EventRec {
    at_ms: u64,
    class: u8,
    seq: u64,
    event: SimEvent,
}

impl PartialEq for EventRec {
    fn eq(&self, other: &Self) -> bool {
        (self.at_ms, self.class, self.seq) == (other.at_ms, other.class, other.seq)
    }
}
impl Eq for EventRec {}
impl PartialOrd for EventRec {
    fn partial_cmp(&self, other: &Self) -> Option<core::cmp::Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for EventRec {
    // Reversed so the BinaryHeap pops the earliest event first.
    fn cmp(&self, other: &Self) -> core::cmp::Ordering {
        (other.at_ms, other.class, other.seq).cmp(&(self.at_ms, self.class, self.seq))
    }
}

struct Vehicle {
    arrived_at_ms: u64,
    ev: Option<EvKind>,
}

struct SimLane {
    civilians: VecDeque<Vehicle>,
    evs: VecDeque<Vehicle>,
    rng: SplitMix64,
    latest_frame: Option<DetectionFrame>,
    departure_generation: u64,
    departure_scheduled: bool,
    arrived: u64,
    discharged: u64,
    ev_arrived: u64,
    wait_sum_ms: u128,
    wait_max_ms: u64,
    green_accum_ms: u64,
    green_since_ms: Option<u64>,
    over_starvation_bound: bool,
}

impl SimLane {
    fn queued(&self) -> u32 {
        (self.civilians.len() + self.evs.len()) as u32
    }

    fn queue_view(&self, lane_id: LaneId, geometry: LaneGeometry) -> LaneQueue {
        let ambulances =
            self.evs.iter().filter(|v| v.ev == Some(EvKind::Ambulance)).count() as u32;
        let fires = self.evs.iter().filter(|v| v.ev == Some(EvKind::Fire)).count() as u32;
        LaneQueue {
            lane_id,
            queued: self.queued(),
            ambulances_queued: ambulances,
            fires_queued: fires,
            geometry,
        }
    }
}

struct Sim {
    engine: DecisionEngine,
    params: SimParams,
    weather: WeatherProfile,
    lanes: BTreeMap<LaneId, SimLane>,
    heads_green: LaneId,
    events: BinaryHeap<EventRec>,
    seq: u64,
    log: Vec<LogEntry>,
    pending_ev: Vec<(LaneId, u64)>,
    ev_delays_ms: Vec<u64>,
    ev_count: u64,
    starvation_violations: u64,
}

impl Sim {
    fn schedule(&mut self, at_ms: u64, event: SimEvent) {
        let class = event_class(&event);
        self.seq += 1;
        self.events.push(EventRec { at_ms, class, seq: self.seq, event });
    }

    fn schedule_departure_if_needed(&mut self, lane_id: LaneId, now_ms: u64) {
        let headway = self.params.headway_ms();
        let lane = self.lanes.get_mut(&lane_id).unwrap();
        if self.heads_green == lane_id && !lane.departure_scheduled && lane.queued() > 0 {
            lane.departure_scheduled = true;
            let generation = lane.departure_generation;
            self.schedule(now_ms + headway, SimEvent::Departure { lane: lane_id, generation });
        }
    }
}

/// Runs a scenario to completion, returning the decision log and metrics.
pub fn run_scenario(
    scenario: &Scenario,
    config: &ControllerConfig,
    params: &SimParams,
    seed: u64,
) -> Result<(Vec<LogEntry>, MetricsReport), SimError> {
    config.validate().map_err(|_| SimError::BadParams("controller config invalid"))?;
    params.validate()?;
    scenario.validate(config.lane_count)?;

    let engine = DecisionEngine::new(config.clone(), Timestamp::ZERO)
        .map_err(|_| SimError::BadParams("controller config invalid"))?;
    let lane_ids = config.lane_ids();
    let heads_green = lane_ids[0];
    let lanes: BTreeMap<LaneId, SimLane> = lane_ids
        .iter()
        .map(|id| {
            (
                *id,
                SimLane {
                    civilians: VecDeque::new(),
                    evs: VecDeque::new(),
                    rng: SplitMix64::stream(seed, id.0 as u64),
                    latest_frame: None,
                    departure_generation: 0,
                    departure_scheduled: false,
                    arrived: 0,
                    discharged: 0,
                    ev_arrived: 0,
                    wait_sum_ms: 0,
                    wait_max_ms: 0,
                    green_accum_ms: 0,
                    green_since_ms: if *id == heads_green { Some(0) } else { None },
                    over_starvation_bound: false,
                },
            )
        })
        .collect();

    let mut sim = Sim {
        engine,
        params: params.clone(),
        weather: params.initial_weather.profile(),
        lanes,
        heads_green,
        events: BinaryHeap::new(),
        seq: 0,
        log: Vec::new(),
        pending_ev: Vec::new(),
        ev_delays_ms: Vec::new(),
        ev_count: 0,
        starvation_violations: 0,
    };

    for (i, ev) in scenario.events.iter().enumerate() {
        sim.schedule(ev.at.as_ms(), SimEvent::Scenario(i));
    }
    for id in &lane_ids {
        sim.schedule(0, SimEvent::Sample { lane: *id });
    }
    sim.schedule(0, SimEvent::Epoch);

    let starvation_bound_ms =
        config.threshold_time_ms + params.epoch_interval_ms + config.min_green_ms;

    let end_ms = loop {
        let rec = sim.events.pop().expect("event queue never empties before the end marker");
        let now_ms = rec.at_ms;
        match rec.event {
            SimEvent::Scenario(i) => match &scenario.events[i].kind {
                ScenarioEventKind::End => break now_ms,
                ScenarioEventKind::Arrival { lane_id, n_vehicles } => {
                    let lane = sim.lanes.get_mut(lane_id).unwrap();
                    for _ in 0..*n_vehicles {
                        lane.civilians.push_back(Vehicle { arrived_at_ms: now_ms, ev: None });
                    }
                    lane.arrived += *n_vehicles as u64;
                    sim.schedule_departure_if_needed(*lane_id, now_ms);
                }
                ScenarioEventKind::EvArrival { lane_id, ev_kind } => {
                    let green_now = sim.heads_green == *lane_id;
                    let lane = sim.lanes.get_mut(lane_id).unwrap();
                    lane.evs.push_back(Vehicle { arrived_at_ms: now_ms, ev: Some(*ev_kind) });
                    lane.arrived += 1;
                    lane.ev_arrived += 1;
                    sim.ev_count += 1;
                    if green_now {
                        sim.ev_delays_ms.push(0);
                    } else {
                        sim.pending_ev.push((*lane_id, now_ms));
                    }
                    sim.schedule_departure_if_needed(*lane_id, now_ms);
                }
                ScenarioEventKind::WeatherChange { profile } => {
                    sim.weather = profile.profile();
                }
            },
            SimEvent::Actuation { green } => {
                if green != sim.heads_green {
                    let old = sim.heads_green;
                    let lane = sim.lanes.get_mut(&old).unwrap();
                    if let Some(since) = lane.green_since_ms.take() {
                        lane.green_accum_ms += now_ms - since;
                    }
                    lane.departure_generation += 1;
                    lane.departure_scheduled = false;
                    sim.heads_green = green;
                    let lane = sim.lanes.get_mut(&green).unwrap();
                    lane.green_since_ms = Some(now_ms);
                    sim.schedule_departure_if_needed(green, now_ms);
                    let resolved: Vec<(LaneId, u64)> =
                        sim.pending_ev.iter().copied().filter(|(l, _)| *l == green).collect();
                    sim.pending_ev.retain(|(l, _)| *l != green);
                    for (_, arrived_at) in resolved {
                        sim.ev_delays_ms.push(now_ms - arrived_at);
                    }
                }
            }
            SimEvent::Departure { lane: lane_id, generation } => {
                let headway = sim.params.headway_ms();
                let lane = sim.lanes.get_mut(&lane_id).unwrap();
                if generation != lane.departure_generation || sim.heads_green != lane_id {
                    continue;
                }
                let vehicle = lane.evs.pop_front().or_else(|| lane.civilians.pop_front());
                match vehicle {
                    Some(v) => {
                        let wait = now_ms - v.arrived_at_ms;
                        lane.discharged += 1;
                        lane.wait_sum_ms += wait as u128;
                        lane.wait_max_ms = lane.wait_max_ms.max(wait);
                        if lane.queued() > 0 {
                            let generation = lane.departure_generation;
                            sim.schedule(
                                now_ms + headway,
                                SimEvent::Departure { lane: lane_id, generation },
                            );
                        } else {
                            lane.departure_scheduled = false;
                        }
                    }
                    None => lane.departure_scheduled = false,
                }
            }
            SimEvent::Sample { lane: lane_id } => {
                let geometry = sim.params.geometry;
                let weather = sim.weather;
                let lane = sim.lanes.get_mut(&lane_id).unwrap();
                let view = lane.queue_view(lane_id, geometry);
                let frame =
                    detector_model(&view, &weather, &mut lane.rng, Timestamp::from_ms(now_ms));
                lane.latest_frame = Some(frame);
                let cadence = sim.engine.cadence_ms(lane_id);
                sim.schedule(now_ms + cadence, SimEvent::Sample { lane: lane_id });
            }
            SimEvent::Epoch => {
                let mut observations = BTreeMap::new();
                for (id, lane) in &sim.lanes {
                    let obs = match &lane.latest_frame {
                        Some(frame) => LaneObservation {
                            index: compute_index(frame.count, &sim.params.geometry),
                            ev: detect_emergency(
                                &frame.readings,
                                &sim.engine.config().keywords,
                                sim.engine.config().min_confidence,
                            ),
                            last_frame_at: frame.captured_at,
                            has_frame: true,
                        },
                        None => LaneObservation {
                            index: CongestionIndex(0.0),
                            ev: EvDetection::default(),
                            last_frame_at: Timestamp::ZERO,
                            has_frame: false,
                        },
                    };
                    observations.insert(*id, obs);
                }
                let outcome = sim
                    .engine
                    .epoch(Timestamp::from_ms(now_ms), &observations)
                    .map_err(SimError::Epoch)?;
                for lane in &outcome.snapshot.lanes {
                    let state = sim.lanes.get_mut(&lane.lane_id).unwrap();
                    if lane.red_elapsed_ms > starvation_bound_ms {
                        if !state.over_starvation_bound {
                            state.over_starvation_bound = true;
                            sim.starvation_violations += 1;
                        }
                    } else {
                        state.over_starvation_bound = false;
                    }
                }
                sim.log.push(LogEntry {
                    epoch_ms: now_ms,
                    decided_at_ms: now_ms,
                    current_green: outcome.previous_green,
                    green_elapsed_ms: outcome.green_elapsed_ms,
                    snapshot: outcome.snapshot,
                    decision: outcome.decision.clone(),
                    frame_received_at_ms: None,
                });
                if !outcome.commands.is_empty() {
                    sim.schedule(
                        now_ms + sim.params.actuation_latency_ms,
                        SimEvent::Actuation { green: outcome.decision.green_lane },
                    );
                }
                sim.schedule(now_ms + sim.params.epoch_interval_ms, SimEvent::Epoch);
            }
        }
    };

    // Close the books at the horizon.
    let green_lane = sim.heads_green;
    if let Some(lane) = sim.lanes.get_mut(&green_lane) {
        if let Some(since) = lane.green_since_ms.take() {
            lane.green_accum_ms += end_ms - since;
        }
    }

    let per_lane: BTreeMap<LaneId, LaneMetrics> = sim
        .lanes
        .iter()
        .map(|(id, lane)| {
            let mean_wait_s = if lane.discharged > 0 {
                (lane.wait_sum_ms as f64 / lane.discharged as f64) / 1000.0
            } else {
                0.0
            };
            let green_share =
                if end_ms > 0 { lane.green_accum_ms as f64 / end_ms as f64 } else { 0.0 };
            (
                *id,
                LaneMetrics {
                    arrived: lane.arrived,
                    discharged: lane.discharged,
                    queued_at_end: lane.queued() as u64,
                    ev_arrived: lane.ev_arrived,
                    mean_wait_s,
                    max_wait_s: lane.wait_max_ms as f64 / 1000.0,
                    green_share,
                },
            )
        })
        .collect();

    let resolved = sim.ev_delays_ms.len() as u64;
    let ev_response = EvResponseMetrics {
        count: sim.ev_count,
        resolved,
        mean_response_s: if resolved > 0 {
            sim.ev_delays_ms.iter().sum::<u64>() as f64 / resolved as f64 / 1000.0
        } else {
            0.0
        },
        max_response_s: sim.ev_delays_ms.iter().max().copied().unwrap_or(0) as f64 / 1000.0,
    };

    let metrics = MetricsReport {
        horizon_s: end_ms as f64 / 1000.0,
        total_decisions: sim.log.len() as u64,
        starvation_violations: sim.starvation_violations,
        per_lane,
        ev_response,
    };
    Ok((sim.log, metrics))
}

/// Convenience constructor used by tests and the CLI.
pub fn scenario(events: Vec<ScenarioEvent>) -> Scenario {
    Scenario { events }
}

/// Shorthand for building events.
pub fn at(ms: u64, kind: ScenarioEventKind) -> ScenarioEvent {
    ScenarioEvent { at: Timestamp::from_ms(ms), kind }
}
