//! Per-epoch arbitration across lanes and the signal state machine.
//!
//! Priority order per decision epoch:
//! 1. hold the current green until it has run its minimum;
//! 2. emergency vehicles — the lane with the most wins outright, ties fall
//!    through to congestion comparison over the tied lanes;
//! 3. starvation override — a lane red for longer than the threshold time is
//!    granted green regardless of congestion;
//! 4. congestion — the highest index wins if it is in the high band; a
//!    mid-band maximum holds the current phases (the lane is just resampled
//!    faster); when everything is low the maximum-index lane wins anyway.
//!
//! Every decision names exactly one green lane. Index comparisons use the
//! same 9-decimal rounding as banding; exact ties break by longest time
//! spent red, then lowest lane id, which keeps selection deterministic and
//! starvation-friendly.

use alloc::collections::BTreeMap;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::congestion::{classify, round9, CongestionBand, CongestionIndex, Thresholds};
use crate::emergency::{EvDetection, EvKeywordSet};
use crate::time::Timestamp;

/// Identifier for one approach lane of the intersection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Default)]
#[serde(transparent)]
pub struct LaneId(pub u32);

// Lane ids appear both as JSON numbers and as JSON map keys (strings), so
// deserialization accepts either spelling.
impl<'de> Deserialize<'de> for LaneId {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct LaneIdVisitor;
        impl serde::de::Visitor<'_> for LaneIdVisitor {
            type Value = LaneId;

            fn expecting(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
                f.write_str("a lane id as an unsigned integer or integer string")
            }

            fn visit_u64<E: serde::de::Error>(self, v: u64) -> Result<LaneId, E> {
                u32::try_from(v).map(LaneId).map_err(E::custom)
            }

            fn visit_i64<E: serde::de::Error>(self, v: i64) -> Result<LaneId, E> {
                u32::try_from(v).map(LaneId).map_err(E::custom)
            }

            fn visit_str<E: serde::de::Error>(self, v: &str) -> Result<LaneId, E> {
                v.parse::<u32>().map(LaneId).map_err(E::custom)
            }
        }
        deserializer.deserialize_any(LaneIdVisitor)
    }
}

impl core::fmt::Display for LaneId {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "lane {}", self.0)
    }
}

/// Signal phase for one lane. The model is two-phase: no amber.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Green,
    Red,
}

/// Everything the arbiter knows about one lane at a decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LaneState {
    pub lane_id: LaneId,
    pub index: CongestionIndex,
    pub ev: EvDetection,
    /// Milliseconds since this lane last turned red after being green;
    /// zero while the lane is green.
    pub red_elapsed_ms: u64,
    pub last_frame_at: Timestamp,
    /// Set when the lane's latest frame is older than twice its sampling
    /// cadence. Stale lanes keep their last index but cannot win green on
    /// congestion alone.
    #[serde(default)]
    pub stale: bool,
}

/// Per-lane state assembled at one decision epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IntersectionSnapshot {
    pub epoch: Timestamp,
    pub lanes: Vec<LaneState>,
}

impl IntersectionSnapshot {
    /// Structural validity: at least one lane, no duplicate ids.
    pub fn validate(&self) -> Result<(), SnapshotError> {
        if self.lanes.is_empty() {
            return Err(SnapshotError::Empty);
        }
        let mut seen = BTreeMap::new();
        for lane in &self.lanes {
            if seen.insert(lane.lane_id, ()).is_some() {
                return Err(SnapshotError::DuplicateLane(lane.lane_id));
            }
        }
        Ok(())
    }

    pub fn lane(&self, id: LaneId) -> Option<&LaneState> {
        self.lanes.iter().find(|l| l.lane_id == id)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SnapshotError {
    Empty,
    DuplicateLane(LaneId),
    UnknownGreenLane(LaneId),
}

impl core::fmt::Display for SnapshotError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            SnapshotError::Empty => write!(f, "snapshot has no lanes"),
            SnapshotError::DuplicateLane(id) => write!(f, "duplicate {id} in snapshot"),
            SnapshotError::UnknownGreenLane(id) => {
                write!(f, "current green {id} is not in the snapshot")
            }
        }
    }
}

impl core::error::Error for SnapshotError {}

/// Static decision parameters, normally loaded once from the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub thresholds: Thresholds,
    /// Maximum continuous red before a lane's priority escalates.
    pub threshold_time_ms: u64,
    /// Sampling cadence for low-band lanes.
    pub sample_interval_low_ms: u64,
    /// Sampling cadence for mid- and high-band lanes.
    pub sample_interval_mid_ms: u64,
    /// Minimum time a lane keeps green before it can be revoked.
    pub min_green_ms: u64,
    /// When set, an emergency claim may cut the minimum green short.
    pub ev_preempts_min_green: bool,
    pub keywords: EvKeywordSet,
    pub min_confidence: f64,
    pub lane_count: u32,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            thresholds: Thresholds::default(),
            threshold_time_ms: 120_000,
            sample_interval_low_ms: 7_000,
            sample_interval_mid_ms: 3_000,
            min_green_ms: 10_000,
            ev_preempts_min_green: false,
            keywords: EvKeywordSet::default(),
            min_confidence: 0.5,
            lane_count: 4,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        Thresholds::new(self.thresholds.c1, self.thresholds.c3)
            .map_err(|_| ConfigError::BadThresholds)?;
        if self.threshold_time_ms == 0
            || self.sample_interval_low_ms == 0
            || self.sample_interval_mid_ms == 0
            || self.min_green_ms == 0
        {
            return Err(ConfigError::ZeroDuration);
        }
        if self.min_green_ms > self.threshold_time_ms {
            return Err(ConfigError::MinGreenExceedsThresholdTime);
        }
        if self.lane_count < 2 {
            return Err(ConfigError::TooFewLanes);
        }
        if !(0.0..=1.0).contains(&self.min_confidence) {
            return Err(ConfigError::BadConfidence);
        }
        self.keywords.validate().map_err(ConfigError::BadKeywords)?;
        Ok(())
    }

    /// Lane ids `1..=lane_count`.
    pub fn lane_ids(&self) -> Vec<LaneId> {
        (1..=self.lane_count).map(LaneId).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConfigError {
    BadThresholds,
    ZeroDuration,
    MinGreenExceedsThresholdTime,
    TooFewLanes,
    BadConfidence,
    BadKeywords(crate::emergency::KeywordError),
}

impl core::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ConfigError::BadThresholds => write!(f, "thresholds must satisfy 0 < c1 < c3"),
            ConfigError::ZeroDuration => write!(f, "durations must be positive"),
            ConfigError::MinGreenExceedsThresholdTime => {
                write!(f, "min_green must not exceed threshold_time")
            }
            ConfigError::TooFewLanes => write!(f, "at least 2 lanes are required"),
            ConfigError::BadConfidence => write!(f, "min_confidence must be in [0, 1]"),
            ConfigError::BadKeywords(e) => write!(f, "keywords: {e}"),
        }
    }
}

impl core::error::Error for ConfigError {}

/// Why a decision chose its green lane.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionReason {
    /// A single lane had the most emergency vehicles.
    EmergencyMajority,
    /// Emergency counts tied; the tie broke on congestion index.
    EmergencyTieByIndex,
    /// The winning lane's index is in the high band.
    CongestionHigh,
    /// No high band anywhere: either a mid-band maximum held the current
    /// phases, or an all-low intersection fell back to the maximum index.
    CongestionFallback,
    /// A lane exceeded the threshold red time and was granted green.
    StarvationOverride,
    /// The current green has not yet run its minimum duration.
    HoldMinGreen,
}

/// The output of one decision epoch: exactly one lane green, everything
/// else red, plus the next sampling cadence for each lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decision {
    pub green_lane: LaneId,
    pub phases: BTreeMap<LaneId, Phase>,
    pub next_sample_interval_ms: BTreeMap<LaneId, u64>,
    pub reason: DecisionReason,
}

impl Decision {
    /// The safety invariant: exactly one green, and it is `green_lane`.
    pub fn check_exactly_one_green(&self) -> bool {
        let greens: Vec<_> =
            self.phases.iter().filter(|(_, p)| **p == Phase::Green).map(|(l, _)| *l).collect();
        greens.len() == 1 && greens[0] == self.green_lane
    }
}

/// Result of the emergency-vehicle comparison across lanes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum EmergencySelection {
    /// No lane reports any emergency vehicle.
    None,
    /// A single lane holds the maximum emergency count.
    Unique(LaneId),
    /// Several lanes tie at the nonzero maximum.
    Tie(Vec<LaneId>),
}

/// Compares emergency-vehicle totals across lanes.
pub fn select_by_emergency(snapshot: &IntersectionSnapshot) -> EmergencySelection {
    let max = snapshot.lanes.iter().map(|l| l.ev.total).max().unwrap_or(0);
    if max == 0 {
        return EmergencySelection::None;
    }
    let at_max: Vec<LaneId> =
        snapshot.lanes.iter().filter(|l| l.ev.total == max).map(|l| l.lane_id).collect();
    if at_max.len() == 1 {
        EmergencySelection::Unique(at_max[0])
    } else {
        EmergencySelection::Tie(at_max)
    }
}

/// Picks the candidate with the maximal index and reports its band.
///
/// Indexes are compared on the 9-decimal grid; exact ties break by longest
/// `red_elapsed_ms`, then lowest lane id. Candidates not present in the
/// snapshot are ignored; the caller guarantees at least one is present.
pub fn select_by_congestion(
    snapshot: &IntersectionSnapshot,
    candidates: &[LaneId],
    thresholds: &Thresholds,
) -> (LaneId, CongestionBand) {
    let mut best: Option<&LaneState> = None;
    for lane in snapshot.lanes.iter().filter(|l| candidates.contains(&l.lane_id)) {
        best = Some(match best {
            None => lane,
            Some(cur) => {
                let (a, b) = (round9(lane.index.0), round9(cur.index.0));
                if a > b
                    || (a == b
                        && (lane.red_elapsed_ms > cur.red_elapsed_ms
                            || (lane.red_elapsed_ms == cur.red_elapsed_ms
                                && lane.lane_id < cur.lane_id)))
                {
                    lane
                } else {
                    cur
                }
            }
        });
    }
    let winner = best.expect("select_by_congestion requires a non-empty candidate set");
    (winner.lane_id, classify(winner.index, thresholds))
}

/// Returns the lane that has been red at least `threshold_time_ms`, if any;
/// the longest-red wins, ties by lowest lane id.
pub fn starvation_override(snapshot: &IntersectionSnapshot, threshold_time_ms: u64) -> Option<LaneId> {
    snapshot
        .lanes
        .iter()
        .filter(|l| l.red_elapsed_ms >= threshold_time_ms)
        .max_by(|a, b| {
            a.red_elapsed_ms.cmp(&b.red_elapsed_ms).then(b.lane_id.cmp(&a.lane_id))
        })
        .map(|l| l.lane_id)
}

fn build_decision(
    snapshot: &IntersectionSnapshot,
    config: &ControllerConfig,
    green: LaneId,
    reason: DecisionReason,
) -> Decision {
    let mut phases = BTreeMap::new();
    let mut cadence = BTreeMap::new();
    for lane in &snapshot.lanes {
        let phase = if lane.lane_id == green { Phase::Green } else { Phase::Red };
        phases.insert(lane.lane_id, phase);
        let interval = match classify(lane.index, &config.thresholds) {
            CongestionBand::Low => config.sample_interval_low_ms,
            CongestionBand::Mid | CongestionBand::High => config.sample_interval_mid_ms,
        };
        cadence.insert(lane.lane_id, interval);
    }
    Decision { green_lane: green, phases, next_sample_interval_ms: cadence, reason }
}

/// One decision epoch: arbitrates the snapshot and returns the phase plan.
///
/// Pure: identical inputs produce identical decisions, including their
/// serialized form. Malformed snapshots are rejected so the caller can keep
/// its previous decision.
pub fn decide(
    snapshot: &IntersectionSnapshot,
    config: &ControllerConfig,
    current_green: LaneId,
    green_elapsed_ms: u64,
) -> Result<Decision, SnapshotError> {
    snapshot.validate()?;
    if snapshot.lane(current_green).is_none() {
        return Err(SnapshotError::UnknownGreenLane(current_green));
    }

    let ev_selection = select_by_emergency(snapshot);
    let ev_present = ev_selection != EmergencySelection::None;

    if green_elapsed_ms < config.min_green_ms && !(config.ev_preempts_min_green && ev_present) {
        return Ok(build_decision(snapshot, config, current_green, DecisionReason::HoldMinGreen));
    }

    match ev_selection {
        EmergencySelection::Unique(lane) => {
            return Ok(build_decision(snapshot, config, lane, DecisionReason::EmergencyMajority));
        }
        EmergencySelection::Tie(candidates) => {
            let (lane, _) = select_by_congestion(snapshot, &candidates, &config.thresholds);
            return Ok(build_decision(snapshot, config, lane, DecisionReason::EmergencyTieByIndex));
        }
        EmergencySelection::None => {}
    }

    if let Some(lane) = starvation_override(snapshot, config.threshold_time_ms) {
        return Ok(build_decision(snapshot, config, lane, DecisionReason::StarvationOverride));
    }

    // Stale lanes may not win on congestion alone; if every lane is stale
    // the filter is moot and all compete, someone has to hold green.
    let fresh: Vec<LaneId> =
        snapshot.lanes.iter().filter(|l| !l.stale).map(|l| l.lane_id).collect();
    let candidates: Vec<LaneId> = if fresh.is_empty() {
        snapshot.lanes.iter().map(|l| l.lane_id).collect()
    } else {
        fresh
    };
    let (winner, band) = select_by_congestion(snapshot, &candidates, &config.thresholds);
    let decision = match band {
        CongestionBand::High => build_decision(snapshot, config, winner, DecisionReason::CongestionHigh),
        // A mid-band maximum is a "wait": phases hold and the lane keeps
        // being resampled at the fast cadence until it commits to a band.
        CongestionBand::Mid => {
            build_decision(snapshot, config, current_green, DecisionReason::CongestionFallback)
        }
        CongestionBand::Low => {
            build_decision(snapshot, config, winner, DecisionReason::CongestionFallback)
        }
    };
    Ok(decision)
}

/// A phase command for one signal head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseCommand {
    pub lane_id: LaneId,
    pub phase: Phase,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClockError {
    /// The supplied clock is earlier than the last one seen; timers never
    /// move backward.
    Regression { last_ms: u64, got_ms: u64 },
}

impl core::fmt::Display for ClockError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            ClockError::Regression { last_ms, got_ms } => {
                write!(f, "clock went backward: {got_ms}ms after {last_ms}ms")
            }
        }
    }
}

impl core::error::Error for ClockError {}

/// Owns the green/red timers and turns successive decisions into phase
/// commands.
///
/// A lane's red timer starts the moment it is commanded red after being
/// green; the timer of a lane that has never been green starts at the
/// machine's creation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignalStateMachine {
    current_green: LaneId,
    green_origin: Timestamp,
    red_origin: BTreeMap<LaneId, Timestamp>,
    last_clock: Timestamp,
}

impl SignalStateMachine {
    pub fn new(lanes: &[LaneId], initial_green: LaneId, at: Timestamp) -> Self {
        let red_origin = lanes.iter().filter(|l| **l != initial_green).map(|l| (*l, at)).collect();
        SignalStateMachine { current_green: initial_green, green_origin: at, red_origin, last_clock: at }
    }

    pub fn current_green(&self) -> LaneId {
        self.current_green
    }

    pub fn green_elapsed_ms(&self, now: Timestamp) -> u64 {
        now.elapsed_since(self.green_origin)
    }

    /// Zero for the green lane, time since the last green-to-red transition
    /// otherwise.
    pub fn red_elapsed_ms(&self, lane: LaneId, now: Timestamp) -> u64 {
        if lane == self.current_green {
            0
        } else {
            self.red_origin.get(&lane).map(|o| now.elapsed_since(*o)).unwrap_or(0)
        }
    }

    /// Steps the machine with a fresh decision. Emits a red command for the
    /// outgoing lane and a green command for the incoming one when the green
    /// lane changes; nothing otherwise.
    pub fn apply(&mut self, decision: &Decision, clock: Timestamp) -> Result<Vec<PhaseCommand>, ClockError> {
        if clock < self.last_clock {
            return Err(ClockError::Regression { last_ms: self.last_clock.0, got_ms: clock.0 });
        }
        self.last_clock = clock;
        if decision.green_lane == self.current_green {
            return Ok(Vec::new());
        }
        let outgoing = self.current_green;
        let incoming = decision.green_lane;
        self.red_origin.insert(outgoing, clock);
        self.red_origin.remove(&incoming);
        self.current_green = incoming;
        self.green_origin = clock;
        Ok(alloc::vec![
            PhaseCommand { lane_id: outgoing, phase: Phase::Red },
            PhaseCommand { lane_id: incoming, phase: Phase::Green },
        ])
    }
}

/// Frame bookkeeping plus arbitration: the complete per-epoch loop shared by
/// the simulator and the edge server.
///
/// Callers feed it the latest frame-derived observations per lane; the
/// engine owns the timers, staleness marking, and cadence tracking.
#[derive(Debug, Clone)]
pub struct DecisionEngine {
    config: ControllerConfig,
    machine: SignalStateMachine,
    cadence_ms: BTreeMap<LaneId, u64>,
}

/// Frame-derived observation for one lane at one epoch.
#[derive(Debug, Clone, PartialEq)]
pub struct LaneObservation {
    pub index: CongestionIndex,
    pub ev: EvDetection,
    pub last_frame_at: Timestamp,
    /// Whether any frame has been received at all; lanes that have never
    /// reported are stale by definition.
    pub has_frame: bool,
}

/// Everything one engine epoch produces.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochOutcome {
    pub snapshot: IntersectionSnapshot,
    pub decision: Decision,
    pub commands: Vec<PhaseCommand>,
    pub green_elapsed_ms: u64,
    pub previous_green: LaneId,
}

impl DecisionEngine {
    /// Starts with the lowest lane id green at `at`.
    pub fn new(config: ControllerConfig, at: Timestamp) -> Result<Self, ConfigError> {
        config.validate()?;
        let lanes = config.lane_ids();
        let initial_green = lanes[0];
        let cadence_ms =
            lanes.iter().map(|l| (*l, config.sample_interval_mid_ms)).collect();
        Ok(DecisionEngine {
            machine: SignalStateMachine::new(&lanes, initial_green, at),
            config,
            cadence_ms,
        })
    }

    pub fn config(&self) -> &ControllerConfig {
        &self.config
    }

    /// Swaps the decision parameters; timers and cadences carry over.
    pub fn set_config(&mut self, config: ControllerConfig) -> Result<(), ConfigError> {
        config.validate()?;
        self.config = config;
        Ok(())
    }

    pub fn current_green(&self) -> LaneId {
        self.machine.current_green()
    }

    /// Current sampling cadence for a lane, as of the last decision.
    pub fn cadence_ms(&self, lane: LaneId) -> u64 {
        self.cadence_ms.get(&lane).copied().unwrap_or(self.config.sample_interval_mid_ms)
    }

    /// Whether a frame captured at `last_frame_at` counts as stale at `now`:
    /// older than twice the lane's sampling cadence.
    pub fn is_stale(&self, lane: LaneId, last_frame_at: Timestamp, now: Timestamp) -> bool {
        now.elapsed_since(last_frame_at) > 2 * self.cadence_ms(lane)
    }

    /// Runs one epoch: assembles the snapshot, decides, and steps the state
    /// machine. Timer bookkeeping uses the epoch clock.
    pub fn epoch(
        &mut self,
        now: Timestamp,
        observations: &BTreeMap<LaneId, LaneObservation>,
    ) -> Result<EpochOutcome, EpochError> {
        let lanes: Vec<LaneState> = self
            .config
            .lane_ids()
            .into_iter()
            .map(|lane_id| {
                let obs = observations.get(&lane_id);
                let (index, ev, last_frame_at, stale) = match obs {
                    Some(o) => (
                        o.index,
                        o.ev,
                        o.last_frame_at,
                        !o.has_frame || self.is_stale(lane_id, o.last_frame_at, now),
                    ),
                    None => (CongestionIndex(0.0), EvDetection::default(), Timestamp::ZERO, true),
                };
                LaneState {
                    lane_id,
                    index,
                    ev,
                    red_elapsed_ms: self.machine.red_elapsed_ms(lane_id, now),
                    last_frame_at,
                    stale,
                }
            })
            .collect();
        let snapshot = IntersectionSnapshot { epoch: now, lanes };
        let previous_green = self.machine.current_green();
        let green_elapsed_ms = self.machine.green_elapsed_ms(now);
        let decision =
            decide(&snapshot, &self.config, previous_green, green_elapsed_ms).map_err(EpochError::Snapshot)?;
        let commands = self.machine.apply(&decision, now).map_err(EpochError::Clock)?;
        for (lane, interval) in &decision.next_sample_interval_ms {
            self.cadence_ms.insert(*lane, *interval);
        }
        Ok(EpochOutcome { snapshot, decision, commands, green_elapsed_ms, previous_green })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpochError {
    Snapshot(SnapshotError),
    Clock(ClockError),
}

impl core::fmt::Display for EpochError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EpochError::Snapshot(e) => write!(f, "{e}"),
            EpochError::Clock(e) => write!(f, "{e}"),
        }
    }
}

impl core::error::Error for EpochError {}
