//! Decision core for an edge-local adaptive traffic signal controller.
//!
//! The crate is `no_std` (alloc only) so the same decision code can run on an
//! edge box, inside the deterministic simulator, or in host-side tooling. All
//! times are integer milliseconds, all arithmetic is explicit, and every
//! decision is a pure function of its inputs, which is what makes logs
//! replayable bit-for-bit.
//!
//! Modules:
//! - [`congestion`]: vehicle-count to congestion-index math and three-level banding.
//! - [`emergency`]: emergency-vehicle detection over OCR token streams.
//! - [`controller`]: per-epoch arbitration across lanes and the signal state machine.
//! - [`sim`]: a deterministic discrete-event intersection simulator.
//! - [`frame`]: the detection-frame interface between perception and decision.
//! - [`rng`]: the documented pseudo-random generator used for reproducible noise.

#![no_std]

extern crate alloc;

pub mod congestion;
pub mod controller;
pub mod emergency;
pub mod frame;
pub mod rng;
pub mod sim;
pub mod time;

pub use congestion::{classify, compute_index, CongestionBand, CongestionIndex, LaneGeometry, Thresholds};
pub use controller::{
    decide, select_by_congestion, select_by_emergency, starvation_override, ControllerConfig,
    Decision, DecisionEngine, DecisionReason, EmergencySelection, EpochOutcome,
    IntersectionSnapshot, LaneId, LaneObservation, LaneState, Phase, PhaseCommand,
    SignalStateMachine,
};
pub use emergency::{detect_emergency, normalize_mirror, EvDetection, EvKeywordSet, OcrReading, Orientation};
pub use frame::DetectionFrame;
pub use sim::{
    detector_model, run_scenario, EvKind, LaneQueue, LogEntry, MetricsReport, Scenario,
    ScenarioEvent, ScenarioEventKind, SimParams, WeatherKind, WeatherProfile,
};
pub use time::Timestamp;
