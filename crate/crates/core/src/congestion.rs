//! Congestion index math and three-level banding.
//!
//! The index for a lane is the vehicle count divided by the monitored road
//! area: `count / (width * coverage_length)`, in vehicles per square metre.
//! Two thresholds split the index range into three bands; the middle band is
//! the open interval between them, not a stored value.
//!
//! Band comparisons are performed after rounding to 9 decimal places so that
//! boundary classifications are identical on every platform. An index equal
//! to the lower threshold is Low and one equal to the upper threshold is
//! High.

use serde::{Deserialize, Serialize};

/// Road geometry a camera monitors for one lane: width `d` and coverage
/// length `L`, both in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LaneGeometry {
    pub width_m: f64,
    pub coverage_length_m: f64,
}

impl LaneGeometry {
    /// Rejects non-positive or non-finite dimensions; bad geometry is a
    /// configuration error, never a runtime value.
    pub fn new(width_m: f64, coverage_length_m: f64) -> Result<Self, GeometryError> {
        if !(width_m.is_finite() && width_m > 0.0) {
            return Err(GeometryError::NonPositiveWidth);
        }
        if !(coverage_length_m.is_finite() && coverage_length_m > 0.0) {
            return Err(GeometryError::NonPositiveCoverage);
        }
        Ok(LaneGeometry { width_m, coverage_length_m })
    }

    /// Monitored area in square metres.
    pub fn area_m2(&self) -> f64 {
        self.width_m * self.coverage_length_m
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GeometryError {
    NonPositiveWidth,
    NonPositiveCoverage,
}

impl core::fmt::Display for GeometryError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            GeometryError::NonPositiveWidth => write!(f, "lane width must be finite and > 0"),
            GeometryError::NonPositiveCoverage => {
                write!(f, "camera coverage length must be finite and > 0")
            }
        }
    }
}

impl core::error::Error for GeometryError {}

/// Congestion index for one lane: vehicles per square metre of monitored
/// road. Zero exactly when the count is zero.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CongestionIndex(pub f64);

impl CongestionIndex {
    pub fn value(self) -> f64 {
        self.0
    }
}

/// The two banding thresholds. The lower one closes the Low band from above,
/// the upper one closes the High band from below; the middle band is the
/// open interval between them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub c1: f64,
    pub c3: f64,
}

impl Thresholds {
    /// Requires `0 < c1 < c3`, both finite.
    pub fn new(c1: f64, c3: f64) -> Result<Self, ThresholdError> {
        if !(c1.is_finite() && c3.is_finite() && 0.0 < c1 && c1 < c3) {
            return Err(ThresholdError { c1, c3 });
        }
        Ok(Thresholds { c1, c3 })
    }
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds { c1: 0.10, c3: 0.25 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThresholdError {
    pub c1: f64,
    pub c3: f64,
}

impl core::fmt::Display for ThresholdError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "thresholds must satisfy 0 < c1 < c3, got c1={} c3={}", self.c1, self.c3)
    }
}

impl core::error::Error for ThresholdError {}

/// Position of an index relative to the thresholds. Exactly one band holds
/// for any index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CongestionBand {
    /// Index at or below the lower threshold.
    Low,
    /// Index strictly between the thresholds; the signal holds and the lane
    /// is resampled quickly.
    Mid,
    /// Index at or above the upper threshold; the lane claims green.
    High,
}

/// Maps a non-negative value onto the 9-decimal-place grid used for every
/// band and argmax comparison: the number of 1e-9 steps, rounded half up.
pub(crate) fn round9(value: f64) -> f64 {
    // Values are non-negative and far below 2^53 / 1e9, so truncation after
    // adding one half is exact round-half-up.
    ((value * 1e9) + 0.5) as u64 as f64
}

/// Index value for `count` vehicles over `geometry`: `count / (d * L)`,
/// vehicles per square metre.
pub fn compute_index(count: u32, geometry: &LaneGeometry) -> CongestionIndex {
    CongestionIndex(count as f64 / geometry.area_m2())
}

/// Classifies an index against the thresholds. Boundary values map outward:
/// exactly `c1` is Low, exactly `c3` is High.
pub fn classify(index: CongestionIndex, thresholds: &Thresholds) -> CongestionBand {
    let v = round9(index.0);
    if v <= round9(thresholds.c1) {
        CongestionBand::Low
    } else if v >= round9(thresholds.c3) {
        CongestionBand::High
    } else {
        CongestionBand::Mid
    }
}
