//! The detection-frame interface between perception and decision.
//!
//! A frame is what one lane's camera pipeline reports for one sample: a
//! vehicle count, the OCR tokens read off the image, and the capture time.
//! No pixels ever cross this boundary.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::controller::LaneId;
use crate::emergency::OcrReading;
use crate::time::Timestamp;

/// One perception sample for one lane.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub lane_id: LaneId,
    /// Vehicles visible in the monitored area.
    pub count: u32,
    /// OCR token readings from the same image.
    #[serde(default)]
    pub readings: Vec<OcrReading>,
    pub captured_at: Timestamp,
}

impl DetectionFrame {
    pub fn new(lane_id: LaneId, count: u32, captured_at: Timestamp) -> Self {
        DetectionFrame { lane_id, count, readings: Vec::new(), captured_at }
    }
}
