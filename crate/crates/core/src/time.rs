//! Millisecond timestamps.
//!
//! Everything in the decision path runs on integer milliseconds: exact,
//! ordered, and identical on every platform. File formats that speak decimal
//! seconds convert at the boundary.

use serde::{Deserialize, Serialize};

/// A point in time, in milliseconds since an arbitrary origin.
///
/// The simulator uses the scenario start as the origin; live processes use
/// the Unix epoch. The two are never mixed within one log.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(pub u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub fn from_ms(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub fn as_ms(self) -> u64 {
        self.0
    }

    /// Milliseconds elapsed since `earlier`, saturating at zero.
    pub fn elapsed_since(self, earlier: Timestamp) -> u64 {
        self.0.saturating_sub(earlier.0)
    }

    pub fn plus_ms(self, ms: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ms))
    }
}

impl core::fmt::Display for Timestamp {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        write!(f, "{}ms", self.0)
    }
}
