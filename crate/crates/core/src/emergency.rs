//! Emergency-vehicle detection over OCR token streams.
//!
//! Ambulance hood lettering is painted mirror-reversed, so an upstream
//! camera reads it back-to-front. Detection therefore matches ambulance
//! keywords against the mirror-normalized text and fire keywords against the
//! as-captured text. Glyph-level mirroring (a flipped letter shape) is the
//! OCR engine's problem; at the token level the mirror transform is exactly
//! a reversal of character order.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

/// Which orientation a reading's text is in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    /// Raw OCR output from the camera image.
    AsCaptured,
    /// Already passed through mirror normalization upstream.
    MirrorNormalized,
}

/// One OCR token reading from a detection frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrReading {
    pub text: String,
    pub orientation: Orientation,
    /// OCR confidence in `[0, 1]`.
    pub confidence: f64,
}

impl OcrReading {
    pub fn new(text: impl Into<String>, orientation: Orientation, confidence: f64) -> Self {
        OcrReading { text: text.into(), orientation, confidence }
    }
}

/// Keyword sets that identify the two emergency-vehicle classes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvKeywordSet {
    pub ambulance_keywords: Vec<String>,
    pub fire_keywords: Vec<String>,
}

impl Default for EvKeywordSet {
    fn default() -> Self {
        EvKeywordSet {
            ambulance_keywords: alloc::vec![String::from("AMBULANCE")],
            fire_keywords: alloc::vec![String::from("FIRE")],
        }
    }
}

impl EvKeywordSet {
    /// Keywords must be non-empty, uppercase, and free of whitespace.
    pub fn validate(&self) -> Result<(), KeywordError> {
        for kw in self.ambulance_keywords.iter().chain(self.fire_keywords.iter()) {
            if kw.is_empty() {
                return Err(KeywordError::Empty);
            }
            if kw.chars().any(|c| c.is_whitespace()) {
                return Err(KeywordError::Whitespace);
            }
            if kw.chars().any(|c| c.is_lowercase()) {
                return Err(KeywordError::NotUppercase);
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KeywordError {
    Empty,
    Whitespace,
    NotUppercase,
}

impl core::fmt::Display for KeywordError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            KeywordError::Empty => write!(f, "keywords must be non-empty"),
            KeywordError::Whitespace => write!(f, "keywords must not contain whitespace"),
            KeywordError::NotUppercase => write!(f, "keywords must be uppercase"),
        }
    }
}

impl core::error::Error for KeywordError {}

/// Emergency-vehicle counts for one lane at one sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct EvDetection {
    pub ambulance_count: u32,
    pub fire_count: u32,
    pub total: u32,
}

impl EvDetection {
    pub fn new(ambulance_count: u32, fire_count: u32) -> Self {
        EvDetection { ambulance_count, fire_count, total: ambulance_count + fire_count }
    }
}

/// Reverses character (Unicode scalar) order; the token-level residue of
/// mirroring an image. An involution: applying it twice returns the input.
pub fn normalize_mirror(text: &str) -> String {
    text.chars().rev().collect()
}

fn contains_any(haystack: &str, keywords: &[String]) -> bool {
    keywords.iter().any(|kw| haystack.contains(kw.as_str()))
}

/// Counts emergency vehicles in a batch of readings.
///
/// A reading below `min_confidence` is ignored. Ambulance keywords are
/// matched against the mirror-normalized text, fire keywords against the
/// as-captured text, both case-insensitively. A reading contributes at most
/// one vehicle; ambulance wins when both classes match.
pub fn detect_emergency(
    readings: &[OcrReading],
    keywords: &EvKeywordSet,
    min_confidence: f64,
) -> EvDetection {
    let mut ambulance = 0u32;
    let mut fire = 0u32;
    for reading in readings {
        if !(reading.confidence >= min_confidence) {
            continue;
        }
        let (mirror_form, captured_form) = match reading.orientation {
            Orientation::AsCaptured => {
                (normalize_mirror(&reading.text), String::from(reading.text.as_str()))
            }
            Orientation::MirrorNormalized => {
                (String::from(reading.text.as_str()), normalize_mirror(&reading.text))
            }
        };
        if contains_any(&mirror_form.to_uppercase(), &keywords.ambulance_keywords) {
            ambulance += 1;
        } else if contains_any(&captured_form.to_uppercase(), &keywords.fire_keywords) {
            fire += 1;
        }
    }
    EvDetection::new(ambulance, fire)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn kw() -> EvKeywordSet {
        EvKeywordSet::default()
    }

    #[test]
    fn mirror_reverses_keyword() {
        assert_eq!(normalize_mirror("ECNALUBMA"), "AMBULANCE");
    }

    #[test]
    fn mirror_fixed_points() {
        assert_eq!(normalize_mirror(""), "");
        assert_eq!(normalize_mirror("ABA"), "ABA");
    }

    #[test]
    fn detects_mirrored_ambulance() {
        let readings = vec![OcrReading::new("ECNALUBMA", Orientation::AsCaptured, 0.9)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(1, 0));
    }

    #[test]
    fn empty_readings_count_nothing() {
        assert_eq!(detect_emergency(&[], &kw(), 0.5), EvDetection::default());
    }

    #[test]
    fn detects_fire_in_captured_text() {
        let readings = vec![OcrReading::new("FIRE BRIGADE 7", Orientation::AsCaptured, 0.8)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(0, 1));
    }

    #[test]
    fn single_ambulance_in_one_lane() {
        let readings = vec![OcrReading::new("ECNALUBMA", Orientation::AsCaptured, 0.95)];
        let det = detect_emergency(&readings, &kw(), 0.5);
        assert_eq!(det.total, 1);
    }

    #[test]
    fn low_confidence_is_ignored() {
        let readings = vec![OcrReading::new("ECNALUBMA", Orientation::AsCaptured, 0.3)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::default());
    }

    #[test]
    fn nan_confidence_is_ignored() {
        let readings = vec![OcrReading::new("ECNALUBMA", Orientation::AsCaptured, f64::NAN)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::default());
    }

    #[test]
    fn ambulance_wins_dual_match() {
        // Captured form contains FIRE, mirror-normalized form contains AMBULANCE;
        // the reading still counts as one vehicle, an ambulance.
        let readings = vec![OcrReading::new("FIRE ECNALUBMA", Orientation::AsCaptured, 0.9)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(1, 0));
    }

    #[test]
    fn case_insensitive_match() {
        let readings = vec![OcrReading::new("ecnalubma", Orientation::AsCaptured, 0.9)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(1, 0));
    }

    #[test]
    fn already_normalized_text_matches_directly() {
        let readings = vec![OcrReading::new("AMBULANCE", Orientation::MirrorNormalized, 0.9)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(1, 0));
    }

    #[test]
    fn fire_on_normalized_reading_uses_captured_form() {
        // Stored normalized, so the captured form is the reversal.
        let readings = vec![OcrReading::new("ERIF", Orientation::MirrorNormalized, 0.9)];
        assert_eq!(detect_emergency(&readings, &kw(), 0.5), EvDetection::new(0, 1));
    }

    #[test]
    fn keyword_validation() {
        let bad = EvKeywordSet {
            ambulance_keywords: vec![String::from("ambulance")],
            fire_keywords: vec![],
        };
        assert_eq!(bad.validate(), Err(KeywordError::NotUppercase));
        let spaced = EvKeywordSet {
            ambulance_keywords: vec![String::from("FIRE TRUCK")],
            fire_keywords: vec![],
        };
        assert_eq!(spaced.validate(), Err(KeywordError::Whitespace));
        assert!(EvKeywordSet::default().validate().is_ok());
    }
}
