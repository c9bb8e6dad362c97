//! Property suites for the decision core's stated invariants.

use proptest::prelude::*;

use edgelight_core::{
    classify, compute_index, decide, detect_emergency, normalize_mirror, CongestionBand,
    CongestionIndex, ControllerConfig, EvDetection, EvKeywordSet, IntersectionSnapshot, LaneGeometry,
    LaneId, LaneState, OcrReading, Orientation, Thresholds, Timestamp,
};

fn geometry_strategy() -> impl Strategy<Value = LaneGeometry> {
    // Quarter-metre grid keeps areas exactly representable.
    (4u32..=80, 8u32..=200).prop_map(|(wq, lq)| {
        LaneGeometry::new(wq as f64 / 4.0, lq as f64 / 4.0).unwrap()
    })
}

fn thresholds_strategy() -> impl Strategy<Value = Thresholds> {
    (1u32..=50, 1u32..=50).prop_map(|(a, gap)| {
        Thresholds::new(a as f64 / 100.0, (a + gap) as f64 / 100.0).unwrap()
    })
}

proptest! {
    #[test]
    fn index_monotone_in_count(geometry in geometry_strategy(), a in 0u32..=200, b in 0u32..=200) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(compute_index(lo, &geometry).value() <= compute_index(hi, &geometry).value());
    }

    #[test]
    fn index_zero_iff_count_zero(geometry in geometry_strategy(), count in 0u32..=200) {
        let v = compute_index(count, &geometry).value();
        prop_assert_eq!(v == 0.0, count == 0);
    }

    #[test]
    fn exactly_one_band(index in 0.0f64..10.0, thresholds in thresholds_strategy()) {
        let band = classify(CongestionIndex(index), &thresholds);
        let low = band == CongestionBand::Low;
        let mid = band == CongestionBand::Mid;
        let high = band == CongestionBand::High;
        prop_assert_eq!(low as u8 + mid as u8 + high as u8, 1);
    }

    #[test]
    fn banding_scale_invariant(
        count in 0u32..=200,
        geometry in geometry_strategy(),
        k in 2u32..=10,
        thresholds in thresholds_strategy(),
    ) {
        let scaled = LaneGeometry::new(geometry.width_m * k as f64, geometry.coverage_length_m).unwrap();
        let base = classify(compute_index(count, &geometry), &thresholds);
        let same = classify(compute_index(count * k, &scaled), &thresholds);
        prop_assert_eq!(base, same);
    }
}

proptest! {
    #[test]
    fn mirror_is_involution(text in ".*") {
        let twice = normalize_mirror(&normalize_mirror(&text));
        prop_assert_eq!(&twice, &text);
        prop_assert_eq!(normalize_mirror(&text).chars().count(), text.chars().count());
    }

    #[test]
    fn detection_orientation_consistent(text in ".*", confidence in 0.0f64..=1.0) {
        let keywords = EvKeywordSet::default();
        let captured = [OcrReading::new(text.clone(), Orientation::AsCaptured, confidence)];
        let normalized = [OcrReading::new(normalize_mirror(&text), Orientation::MirrorNormalized, confidence)];
        prop_assert_eq!(
            detect_emergency(&captured, &keywords, 0.5),
            detect_emergency(&normalized, &keywords, 0.5)
        );
    }

    #[test]
    fn detection_monotone_in_confidence(
        texts in prop::collection::vec("[A-Z ]{0,12}", 0..8),
        confidences in prop::collection::vec(0.0f64..=1.0, 8),
        lo in 0.0f64..=1.0,
        bump in 0.0f64..=1.0,
    ) {
        let keywords = EvKeywordSet::default();
        let readings: Vec<OcrReading> = texts
            .iter()
            .zip(confidences.iter())
            .map(|(t, c)| OcrReading::new(t.clone(), Orientation::AsCaptured, *c))
            .collect();
        let hi = (lo + bump).min(1.0);
        let loose = detect_emergency(&readings, &keywords, lo);
        let strict = detect_emergency(&readings, &keywords, hi);
        prop_assert!(strict.ambulance_count <= loose.ambulance_count);
        prop_assert!(strict.fire_count <= loose.fire_count);
        prop_assert!(strict.total <= loose.total);
    }

    #[test]
    fn detection_case_insensitive(text in "[a-zA-Z ]{0,16}", flips in prop::collection::vec(any::<bool>(), 16)) {
        let keywords = EvKeywordSet::default();
        let flipped: String = text
            .chars()
            .zip(flips.iter().chain(std::iter::repeat(&false)))
            .map(|(c, f)| if *f { if c.is_ascii_uppercase() { c.to_ascii_lowercase() } else { c.to_ascii_uppercase() } } else { c })
            .collect();
        let a = [OcrReading::new(text, Orientation::AsCaptured, 0.9)];
        let b = [OcrReading::new(flipped, Orientation::AsCaptured, 0.9)];
        prop_assert_eq!(detect_emergency(&a, &keywords, 0.5), detect_emergency(&b, &keywords, 0.5));
    }

    #[test]
    fn detection_additive_over_concatenation(
        texts_a in prop::collection::vec("(ECNALUBMA|FIRE|TRUCK 12|)", 0..6),
        texts_b in prop::collection::vec("(ECNALUBMA|FIRE|XYZ)", 0..6),
    ) {
        let keywords = EvKeywordSet::default();
        let make = |texts: &[String]| -> Vec<OcrReading> {
            texts.iter().map(|t| OcrReading::new(t.clone(), Orientation::AsCaptured, 0.9)).collect()
        };
        let a = make(&texts_a);
        let b = make(&texts_b);
        let mut joined = a.clone();
        joined.extend(b.iter().cloned());
        let da = detect_emergency(&a, &keywords, 0.5);
        let db = detect_emergency(&b, &keywords, 0.5);
        let dj = detect_emergency(&joined, &keywords, 0.5);
        prop_assert_eq!(dj.ambulance_count, da.ambulance_count + db.ambulance_count);
        prop_assert_eq!(dj.fire_count, da.fire_count + db.fire_count);
        prop_assert_eq!(dj.total, da.total + db.total);
    }
}

#[derive(Debug, Clone)]
struct LaneStateSeed {
    count: u32,
    ambulances: u32,
    fires: u32,
    red_elapsed_ms: u64,
    stale: bool,
}

fn lane_seed_strategy() -> impl Strategy<Value = LaneStateSeed> {
    (0u32..=200, 0u32..=5, 0u32..=5, 0u64..300_000, any::<bool>()).prop_map(
        |(count, ambulances, fires, red_elapsed_ms, stale)| LaneStateSeed {
            count,
            ambulances,
            fires,
            red_elapsed_ms,
            stale,
        },
    )
}

fn build_snapshot(seeds: &[LaneStateSeed], geometry: &LaneGeometry, green: LaneId) -> IntersectionSnapshot {
    let lanes = seeds
        .iter()
        .enumerate()
        .map(|(i, seed)| {
            let lane_id = LaneId(i as u32 + 1);
            LaneState {
                lane_id,
                index: compute_index(seed.count, geometry),
                ev: EvDetection::new(seed.ambulances, seed.fires),
                red_elapsed_ms: if lane_id == green { 0 } else { seed.red_elapsed_ms },
                last_frame_at: Timestamp::ZERO,
                stale: seed.stale,
            }
        })
        .collect();
    IntersectionSnapshot { epoch: Timestamp::ZERO, lanes }
}

proptest! {
    #[test]
    fn every_decision_has_exactly_one_green(
        seeds in prop::collection::vec(lane_seed_strategy(), 2..=6),
        geometry in geometry_strategy(),
        green_ix in 0usize..6,
        green_elapsed_ms in 0u64..60_000,
    ) {
        let mut config = ControllerConfig::default();
        config.lane_count = seeds.len() as u32;
        let green = LaneId((green_ix % seeds.len()) as u32 + 1);
        let snapshot = build_snapshot(&seeds, &geometry, green);
        let decision = decide(&snapshot, &config, green, green_elapsed_ms).unwrap();
        prop_assert!(decision.check_exactly_one_green());
        prop_assert_eq!(decision.phases.len(), seeds.len());
    }

    #[test]
    fn unique_ev_maximum_always_wins(
        seeds in prop::collection::vec(lane_seed_strategy(), 2..=6),
        geometry in geometry_strategy(),
        winner_ix in 0usize..6,
    ) {
        let mut config = ControllerConfig::default();
        config.lane_count = seeds.len() as u32;
        let winner_ix = winner_ix % seeds.len();
        let mut seeds = seeds;
        // Make one lane's EV total strictly maximal.
        let max_other = seeds
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != winner_ix)
            .map(|(_, s)| s.ambulances + s.fires)
            .max()
            .unwrap_or(0);
        seeds[winner_ix].ambulances = max_other + 1;
        seeds[winner_ix].fires = 0;
        let green = LaneId(1);
        let snapshot = build_snapshot(&seeds, &geometry, green);
        let decision = decide(&snapshot, &config, green, config.min_green_ms).unwrap();
        prop_assert_eq!(decision.green_lane, LaneId(winner_ix as u32 + 1));
    }

    #[test]
    fn selection_invariant_under_common_scaling(
        seeds in prop::collection::vec(lane_seed_strategy(), 2..=6),
        geometry in geometry_strategy(),
        k in 2u32..=10,
        green_elapsed_ms in 0u64..60_000,
    ) {
        let mut config = ControllerConfig::default();
        config.lane_count = seeds.len() as u32;
        let green = LaneId(1);
        let base = build_snapshot(&seeds, &geometry, green);
        let scaled_geometry =
            LaneGeometry::new(geometry.width_m * k as f64, geometry.coverage_length_m).unwrap();
        let scaled_seeds: Vec<LaneStateSeed> = seeds
            .iter()
            .map(|s| LaneStateSeed { count: s.count * k, ..s.clone() })
            .collect();
        let scaled = build_snapshot(&scaled_seeds, &scaled_geometry, green);
        let a = decide(&base, &config, green, green_elapsed_ms).unwrap();
        let b = decide(&scaled, &config, green, green_elapsed_ms).unwrap();
        prop_assert_eq!(a.green_lane, b.green_lane);
        prop_assert_eq!(a.reason, b.reason);
    }

    #[test]
    fn cadence_tracks_band(
        seeds in prop::collection::vec(lane_seed_strategy(), 2..=6),
        geometry in geometry_strategy(),
        green_elapsed_ms in 0u64..60_000,
    ) {
        let mut config = ControllerConfig::default();
        config.lane_count = seeds.len() as u32;
        let green = LaneId(1);
        let snapshot = build_snapshot(&seeds, &geometry, green);
        let decision = decide(&snapshot, &config, green, green_elapsed_ms).unwrap();
        for lane in &snapshot.lanes {
            let expected = match classify(lane.index, &config.thresholds) {
                CongestionBand::Low => config.sample_interval_low_ms,
                CongestionBand::Mid | CongestionBand::High => config.sample_interval_mid_ms,
            };
            prop_assert_eq!(decision.next_sample_interval_ms[&lane.lane_id], expected);
        }
    }

    #[test]
    fn decide_is_deterministic_in_serialized_form(
        seeds in prop::collection::vec(lane_seed_strategy(), 2..=6),
        geometry in geometry_strategy(),
        green_elapsed_ms in 0u64..60_000,
    ) {
        let mut config = ControllerConfig::default();
        config.lane_count = seeds.len() as u32;
        let green = LaneId(1);
        let snapshot = build_snapshot(&seeds, &geometry, green);
        let a = decide(&snapshot, &config, green, green_elapsed_ms).unwrap();
        let b = decide(&snapshot, &config, green, green_elapsed_ms).unwrap();
        prop_assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
    }
}
