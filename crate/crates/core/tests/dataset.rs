use atk_core::data::{exclude_wet_weather, parse_raw_csv, segment_daily, write_raw_csv};
use atk_core::synth::{gen_dry_weather, inject_anomalies, random_specs, AnomalyKind, SynthConfig};

#[test]
fn csv_round_trip_is_exact() {
    let (series, _) = gen_dry_weather(&SynthConfig {
        days: 5,
        seed: 8,
        ..SynthConfig::default()
    })
    .unwrap();
    let back = parse_raw_csv(write_raw_csv(&series).as_bytes()).unwrap();
    assert_eq!(back, series);
}

#[test]
fn injected_labels_survive_csv_and_segmentation() {
    let (clean, log) = gen_dry_weather(&SynthConfig {
        days: 15,
        seed: 9,
        ..SynthConfig::default()
    })
    .unwrap();
    let specs = random_specs(&log.dry_days[..4], 2, &AnomalyKind::ALL, 1).unwrap();
    let (dirty, labels, _) = inject_anomalies(&clean, &specs, 1).unwrap();
    let parsed = parse_raw_csv(write_raw_csv(&dirty).as_bytes()).unwrap();
    let clean_segs = segment_daily(&exclude_wet_weather(&clean));
    let dirty_segs = segment_daily(&exclude_wet_weather(&parsed));
    assert_eq!(clean_segs.len(), log.dry_days.len());
    assert_eq!(dirty_segs.len(), clean_segs.len());
    for (c, d) in clean_segs.iter().zip(&dirty_segs) {
        let changed: Vec<usize> = (0..288)
            .filter(|&t| (0..3).any(|ch| c.data[ch][t] != d.data[ch][t]))
            .collect();
        let labeled: Vec<usize> = labels
            .iter()
            .find(|l| l.segment_id == c.segment_id)
            .map(|l| l.spans.iter().flat_map(|s| s.start..s.end).collect())
            .unwrap_or_default();
        assert_eq!(changed, labeled, "{}", c.segment_id);
    }
}
