use medfront::datasets::{
    assign_partitions, class_counts, generate_synthetic, make_split, parse_cycle_annotations, parse_wav,
    segment_by_cycles, write_wav, Fractions, Label, Partition, Preprocessor, SegmentRef, SplitManifest, SplitMode,
    SyntheticConfig,
};
use medfront::signal::Waveform;
use proptest::prelude::*;

fn refs(labels: &[Label], patients: usize) -> Vec<SegmentRef> {
    labels
        .iter()
        .enumerate()
        .map(|(i, &label)| SegmentRef {
            segment_path: format!("seg/{i:05}.wav"),
            label,
            origin_file: format!("rec{}.wav", i / 4),
            start_s: 0.0,
            end_s: 2.0,
            patient_id: Some(format!("p{}", i % patients.max(1))),
        })
        .collect()
}

#[test]
fn published_partition_counts_for_both_corpora() {
    let resp = class_counts(&[3642, 3256], Fractions::default());
    assert_eq!(resp, vec![[2732, 546, 364], [2442, 488, 326]]);
    let heart = class_counts(&[27281, 7045], Fractions::default());
    let table = [[20461, 4092, 2728], [5284, 1057, 704]];
    for (got, want) in heart.iter().zip(table) {
        for (g, w) in got.iter().zip(want) {
            assert!(g.abs_diff(w) <= 1, "{heart:?}");
        }
    }
}

#[test]
fn annotated_recording_to_fixed_length_segments() {
    let fs = 44_100u32;
    let samples: Vec<f64> = (0..fs as usize * 6)
        .map(|i| (2.0 * std::f64::consts::PI * 400.0 * i as f64 / fs as f64).sin())
        .collect();
    let w = Waveform::new(samples, fs, "101_1b1_Al_sc_Meditron");
    let anns = parse_cycle_annotations("0.2\t1.4\t0\t0\n1.4\t3.9\t1\t0\n3.9\t5.0\t0\t1\n").unwrap();
    let segments = segment_by_cycles(&w, &anns, "101_1b1_Al_sc_Meditron.wav");
    let labels: Vec<Label> = segments.iter().map(|s| s.label).collect();
    assert_eq!(labels, [Label::Normal, Label::Abnormal, Label::Abnormal]);
    let mut pre = Preprocessor::new(12, (120.0, 1800.0), 4000, 2.0);
    for s in &segments {
        let out = pre.process(&s.waveform).unwrap();
        assert_eq!(out.sample_rate, 4000);
        assert_eq!(out.len(), 8000);
        assert!(out.samples.iter().all(|x| x.is_finite()));
    }
}

#[test]
fn synthetic_segments_survive_a_wav_round_trip() {
    let cfg = SyntheticConfig {
        count: 4,
        seed: 3,
        ..SyntheticConfig::default()
    };
    let mut pre = Preprocessor::new(12, cfg.band_hz, 4000, 2.0);
    let dir = tempfile::tempdir().unwrap();
    for (i, seg) in generate_synthetic(&cfg).iter().enumerate() {
        let w = pre.process(&seg.waveform).unwrap();
        let path = dir.path().join(format!("{i}.wav"));
        write_wav(std::fs::File::create(&path).unwrap(), &w).unwrap();
        let back = parse_wav(&std::fs::read(&path).unwrap(), "x").unwrap();
        assert_eq!(back.sample_rate, 4000);
        assert_eq!(back.len(), w.len());
        for (a, b) in back.samples.iter().zip(&w.samples) {
            assert!((a - b).abs() <= 1e-7 * b.abs().max(1.0));
        }
    }
}

#[test]
fn manifest_round_trips_through_csv() {
    let labels: Vec<Label> = (0..40).map(|i| Label::from_index(i % 2).unwrap()).collect();
    let m = make_split(refs(&labels, 7), 11, Fractions::default(), SplitMode::PerSegment).unwrap();
    let csv = m.to_csv().unwrap();
    assert_eq!(SplitManifest::from_csv(&csv).unwrap(), m);
    assert!(csv.starts_with("medfront-manifest v1\n# seed=11"));
}

fn label_vec() -> impl Strategy<Value = Vec<Label>> {
    prop::collection::vec(prop::bool::ANY, 10..300).prop_filter_map("both classes present", |bits| {
        let labels: Vec<Label> = bits.iter().map(|&b| Label::from_index(b as usize).unwrap()).collect();
        (labels.contains(&Label::Normal) && labels.contains(&Label::Abnormal)).then_some(labels)
    })
}

proptest! {
    #[test]
    fn per_segment_split_is_stratified_and_total(labels in label_vec(), seed in any::<u64>()) {
        let groups = vec![String::new(); labels.len()];
        let parts = assign_partitions(&labels, &groups, seed, Fractions::default(), SplitMode::PerSegment).unwrap();
        prop_assert_eq!(parts.len(), labels.len());
        for class in Label::ALL {
            let n = labels.iter().filter(|&&l| l == class).count();
            for (p, f) in Partition::ALL.iter().zip(Fractions::default().0) {
                let k = labels.iter().zip(&parts).filter(|(&l, &q)| l == class && q == *p).count();
                prop_assert!((k as f64 - n as f64 * f).abs() < 1.0 + 1e-9, "{class} {p}: {k} of {n}");
            }
        }
        let again = assign_partitions(&labels, &groups, seed, Fractions::default(), SplitMode::PerSegment).unwrap();
        prop_assert_eq!(parts, again);
    }

    #[test]
    fn grouped_split_keeps_patients_whole(labels in label_vec(), patients in 3usize..40, seed in any::<u64>()) {
        let r = refs(&labels, patients);
        if let Ok(m) = make_split(r, seed, Fractions::default(), SplitMode::PatientGrouped) {
            let mut seen = std::collections::HashMap::new();
            for e in &m.entries {
                let prev = seen.insert(e.segment.patient_id.clone().unwrap(), e.partition);
                prop_assert!(prev.is_none() || prev == Some(e.partition));
            }
        }
    }

    #[test]
    fn class_counts_sum_to_class_sizes(a in 1usize..50_000, b in 1usize..50_000) {
        let counts = class_counts(&[a, b], Fractions::default());
        prop_assert_eq!(counts[0].iter().sum::<usize>(), a);
        prop_assert_eq!(counts[1].iter().sum::<usize>(), b);
    }
}
