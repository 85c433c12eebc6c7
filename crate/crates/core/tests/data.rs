mod common;

use std::collections::HashSet;
use std::fs;
use std::sync::Arc;

use primkit::data::window::extract_all;
use primkit::data::{
    attach_context, class_distribution, extract_windows, load_recording, normalize_repetition, split_patients,
    write_recording, ChannelKind, ChannelSchema, Impairment, PareticSide, PatientMeta, Recording, RecordingId,
    WindowConfig,
};
use primkit::primitive::{Primitive, StepLabel};
use proptest::prelude::*;
use rand::Rng as _;

fn id() -> RecordingId {
    RecordingId {
        patient_id: "p01".into(),
        activity_id: "a".into(),
        repetition_index: 0,
    }
}

fn random_recording(schema: &Arc<ChannelSchema>, t: usize, seed: u64) -> Recording {
    let mut rng = common::rng(seed);
    let c = schema.sensor_count();
    let values: Vec<f32> = (0..c * t).map(|_| rng.gen_range(-3.0..5.0)).collect();
    let labels: Vec<StepLabel> = (0..t)
        .map(|_| {
            let k = rng.gen_range(0..6);
            Primitive::from_index(k)
        })
        .collect();
    Recording::from_channels(id(), schema.clone(), values, labels).unwrap()
}

fn meta(side: PareticSide) -> PatientMeta {
    PatientMeta::new("p01", side, 40).unwrap()
}

#[test]
fn three_row_csv_loads_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 2));
    let path = dir.path().join("r.csv");
    fs::write(&path, "angle_00,angle_01,label\n1.5,2,REACH\n-0.25,3,idle\n0,4e-3,unlabeled\n").unwrap();
    let rec = load_recording(&path, &schema, id()).unwrap();
    assert_eq!(rec.len(), 3);
    assert_eq!(rec.channel(0), &[1.5, -0.25, 0.0]);
    assert_eq!(rec.channel(1), &[2.0, 3.0, 4e-3]);
    assert_eq!(rec.labels, vec![Some(Primitive::Reach), Some(Primitive::Idle), None]);

    let out = dir.path().join("w.csv");
    write_recording(&out, &rec).unwrap();
    let back = load_recording(&out, &schema, id()).unwrap();
    assert_eq!(back, rec);
}

#[test]
fn random_recording_round_trips_bitwise() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Arc::new(ChannelSchema::compact());
    let rec = random_recording(&schema, 300, 4);
    let path = dir.path().join("r.csv");
    write_recording(&path, &rec).unwrap();
    assert_eq!(load_recording(&path, &schema, id()).unwrap(), rec);
}

#[test]
fn missing_column_names_the_column() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 2));
    let path = dir.path().join("r.csv");
    fs::write(&path, "angle_00,label\n1,reach\n").unwrap();
    let err = load_recording(&path, &schema, id()).unwrap_err().to_string();
    assert!(err.contains("angle_01"), "{err}");
}

#[test]
fn bad_cells_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
    let path = dir.path().join("r.csv");
    fs::write(&path, "angle_00,label\n1,reach\nx,reach\n").unwrap();
    assert!(load_recording(&path, &schema, id()).is_err());
    fs::write(&path, "angle_00,label\n1,grasp\n").unwrap();
    assert!(load_recording(&path, &schema, id()).is_err());
}

#[test]
fn context_channels() {
    let schema = Arc::new(ChannelSchema::upper_body());
    assert_eq!(schema.sensor_count(), 76);
    let rec = random_recording(&schema, 400, 1);
    let out = attach_context(&rec, &meta(PareticSide::Right)).unwrap();
    assert_eq!(out.channels(), 78);
    assert!(out.context_attached());
    assert!((out.value(250, 76) - 2.5).abs() < 1e-6);
    assert_eq!(out.value(0, 76), 0.0);
    assert!(out.channel(77).iter().all(|&v| v == 1.0));
    let left = attach_context(&rec, &meta(PareticSide::Left)).unwrap();
    assert!(left.channel(77).iter().all(|&v| v == 0.0));
    // sensor channels untouched
    assert_eq!(&out.values()[..76 * 400], rec.values());
    // attaching twice is a contract error
    assert!(attach_context(&out, &meta(PareticSide::Right)).is_err());
}

#[test]
fn normalized_channels_are_standardized_except_flag() {
    let schema = Arc::new(ChannelSchema::compact());
    let rec = attach_context(&random_recording(&schema, 500, 2), &meta(PareticSide::Right)).unwrap();
    let n = normalize_repetition(&rec).unwrap();
    for (c, kind) in n.channel_kinds().into_iter().enumerate() {
        let ch: Vec<f64> = n.channel(c).iter().map(|&v| f64::from(v)).collect();
        if kind == ChannelKind::PareticFlag {
            assert!(ch.iter().all(|&v| v == 1.0));
            continue;
        }
        let mean = ch.iter().sum::<f64>() / ch.len() as f64;
        let std = (ch.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / ch.len() as f64).sqrt();
        assert!(mean.abs() < 1e-5, "channel {c} mean {mean}");
        assert!((std - 1.0).abs() < 1e-4, "channel {c} std {std}");
    }
}

#[test]
fn constant_channel_is_centered_and_short_recording_rejected() {
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
    let rec = Recording::from_channels(id(), schema.clone(), vec![3.0; 10], vec![None; 10]).unwrap();
    let n = normalize_repetition(&rec).unwrap();
    assert!(n.channel(0).iter().all(|&v| v == 0.0));
    let one = Recording::from_channels(id(), schema, vec![3.0], vec![None]).unwrap();
    assert!(normalize_repetition(&one).is_err());
}

#[test]
fn window_blocks_reslice_the_recording() {
    let schema = Arc::new(ChannelSchema::compact());
    let rec = Arc::new(attach_context(&random_recording(&schema, 640, 3), &meta(PareticSide::Left)).unwrap());
    let cfg = WindowConfig {
        window_s: 2.0,
        stride_samples: 7,
    };
    let (ws, summary) = extract_windows(&rec, &cfg);
    assert_eq!(summary.windows + summary.unlabeled_centers, cfg.count(640));
    let w = cfg.samples();
    for win in &ws {
        assert_eq!(Some(win.label), rec.labels[win.center]);
        let block = win.block();
        let start = win.center - w / 2;
        for c in 0..rec.channels() {
            let want = &rec.channel(c)[start..start + w];
            let got = &block[c * w..(c + 1) * w];
            assert!(want.iter().zip(got).all(|(a, b)| a.to_bits() == b.to_bits()));
        }
    }
}

#[test]
fn class_distribution_counts_labels() {
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
    let labels: Vec<StepLabel> = (0..300)
        .map(|t| if t < 150 { Some(Primitive::Reach) } else { Some(Primitive::Idle) })
        .collect();
    let rec = Arc::new(Recording::from_channels(id(), schema, vec![0.0; 300], labels).unwrap());
    let cfg = WindowConfig {
        window_s: 2.0,
        stride_samples: 1,
    };
    let (ws, _) = extract_windows(&rec, &cfg);
    // centers 100..=200: 50 reach, 51 idle
    assert_eq!(class_distribution(&ws), [50, 0, 0, 0, 51]);
    let (all, s) = extract_all(&[rec.clone(), rec], &cfg);
    assert_eq!(all.len(), 202);
    assert_eq!(s.windows, 202);
}

#[test]
fn short_recordings_yield_nothing() {
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
    let rec = Arc::new(Recording::from_channels(id(), schema, vec![0.0; 150], vec![Some(Primitive::Reach); 150]).unwrap());
    let (ws, s) = extract_windows(&rec, &WindowConfig::default());
    assert!(ws.is_empty());
    assert_eq!(s.too_short, 1);
}

#[test]
fn impairment_bands_and_fma_range() {
    assert_eq!(Impairment::from_fma(0), Impairment::Severe);
    assert_eq!(Impairment::from_fma(25), Impairment::Severe);
    assert_eq!(Impairment::from_fma(26), Impairment::Moderate);
    assert_eq!(Impairment::from_fma(52), Impairment::Moderate);
    assert_eq!(Impairment::from_fma(53), Impairment::Mild);
    assert_eq!(Impairment::from_fma(66), Impairment::Mild);
    assert!(PatientMeta::new("x", PareticSide::Left, 67).is_err());
}

fn cohort(sides: &[bool], fmas: &[u8]) -> Vec<PatientMeta> {
    sides
        .iter()
        .zip(fmas)
        .enumerate()
        .map(|(i, (&right, &fma))| {
            let side = if right { PareticSide::Right } else { PareticSide::Left };
            PatientMeta::new(format!("p{i:03}"), side, fma).unwrap()
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_is_idempotent(seed in 0u64..1000, t in 20usize..300, scale in 0.1f32..50.0) {
        let schema = Arc::new(ChannelSchema::from_counts(0, 0, 3));
        let mut rng = common::rng(seed);
        let values: Vec<f32> = (0..3 * t).map(|_| rng.gen_range(-1.0..1.0) * scale + 7.0).collect();
        let rec = Recording::from_channels(id(), schema, values, vec![None; t]).unwrap();
        let rec = attach_context(&rec, &meta(PareticSide::Right)).unwrap();
        let once = normalize_repetition(&rec).unwrap();
        let twice = normalize_repetition(&once).unwrap();
        for (a, b) in once.values().iter().zip(twice.values()) {
            prop_assert!((a - b).abs() < 1e-4, "{} vs {}", a, b);
        }
    }

    #[test]
    fn window_count_matches_closed_form(t in 1usize..1000, window_s in 0.01f64..3.0, stride in 1usize..60) {
        let cfg = WindowConfig { window_s, stride_samples: stride };
        let w = cfg.samples();
        let expected = if w == 0 || t < w { 0 } else { (t - w) / stride + 1 };
        prop_assert_eq!(cfg.count(t), expected);
        let centers: Vec<usize> = cfg.centers(t).collect();
        prop_assert_eq!(centers.len(), expected);
        for c in centers {
            prop_assert!(c >= w / 2 && c + (w - w / 2) <= t);
        }
        let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
        let rec = Arc::new(Recording::from_channels(id(), schema, vec![0.0; t], vec![Some(Primitive::Stabilize); t]).unwrap());
        prop_assert_eq!(extract_windows(&rec, &cfg).0.len(), expected);
    }

    #[test]
    fn split_is_a_stratified_partition(
        sides in prop::collection::vec(any::<bool>(), 8..40),
        seed in 0u64..1000,
        k in 2usize..6,
    ) {
        let fmas: Vec<u8> = (0..sides.len()).map(|i| (i * 17 % 67) as u8).collect();
        let metas = cohort(&sides, &fmas);
        prop_assume!(metas.len() >= k);
        let folds = split_patients(&metas, k, seed).unwrap();
        prop_assert_eq!(folds.len(), k);
        let mut seen = HashSet::new();
        for f in &folds {
            prop_assert_eq!(f.train_ids.len() + f.val_ids.len(), metas.len());
            for v in &f.val_ids {
                prop_assert!(!f.train_ids.contains(v));
                prop_assert!(seen.insert(v.clone()), "{} validated twice", v);
            }
        }
        prop_assert_eq!(seen.len(), metas.len());
        // fold sizes and every (impairment, side) stratum differ by at most one across folds
        let sizes: Vec<usize> = folds.iter().map(|f| f.val_ids.len()).collect();
        prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1, "{:?}", sizes);
        let strata: HashSet<(Impairment, PareticSide)> = metas.iter().map(|m| (m.impairment(), m.paretic_side)).collect();
        for s in strata {
            let counts: Vec<usize> = folds
                .iter()
                .map(|f| f.val_ids.iter().filter(|id| metas.iter().any(|m| &m.patient_id == *id && (m.impairment(), m.paretic_side) == s)).count())
                .collect();
            prop_assert!(counts.iter().max().unwrap() - counts.iter().min().unwrap() <= 1, "{:?} {:?}", s, counts);
        }
        prop_assert_eq!(split_patients(&metas, k, seed).unwrap(), folds);
    }
}

#[test]
fn too_many_folds_is_an_error() {
    let metas = cohort(&[true, false, true], &[10, 30, 60]);
    assert!(split_patients(&metas, 4, 0).is_err());
    assert!(split_patients(&metas, 1, 0).is_err());
}
