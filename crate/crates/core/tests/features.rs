mod common;

use std::sync::Arc;

use primkit::data::{ChannelSchema, Recording, RecordingId, WindowConfig};
use primkit::data::extract_windows;
use primkit::features::{block_features, channel_stats, feature_matrix, write_feature_csv, N_STATS, STATISTICS};
use primkit::primitive::Primitive;
use proptest::prelude::*;
use rand::Rng as _;

/// Textbook two-pass statistics in f64.
fn oracle(x: &[f32]) -> [f64; 5] {
    let v: Vec<f64> = x.iter().map(|&a| f64::from(a)).collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let max = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = v.iter().cloned().fold(f64::INFINITY, f64::min);
    let std = (v.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>() / n).sqrt();
    let rms = (v.iter().map(|a| a * a).sum::<f64>() / n).sqrt();
    [mean, max, min, std, rms]
}

fn vals(seed: u64, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    let mut rng = common::rng(seed);
    (0..n).map(|_| rng.gen_range(lo..hi)).collect()
}

#[test]
fn statistic_order() {
    assert_eq!(STATISTICS, ["mean", "max", "min", "std", "rms"]);
    let s = channel_stats(&[1.0, -1.0, 3.0, 1.0]).unwrap();
    assert_eq!(s[0], 1.0);
    assert_eq!(s[1], 3.0);
    assert_eq!(s[2], -1.0);
    assert!((s[3] - 2f32.sqrt()).abs() < 1e-6);
    assert!((s[4] - 3f32.sqrt()).abs() < 1e-6);
    assert!(channel_stats(&[]).is_err());
}

#[test]
fn constant_channel() {
    let s = channel_stats(&[-2.5; 200]).unwrap();
    assert_eq!(s, [-2.5, -2.5, -2.5, 0.0, 2.5]);
}

#[test]
fn block_layout_is_channel_major() {
    let block: Vec<f32> = (0..3 * 4).map(|i| i as f32).collect();
    let f = block_features(&block, 4).unwrap();
    assert_eq!(f.len(), 3 * N_STATS);
    for c in 0..3 {
        assert_eq!(&f[c * N_STATS..(c + 1) * N_STATS], &channel_stats(&block[c * 4..(c + 1) * 4]).unwrap());
    }
}

#[test]
fn feature_csv_header_and_rows() {
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 2));
    let t = 260;
    let rec = Recording::from_channels(
        RecordingId { patient_id: "p".into(), activity_id: "a".into(), repetition_index: 0 },
        schema,
        vals(3, 2 * t, -1.0, 1.0),
        vec![Some(Primitive::Transport); t],
    )
    .unwrap();
    let (ws, _) = extract_windows(&Arc::new(rec), &WindowConfig { window_s: 2.0, stride_samples: 20 });
    assert_eq!(ws.len(), 4);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("f.csv");
    write_feature_csv(&path, &ws).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next().unwrap(),
        "ch0_mean,ch0_max,ch0_min,ch0_std,ch0_rms,ch1_mean,ch1_max,ch1_min,ch1_std,ch1_rms,label"
    );
    let (m, f) = feature_matrix(&ws).unwrap();
    assert_eq!(f, 10);
    for (i, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').collect();
        assert_eq!(cells[10], "transport");
        for j in 0..10 {
            assert_eq!(cells[j].parse::<f32>().unwrap(), m[i * f + j]);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn matches_two_pass_oracle(seed in 0u64..10_000, n in 1usize..400) {
        let x = vals(seed, n, -1.0, 1.0);
        let got = channel_stats(&x).unwrap();
        for (g, w) in got.iter().zip(oracle(&x)) {
            prop_assert!((f64::from(*g) - w).abs() < 1e-6, "{:?} vs {:?}", got, oracle(&x));
        }
    }

    #[test]
    fn ordering_laws(seed in 0u64..10_000, n in 1usize..400, offset in -1e3f32..1e3) {
        let x: Vec<f32> = vals(seed, n, -1.0, 1.0).into_iter().map(|v| v + offset).collect();
        let [mean, max, min, std, rms] = channel_stats(&x).unwrap();
        prop_assert!(max >= mean && mean >= min);
        prop_assert!(rms >= mean.abs());
        prop_assert!(std >= 0.0);
    }

    #[test]
    fn time_reversal_invariance(seed in 0u64..10_000, n in 1usize..400) {
        let x = vals(seed, n, -5.0, 5.0);
        let mut r = x.clone();
        r.reverse();
        let (a, b) = (channel_stats(&x).unwrap(), channel_stats(&r).unwrap());
        for (p, q) in a.iter().zip(b) {
            prop_assert!((p - q).abs() <= 1e-6 * (1.0 + p.abs()));
        }
    }

    #[test]
    fn scaling_law(seed in 0u64..10_000, n in 2usize..400, alpha in -20f32..20.0) {
        let x = vals(seed, n, -1.0, 1.0);
        let y: Vec<f32> = x.iter().map(|v| v * alpha).collect();
        let [mean, max, min, std, rms] = channel_stats(&x).unwrap();
        let s = channel_stats(&y).unwrap();
        let (smax, smin) = if alpha >= 0.0 { (max * alpha, min * alpha) } else { (min * alpha, max * alpha) };
        let want = [mean * alpha, smax, smin, std * alpha.abs(), rms * alpha.abs()];
        for (g, w) in s.iter().zip(want) {
            prop_assert!((g - w).abs() <= 1e-5 * (1.0 + w.abs()), "{:?} vs {:?}", s, want);
        }
    }
}
