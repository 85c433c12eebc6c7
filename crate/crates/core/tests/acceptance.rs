//! One test per acceptance criterion. Each prints a PASS or FAIL line to
//! stderr (uncaptured) before asserting, so `cargo test --test acceptance`
//! shows the verdicts even when every test passes.

mod common;

use std::collections::HashSet;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use primkit::arch::{match_width, CnnStyle, Model, ModelSpec, NormKind};
use primkit::data::window::WindowConfig;
use primkit::data::{
    extract_windows, split_patients, ChannelSchema, PareticSide, PatientMeta, PipelineConfig, Recording, RecordingId,
};
use primkit::eval::{
    accuracy, balanced_accuracy, ensemble_proba, predictions, probability_letter_values, window_composition,
    ConfusionMatrix, Proba, LETTER_LEVELS,
};
use primkit::experiment::{
    checkpoint_proba, cross_validate, ensemble_predict, evaluate, fit_spec_to_data, train_one, CvConfig, ModelChoice,
};
use primkit::features::{block_features, N_STATS};
use primkit::forest::{fit_forest, ForestConfig};
use primkit::nn::{
    batch_norm_apply, gradient_check, gradient_check_with, instance_norm_apply, GradCheckOptions, Mode, NormState,
    Tensor,
};
use primkit::par;
use primkit::primitive::{Primitive, StepLabel};
use primkit::synth::{generate, SynthConfig};
use primkit::train::{
    fit, load_checkpoint, predict_set, save_checkpoint, set_accuracy, Checkpoint, LabeledSet, TrainConfig, TrainMeta,
    Trained,
};
use rand::Rng as _;
use rand_distr::{Distribution, Normal};

fn verdict(n: u32, title: &str, ok: bool, detail: &str) {
    let tag = if ok { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "{tag} criterion {n}: {title} ({detail})");
    assert!(ok, "criterion {n} failed: {detail}");
}

// ---------------------------------------------------------------- 1

#[test]
fn criterion_1_gradient_correctness() {
    let t0 = Instant::now();
    let mut worst = 0.0f64;
    let mut failures = Vec::new();
    for seed in 0..10 {
        for (name, mut g, x) in common::kind_graphs(seed) {
            let y = common::labels(x.shape()[0], &mut common::rng(seed + 100));
            let rep = gradient_check(&mut g, &x, &y, 1e-4).unwrap();
            worst = worst.max(rep.max_rel_err);
            if !rep.passed {
                failures.push(format!("{name}/{seed}"));
            }
        }
    }
    let (c, w) = (3, 16);
    let mut specs = vec![ModelSpec::fcnn(c * N_STATS), ModelSpec::lstm(c, w)];
    for style in [CnnStyle::Resnet, CnnStyle::Densenet] {
        for norm in [NormKind::Batch, NormKind::Instance] {
            for emb in [false, true] {
                specs.push(ModelSpec::cnn(c, w, style, norm, emb));
            }
        }
    }
    let opts = GradCheckOptions {
        max_per_param: Some(8),
        ..GradCheckOptions::default()
    };
    for seed in 0..10 {
        for spec in &specs {
            let mut spec = spec.clone().desk();
            // dropout masks make the loss random; its gradient is checked at rate 0
            spec.fcnn.dropout = 0.0;
            spec.lstm.hidden = 4;
            let mut m = Model::<f64>::build(&spec, seed).unwrap();
            let mut r = common::rng(1000 + seed);
            let shape: Vec<usize> = if spec.uses_features() { vec![4, c * N_STATS] } else { vec![4, c, w] };
            let x = common::uniform::<f64>(&shape, &mut r);
            let y = common::labels(4, &mut r);
            let rep = gradient_check_with(&mut m.graph, &x, &y, opts.clone()).unwrap();
            worst = worst.max(rep.max_rel_err);
            if !rep.passed {
                failures.push(format!("{}/{seed}", spec.tag()));
            }
        }
    }
    let elapsed = t0.elapsed();
    verdict(
        1,
        "gradient check of every layer kind and architecture",
        failures.is_empty() && worst < 1e-4 && elapsed < Duration::from_secs(120),
        &format!("max rel err {worst:.2e}, failures {failures:?}, {:.1}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------- 2

#[test]
fn criterion_2_normalization_semantics() {
    // instance norm: pre-affine statistics per (example, channel)
    let mut max_mean = 0.0f64;
    let mut max_std_err = 0.0f64;
    for seed in 0..200u64 {
        let mut r = common::rng(seed);
        let (b, c, t) = (r.gen_range(1..5), r.gen_range(1..5), r.gen_range(8..64));
        let scale = r.gen_range(1.0..50.0);
        let mut x = common::uniform::<f64>(&[b, c, t], &mut r);
        x.data_mut().iter_mut().for_each(|v| *v = *v * scale + 3.0);
        let mut s = NormState::<f64>::instance(c);
        s.gamma.value.fill(2.5);
        s.beta.value.fill(-1.0);
        for mode in [Mode::Train, Mode::Eval] {
            let (_, cache) = instance_norm_apply(&x, &s, mode).unwrap();
            for row in cache.xhat.data().chunks(t) {
                let m = row.iter().sum::<f64>() / t as f64;
                let sd = (row.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / t as f64).sqrt();
                max_mean = max_mean.max(m.abs());
                max_std_err = max_std_err.max((sd - 1.0).abs());
            }
        }
    }
    let in_ok = max_mean < 1e-6 && max_std_err < 1e-4;

    // batch norm eval mode diverges from train mode after a distribution change
    let mut r = common::rng(7);
    let mut s = NormState::<f64>::batch(2);
    for _ in 0..100 {
        batch_norm_apply(&common::uniform::<f64>(&[16, 2, 8], &mut r), &mut s, Mode::Train).unwrap();
    }
    let mut shifted = common::uniform::<f64>(&[16, 2, 8], &mut r);
    shifted.data_mut().iter_mut().for_each(|v| *v = 5.0 * *v + 4.0);
    let mut frozen = s.clone();
    let (train, _) = batch_norm_apply(&shifted, &mut s, Mode::Train).unwrap();
    let (eval, _) = batch_norm_apply(&shifted, &mut frozen, Mode::Eval).unwrap();
    let gap = train.data().iter().zip(eval.data()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    let bn_ok = gap > 1.0;

    // running mean convergence
    let (mu, sigma) = (-2.0, 3.0);
    let dist = Normal::new(mu, sigma).unwrap();
    let mut s = NormState::<f64>::batch(1);
    for _ in 0..1000 {
        let v: Vec<f64> = (0..32).map(|_| dist.sample(&mut r)).collect();
        batch_norm_apply(&Tensor::from_vec(&[32, 1], v).unwrap(), &mut s, Mode::Train).unwrap();
    }
    let run = s.running.as_ref().unwrap().mean.data()[0];
    let run_ok = (run - mu).abs() < 0.05 * sigma;

    verdict(
        2,
        "normalization semantics",
        in_ok && bn_ok && run_ok,
        &format!(
            "IN |mean| {max_mean:.1e}, |std-1| {max_std_err:.1e}; BN train/eval gap {gap:.2}; running mean error {:.3}σ",
            (run - mu).abs() / sigma
        ),
    )
}

// ---------------------------------------------------------------- 3

fn oracle_quantile(v: &[f64], q: f64) -> f64 {
    let pos = q * (v.len() - 1) as f64;
    let i = pos as usize;
    if i + 1 >= v.len() {
        return v[v.len() - 1];
    }
    v[i] * (1.0 - (pos - i as f64)) + v[i + 1] * (pos - i as f64)
}

fn oracle_bin(count: usize, len: usize) -> usize {
    // largest b with b/10 <= count/len, capped at 9
    (0..10).rev().find(|&b| b * len <= count * 10).unwrap()
}

#[test]
fn criterion_3_metric_oracles() {
    let mut mismatches = Vec::new();
    let mut worst = 0.0f64;
    for inst in 0..1000u64 {
        let mut r = common::rng(50_000 + inst);
        let n = r.gen_range(1..300);
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..5)).collect();
        let probas: Vec<Proba> = (0..n)
            .map(|_| {
                let raw: [f64; 5] = std::array::from_fn(|_| r.gen_range(0.0..1.0));
                let s: f64 = raw.iter().sum();
                raw.map(|v| v / s)
            })
            .collect();
        let preds = predictions(&probas);
        // argmax oracle
        for (p, row) in preds.iter().zip(&probas) {
            if (0..5).any(|j| row[j] > row[*p]) {
                mismatches.push(format!("{inst}: argmax"));
            }
        }

        let hits = (0..n).filter(|&i| preds[i] == labels[i]).count();
        let mut err = (accuracy(&preds, &labels).unwrap() - hits as f64 / n as f64).abs();
        let mut counts = [[0u64; 5]; 5];
        for i in 0..n {
            counts[labels[i]][preds[i]] += 1;
        }
        let recalls: Vec<f64> = (0..5)
            .filter(|&k| counts[k].iter().sum::<u64>() > 0)
            .map(|k| counts[k][k] as f64 / counts[k].iter().sum::<u64>() as f64)
            .collect();
        let ba = recalls.iter().sum::<f64>() / recalls.len() as f64;
        err = err.max((balanced_accuracy(&preds, &labels).unwrap() - ba).abs());
        let cm = ConfusionMatrix::from_predictions(&preds, &labels).unwrap();
        if cm.counts != counts {
            mismatches.push(format!("{inst}: confusion counts"));
        }
        let norm = cm.normalized();
        for t in 0..5 {
            let row: u64 = counts[t].iter().sum();
            for p in 0..5 {
                let want = if row == 0 { 0.0 } else { counts[t][p] as f64 / row as f64 };
                err = err.max((norm[t][p] - want).abs());
            }
        }

        let lv = probability_letter_values(&probas, &labels).unwrap();
        for t in 0..5 {
            for s in 0..5 {
                let mut v: Vec<f64> = (0..n).filter(|&i| labels[i] == t).map(|i| probas[i][s]).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                let cell = lv.cell(t, s);
                if cell.n != v.len() || cell.quantiles.len() != if v.is_empty() { 0 } else { LETTER_LEVELS.len() } {
                    mismatches.push(format!("{inst}: letter cell ({t},{s}) size"));
                    continue;
                }
                for (q, got) in LETTER_LEVELS.iter().zip(&cell.quantiles) {
                    err = err.max((oracle_quantile(&v, *q) - got).abs());
                }
                if s == t {
                    let want = (!v.is_empty()).then(|| oracle_quantile(&v, 0.5) >= 0.6);
                    if lv.confident[t] != want {
                        mismatches.push(format!("{inst}: confident {t}"));
                    }
                }
            }
        }

        let len = r.gen_range(1..40);
        let steps: Vec<Vec<StepLabel>> =
            (0..n).map(|_| (0..len).map(|_| Primitive::from_index(r.gen_range(0..6))).collect()).collect();
        let refs: Vec<&[StepLabel]> = steps.iter().map(|s| s.as_slice()).collect();
        let comp = window_composition(&refs, &labels, &preds).unwrap();
        let (mut ct, mut it, mut ip) = ([0u64; 10], [0u64; 10], [0u64; 10]);
        let (mut nc, mut ni, mut other, mut absent) = (0u64, 0u64, 0u64, 0u64);
        for i in 0..n {
            let share = |k: usize| steps[i].iter().filter(|s| s.map(|p| p.index()) == Some(k)).count();
            let truth = share(labels[i]);
            if preds[i] == labels[i] {
                nc += 1;
                ct[oracle_bin(truth, len)] += 1;
                other += u64::from(truth != len);
            } else {
                ni += 1;
                it[oracle_bin(truth, len)] += 1;
                let pred = share(preds[i]);
                ip[oracle_bin(pred, len)] += 1;
                absent += u64::from(pred == 0);
            }
        }
        if (comp.correct_truth, comp.incorrect_truth, comp.incorrect_predicted, comp.n_correct, comp.n_incorrect)
            != (ct, it, ip, nc, ni)
        {
            mismatches.push(format!("{inst}: composition counts"));
        }
        let ratio = |a: u64, b: u64| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        err = err.max((comp.correct_with_other - ratio(other, nc)).abs());
        err = err.max((comp.incorrect_without_predicted - ratio(absent, ni)).abs());
        worst = worst.max(err);
    }

    // c = [10, 5, 10, 10, 10] correct out of 10 each
    let labels: Vec<usize> = (0..50).map(|i| i / 10).collect();
    let mut preds = labels.clone();
    preds[10..15].fill(2);
    let example = balanced_accuracy(&preds, &labels).unwrap();

    verdict(
        3,
        "metric oracles on 1000 random instances",
        mismatches.is_empty() && worst <= 1e-9 && (example - 0.9).abs() < 1e-12,
        &format!("count mismatches {}, max ratio error {worst:.1e}, worked example {example}", mismatches.len()),
    );
}

// ---------------------------------------------------------------- 4

#[test]
fn criterion_4_pipeline_arithmetic() {
    let schema = Arc::new(ChannelSchema::from_counts(0, 0, 1));
    let mut window_cases = 0;
    let mut window_bad = Vec::new();
    for t in (0..700).step_by(7) {
        for w in [1usize, 2, 5, 50, 199, 200, 201, 650] {
            for stride in [1usize, 2, 3, 10, 25, 64] {
                let cfg = WindowConfig {
                    window_s: w as f64 / 100.0,
                    stride_samples: stride,
                };
                let closed = if t < w { 0 } else { (t - w) / stride + 1 };
                let rec = Arc::new(
                    Recording::from_channels(
                        RecordingId {
                            patient_id: "p".into(),
                            activity_id: "a".into(),
                            repetition_index: 0,
                        },
                        schema.clone(),
                        vec![0.0; t],
                        vec![Some(Primitive::Idle); t],
                    )
                    .unwrap(),
                );
                let got = extract_windows(&rec, &cfg).0.len();
                window_cases += 1;
                if cfg.samples() != w || cfg.count(t) != closed || got != closed {
                    window_bad.push((t, w, stride));
                }
            }
        }
    }

    let mut split_cases = 0;
    let mut split_bad = Vec::new();
    for seed in 0..300u64 {
        let mut r = common::rng(seed);
        let n = r.gen_range(8..40);
        let k = r.gen_range(2..6);
        let metas: Vec<PatientMeta> = (0..n)
            .map(|i| {
                let side = if r.gen_bool(0.5) { PareticSide::Left } else { PareticSide::Right };
                PatientMeta::new(format!("p{i:03}"), side, r.gen_range(0..=66)).unwrap()
            })
            .collect();
        let folds = split_patients(&metas, k, seed).unwrap();
        split_cases += 1;
        let mut seen = HashSet::new();
        let mut ok = folds.len() == k;
        for f in &folds {
            ok &= f.train_ids.len() + f.val_ids.len() == n;
            for v in &f.val_ids {
                ok &= !f.train_ids.contains(v) && seen.insert(v.clone());
            }
        }
        ok &= seen.len() == n;
        let strata: HashSet<_> = metas.iter().map(|m| (m.impairment(), m.paretic_side)).collect();
        for s in strata {
            let per: Vec<usize> = folds
                .iter()
                .map(|f| {
                    f.val_ids
                        .iter()
                        .filter(|id| metas.iter().any(|m| &m.patient_id == *id && (m.impairment(), m.paretic_side) == s))
                        .count()
                })
                .collect();
            ok &= per.iter().max().unwrap() - per.iter().min().unwrap() <= 1;
        }
        if !ok {
            split_bad.push(seed);
        }
    }
    verdict(
        4,
        "window counts and stratified patient split",
        window_bad.is_empty() && split_bad.is_empty(),
        &format!(
            "{window_cases} window cases, {} off; {split_cases} splits, {} not stratified partitions",
            window_bad.len(),
            split_bad.len()
        ),
    );
}

// ---------------------------------------------------------------- 5

const SEP_C: usize = 5;
const SEP_W: usize = 32;

/// 500 windows; primitive k raises channel k and oscillates at its own frequency.
fn separable(seed: u64) -> (Vec<f32>, Vec<usize>) {
    let mut r = common::rng(seed);
    let labels: Vec<usize> = (0..500).map(|i| i % 5).collect();
    let mut data = Vec::with_capacity(500 * SEP_C * SEP_W);
    for &k in &labels {
        let phase: f32 = r.gen_range(0.0..6.28);
        for c in 0..SEP_C {
            for t in 0..SEP_W {
                let base = if c == k { 1.0 + (0.3 * (k + 1) as f32 * t as f32 + phase).sin() } else { 0.0 };
                data.push(base + 0.3 * r.gen_range(-1.0f32..1.0));
            }
        }
    }
    (data, labels)
}

#[test]
fn criterion_5_overfit_sanity() {
    let t0 = Instant::now();
    let (raw, labels) = separable(5);
    let block = SEP_C * SEP_W;
    let feats: Vec<f32> = raw.chunks(block).flat_map(|b| block_features(b, SEP_W).unwrap()).collect();
    let seq = LabeledSet::dense(raw.clone(), vec![SEP_C, SEP_W], labels.clone()).unwrap();
    let tab = LabeledSet::dense(feats.clone(), vec![SEP_C * N_STATS], labels.clone()).unwrap();
    let cfg = TrainConfig {
        batch_size: 32,
        max_epochs: 100,
        lr0: 3e-3,
        early_stop_patience: 15,
        seed: 0,
        ..TrainConfig::default()
    };
    let mut results = Vec::new();
    let specs = [
        ModelSpec::fcnn(SEP_C * N_STATS).desk(),
        ModelSpec::lstm(SEP_C, SEP_W).desk(),
        ModelSpec::cnn(SEP_C, SEP_W, CnnStyle::Resnet, NormKind::Instance, true).desk(),
    ];
    for spec in specs {
        let set = if spec.uses_features() { &tab } else { &seq };
        let mut m = Model::<f32>::build(&spec, 0).unwrap();
        let run = fit(&mut m, set, set, &cfg).unwrap();
        let acc = set_accuracy(&mut m, set).unwrap();
        results.push((spec.tag(), acc, run.best_epoch + 1));
    }
    let forest = fit_forest(&feats, SEP_C * N_STATS, &labels, &ForestConfig { n_trees: 50, ..ForestConfig::default() }).unwrap();
    let acc = accuracy(&forest.predict(&feats).unwrap(), &labels).unwrap();
    results.push(("forest-50".into(), acc, 0));
    let elapsed = t0.elapsed();
    let detail = results
        .iter()
        .map(|(t, a, e)| format!("{t} {a:.3} (epoch {e})"))
        .collect::<Vec<_>>()
        .join(", ");
    verdict(
        5,
        "every model family fits a separable 500-window set",
        results.iter().all(|r| r.1 >= 0.95) && elapsed < Duration::from_secs(600),
        &format!("{detail}; {:.0}s", elapsed.as_secs_f64()),
    );
}

// ---------------------------------------------------------------- 6

#[test]
fn criterion_6_synthetic_generalization() {
    let t0 = Instant::now();
    let data = generate(&SynthConfig::default()).unwrap();
    let pipeline = PipelineConfig {
        normalize: true,
        window: WindowConfig {
            stride_samples: 25,
            ..WindowConfig::default()
        },
    };
    let train = data.train.prepare(&pipeline).unwrap();
    let test = data.test.prepare(&pipeline).unwrap();
    let spec = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, true).desk();
    let cfg = CvConfig {
        n_splits: 4,
        split_seed: 0,
        pipeline: pipeline.clone(),
        train_stride: 50,
        train: TrainConfig {
            lr0: 2e-3,
            max_epochs: 20,
            early_stop_patience: 6,
            seed: 0,
            ..TrainConfig::default()
        },
    };
    let folds = cross_validate(&ModelChoice::Neural { spec }, &train, &cfg).unwrap();
    let fold_acc: Vec<String> = folds.iter().map(|f| format!("{:.3}", f.val_accuracy)).collect();
    let (windows, _) = test.windows(&pipeline.window);
    let mut members: Vec<_> = folds.into_iter().map(|f| f.checkpoint).collect();
    let probas = ensemble_predict(&mut members, &test, &windows).unwrap();
    let ev = evaluate(&test, &windows, &probas).unwrap();
    let ba = ev.report.balanced_accuracy;
    let elapsed = t0.elapsed();
    verdict(
        6,
        "4-fold ensemble of the embedding + instance-norm CNN on held-out synthetic patients",
        ba >= 0.80 && elapsed < Duration::from_secs(1800),
        &format!(
            "balanced accuracy {ba:.3} vs 0.2 chance on {} windows, fold val {fold_acc:?}, {:.0}s",
            windows.len(),
            elapsed.as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 7

#[test]
fn criterion_7_ablation_direction() {
    let t0 = Instant::now();
    let pipeline = PipelineConfig {
        normalize: false,
        window: WindowConfig {
            stride_samples: 25,
            ..WindowConfig::default()
        },
    };
    let mut diffs = Vec::new();
    let mut budgets = Vec::new();
    for seed in 0..5u64 {
        let data = generate(
            &SynthConfig {
                n_patients: 12,
                n_test_patients: 4,
                seed,
                ..SynthConfig::default()
            }
            .with_default_shift(),
        )
        .unwrap();
        let train = data.train.prepare(&pipeline).unwrap();
        let test = data.test.prepare(&pipeline).unwrap();
        let channels = train.recordings[0].channels();
        let fold = split_patients(&train.patients, 4, seed).unwrap().swap_remove(0);
        let (test_w, _) = test.windows(&pipeline.window);
        let labels: Vec<usize> = test_w.iter().map(|w| w.label.index()).collect();

        let in_emb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, true).desk();
        let bn_emb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Batch, true).desk();
        let mut in_noemb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, false).desk();
        let count = |s: &ModelSpec| Model::<f32>::build(&fit_spec_to_data(s, channels, &pipeline.window), 0).unwrap().param_count();
        let budget = count(&in_emb);
        in_noemb.cnn.width = match_width(&fit_spec_to_data(&in_noemb, channels, &pipeline.window), budget).unwrap();
        budgets.push((budget, count(&in_noemb)));

        let cfg = TrainConfig {
            lr0: 2e-3,
            max_epochs: 15,
            early_stop_patience: 5,
            seed,
            ..TrainConfig::default()
        };
        let mut scores = Vec::new();
        for spec in [in_emb, bn_emb, in_noemb] {
            let (mut ckpt, _, _) = train_one(
                &ModelChoice::Neural { spec },
                &train.subset(&fold.train_ids),
                &train.subset(&fold.val_ids),
                &pipeline.window,
                50,
                &cfg,
                TrainMeta::default(),
            )
            .unwrap();
            let p = checkpoint_proba(&mut ckpt, &test_w).unwrap();
            scores.push(balanced_accuracy(&predictions(&p), &labels).unwrap());
        }
        diffs.push((scores[0] - scores[1], scores[0] - scores[2]));
    }
    let n = diffs.len() as f64;
    let norm_gap = diffs.iter().map(|d| d.0).sum::<f64>() / n;
    let emb_gap = diffs.iter().map(|d| d.1).sum::<f64>() / n;
    verdict(
        7,
        "instance norm and embeddings help under a test-cohort shift",
        norm_gap > 0.0 && emb_gap > 0.0,
        &format!(
            "mean IN-BN {norm_gap:+.4}, mean emb-noemb {emb_gap:+.4} over 5 seeds, params (emb, noemb) {:?}, {:.0}s",
            budgets[0],
            t0.elapsed().as_secs_f64()
        ),
    );
}

// ---------------------------------------------------------------- 8

fn dir_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<(String, Vec<u8>)> = fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap())
        })
        .collect();
    v.sort();
    v
}

fn bits(p: &[Proba]) -> Vec<u64> {
    p.iter().flat_map(|r| r.map(f64::to_bits)).collect()
}

#[test]
fn criterion_8_determinism_and_persistence() {
    let (raw, labels) = separable(8);
    let set = LabeledSet::dense(raw[..200 * SEP_C * SEP_W].to_vec(), vec![SEP_C, SEP_W], labels[..200].to_vec()).unwrap();
    let schema = ChannelSchema::from_counts(0, 0, SEP_C - 2);
    let cfg = TrainConfig {
        batch_size: 16,
        max_epochs: 3,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut problems = Vec::new();
    let train = |norm| {
        let mut m = Model::<f32>::build(&ModelSpec::cnn(SEP_C, SEP_W, CnnStyle::Densenet, norm, true).desk(), 4).unwrap();
        fit(&mut m, &set, &set, &cfg).unwrap();
        let p = predict_set(&mut m, &set, 32).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let mut ck = Checkpoint::new(Trained::Neural(m), &schema, TrainMeta { seed: 4, ..TrainMeta::default() });
        save_checkpoint(dir.path(), &mut ck).unwrap();
        (p, dir)
    };
    for norm in [NormKind::Batch, NormKind::Instance] {
        let (pa, da) = train(norm);
        let (pb, db) = train(norm);
        if dir_bytes(da.path()) != dir_bytes(db.path()) {
            problems.push(format!("{norm:?}: checkpoints differ"));
        }
        let pa: Vec<Proba> = pa.iter().map(|r| std::array::from_fn(|i| r[i])).collect();
        let pb: Vec<Proba> = pb.iter().map(|r| std::array::from_fn(|i| r[i])).collect();
        if bits(&pa) != bits(&pb) {
            problems.push(format!("{norm:?}: predictions differ"));
        }
        // load, predict, save again
        let mut loaded = load_checkpoint(da.path()).unwrap();
        let Trained::Neural(m) = &mut loaded.model else { unreachable!() };
        let pl = predict_set(m, &set, 32).unwrap();
        let pl: Vec<Proba> = pl.iter().map(|r| std::array::from_fn(|i| r[i])).collect();
        if bits(&pl) != bits(&pa) {
            problems.push(format!("{norm:?}: loaded predictions differ"));
        }
        let again = tempfile::tempdir().unwrap();
        save_checkpoint(again.path(), &mut loaded).unwrap();
        if dir_bytes(again.path()) != dir_bytes(da.path()) {
            problems.push(format!("{norm:?}: re-saved checkpoint differs"));
        }
    }

    let feats: Vec<f32> =
        raw.chunks(SEP_C * SEP_W).flat_map(|b| block_features(b, SEP_W).unwrap()).collect();
    let fcfg = ForestConfig {
        n_trees: 20,
        seed: 9,
        ..ForestConfig::default()
    };
    let f = SEP_C * N_STATS;
    let a = fit_forest(&feats, f, &labels, &fcfg).unwrap();
    let b = fit_forest(&feats, f, &labels, &fcfg).unwrap();
    par::set_sequential(true);
    let c = fit_forest(&feats, f, &labels, &fcfg).unwrap();
    par::set_sequential(false);
    if a != b || a != c {
        problems.push("forest differs across runs or thread modes".into());
    }
    if bits(&a.predict_proba(&feats).unwrap()) != bits(&c.predict_proba(&feats).unwrap()) {
        problems.push("forest predictions differ".into());
    }
    verdict(8, "determinism, checkpoint round trip and forest reproducibility", problems.is_empty(), &format!("{problems:?}"));
}

// ---------------------------------------------------------------- 9

#[test]
fn criterion_9_ensemble_law() {
    let mut problems = 0;
    let mut cases = 0;
    for seed in 0..500u64 {
        let mut r = common::rng(seed);
        let k = r.gen_range(1..9);
        let n = r.gen_range(1..20);
        // probabilities on a 1/64 grid: sums are exact and the mean is one rounding
        let num: Vec<Vec<[u32; 5]>> = (0..k)
            .map(|_| (0..n).map(|_| std::array::from_fn(|_| r.gen_range(0..=64))).collect())
            .collect();
        let members: Vec<Vec<Proba>> = num
            .iter()
            .map(|m| m.iter().map(|row| row.map(|v| f64::from(v) / 64.0)).collect())
            .collect();
        let e = ensemble_proba(&members).unwrap();
        for row in 0..n {
            for c in 0..5 {
                let total: u32 = num.iter().map(|m| m[row][c]).sum();
                let exact = f64::from(total) / (64.0 * k as f64);
                cases += 1;
                if e[row][c].to_bits() != exact.to_bits() {
                    problems += 1;
                }
            }
        }
        if bits(&ensemble_proba(&members[..1]).unwrap()) != bits(&members[0]) {
            problems += 1;
        }
    }
    verdict(
        9,
        "ensemble is the exact mean and a single member is the identity",
        problems == 0,
        &format!("{cases} cells, {problems} mismatches"),
    );
}
