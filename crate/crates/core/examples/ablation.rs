//! Normalization and embedding ablation on a synthetic cohort whose held-out
//! patients carry a per-channel affine shift.
//!
//! cargo run --release --example ablation -- [seeds] [epochs]

use std::time::Instant;

use primkit::arch::{match_width, CnnStyle, Model, ModelSpec, NormKind};
use primkit::data::window::WindowConfig;
use primkit::data::{split_patients, PipelineConfig};
use primkit::eval;
use primkit::experiment::{checkpoint_proba, fit_spec_to_data, train_one, ModelChoice};
use primkit::synth::{generate, SynthConfig};
use primkit::train::{TrainConfig, TrainMeta};

fn main() -> primkit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args: Vec<String> = std::env::args().collect();
    let seeds: u64 = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let epochs: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(15);
    let t0 = Instant::now();
    let pipeline = PipelineConfig {
        normalize: false,
        window: WindowConfig {
            stride_samples: 25,
            ..WindowConfig::default()
        },
    };
    let mut diffs = Vec::new();
    for seed in 0..seeds {
        let data = generate(
            &SynthConfig {
                n_patients: 12,
                n_test_patients: 4,
                seed,
                ..SynthConfig::default()
            }
            .with_default_shift(),
        )?;
        let train = data.train.prepare(&pipeline)?;
        let test = data.test.prepare(&pipeline)?;
        let channels = train.recordings[0].channels();
        let fold = split_patients(&train.patients, 4, seed)?.swap_remove(0);
        let (test_w, _) = test.windows(&pipeline.window);
        let labels: Vec<usize> = test_w.iter().map(|w| w.label.index()).collect();

        let in_emb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, true).desk();
        let bn_emb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Batch, true).desk();
        let mut in_noemb = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, false).desk();
        let budget = Model::<f32>::build(&fit_spec_to_data(&in_emb, channels, &pipeline.window), 0)?.param_count();
        in_noemb.cnn.width = match_width(&fit_spec_to_data(&in_noemb, channels, &pipeline.window), budget)?;

        let cfg = TrainConfig {
            lr0: 2e-3,
            max_epochs: epochs,
            early_stop_patience: 5,
            seed,
            ..TrainConfig::default()
        };
        let mut scores = Vec::new();
        for spec in [in_emb, bn_emb, in_noemb] {
            let (mut ckpt, _, val) = train_one(
                &ModelChoice::Neural { spec: spec.clone() },
                &train.subset(&fold.train_ids),
                &train.subset(&fold.val_ids),
                &pipeline.window,
                50,
                &cfg,
                TrainMeta::default(),
            )?;
            let p = checkpoint_proba(&mut ckpt, &test_w)?;
            let ba = eval::balanced_accuracy(&eval::predictions(&p), &labels)?;
            println!("seed {seed} {:<22} val {val:.3} shifted test {ba:.3} ({:.0}s)", spec.tag(), t0.elapsed().as_secs_f64());
            scores.push(ba);
        }
        diffs.push((scores[0] - scores[1], scores[0] - scores[2]));
    }
    let n = diffs.len() as f64;
    println!(
        "mean IN-BN {:.4}  mean emb-noemb {:.4}",
        diffs.iter().map(|d| d.0).sum::<f64>() / n,
        diffs.iter().map(|d| d.1).sum::<f64>() / n
    );
    Ok(())
}
