//! Desk-scale cross-validation of the embedding + instance-norm CNN on a
//! synthetic cohort, followed by ensemble evaluation on held-out patients.
//!
//! cargo run --release --example desk_cv -- [seed] [lr] [epochs] [train_stride]

use std::time::Instant;

use primkit::arch::{CnnStyle, ModelSpec, NormKind};
use primkit::data::window::WindowConfig;
use primkit::data::PipelineConfig;
use primkit::experiment::{cross_validate, ensemble_predict, evaluate, CvConfig, ModelChoice};
use primkit::synth::{generate, SynthConfig};
use primkit::train::TrainConfig;

fn main() -> primkit::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args: Vec<String> = std::env::args().collect();
    let arg = |i: usize, d: f64| args.get(i).and_then(|s| s.parse().ok()).unwrap_or(d);
    let seed = arg(1, 0.0) as u64;
    let t0 = Instant::now();
    let data = generate(&SynthConfig {
        seed,
        ..SynthConfig::default()
    })?;
    let pipeline = PipelineConfig {
        normalize: true,
        window: WindowConfig {
            stride_samples: 25,
            ..WindowConfig::default()
        },
    };
    let train = data.train.prepare(&pipeline)?;
    let test = data.test.prepare(&pipeline)?;
    let spec = ModelSpec::cnn(0, 0, CnnStyle::Resnet, NormKind::Instance, true).desk();
    let cfg = CvConfig {
        n_splits: 4,
        split_seed: seed,
        pipeline: pipeline.clone(),
        train_stride: arg(4, 50.0) as usize,
        train: TrainConfig {
            lr0: arg(2, 2e-3),
            max_epochs: arg(3, 30.0) as usize,
            early_stop_patience: 6,
            seed,
            ..TrainConfig::default()
        },
    };
    let folds = cross_validate(&ModelChoice::Neural { spec }, &train, &cfg)?;
    for f in &folds {
        let run = f.run.as_ref().unwrap();
        println!(
            "fold {} val {:.3} best epoch {} of {} ({:.1}s)",
            f.fold,
            f.val_accuracy,
            run.best_epoch,
            run.history.len(),
            t0.elapsed().as_secs_f64()
        );
    }
    let (windows, _) = test.windows(&pipeline.window);
    let mut members: Vec<_> = folds.into_iter().map(|f| f.checkpoint).collect();
    let probas = ensemble_predict(&mut members, &test, &windows)?;
    let ev = evaluate(&test, &windows, &probas)?;
    println!("{}", ev.report.to_text());
    println!("total {:.1}s", t0.elapsed().as_secs_f64());
    Ok(())
}

