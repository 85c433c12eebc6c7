//! Orchestration shared by the command line and the test suites: per-fold
//! training, probability-averaging ensembles and test-set evaluation.

use std::collections::BTreeMap;

use log::info;
use serde::{Deserialize, Serialize};

use crate::arch::{Family, Model, ModelSpec};
use crate::data::recording::Impairment;
use crate::data::split::{split_patients, Fold};
use crate::data::window::{Window, WindowConfig};
use crate::data::{Dataset, PipelineConfig};
use crate::error::{Error, Result};
use crate::eval::{self, Composition, LetterValues, MetricsReport, PatientScore, Proba};
use crate::data::recording::Recording;
use crate::features::{block_features, feature_matrix, N_STATS};
use crate::forest::{fit_forest, ForestConfig};
use crate::rng;
use crate::train::{fit, predict_set, Checkpoint, LabeledSet, TrainConfig, TrainMeta, TrainRun, Trained};

/// What to train: a neural network or a random forest over window statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ModelChoice {
    Neural { spec: ModelSpec },
    Forest { config: ForestConfig },
}

impl ModelChoice {
    pub fn tag(&self) -> String {
        match self {
            ModelChoice::Neural { spec } => spec.tag(),
            ModelChoice::Forest { config } => format!("forest-{}", config.n_trees),
        }
    }
}

/// Fill in the input dimensions a spec needs from the data layout.
pub fn fit_spec_to_data(spec: &ModelSpec, channels: usize, window: &WindowConfig) -> ModelSpec {
    let mut s = spec.clone();
    if s.family == Family::Fcnn {
        s.n_inputs = channels * N_STATS;
    } else {
        s.n_inputs = channels;
        s.window_len = window.samples();
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvConfig {
    pub n_splits: usize,
    pub split_seed: u64,
    pub pipeline: PipelineConfig,
    /// Window stride for training windows; validation uses `pipeline.window`.
    pub train_stride: usize,
    pub train: TrainConfig,
}

impl Default for CvConfig {
    fn default() -> Self {
        CvConfig {
            n_splits: 4,
            split_seed: 0,
            pipeline: PipelineConfig::default(),
            train_stride: 1,
            train: TrainConfig::default(),
        }
    }
}

pub struct FoldOutcome {
    pub fold: usize,
    pub val_ids: Vec<String>,
    pub val_accuracy: f64,
    pub run: Option<TrainRun>,
    pub checkpoint: Checkpoint,
}

fn stride(cfg: &WindowConfig, stride_samples: usize) -> WindowConfig {
    WindowConfig {
        stride_samples,
        ..cfg.clone()
    }
}

/// Train one model on `train` and score it on `val`; both are prepared datasets.
pub fn train_one(
    choice: &ModelChoice,
    train: &Dataset,
    val: &Dataset,
    window: &WindowConfig,
    train_stride: usize,
    cfg: &TrainConfig,
    meta: TrainMeta,
) -> Result<(Checkpoint, Option<TrainRun>, f64)> {
    let (train_w, _) = train.windows(&stride(window, train_stride));
    let (val_w, _) = val.windows(window);
    if train_w.is_empty() || val_w.is_empty() {
        return Err(Error::Config(format!(
            "{} training and {} validation windows; both must be non-empty",
            train_w.len(),
            val_w.len()
        )));
    }
    let channels = train.recordings[0].channels();
    match choice {
        ModelChoice::Neural { spec } => {
            let spec = fit_spec_to_data(spec, channels, window);
            let mut model = Model::<f32>::build(&spec, rng::derive_seed(cfg.seed, "init", meta.fold.unwrap_or(0) as u64))?;
            let tr = LabeledSet::for_model(train_w, spec.family)?;
            let va = LabeledSet::for_model(val_w, spec.family)?;
            let run = fit(&mut model, &tr, &va, cfg)?;
            let acc = run.best_val_accuracy;
            let meta = TrainMeta {
                best_epoch: Some(run.best_epoch),
                val_accuracy: Some(acc),
                ..meta
            };
            Ok((Checkpoint::new(Trained::Neural(model), &train.schema, meta), Some(run), acc))
        }
        ModelChoice::Forest { config } => {
            let (x, f) = feature_matrix(&train_w)?;
            let y: Vec<usize> = train_w.iter().map(|w| w.label.index()).collect();
            let forest = fit_forest(&x, f, &y, config)?;
            let (vx, _) = feature_matrix(&val_w)?;
            let vy: Vec<usize> = val_w.iter().map(|w| w.label.index()).collect();
            let acc = eval::accuracy(&forest.predict(&vx)?, &vy)?;
            let meta = TrainMeta {
                val_accuracy: Some(acc),
                ..meta
            };
            Ok((Checkpoint::new(Trained::Forest(forest), &train.schema, meta), None, acc))
        }
    }
}

/// Patient-stratified k-fold training. `data` must already be prepared.
pub fn cross_validate(choice: &ModelChoice, data: &Dataset, cfg: &CvConfig) -> Result<Vec<FoldOutcome>> {
    let folds = split_patients(&data.patients, cfg.n_splits, cfg.split_seed)?;
    let mut out = Vec::with_capacity(folds.len());
    for (k, Fold { train_ids, val_ids }) in folds.into_iter().enumerate() {
        let meta = TrainMeta {
            seed: cfg.train.seed,
            fold: Some(k),
            pipeline: Some(cfg.pipeline.clone()),
            ..TrainMeta::default()
        };
        let (checkpoint, run, val_accuracy) = train_one(
            choice,
            &data.subset(&train_ids),
            &data.subset(&val_ids),
            &cfg.pipeline.window,
            cfg.train_stride,
            &cfg.train,
            meta,
        )
        .map_err(|e| Error::Contract(format!("fold {k} failed: {e}")))?;
        info!("{} fold {k}: val accuracy {val_accuracy:.4}", choice.tag());
        out.push(FoldOutcome {
            fold: k,
            val_ids,
            val_accuracy,
            run,
            checkpoint,
        });
    }
    Ok(out)
}

/// Class probabilities of one checkpoint on a set of windows.
pub fn checkpoint_proba(ckpt: &mut Checkpoint, windows: &[Window]) -> Result<Vec<Proba>> {
    if windows.is_empty() {
        return Ok(Vec::new());
    }
    match &mut ckpt.model {
        Trained::Neural(model) => {
            let set = LabeledSet::for_model(windows.to_vec(), model.spec.family)?;
            predict_set(model, &set, 256)
        }
        Trained::Forest(f) => {
            let (x, _) = feature_matrix(windows)?;
            f.predict_proba(&x)
        }
    }
}

/// Mean member probabilities after checking each member against the data layout.
pub fn ensemble_predict(members: &mut [Checkpoint], data: &Dataset, windows: &[Window]) -> Result<Vec<Proba>> {
    let mut probas = Vec::with_capacity(members.len());
    for m in members.iter_mut() {
        m.check_compatible(&data.schema)?;
        probas.push(checkpoint_proba(m, windows)?);
    }
    eval::ensemble_proba(&probas)
}

pub struct Evaluation {
    pub report: MetricsReport,
    pub letter_values: LetterValues,
    pub composition: Composition,
    pub per_patient: Vec<PatientScore>,
}

pub fn evaluate(data: &Dataset, windows: &[Window], probas: &[Proba]) -> Result<Evaluation> {
    if windows.len() != probas.len() {
        return Err(Error::dims("evaluate", &[windows.len()], &[probas.len()]));
    }
    let labels: Vec<usize> = windows.iter().map(|w| w.label.index()).collect();
    let preds = eval::predictions(probas);
    let mut by_patient: BTreeMap<&str, (Vec<usize>, Vec<usize>)> = BTreeMap::new();
    for ((w, &p), &l) in windows.iter().zip(&preds).zip(&labels) {
        let e = by_patient.entry(w.recording.id.patient_id.as_str()).or_default();
        e.0.push(p);
        e.1.push(l);
    }
    let mut per_patient = Vec::new();
    for meta in &data.patients {
        let Some((p, l)) = by_patient.get(meta.patient_id.as_str()) else {
            continue;
        };
        per_patient.push(PatientScore {
            patient_id: meta.patient_id.clone(),
            fma_score: u32::from(meta.fma_score),
            impairment: match meta.impairment() {
                Impairment::Mild => "mild",
                Impairment::Moderate => "moderate",
                Impairment::Severe => "severe",
            }
            .into(),
            paretic_side: format!("{:?}", meta.paretic_side).to_lowercase(),
            n_windows: l.len(),
            accuracy: eval::accuracy(p, l)?,
            balanced_accuracy: eval::balanced_accuracy(p, l)?,
        });
    }
    Ok(Evaluation {
        report: MetricsReport::new(&preds, &labels)?,
        letter_values: eval::probability_letter_values(probas, &labels)?,
        composition: eval::window_composition_for(windows, &preds)?,
        per_patient,
    })
}

/// Probabilities for every valid center of a prepared recording, whether or
/// not the center is labeled. Returns `(center, probabilities)` pairs.
pub fn predict_stream(members: &mut [Checkpoint], rec: &Recording, window: &WindowConfig) -> Result<Vec<(usize, Proba)>> {
    let w = window.samples();
    if rec.len() < w || w == 0 {
        return Err(Error::InputTooShort {
            op: "predict (recording shorter than one window)",
            len: rec.len(),
        });
    }
    if members.is_empty() {
        return Err(Error::Contract("prediction needs at least one checkpoint".into()));
    }
    let centers: Vec<usize> = window.centers(rec.len()).collect();
    let c = rec.channels();
    let block = |center: usize| -> Vec<f32> {
        let s = center - w / 2;
        (0..c).flat_map(|ch| rec.channel(ch)[s..s + w].iter().copied()).collect()
    };
    let mut all = Vec::with_capacity(members.len());
    for m in members.iter_mut() {
        m.check_compatible(&rec.schema)?;
        let mut probas = Vec::with_capacity(centers.len());
        for chunk in centers.chunks(256) {
            let blocks: Vec<Vec<f32>> = chunk.iter().map(|&ct| block(ct)).collect();
            match &mut m.model {
                Trained::Neural(model) => {
                    let set = if model.spec.uses_features() {
                        let mut data = Vec::new();
                        for b in &blocks {
                            data.extend(block_features(b, w)?);
                        }
                        LabeledSet::dense(data, vec![c * N_STATS], vec![0; chunk.len()])?
                    } else {
                        LabeledSet::dense(blocks.concat(), vec![c, w], vec![0; chunk.len()])?
                    };
                    probas.extend(predict_set(model, &set, 256)?);
                }
                Trained::Forest(f) => {
                    let mut data = Vec::new();
                    for b in &blocks {
                        data.extend(block_features(b, w)?);
                    }
                    probas.extend(f.predict_proba(&data)?);
                }
            }
        }
        all.push(probas);
    }
    let mean = eval::ensemble_proba(&all)?;
    Ok(centers.into_iter().zip(mean).collect())
}

