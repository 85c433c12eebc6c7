//! Adam, the step-halving learning-rate schedule, minibatch training with
//! early stopping on validation accuracy, and checkpoints.

mod checkpoint;

pub use checkpoint::{
    layout_hash, load_checkpoint, load_neural, read_manifest, save_checkpoint, ArrayEntry, ForestHeader, Checkpoint, CheckpointManifest, TrainMeta, Trained,
    CHECKPOINT_VERSION,
};

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::arch::{Family, Model};
use crate::data::window::{stack_blocks, Window};
use crate::error::{Error, Result};
use crate::features::feature_matrix;
use crate::nn::{Mode, Named, Scalar, Slot, Tensor};
use crate::primitive::N_PRIMITIVES;
use crate::rng;

pub const LR0: f64 = 1.25e-4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Moment buffers, allocated on the first step in parameter collection order.
#[derive(Debug, Clone, Default)]
pub struct AdamState<T: Scalar = f32> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Self {
        AdamState {
            config,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }
}

/// One bias-corrected Adam update of a single array. `t` is the 1-based step.
pub fn adam_update<T: Scalar>(value: &mut [T], grad: &[T], m: &mut [T], v: &mut [T], t: u64, lr: f64, cfg: &AdamConfig) {
    let c1 = 1.0 - cfg.beta1.powi(t as i32);
    let c2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..value.len() {
        let g = grad[i].f64();
        let mi = cfg.beta1 * m[i].f64() + (1.0 - cfg.beta1) * g;
        let vi = cfg.beta2 * v[i].f64() + (1.0 - cfg.beta2) * g * g;
        m[i] = T::of(mi);
        v[i] = T::of(vi);
        let step = lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
        value[i] = T::of(value[i].f64() - step);
    }
}

/// Adam step over every parameter of a collected graph. Buffers are skipped.
pub fn adam_step<T: Scalar>(params: Vec<Named<'_, T>>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    let params: Vec<(String, &mut crate::nn::Param<T>)> = params
        .into_iter()
        .filter_map(|n| match n.slot {
            Slot::Param(p) => Some((n.name, p)),
            Slot::Buffer(_) => None,
        })
        .collect();
    for (name, p) in &params {
        if !p.grad.all_finite() {
            return Err(Error::NonFinite(format!("gradient of parameter {name}")));
        }
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|(_, p)| vec![T::zero(); p.value.len()]).collect();
        state.v = state.m.clone();
    }
    if state.m.len() != params.len() {
        return Err(Error::Contract(format!(
            "optimizer tracks {} parameters, graph has {}",
            state.m.len(),
            params.len()
        )));
    }
    state.step += 1;
    let t = state.step;
    let cfg = state.config;
    for (i, (_, p)) in params.into_iter().enumerate() {
        let crate::nn::Param { value, grad } = p;
        adam_update(value.data_mut(), grad.data(), &mut state.m[i], &mut state.v[i], t, lr, &cfg);
    }
    Ok(())
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm<T: Scalar>(params: Vec<Named<'_, T>>, max_norm: f64) -> f64 {
    let mut grads: Vec<&mut Tensor<T>> = params
        .into_iter()
        .filter_map(|n| match n.slot {
            Slot::Param(p) => Some(&mut p.grad),
            Slot::Buffer(_) => None,
        })
        .collect();
    let norm = grads
        .iter()
        .flat_map(|g| g.data().iter())
        .map(|x| x.f64() * x.f64())
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x = T::of(x.f64() * s));
        }
    }
    norm
}

/// `lr0 / 2^floor(epoch / period)`.
pub fn lr_at(epoch: usize, lr0: f64, period: usize) -> f64 {
    let halvings = if period == 0 { 0 } else { epoch / period };
    lr0 / 2f64.powi(halvings.min(1000) as i32)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    /// Epochs between learning-rate halvings; `None` picks 10 for LSTMs and 20 otherwise.
    pub lr_halving_period: Option<usize>,
    pub early_stop_patience: usize,
    pub seed: u64,
    pub shuffle: bool,
    /// Global-norm gradient clipping; `None` picks 5 for LSTMs and off otherwise.
    pub clip_norm: Option<f64>,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 64,
            max_epochs: 200,
            lr0: LR0,
            lr_halving_period: None,
            early_stop_patience: 10,
            seed: 0,
            shuffle: true,
            clip_norm: None,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn halving_period(&self, family: Family) -> usize {
        self.lr_halving_period.unwrap_or(match family {
            Family::Lstm => 10,
            _ => 20,
        })
    }

    pub fn clip(&self, family: Family) -> Option<f64> {
        match self.clip_norm {
            Some(c) if c > 0.0 => Some(c),
            Some(_) => None,
            None => (family == Family::Lstm).then_some(5.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return Err(Error::Config(format!("lr0 must be positive, got {}", self.lr0)));
        }
        Ok(())
    }
}

/// Model inputs with their labels. Windows are stacked lazily per batch.
#[derive(Debug, Clone)]
pub enum Inputs {
    Windows(Vec<Window>),
    Dense { data: Vec<f32>, sample_shape: Vec<usize> },
}

#[derive(Debug, Clone)]
pub struct LabeledSet {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
}

impl LabeledSet {
    /// Raw windows for sequence models, statistics for the FCNN.
    pub fn for_model(windows: Vec<Window>, family: Family) -> Result<Self> {
        let labels = windows.iter().map(|w| w.label.index()).collect();
        let inputs = if family == Family::Fcnn {
            let (data, f) = feature_matrix(&windows)?;
            Inputs::Dense {
                data,
                sample_shape: vec![f],
            }
        } else {
            Inputs::Windows(windows)
        };
        Ok(LabeledSet { inputs, labels })
    }

    pub fn dense(data: Vec<f32>, sample_shape: Vec<usize>, labels: Vec<usize>) -> Result<Self> {
        let per: usize = sample_shape.iter().product();
        if per == 0 || data.len() != per * labels.len() {
            return Err(Error::dims("labeled set", &[data.len()], &[labels.len(), per]));
        }
        if let Some((index, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= N_PRIMITIVES) {
            return Err(Error::Label { index, label });
        }
        Ok(LabeledSet {
            inputs: Inputs::Dense { data, sample_shape },
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn batch<T: Scalar>(&self, idx: &[usize]) -> Result<Tensor<T>> {
        match &self.inputs {
            Inputs::Windows(w) => {
                let picked: Vec<&Window> = idx.iter().map(|&i| &w[i]).collect();
                let (shape, data) = stack_blocks(&picked)?;
                Tensor::from_vec(&shape, data.into_iter().map(|v| T::of(f64::from(v))).collect())
            }
            Inputs::Dense { data, sample_shape } => {
                let per: usize = sample_shape.iter().product();
                let mut out = Vec::with_capacity(idx.len() * per);
                for &i in idx {
                    out.extend(data[i * per..(i + 1) * per].iter().map(|&v| T::of(f64::from(v))));
                }
                let mut shape = vec![idx.len()];
                shape.extend(sample_shape);
                Tensor::from_vec(&shape, out)
            }
        }
    }
}

/// Eval-mode class probabilities for every sample, computed in batches.
/// The model's mode is restored afterwards.
pub fn predict_set<T: Scalar>(model: &mut Model<T>, set: &LabeledSet, batch_size: usize) -> Result<Vec<[f64; N_PRIMITIVES]>> {
    let prev = model.graph.mode();
    model.set_mode(Mode::Eval);
    let mut out = Vec::with_capacity(set.len());
    let idx: Vec<usize> = (0..set.len()).collect();
    let result = (|| {
        for chunk in idx.chunks(batch_size.max(1)) {
            let p = model.predict_proba(&set.batch(chunk)?)?;
            for row in p.data().chunks(N_PRIMITIVES) {
                let mut r = [0.0; N_PRIMITIVES];
                r.iter_mut().zip(row).for_each(|(a, b)| *a = b.f64());
                out.push(r);
            }
        }
        Ok(())
    })();
    model.set_mode(prev);
    result.map(|_| out)
}

pub fn argmax(p: &[f64; N_PRIMITIVES]) -> usize {
    let mut best = 0;
    for i in 1..N_PRIMITIVES {
        if p[i] > p[best] {
            best = i;
        }
    }
    best
}

/// Fraction of samples whose argmax prediction matches the label.
pub fn set_accuracy<T: Scalar>(model: &mut Model<T>, set: &LabeledSet) -> Result<f64> {
    if set.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let p = predict_set(model, set, 256)?;
    let correct = p.iter().zip(&set.labels).filter(|(p, &l)| argmax(p) == l).count();
    Ok(correct as f64 / set.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    /// Accuracy of the train-mode minibatch predictions over the epoch.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainRun {
    pub seed: u64,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stopped_early: bool,
    pub history: Vec<EpochLog>,
}

/// Train with Adam and keep the parameters of the epoch with the highest
/// validation accuracy. On return the model holds that snapshot and is in
/// eval mode.
pub fn fit<T: Scalar>(model: &mut Model<T>, train: &LabeledSet, val: &LabeledSet, cfg: &TrainConfig) -> Result<TrainRun> {
    cfg.validate()?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config(format!(
            "training needs non-empty train and validation sets (got {} and {})",
            train.len(),
            val.len()
        )));
    }
    let family = model.spec.family;
    let period = cfg.halving_period(family);
    let clip = cfg.clip(family);
    model.graph.reseed_dropout(rng::derive_seed(cfg.seed, "dropout", 0));
    let mut adam = AdamState::<T>::new(cfg.adam);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best: Option<(usize, f64, Vec<(String, Tensor<T>)>)> = None;
    let mut since_best = 0;
    let mut history = Vec::new();
    let mut stopped_early = false;

    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg.lr0, period);
        if cfg.shuffle {
            order.sort_unstable();
            order.shuffle(&mut rng::stream(cfg.seed, "shuffle", epoch as u64));
        }
        model.set_mode(Mode::Train);
        let mut loss_sum = 0.0;
        let mut correct = 0;
        for chunk in order.chunks(cfg.batch_size) {
            let x = train.batch::<T>(chunk)?;
            let labels: Vec<usize> = chunk.iter().map(|&i| train.labels[i]).collect();
            model.graph.zero_grad();
            let out = model.graph.loss_and_backward(&x, &labels)?;
            loss_sum += out.loss.f64() * chunk.len() as f64;
            for (row, &l) in out.probs.data().chunks(N_PRIMITIVES).zip(&labels) {
                let mut r = [0.0; N_PRIMITIVES];
                r.iter_mut().zip(row).for_each(|(a, b)| *a = b.f64());
                correct += usize::from(argmax(&r) == l);
            }
            if let Some(c) = clip {
                clip_grad_norm(model.graph.named(), c);
            }
            adam_step(model.graph.named(), &mut adam, lr)?;
        }
        let val_accuracy = set_accuracy(model, val)?;
        let log = EpochLog {
            epoch,
            lr,
            train_loss: loss_sum / train.len() as f64,
            train_accuracy: correct as f64 / train.len() as f64,
            val_accuracy,
        };
        debug!(
            "epoch {epoch}: loss {:.4} train acc {:.3} val acc {:.3}",
            log.train_loss, log.train_accuracy, val_accuracy
        );
        history.push(log);
        if best.as_ref().map_or(true, |b| val_accuracy > b.1) {
            best = Some((epoch, val_accuracy, model.graph.export()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best > cfg.early_stop_patience {
                stopped_early = true;
                break;
            }
        }
    }
    let (best_epoch, best_val_accuracy, snapshot) =
        best.ok_or_else(|| Error::Config("max_epochs must be positive".into()))?;
    model.graph.import(&snapshot)?;
    model.set_mode(Mode::Eval);
    info!(
        "{}: best val acc {:.4} at epoch {best_epoch} of {}",
        model.spec.tag(),
        best_val_accuracy,
        history.len()
    );
    Ok(TrainRun {
        seed: cfg.seed,
        best_epoch,
        best_val_accuracy,
        stopped_early,
        history,
    })
}
