use super::layer::{BoxLayer, Ctx, Layer, Mode, Named, Sequential, Slot};
use super::loss::{softmax_cross_entropy, softmax_rows, SoftmaxXent};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};

/// A stack of layers ending in logits, trained with a softmax cross-entropy head.
pub struct LayerGraph<T: Scalar> {
    pub root: Sequential<T>,
    mode: Mode,
    rng: Rng,
}

impl<T: Scalar> LayerGraph<T> {
    pub fn new(layers: Vec<BoxLayer<T>>, dropout_seed: u64) -> Self {
        LayerGraph {
            root: Sequential::new(layers),
            mode: Mode::Train,
            rng: rng::stream(dropout_seed, "dropout", 0),
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.mode = mode;
    }

    pub fn reseed_dropout(&mut self, seed: u64) {
        self.rng = rng::stream(seed, "dropout", 0);
    }

    pub fn forward(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let mut ctx = Ctx {
            mode: self.mode,
            rng: &mut self.rng,
        };
        let y = self.root.forward(x, &mut ctx)?;
        y.ensure_finite("forward output")?;
        Ok(y)
    }

    pub fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        self.root.backward(grad)
    }

    /// Forward, loss and backward in one call. Gradients accumulate.
    pub fn loss_and_backward(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<SoftmaxXent<T>> {
        let logits = self.forward(x)?;
        let out = softmax_cross_entropy(&logits, labels)?;
        self.backward(&out.grad)?;
        Ok(out)
    }

    /// Loss only (no backward).
    pub fn loss(&mut self, x: &Tensor<T>, labels: &[usize]) -> Result<T> {
        let logits = self.forward(x)?;
        Ok(softmax_cross_entropy(&logits, labels)?.loss)
    }

    /// Softmax probabilities; refuses to run in train mode.
    pub fn predict_proba(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        if self.mode != Mode::Eval {
            return Err(Error::Mode(
                "predict_proba requires eval mode (dropout and batch statistics would leak)".into(),
            ));
        }
        softmax_rows(&self.forward(x)?)
    }

    pub fn named(&mut self) -> Vec<Named<'_, T>> {
        let mut out = Vec::new();
        self.root.collect("", &mut out);
        out
    }

    pub fn zero_grad(&mut self) {
        for n in self.named() {
            if let Slot::Param(p) = n.slot {
                p.zero_grad();
            }
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.named()
            .into_iter()
            .map(|n| match n.slot {
                Slot::Param(p) => p.value.len(),
                Slot::Buffer(_) => 0,
            })
            .sum()
    }

    pub fn depth(&self) -> usize {
        self.root.depth()
    }

    /// Snapshot of every parameter and buffer, in collection order.
    pub fn export(&mut self) -> Vec<(String, Tensor<T>)> {
        self.named()
            .into_iter()
            .map(|n| match n.slot {
                Slot::Param(p) => (n.name, p.value.clone()),
                Slot::Buffer(b) => (n.name, b.clone()),
            })
            .collect()
    }

    /// Restore a snapshot produced by [`export`](Self::export).
    pub fn import(&mut self, arrays: &[(String, Tensor<T>)]) -> Result<()> {
        let named = self.named();
        if named.len() != arrays.len() {
            return Err(Error::Contract(format!(
                "snapshot has {} arrays, graph has {}",
                arrays.len(),
                named.len()
            )));
        }
        for (n, (name, t)) in named.into_iter().zip(arrays) {
            if &n.name != name {
                return Err(Error::Contract(format!("array {name} where {} was expected", n.name)));
            }
            let dst = match n.slot {
                Slot::Param(p) => &mut p.value,
                Slot::Buffer(b) => b,
            };
            if dst.shape() != t.shape() {
                return Err(Error::dims("import", dst.shape(), t.shape()));
            }
            dst.data_mut().copy_from_slice(t.data());
        }
        Ok(())
    }

    /// Overwrite parameters in place (test hook for zero/identity configurations).
    pub fn fill_params(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>)) {
        for n in self.named() {
            if let Slot::Param(p) = n.slot {
                f(&n.name, &mut p.value);
            }
        }
    }

    /// Mark every batch-norm layer's running statistics as initialized.
    pub fn mark_stats_initialized(&mut self) {
        for n in self.named() {
            if let Slot::Buffer(b) = n.slot {
                if n.name.ends_with("tracked") && b.data()[0] <= T::zero() {
                    b.data_mut()[0] = T::one();
                }
            }
        }
    }
}
