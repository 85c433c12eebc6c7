use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LayerKind {
    Dense,
    Conv1d,
    Relu,
    Dropout,
    BatchNorm,
    InstanceNorm,
    Lstm,
    GlobalAvgPool,
    Concat,
    ResidualAdd,
    PerChannel,
    Sequential,
}

/// Per-call forward context.
pub struct Ctx<'r> {
    pub mode: Mode,
    pub rng: &'r mut Rng,
}

/// A learnable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param<T: Scalar> {
    pub value: Tensor<T>,
    pub grad: Tensor<T>,
}

impl<T: Scalar> Param<T> {
    pub fn new(value: Tensor<T>) -> Self {
        let grad = Tensor::zeros(value.shape());
        Param { value, grad }
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(T::zero());
    }
}

/// A named mutable slot exposed by a layer.
pub enum Slot<'a, T: Scalar> {
    Param(&'a mut Param<T>),
    /// Non-learned state persisted in checkpoints (running statistics).
    Buffer(&'a mut Tensor<T>),
}

pub struct Named<'a, T: Scalar> {
    pub name: String,
    pub slot: Slot<'a, T>,
}

pub trait Layer<T: Scalar>: Send + Sync {
    fn kind(&self) -> LayerKind;

    /// Forward pass. Caches whatever `backward` needs.
    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>>;

    /// Backward pass for the most recent forward. Accumulates parameter
    /// gradients and returns the gradient with respect to the input.
    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>>;

    fn collect<'a>(&'a mut self, _prefix: &str, _out: &mut Vec<Named<'a, T>>) {}

    /// Convolutional + dense layers on the main path.
    fn depth(&self) -> usize {
        0
    }
}

pub type BoxLayer<T> = Box<dyn Layer<T>>;

/// Layers applied in order.
pub struct Sequential<T: Scalar> {
    pub layers: Vec<BoxLayer<T>>,
}

impl<T: Scalar> Sequential<T> {
    pub fn new(layers: Vec<BoxLayer<T>>) -> Self {
        Sequential { layers }
    }
}

impl<T: Scalar> Layer<T> for Sequential<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Sequential
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let mut cur = x.clone();
        for l in &mut self.layers {
            cur = l.forward(&cur, ctx)?;
        }
        Ok(cur)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for l in self.layers.iter_mut().rev() {
            g = l.backward(&g)?;
        }
        Ok(g)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        for (i, l) in self.layers.iter_mut().enumerate() {
            l.collect(&format!("{prefix}{i}."), out);
        }
    }

    fn depth(&self) -> usize {
        self.layers.iter().map(|l| l.depth()).sum()
    }
}

/// `relu(body(x) + x)`.
pub struct Residual<T: Scalar> {
    pub body: Sequential<T>,
    mask: Vec<bool>,
}

impl<T: Scalar> Residual<T> {
    pub fn new(body: Vec<BoxLayer<T>>) -> Self {
        Residual {
            body: Sequential::new(body),
            mask: Vec::new(),
        }
    }
}

impl<T: Scalar> Layer<T> for Residual<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::ResidualAdd
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let mut y = self.body.forward(x, ctx)?;
        if y.shape() != x.shape() {
            return Err(Error::dims("residual_add", y.shape(), x.shape()));
        }
        self.mask.clear();
        self.mask.reserve(y.len());
        for (v, &s) in y.data_mut().iter_mut().zip(x.data()) {
            let z = *v + s;
            let on = z > T::zero();
            self.mask.push(on);
            *v = if on { z } else { T::zero() };
        }
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        for (v, &on) in g.data_mut().iter_mut().zip(&self.mask) {
            if !on {
                *v = T::zero();
            }
        }
        let mut dx = self.body.backward(&g)?;
        dx.add_assign(&g)?;
        Ok(dx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.body.collect(&format!("{prefix}body."), out);
    }

    fn depth(&self) -> usize {
        self.body.depth()
    }
}

/// DenseNet-style connection: `concat(x, body(x))` along channels.
pub struct DenseConcat<T: Scalar> {
    pub body: Sequential<T>,
    in_channels: usize,
}

impl<T: Scalar> DenseConcat<T> {
    pub fn new(body: Vec<BoxLayer<T>>) -> Self {
        DenseConcat {
            body: Sequential::new(body),
            in_channels: 0,
        }
    }
}

impl<T: Scalar> Layer<T> for DenseConcat<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Concat
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = self.body.forward(x, ctx)?;
        self.in_channels = x.bct()?.1;
        Tensor::concat_channels(&[x, &y])
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (_, c, _) = grad.bct()?;
        let g_in = grad.channel_slice(0, self.in_channels)?;
        let g_new = grad.channel_slice(self.in_channels, c - self.in_channels)?;
        let mut dx = self.body.backward(&g_new)?;
        dx.add_assign(&g_in)?;
        Ok(dx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.body.collect(&format!("{prefix}body."), out);
    }

    fn depth(&self) -> usize {
        self.body.depth()
    }
}

/// One unshared sub-network per input channel; outputs concatenated along channels.
pub struct PerChannel<T: Scalar> {
    pub modules: Vec<Sequential<T>>,
    out_channels: Vec<usize>,
}

impl<T: Scalar> PerChannel<T> {
    pub fn new(modules: Vec<Sequential<T>>) -> Self {
        PerChannel {
            modules,
            out_channels: Vec::new(),
        }
    }

    /// Convolutional layers along one module (all modules share a layout).
    pub fn module_depth(&self) -> usize {
        self.modules.first().map_or(0, |m| m.depth())
    }
}

impl<T: Scalar> Layer<T> for PerChannel<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::PerChannel
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (_, c, _) = x.bct()?;
        if c != self.modules.len() {
            return Err(Error::dims(
                "per_channel",
                x.shape(),
                &[self.modules.len()],
            ));
        }
        let mode = ctx.mode;
        let seeds: Vec<u64> = (0..c).map(|_| ctx.rng.gen()).collect();
        let outs = par::map_mut(&mut self.modules, |i, m| {
            use rand::SeedableRng;
            let mut rng = Rng::seed_from_u64(seeds[i]);
            let mut sub = Ctx {
                mode,
                rng: &mut rng,
            };
            m.forward(&x.channel_slice(i, 1)?, &mut sub)
        });
        let outs = outs.into_iter().collect::<Result<Vec<_>>>()?;
        self.out_channels = outs.iter().map(|o| o.shape()[1]).collect();
        Tensor::concat_channels(&outs.iter().collect::<Vec<_>>())
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut starts = Vec::with_capacity(self.out_channels.len());
        let mut s = 0;
        for &n in &self.out_channels {
            starts.push(s);
            s += n;
        }
        let widths = self.out_channels.clone();
        let grads = par::map_mut(&mut self.modules, |i, m| {
            m.backward(&grad.channel_slice(starts[i], widths[i])?)
        });
        let grads = grads.into_iter().collect::<Result<Vec<_>>>()?;
        Tensor::concat_channels(&grads.iter().collect::<Vec<_>>())
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        for (i, m) in self.modules.iter_mut().enumerate() {
            m.collect(&format!("{prefix}ch{i}."), out);
        }
    }
}
