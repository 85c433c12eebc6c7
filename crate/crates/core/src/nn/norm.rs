//! Batch and instance normalization.
//!
//! Both use the population (divide-by-N) variance and normalize by
//! `sqrt(var + eps)`. Batch norm pools statistics over `(B, T)` per channel
//! in train mode and uses running estimates in eval mode; instance norm pools
//! over `T` per `(example, channel)` in both modes and keeps no running state.

use super::layer::{Ctx, Layer, LayerKind, Mode, Named, Param, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;

pub const NORM_EPS: f64 = 1e-5;
pub const NORM_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone)]
pub struct RunningStats<T: Scalar> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
    /// Number of train-mode batches folded in; stored as a one-element tensor
    /// so it travels with checkpoints.
    pub tracked: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct NormState<T: Scalar> {
    pub gamma: Param<T>,
    pub beta: Param<T>,
    /// Present for batch norm only.
    pub running: Option<RunningStats<T>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> NormState<T> {
    pub fn batch(channels: usize) -> Self {
        NormState {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running: Some(RunningStats {
                mean: Tensor::zeros(&[channels]),
                var: Tensor::full(&[channels], T::one()),
                tracked: Tensor::zeros(&[1]),
            }),
            momentum: NORM_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn instance(channels: usize) -> Self {
        NormState {
            gamma: Param::new(Tensor::full(&[channels], T::one())),
            beta: Param::new(Tensor::zeros(&[channels])),
            running: None,
            momentum: NORM_MOMENTUM,
            eps: NORM_EPS,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.value.len()
    }

    /// Mark running statistics as usable without a train pass.
    pub fn mark_initialized(&mut self) {
        if let Some(r) = &mut self.running {
            r.tracked.data_mut()[0] = T::one();
        }
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named {
            name: format!("{prefix}gamma"),
            slot: Slot::Param(&mut self.gamma),
        });
        out.push(Named {
            name: format!("{prefix}beta"),
            slot: Slot::Param(&mut self.beta),
        });
        if let Some(r) = &mut self.running {
            out.push(Named {
                name: format!("{prefix}running_mean"),
                slot: Slot::Buffer(&mut r.mean),
            });
            out.push(Named {
                name: format!("{prefix}running_var"),
                slot: Slot::Buffer(&mut r.var),
            });
            out.push(Named {
                name: format!("{prefix}tracked"),
                slot: Slot::Buffer(&mut r.tracked),
            });
        }
    }
}

/// Values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct NormCache<T: Scalar> {
    /// Pre-affine normalized activations, same layout as the input.
    pub xhat: Tensor<T>,
    /// `1/sqrt(var + eps)` per channel (batch) or per (example, channel) (instance).
    inv_std: Vec<T>,
    /// Whether statistics were computed from the input (train-mode batch norm, instance norm).
    from_input: bool,
}

fn check_channels<T: Scalar>(input: &Tensor<T>, state: &NormState<T>) -> Result<(usize, usize, usize)> {
    let (b, c, t) = input.bct()?;
    if c != state.channels() {
        return Err(Error::dims("norm channels", input.shape(), state.gamma.value.shape()));
    }
    Ok((b, c, t))
}

pub fn batch_norm_apply<T: Scalar>(input: &Tensor<T>, state: &mut NormState<T>, mode: Mode) -> Result<(Tensor<T>, NormCache<T>)> {
    let (b, c, t) = check_channels(input, state)?;
    let eps = T::of(state.eps);
    let x = input.data();
    let (mean, var, from_input) = match mode {
        Mode::Train => {
            if b < 2 && t < 2 {
                return Err(Error::Degenerate(
                    "batch norm in train mode needs more than one value per channel".into(),
                ));
            }
            let n = T::of((b * t) as f64);
            let mut mean = vec![T::zero(); c];
            let mut var = vec![T::zero(); c];
            for ch in 0..c {
                let mut s = T::zero();
                for bi in 0..b {
                    s += x[(bi * c + ch) * t..(bi * c + ch + 1) * t].iter().copied().sum::<T>();
                }
                let m = s / n;
                let mut v = T::zero();
                for bi in 0..b {
                    for &xv in &x[(bi * c + ch) * t..(bi * c + ch + 1) * t] {
                        v += (xv - m) * (xv - m);
                    }
                }
                mean[ch] = m;
                var[ch] = v / n;
            }
            let r = state
                .running
                .as_mut()
                .ok_or_else(|| Error::Contract("batch norm state has no running statistics".into()))?;
            let mom = T::of(state.momentum);
            for ch in 0..c {
                let rm = &mut r.mean.data_mut()[ch];
                *rm = (T::one() - mom) * *rm + mom * mean[ch];
                let rv = &mut r.var.data_mut()[ch];
                *rv = (T::one() - mom) * *rv + mom * var[ch];
            }
            r.tracked.data_mut()[0] += T::one();
            (mean, var, true)
        }
        Mode::Eval => {
            let r = state
                .running
                .as_ref()
                .ok_or_else(|| Error::Contract("batch norm state has no running statistics".into()))?;
            if r.tracked.data()[0] <= T::zero() {
                return Err(Error::UninitializedStatistics);
            }
            (r.mean.data().to_vec(), r.var.data().to_vec(), false)
        }
    };
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    let mut xhat = input.clone();
    let mut y = input.clone();
    for bi in 0..b {
        for ch in 0..c {
            let r = (bi * c + ch) * t..(bi * c + ch + 1) * t;
            for (h, o) in xhat.data_mut()[r.clone()].iter_mut().zip(&mut y.data_mut()[r]) {
                *h = (*h - mean[ch]) * inv_std[ch];
                *o = gamma[ch] * *h + beta[ch];
            }
        }
    }
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            from_input,
        },
    ))
}

/// Backward for batch norm, including the terms through the batch statistics.
pub fn batch_norm_backward<T: Scalar>(grad: &Tensor<T>, cache: &NormCache<T>, state: &mut NormState<T>) -> Result<Tensor<T>> {
    let (b, c, t) = grad.bct()?;
    let g = grad.data();
    let xh = cache.xhat.data();
    let gamma = state.gamma.value.data().to_vec();
    let n = T::of((b * t) as f64);
    let mut dx = Tensor::zeros(grad.shape());
    for ch in 0..c {
        let mut sum_g = T::zero();
        let mut sum_gx = T::zero();
        for bi in 0..b {
            let r = (bi * c + ch) * t..(bi * c + ch + 1) * t;
            for (gv, hv) in g[r.clone()].iter().zip(&xh[r]) {
                sum_g += *gv;
                sum_gx += *gv * *hv;
            }
        }
        state.gamma.grad.data_mut()[ch] += sum_gx;
        state.beta.grad.data_mut()[ch] += sum_g;
        let k = gamma[ch] * cache.inv_std[ch];
        for bi in 0..b {
            let r = (bi * c + ch) * t..(bi * c + ch + 1) * t;
            for ((d, gv), hv) in dx.data_mut()[r.clone()].iter_mut().zip(&g[r.clone()]).zip(&xh[r]) {
                *d = if cache.from_input {
                    k * (*gv - sum_g / n - *hv * sum_gx / n)
                } else {
                    k * *gv
                };
            }
        }
    }
    Ok(dx)
}

pub fn instance_norm_apply<T: Scalar>(input: &Tensor<T>, state: &NormState<T>, _mode: Mode) -> Result<(Tensor<T>, NormCache<T>)> {
    let (_, c, t) = match input.rank() {
        3 => check_channels(input, state)?,
        _ => return Err(Error::dims("instance_norm expects B×C×T", input.shape(), &[])),
    };
    if t < 2 {
        return Err(Error::Degenerate(format!(
            "instance norm over a window of {t} sample(s)"
        )));
    }
    let eps = T::of(state.eps);
    let nt = T::of(t as f64);
    let mut xhat = input.clone();
    let inv_std: Vec<T> = {
        let rows: Vec<&mut [T]> = xhat.data_mut().chunks_mut(t).collect();
        let mut rows = rows;
        par::map_mut(&mut rows, |_, row| {
            let m = row.iter().copied().sum::<T>() / nt;
            let v = row.iter().map(|&x| (x - m) * (x - m)).sum::<T>() / nt;
            let inv = T::one() / (v + eps).sqrt();
            row.iter_mut().for_each(|x| *x = (*x - m) * inv);
            inv
        })
    };
    let gamma = state.gamma.value.data();
    let beta = state.beta.value.data();
    let mut y = xhat.clone();
    for (r, row) in y.data_mut().chunks_mut(t).enumerate() {
        let ch = r % c;
        row.iter_mut().for_each(|v| *v = gamma[ch] * *v + beta[ch]);
    }
    Ok((
        y,
        NormCache {
            xhat,
            inv_std,
            from_input: true,
        },
    ))
}

pub fn instance_norm_backward<T: Scalar>(grad: &Tensor<T>, cache: &NormCache<T>, state: &mut NormState<T>) -> Result<Tensor<T>> {
    let (_, c, t) = grad.bct()?;
    let nt = T::of(t as f64);
    let gamma = state.gamma.value.data().to_vec();
    let mut dx = Tensor::zeros(grad.shape());
    let sums: Vec<(T, T)> = grad
        .data()
        .chunks(t)
        .zip(cache.xhat.data().chunks(t))
        .map(|(g, h)| {
            let sg = g.iter().copied().sum::<T>();
            let sgx = g.iter().zip(h).map(|(a, b)| *a * *b).sum::<T>();
            (sg, sgx)
        })
        .collect();
    for (r, &(sg, sgx)) in sums.iter().enumerate() {
        let ch = r % c;
        state.gamma.grad.data_mut()[ch] += sgx;
        state.beta.grad.data_mut()[ch] += sg;
    }
    let g = grad.data();
    let xh = cache.xhat.data();
    par::for_each_chunk(dx.data_mut(), t, |r, row| {
        let ch = r % c;
        let (sg, sgx) = sums[r];
        let k = gamma[ch] * cache.inv_std[r];
        for (i, d) in row.iter_mut().enumerate() {
            let idx = r * t + i;
            *d = k * (g[idx] - sg / nt - xh[idx] * sgx / nt);
        }
    });
    Ok(dx)
}

pub struct BatchNorm<T: Scalar> {
    pub state: NormState<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm {
            state: NormState::batch(channels),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for BatchNorm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::BatchNorm
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (y, cache) = batch_norm_apply(x, &mut self.state, ctx.mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Mode("batch norm backward before forward".into()))?;
        batch_norm_backward(grad, cache, &mut self.state)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.state.collect(prefix, out);
    }
}

pub struct InstanceNorm<T: Scalar> {
    pub state: NormState<T>,
    cache: Option<NormCache<T>>,
}

impl<T: Scalar> InstanceNorm<T> {
    pub fn new(channels: usize) -> Self {
        InstanceNorm {
            state: NormState::instance(channels),
            cache: None,
        }
    }
}

impl<T: Scalar> Layer<T> for InstanceNorm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::InstanceNorm
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (y, cache) = instance_norm_apply(x, &self.state, ctx.mode)?;
        self.cache = Some(cache);
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let cache = self
            .cache
            .as_ref()
            .ok_or_else(|| Error::Mode("instance norm backward before forward".into()))?;
        instance_norm_backward(grad, cache, &mut self.state)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        self.state.collect(prefix, out);
    }
}
