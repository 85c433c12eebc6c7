use super::init::glorot;
use super::layer::{Ctx, Layer, LayerKind, Named, Param, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

/// Geometry of a 1-D convolution with symmetric "same" zero padding.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub kernel: usize,
    pub stride: usize,
    pub dilation: usize,
}

impl ConvGeom {
    pub fn new(kernel: usize, stride: usize, dilation: usize) -> Self {
        ConvGeom {
            kernel,
            stride,
            dilation,
        }
    }

    pub fn pad(&self) -> usize {
        self.dilation * (self.kernel - 1) / 2
    }

    /// `floor((T + 2·pad − dilation·(K−1) − 1) / stride) + 1`, or `None` when ≤ 0.
    pub fn out_len(&self, t: usize) -> Option<usize> {
        let num = (t + 2 * self.pad()) as isize - (self.dilation * (self.kernel - 1)) as isize - 1;
        if num < 0 || self.stride == 0 {
            return None;
        }
        Some(num as usize / self.stride + 1)
    }

    /// Output positions `t'` whose tap `k` lands inside `[0, t_in)`.
    #[inline]
    fn valid(&self, k: usize, t_in: usize, t_out: usize) -> (usize, usize, isize) {
        let off = (k * self.dilation) as isize - self.pad() as isize;
        let s = self.stride as isize;
        let lo = if off >= 0 { 0 } else { ((-off) + s - 1) / s };
        let rem = t_in as isize - off;
        let hi = if rem <= 0 { 0 } else { (rem + s - 1) / s };
        let lo = (lo as usize).min(t_out);
        let hi = (hi as usize).min(t_out).max(lo);
        (lo, hi, off)
    }
}

fn check(input: &Tensor<impl Scalar>, kernels: &[usize], bias: &[usize]) -> Result<(usize, usize, usize, usize, usize)> {
    let (b, ci, t) = match *input.shape() {
        [b, c, t] => (b, c, t),
        _ => return Err(Error::dims("conv1d input", input.shape(), kernels)),
    };
    let (co, k) = match *kernels {
        [o, i, k] if i == ci && k >= 1 => (o, k),
        _ => return Err(Error::dims("conv1d", input.shape(), kernels)),
    };
    if bias != [co] {
        return Err(Error::dims("conv1d bias", bias, &[co]));
    }
    Ok((b, ci, t, co, k))
}

/// `out[t] += Σ_k w[k]·x[t + k − pad]` for stride 1, dilation 1, zeros outside `x`.
#[inline]
fn correlate_row<T: Scalar>(out: &mut [T], x: &[T], w: &[T], pad: usize) {
    let n = x.len();
    debug_assert_eq!(out.len(), n);
    match (w.len(), pad) {
        (1, 0) => {
            let w0 = w[0];
            out.iter_mut().zip(x).for_each(|(o, &a)| *o += w0 * a);
        }
        (3, 1) if n >= 2 => {
            let (w0, w1, w2) = (w[0], w[1], w[2]);
            out[0] += w1 * x[0] + w2 * x[1];
            for (((o, &a), &b), &c) in out[1..n - 1].iter_mut().zip(&x[..n - 2]).zip(&x[1..n - 1]).zip(&x[2..]) {
                *o += w0 * a + w1 * b + w2 * c;
            }
            out[n - 1] += w0 * x[n - 2] + w1 * x[n - 1];
        }
        _ => {
            for (kk, &wv) in w.iter().enumerate() {
                let off = kk as isize - pad as isize;
                let lo = (-off).max(0) as usize;
                let hi = ((n as isize - off).min(n as isize)).max(lo as isize) as usize;
                for t in lo..hi {
                    out[t] += wv * x[(t as isize + off) as usize];
                }
            }
        }
    }
}

/// `[Σ g[t]·x[t−1], Σ g[t]·x[t], Σ g[t]·x[t+1]]` over `t`, zeros outside `x`.
#[inline]
fn correlate3_grad<T: Scalar>(g: &[T], x: &[T]) -> [T; 3] {
    let n = x.len();
    if n < 2 {
        return [T::zero(), dot(g, x), T::zero()];
    }
    let mut acc = [[T::zero(); 8]; 3];
    let gi = &g[1..n - 1];
    let (a, b, c) = (&x[..n - 2], &x[1..n - 1], &x[2..]);
    let m = gi.len() / 8 * 8;
    for (((gc, ac), bc), cc) in gi.chunks_exact(8).zip(a.chunks_exact(8)).zip(b.chunks_exact(8)).zip(c.chunks_exact(8)) {
        for j in 0..8 {
            acc[0][j] += gc[j] * ac[j];
            acc[1][j] += gc[j] * bc[j];
            acc[2][j] += gc[j] * cc[j];
        }
    }
    let mut out = acc.map(|r| ((r[0] + r[1]) + (r[2] + r[3])) + ((r[4] + r[5]) + (r[6] + r[7])));
    for s in m..gi.len() {
        out[0] += gi[s] * a[s];
        out[1] += gi[s] * b[s];
        out[2] += gi[s] * c[s];
    }
    out[1] += g[0] * x[0] + g[n - 1] * x[n - 1];
    out[2] += g[0] * x[1];
    out[0] += g[n - 1] * x[n - 2];
    out
}

/// Dot product with eight independent partial sums.
#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let (ca, cb) = (a.chunks_exact(8), b.chunks_exact(8));
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            acc[j] += x[j] * y[j];
        }
    }
    let mut s = ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]));
    for (x, y) in ra.iter().zip(rb) {
        s += *x * *y;
    }
    s
}

/// Cross-correlation of `input: B×C_in×T` with `kernels: C_out×C_in×K`.
pub fn conv1d_apply<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    dilation: usize,
) -> Result<Tensor<T>> {
    let (b, ci, t, co, k) = check(input, kernels.shape(), bias.shape())?;
    let geom = ConvGeom::new(k, stride, dilation);
    let t_out = match geom.out_len(t) {
        Some(n) if n > 0 => n,
        _ => return Err(Error::InputTooShort { op: "conv1d", len: t }),
    };
    let x = input.data();
    let w = kernels.data();
    let bv = bias.data();
    let (fast, pad) = (stride == 1 && dilation == 1 && k % 2 == 1, geom.pad());
    let mut out = Tensor::zeros(&[b, co, t_out]);
    par::for_each_chunk(out.data_mut(), co * t_out, |bi, ob| {
        let xb = &x[bi * ci * t..(bi + 1) * ci * t];
        for o in 0..co {
            let orow = &mut ob[o * t_out..(o + 1) * t_out];
            orow.iter_mut().for_each(|v| *v = bv[o]);
            for i in 0..ci {
                let xr = &xb[i * t..(i + 1) * t];
                if fast {
                    correlate_row(orow, xr, &w[(o * ci + i) * k..(o * ci + i + 1) * k], pad);
                    continue;
                }
                for kk in 0..k {
                    let wv = w[(o * ci + i) * k + kk];
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi, off) = geom.valid(kk, t, t_out);
                    if stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (ov, xv) in orow[lo..hi].iter_mut().zip(&xr[start..start + (hi - lo)]) {
                            *ov += wv * *xv;
                        }
                    } else {
                        for (tp, ov) in orow.iter_mut().enumerate().take(hi).skip(lo) {
                            *ov += wv * xr[(tp as isize * stride as isize + off) as usize];
                        }
                    }
                }
            }
        }
    });
    Ok(out)
}

/// Gradients of [`conv1d_apply`]: `(d_input, d_kernels, d_bias)`.
pub fn conv1d_backward<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    grad: &Tensor<T>,
    stride: usize,
    dilation: usize,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, ci, t) = input.bct()?;
    let (co, k) = (kernels.shape()[0], kernels.shape()[2]);
    let geom = ConvGeom::new(k, stride, dilation);
    let t_out = geom.out_len(t).unwrap_or(0);
    if grad.shape() != [b, co, t_out] {
        return Err(Error::dims("conv1d backward", grad.shape(), &[b, co, t_out]));
    }
    let x = input.data();
    let w = kernels.data();
    let g = grad.data();

    let (fast, pad) = (stride == 1 && dilation == 1 && k % 2 == 1, geom.pad());
    let flipped: Vec<T> = w.chunks(k).flat_map(|taps| taps.iter().rev().copied()).collect();
    let mut dx = Tensor::zeros(&[b, ci, t]);
    par::for_each_chunk(dx.data_mut(), ci * t, |bi, db| {
        let gb = &g[bi * co * t_out..(bi + 1) * co * t_out];
        for i in 0..ci {
            let drow = &mut db[i * t..(i + 1) * t];
            for o in 0..co {
                let grow = &gb[o * t_out..(o + 1) * t_out];
                if fast {
                    correlate_row(drow, grow, &flipped[(o * ci + i) * k..(o * ci + i + 1) * k], pad);
                    continue;
                }
                for kk in 0..k {
                    let wv = w[(o * ci + i) * k + kk];
                    if wv == T::zero() {
                        continue;
                    }
                    let (lo, hi, off) = geom.valid(kk, t, t_out);
                    if stride == 1 {
                        let start = (lo as isize + off) as usize;
                        for (dv, gv) in drow[start..start + (hi - lo)].iter_mut().zip(&grow[lo..hi]) {
                            *dv += wv * *gv;
                        }
                    } else {
                        for (tp, gv) in grow.iter().enumerate().take(hi).skip(lo) {
                            drow[(tp as isize * stride as isize + off) as usize] += wv * *gv;
                        }
                    }
                }
            }
        }
    });

    // Per-block partial sums over a fixed number of samples, reduced in block
    // order, so the result does not depend on the thread count.
    const BLOCK: usize = 8;
    let partials = par::map(b.div_ceil(BLOCK), |blk| {
        let mut dwp = vec![T::zero(); co * ci * k];
        for bi in blk * BLOCK..((blk + 1) * BLOCK).min(b) {
            for o in 0..co {
                let grow = &g[(bi * co + o) * t_out..(bi * co + o + 1) * t_out];
                let dwo = &mut dwp[o * ci * k..(o + 1) * ci * k];
                for i in 0..ci {
                    let xr = &x[(bi * ci + i) * t..(bi * ci + i + 1) * t];
                    if fast && k == 3 {
                        let d = correlate3_grad(grow, xr);
                        for kk in 0..3 {
                            dwo[i * 3 + kk] += d[kk];
                        }
                        continue;
                    }
                    for kk in 0..k {
                        let (lo, hi, off) = geom.valid(kk, t, t_out);
                        let mut acc = T::zero();
                        if stride == 1 {
                            let start = (lo as isize + off) as usize;
                            acc = dot(&grow[lo..hi], &xr[start..start + (hi - lo)]);
                        } else {
                            for (tp, gv) in grow.iter().enumerate().take(hi).skip(lo) {
                                acc += *gv * xr[(tp as isize * stride as isize + off) as usize];
                            }
                        }
                        dwo[i * k + kk] += acc;
                    }
                }
            }
        }
        dwp
    });
    let mut dw = Tensor::zeros(&[co, ci, k]);
    for p in &partials {
        dw.data_mut().iter_mut().zip(p).for_each(|(a, v)| *a += *v);
    }

    let mut dbias = Tensor::zeros(&[co]);
    for bi in 0..b {
        for (o, d) in dbias.data_mut().iter_mut().enumerate() {
            let grow = &g[(bi * co + o) * t_out..(bi * co + o + 1) * t_out];
            *d += grow.iter().copied().sum::<T>();
        }
    }
    Ok((dx, dw, dbias))
}

pub struct Conv1d<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub dilation: usize,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Conv1d<T> {
    pub fn new(c_in: usize, c_out: usize, kernel: usize, stride: usize, rng: &mut Rng) -> Self {
        Conv1d {
            weight: Param::new(glorot(&[c_out, c_in, kernel], c_in * kernel, c_out * kernel, rng)),
            bias: Param::new(Tensor::zeros(&[c_out])),
            stride,
            dilation: 1,
            input: None,
        }
    }

    pub fn out_channels(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Conv1d<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Conv1d
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = conv1d_apply(x, &self.weight.value, &self.bias.value, self.stride, self.dilation)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Mode("conv1d backward before forward".into()))?;
        let (dx, dw, db) = conv1d_backward(input, &self.weight.value, grad, self.stride, self.dilation)?;
        self.weight.grad.add_assign(&dw)?;
        self.bias.grad.add_assign(&db)?;
        Ok(dx)
    }

    fn collect<'a>(&'a mut self, prefix: &str, out: &mut Vec<Named<'a, T>>) {
        out.push(Named {
            name: format!("{prefix}weight"),
            slot: Slot::Param(&mut self.weight),
        });
        out.push(Named {
            name: format!("{prefix}bias"),
            slot: Slot::Param(&mut self.bias),
        });
    }

    fn depth(&self) -> usize {
        1
    }
}
