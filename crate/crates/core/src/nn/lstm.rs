//! Single-layer unidirectional LSTM with fused gate weights.
//!
//! Gate rows of the `4H × (C + H)` weight matrix are ordered input, forget,
//! candidate, output; columns are `[x_t ; h_{t-1}]`.

use super::init::glorot;
use super::layer::{Ctx, Layer, LayerKind, Named, Param, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

#[inline]
fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Per-sample activations saved for backprop-through-time.
#[derive(Debug, Clone, Default)]
struct Trace<T> {
    /// `[i, f, g, o]` post-activation per step, `4H` each.
    gates: Vec<T>,
    /// Cell state per step (`H` each), index 0 is `c0`.
    c: Vec<T>,
    /// Hidden state per step, index 0 is `h0`.
    h: Vec<T>,
}

pub struct LstmOutput<T: Scalar> {
    /// `B×H×T`.
    pub hidden: Tensor<T>,
    /// `B×H`.
    pub last: Tensor<T>,
}

fn run_sample<T: Scalar>(
    x: &[T],
    c_in: usize,
    steps: usize,
    w: &[T],
    bias: &[T],
    h0: &[T],
    c0: &[T],
) -> Result<Trace<T>> {
    let hdim = h0.len();
    let cols = c_in + hdim;
    let mut tr = Trace {
        gates: Vec::with_capacity(4 * hdim * steps),
        c: Vec::with_capacity(hdim * (steps + 1)),
        h: Vec::with_capacity(hdim * (steps + 1)),
    };
    tr.c.extend_from_slice(c0);
    tr.h.extend_from_slice(h0);
    let mut xin = vec![T::zero(); cols];
    let mut z = vec![T::zero(); 4 * hdim];
    for step in 0..steps {
        for (ch, v) in xin[..c_in].iter_mut().enumerate() {
            *v = x[ch * steps + step];
        }
        xin[c_in..].copy_from_slice(&tr.h[step * hdim..(step + 1) * hdim]);
        for (r, zv) in z.iter_mut().enumerate() {
            let row = &w[r * cols..(r + 1) * cols];
            let mut acc = bias[r];
            for (a, b) in row.iter().zip(&xin) {
                acc += *a * *b;
            }
            *zv = acc;
        }
        for j in 0..hdim {
            let i = sigmoid(z[j]);
            let f = sigmoid(z[hdim + j]);
            let g = z[2 * hdim + j].tanh();
            let o = sigmoid(z[3 * hdim + j]);
            let c = f * tr.c[step * hdim + j] + i * g;
            let h = o * c.tanh();
            if !c.is_finite() || !h.is_finite() {
                return Err(Error::NonFinite(format!("lstm activation at timestep {step}")));
            }
            tr.gates.extend_from_slice(&[i, f, g, o]);
            tr.c.push(c);
            tr.h.push(h);
        }
    }
    Ok(tr)
}

/// Unrolled forward pass over `input: B×C×T` from initial states `h0, c0: B×H`.
pub fn lstm_forward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    h0: &Tensor<T>,
    c0: &Tensor<T>,
) -> Result<LstmOutput<T>> {
    let (b, _, t, h) = check(input, weights, bias)?;
    if h0.shape() != [b, h] || c0.shape() != [b, h] {
        return Err(Error::dims("lstm initial state", h0.shape(), &[b, h]));
    }
    let traces = run_all(input, weights, bias, h0.data(), c0.data(), h)?;
    Ok(collect_output(&traces, b, h, t))
}

fn check<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<(usize, usize, usize, usize)> {
    let (b, c, t) = match *input.shape() {
        [b, c, t] => (b, c, t),
        _ => return Err(Error::dims("lstm input", input.shape(), weights.shape())),
    };
    let h = match *weights.shape() {
        [r, cols] if r % 4 == 0 && cols == c + r / 4 => r / 4,
        _ => return Err(Error::dims("lstm weights", input.shape(), weights.shape())),
    };
    if bias.shape() != [4 * h] {
        return Err(Error::dims("lstm bias", bias.shape(), &[4 * h]));
    }
    if t == 0 {
        return Err(Error::InputTooShort { op: "lstm", len: 0 });
    }
    Ok((b, c, t, h))
}

fn run_all<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    bias: &Tensor<T>,
    h0: &[T],
    c0: &[T],
    h: usize,
) -> Result<Vec<Trace<T>>> {
    let (b, c, t) = input.bct()?;
    let x = input.data();
    par::map(b, |bi| {
        run_sample(
            &x[bi * c * t..(bi + 1) * c * t],
            c,
            t,
            weights.data(),
            bias.data(),
            &h0[bi * h..(bi + 1) * h],
            &c0[bi * h..(bi + 1) * h],
        )
    })
    .into_iter()
    .collect()
}

fn collect_output<T: Scalar>(traces: &[Trace<T>], b: usize, h: usize, t: usize) -> LstmOutput<T> {
    let mut hidden = Tensor::zeros(&[b, h, t]);
    let mut last = Tensor::zeros(&[b, h]);
    for (bi, tr) in traces.iter().enumerate() {
        for step in 0..t {
            for j in 0..h {
                hidden.data_mut()[(bi * h + j) * t + step] = tr.h[(step + 1) * h + j];
            }
        }
        last.data_mut()[bi * h..(bi + 1) * h].copy_from_slice(&tr.h[t * h..(t + 1) * h]);
    }
    LstmOutput { hidden, last }
}

/// Backprop-through-time for one sample given the gradient on the final
/// hidden state. Returns `(dx, dW, db)`.
fn bptt_sample<T: Scalar>(
    x: &[T],
    c_in: usize,
    steps: usize,
    w: &[T],
    tr: &Trace<T>,
    d_last: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let hdim = d_last.len();
    let cols = c_in + hdim;
    let mut dx = vec![T::zero(); c_in * steps];
    let mut dw = vec![T::zero(); 4 * hdim * cols];
    let mut db = vec![T::zero(); 4 * hdim];
    let mut dh = d_last.to_vec();
    let mut dc = vec![T::zero(); hdim];
    let mut dz = vec![T::zero(); 4 * hdim];
    let mut xin = vec![T::zero(); cols];
    for step in (0..steps).rev() {
        let gates = &tr.gates[step * 4 * hdim..(step + 1) * 4 * hdim];
        for j in 0..hdim {
            let (i, f, g, o) = (gates[4 * j], gates[4 * j + 1], gates[4 * j + 2], gates[4 * j + 3]);
            let c = tr.c[(step + 1) * hdim + j];
            let c_prev = tr.c[step * hdim + j];
            let tc = c.tanh();
            let d_o = dh[j] * tc;
            let d_c = dc[j] + dh[j] * o * (T::one() - tc * tc);
            dz[j] = d_c * g * i * (T::one() - i);
            dz[hdim + j] = d_c * c_prev * f * (T::one() - f);
            dz[2 * hdim + j] = d_c * i * (T::one() - g * g);
            dz[3 * hdim + j] = d_o * o * (T::one() - o);
            dc[j] = d_c * f;
        }
        for (ch, v) in xin[..c_in].iter_mut().enumerate() {
            *v = x[ch * steps + step];
        }
        xin[c_in..].copy_from_slice(&tr.h[step * hdim..(step + 1) * hdim]);
        dh.iter_mut().for_each(|v| *v = T::zero());
        for (r, &dzr) in dz.iter().enumerate() {
            db[r] += dzr;
            if dzr == T::zero() {
                continue;
            }
            let row = &w[r * cols..(r + 1) * cols];
            let drow = &mut dw[r * cols..(r + 1) * cols];
            for (d, xv) in drow.iter_mut().zip(&xin) {
                *d += dzr * *xv;
            }
            for ch in 0..c_in {
                dx[ch * steps + step] += dzr * row[ch];
            }
            for j in 0..hdim {
                dh[j] += dzr * row[c_in + j];
            }
        }
    }
    (dx, dw, db)
}

pub struct Lstm<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
    traces: Vec<Trace<T>>,
}

impl<T: Scalar> Lstm<T> {
    /// Glorot weights, zero biases except the forget gate, which starts at 1.
    pub fn new(c_in: usize, hidden: usize, rng: &mut Rng) -> Self {
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data_mut()[hidden..2 * hidden]
            .iter_mut()
            .for_each(|v| *v = T::one());
        Lstm {
            weight: Param::new(glorot(&[4 * hidden, c_in + hidden], c_in + hidden, 4 * hidden, rng)),
            bias: Param::new(bias),
            input: None,
            traces: Vec::new(),
        }
    }

    pub fn hidden(&self) -> usize {
        self.weight.value.shape()[0] / 4
    }
}

impl<T: Scalar> Layer<T> for Lstm<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Lstm
    }

    /// Emits the final hidden state `B×H`.
    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (b, _, t, h) = check(x, &self.weight.value, &self.bias.value)?;
        let zeros = vec![T::zero(); b * h];
        self.traces = run_all(x, &self.weight.value, &self.bias.value, &zeros, &zeros, h)?;
        self.input = Some(x.clone());
        Ok(collect_output(&self.traces, b, h, t).last)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Mode("lstm backward before forward".into()))?;
        let (b, c, t) = input.bct()?;
        let h = self.hidden();
        if grad.shape() != [b, h] {
            return Err(Error::dims("lstm backward", grad.shape(), &[b, h]));
        }
        let x = input.data();
        let w = self.weight.value.data();
        let g = grad.data();
        let traces = &self.traces;
        let parts = par::map(b, |bi| {
            bptt_sample(
                &x[bi * c * t..(bi + 1) * c * t],
                c,
                t,
                w,
                &traces[bi],
                &g[bi * h..(bi + 1) * h],
            )
        });
        let mut dx = Vec::with_capacity(b * c * t);
        for (pdx, pdw, pdb) in parts {
            dx.extend_from_slice(&pdx);
            for (a, v) in self.weight.grad.data_mut().iter_mut().zip(&pdw) {
                *a += *v;
            }
            for (a, v) in self.bias.grad.data_mut().iter_mut().zip(&pdb) {
                *a += *v;
            }
        }
        Tensor::from_vec(&[b, c, t], dx)
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
}
