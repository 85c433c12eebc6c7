use super::init::glorot;
use super::layer::{Ctx, Layer, LayerKind, Named, Param, Slot};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::par;
use crate::rng::Rng;

/// `out = input · weightsᵀ + bias` for `input: B×F_in`, `weights: F_out×F_in`.
pub fn dense_apply<T: Scalar>(input: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, f_in) = match *input.shape() {
        [b, f] => (b, f),
        _ => return Err(Error::dims("dense input", input.shape(), weights.shape())),
    };
    let f_out = match *weights.shape() {
        [o, i] if i == f_in => o,
        _ => return Err(Error::dims("dense", input.shape(), weights.shape())),
    };
    if bias.shape() != [f_out] {
        return Err(Error::dims("dense bias", bias.shape(), &[f_out]));
    }
    let x = input.data();
    let w = weights.data();
    let bv = bias.data();
    let mut out = Tensor::zeros(&[b, f_out]);
    par::for_each_chunk(out.data_mut(), f_out, |bi, row| {
        let xr = &x[bi * f_in..(bi + 1) * f_in];
        for (o, r) in row.iter_mut().enumerate() {
            let wr = &w[o * f_in..(o + 1) * f_in];
            let mut acc = bv[o];
            for (a, c) in xr.iter().zip(wr) {
                acc += *a * *c;
            }
            *r = acc;
        }
    });
    Ok(out)
}

/// Gradients of [`dense_apply`]: returns `(d_input, d_weights, d_bias)`.
pub fn dense_backward<T: Scalar>(
    input: &Tensor<T>,
    weights: &Tensor<T>,
    grad: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (b, f_in) = (input.shape()[0], input.shape()[1]);
    let f_out = weights.shape()[0];
    if grad.shape() != [b, f_out] {
        return Err(Error::dims("dense backward", grad.shape(), &[b, f_out]));
    }
    let x = input.data();
    let w = weights.data();
    let g = grad.data();

    let mut dx = Tensor::zeros(&[b, f_in]);
    par::for_each_chunk(dx.data_mut(), f_in, |bi, row| {
        for o in 0..f_out {
            let go = g[bi * f_out + o];
            if go == T::zero() {
                continue;
            }
            for (r, wv) in row.iter_mut().zip(&w[o * f_in..(o + 1) * f_in]) {
                *r += go * *wv;
            }
        }
    });

    let mut dw = Tensor::zeros(&[f_out, f_in]);
    par::for_each_chunk(dw.data_mut(), f_in, |o, row| {
        for bi in 0..b {
            let go = g[bi * f_out + o];
            if go == T::zero() {
                continue;
            }
            for (r, xv) in row.iter_mut().zip(&x[bi * f_in..(bi + 1) * f_in]) {
                *r += go * *xv;
            }
        }
    });

    let mut db = Tensor::zeros(&[f_out]);
    for bi in 0..b {
        for (d, &gv) in db.data_mut().iter_mut().zip(&g[bi * f_out..(bi + 1) * f_out]) {
            *d += gv;
        }
    }
    Ok((dx, dw, db))
}

pub struct Dense<T: Scalar> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(f_in: usize, f_out: usize, rng: &mut Rng) -> Self {
        Dense {
            weight: Param::new(glorot(&[f_out, f_in], f_in, f_out, rng)),
            bias: Param::new(Tensor::zeros(&[f_out])),
            input: None,
        }
    }

    pub fn in_features(&self) -> usize {
        self.weight.value.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.value.shape()[0]
    }
}

impl<T: Scalar> Layer<T> for Dense<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dense
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let y = dense_apply(x, &self.weight.value, &self.bias.value)?;
        self.input = Some(x.clone());
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let input = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Mode("dense backward before forward".into()))?;
        let (dx, dw, db) = dense_backward(input, &self.weight.value, grad)?;
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
