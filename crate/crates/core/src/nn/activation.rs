use rand::Rng as _;

use super::layer::{Ctx, Layer, LayerKind, Mode};
use super::tensor::{Scalar, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

pub fn relu_apply<T: Scalar>(input: &Tensor<T>) -> Tensor<T> {
    let mut y = input.clone();
    y.data_mut().iter_mut().for_each(|v| *v = v.max(T::zero()));
    y
}

/// Gate is 1 where `x > 0`, else 0 (including `x == 0`).
pub fn relu_backward<T: Scalar>(input: &Tensor<T>, grad: &Tensor<T>) -> Tensor<T> {
    let mut g = grad.clone();
    for (gv, &xv) in g.data_mut().iter_mut().zip(input.data()) {
        if xv <= T::zero() {
            *gv = T::zero();
        }
    }
    g
}

#[derive(Default)]
pub struct Relu<T: Scalar> {
    input: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { input: None }
    }
}

impl<T: Scalar> Layer<T> for Relu<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Relu
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        self.input = Some(x.clone());
        Ok(relu_apply(x))
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let x = self
            .input
            .as_ref()
            .ok_or_else(|| Error::Mode("relu backward before forward".into()))?;
        Ok(relu_backward(x, grad))
    }
}

pub fn check_dropout_rate(rate: f64) -> Result<()> {
    if (0.0..1.0).contains(&rate) {
        Ok(())
    } else {
        Err(Error::Config(format!("dropout rate {rate} outside [0, 1)")))
    }
}

/// Inverted dropout. Returns the output and the per-element multiplier
/// (0 or `1/(1-rate)`) used for the backward pass.
pub fn dropout_apply<T: Scalar>(input: &Tensor<T>, rate: f64, mode: Mode, rng: &mut Rng) -> Result<(Tensor<T>, Option<Vec<T>>)> {
    check_dropout_rate(rate)?;
    if mode == Mode::Eval || rate == 0.0 {
        return Ok((input.clone(), None));
    }
    let keep = T::of(1.0 / (1.0 - rate));
    let mask: Vec<T> = (0..input.len())
        .map(|_| if rng.gen::<f64>() < rate { T::zero() } else { keep })
        .collect();
    let mut y = input.clone();
    for (v, &m) in y.data_mut().iter_mut().zip(&mask) {
        *v *= m;
    }
    Ok((y, Some(mask)))
}

pub struct Dropout<T: Scalar> {
    pub rate: f64,
    mask: Option<Vec<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(rate: f64) -> Result<Self> {
        check_dropout_rate(rate)?;
        Ok(Dropout { rate, mask: None })
    }
}

impl<T: Scalar> Layer<T> for Dropout<T> {
    fn kind(&self) -> LayerKind {
        LayerKind::Dropout
    }

    fn forward(&mut self, x: &Tensor<T>, ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        let (y, mask) = dropout_apply(x, self.rate, ctx.mode, ctx.rng)?;
        self.mask = mask;
        Ok(y)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = grad.clone();
        if let Some(mask) = &self.mask {
            for (v, &m) in g.data_mut().iter_mut().zip(mask) {
                *v *= m;
            }
        }
        Ok(g)
    }
}

/// Mean over time: `B×C×T → B×C`.
pub fn global_avg_pool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (b, c, t) = match *input.shape() {
        [b, c, t] if t >= 1 => (b, c, t),
        _ => return Err(Error::dims("global_avg_pool", input.shape(), &[])),
    };
    let inv = T::one() / T::of(t as f64);
    let data = input
        .data()
        .chunks(t)
        .map(|row| row.iter().copied().sum::<T>() * inv)
        .collect();
    Tensor::from_vec(&[b, c], data)
}

#[derive(Default)]
pub struct GlobalAvgPool {
    t: usize,
}

impl GlobalAvgPool {
    pub fn new() -> Self {
        GlobalAvgPool { t: 0 }
    }
}

impl<T: Scalar> Layer<T> for GlobalAvgPool {
    fn kind(&self) -> LayerKind {
        LayerKind::GlobalAvgPool
    }

    fn forward(&mut self, x: &Tensor<T>, _ctx: &mut Ctx<'_>) -> Result<Tensor<T>> {
        self.t = x.bct()?.2;
        global_avg_pool(x)
    }

    fn backward(&mut self, grad: &Tensor<T>) -> Result<Tensor<T>> {
        let (b, c) = (grad.shape()[0], grad.shape()[1]);
        let t = self.t;
        let inv = T::one() / T::of(t as f64);
        let mut data = Vec::with_capacity(b * c * t);
        for &g in grad.data() {
            data.extend(std::iter::repeat(g * inv).take(t));
        }
        Tensor::from_vec(&[b, c, t], data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn relu_sign_split_and_gate() {
        assert_eq!(relu_apply(&t(&[3], &[-1., 0., 2.])).data(), &[0., 0., 2.]);
        let pos = t(&[3], &[0.1, 2., 9.]);
        assert_eq!(relu_apply(&pos), pos);
        let g = relu_backward(&t(&[2], &[-1., 2.]), &t(&[2], &[5., 5.]));
        assert_eq!(g.data(), &[0., 5.]);
        // tie at zero is gated off
        assert_eq!(relu_backward(&t(&[1], &[0.]), &t(&[1], &[1.])).data(), &[0.]);
    }

    #[test]
    fn dropout_degenerate_cases_are_identity() {
        let x = t(&[2, 3], &[1., 2., 3., 4., 5., 6.]);
        let mut rng = stream(0, "dropout", 0);
        assert_eq!(dropout_apply(&x, 0.0, Mode::Train, &mut rng).unwrap().0, x);
        assert_eq!(dropout_apply(&x, 0.5, Mode::Eval, &mut rng).unwrap().0, x);
        assert!(dropout_apply(&x, 1.0, Mode::Train, &mut rng).is_err());
        assert!(dropout_apply(&x, -0.1, Mode::Train, &mut rng).is_err());
    }

    #[test]
    fn dropout_preserves_expectation() {
        let vals = [1., -2., 3.5, 0.25];
        let reps = 16;
        let data: Vec<f64> = vals.iter().flat_map(|&v| std::iter::repeat(v).take(reps)).collect();
        let x = t(&[1, data.len()], &data);
        let mut rng = stream(42, "dropout", 0);
        let mut acc = [0.0; 4];
        let n = 10_000;
        for _ in 0..n {
            let (y, _) = dropout_apply(&x, 0.5, Mode::Train, &mut rng).unwrap();
            for (i, v) in y.data().iter().enumerate() {
                acc[i / reps] += v;
            }
        }
        for (a, xv) in acc.iter().zip(vals) {
            let mean = a / (n * reps) as f64;
            assert!((mean - xv).abs() / xv.abs() < 0.02, "{mean} vs {xv}");
        }
    }

    #[test]
    fn pool_means() {
        assert_eq!(global_avg_pool(&t(&[1, 1, 4], &[1., 2., 3., 4.])).unwrap().data(), &[2.5]);
        assert_eq!(global_avg_pool(&t(&[1, 1, 3], &[7.; 3])).unwrap().data(), &[7.]);
        let single = t(&[2, 3, 1], &[1., 2., 3., 4., 5., 6.]);
        assert_eq!(global_avg_pool(&single).unwrap().data(), single.data());
    }
}
