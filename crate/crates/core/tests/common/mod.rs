#![allow(dead_code)]

use primkit::nn::*;
use primkit::rng::{self, Rng};
use rand::Rng as _;

pub fn rng(seed: u64) -> Rng {
    rng::stream(seed, "test", 0)
}

pub fn uniform<T: Scalar>(shape: &[usize], rng: &mut Rng) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let v: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
    Tensor::from_f64(shape, &v).unwrap()
}

pub fn labels(n: usize, rng: &mut Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..5)).collect()
}

pub fn graph(layers: Vec<BoxLayer<f64>>) -> LayerGraph<f64> {
    LayerGraph::new(layers, 0)
}

/// One small graph exercising each layer kind, with shapes drawn from `seed`.
pub fn kind_graphs(seed: u64) -> Vec<(&'static str, LayerGraph<f64>, Tensor<f64>)> {
    let mut r = rng(seed);
    let b = r.gen_range(2..5);
    let c = r.gen_range(1..4);
    let t = r.gen_range(4..12);
    let f = r.gen_range(2..7);
    let k = [1, 3, 5][r.gen_range(0..3)];
    let stride = r.gen_range(1..3);
    let seq = uniform::<f64>(&[b, c, t], &mut r);
    let flat = uniform::<f64>(&[b, f], &mut r);
    let mut out = Vec::new();
    out.push(("dense", graph(vec![Box::new(Dense::new(f, 5, &mut r))]), flat.clone()));
    out.push((
        "relu",
        graph(vec![Box::new(Dense::new(f, 7, &mut r)), Box::new(Relu::new()), Box::new(Dense::new(7, 5, &mut r))]),
        flat.clone(),
    ));
    out.push((
        "dropout(0)",
        graph(vec![Box::new(Dense::new(f, 6, &mut r)), Box::new(Dropout::new(0.0).unwrap()), Box::new(Dense::new(6, 5, &mut r))]),
        flat.clone(),
    ));
    let conv_head = |r: &mut primkit::rng::Rng, ch: usize| -> Vec<BoxLayer<f64>> {
        vec![Box::new(GlobalAvgPool::new()), Box::new(Dense::new(ch, 5, r))]
    };
    let mut layers: Vec<BoxLayer<f64>> = vec![Box::new(Conv1d::new(c, 4, k, stride, &mut r))];
    layers.extend(conv_head(&mut r, 4));
    out.push(("conv1d+global_avg_pool", graph(layers), seq.clone()));
    let mut layers: Vec<BoxLayer<f64>> = vec![Box::new(Conv1d::new(c, 3, k, 1, &mut r)), Box::new(BatchNorm::new(3))];
    layers.extend(conv_head(&mut r, 3));
    out.push(("batch_norm", graph(layers), seq.clone()));
    let mut layers: Vec<BoxLayer<f64>> = vec![Box::new(Conv1d::new(c, 3, k, 1, &mut r)), Box::new(InstanceNorm::new(3))];
    layers.extend(conv_head(&mut r, 3));
    out.push(("instance_norm", graph(layers), seq.clone()));
    let mut layers: Vec<BoxLayer<f64>> = vec![
        Box::new(Conv1d::new(c, 3, 3, 1, &mut r)),
        Box::new(DenseConcat::new(vec![Box::new(Conv1d::new(3, 2, 3, 1, &mut r))])),
    ];
    layers.extend(conv_head(&mut r, 5));
    out.push(("concat", graph(layers), seq.clone()));
    let mut layers: Vec<BoxLayer<f64>> = vec![
        Box::new(Conv1d::new(c, 3, 3, 1, &mut r)),
        Box::new(Residual::new(vec![Box::new(Conv1d::new(3, 3, 3, 1, &mut r)), Box::new(Relu::new()), Box::new(Conv1d::new(3, 3, 1, 1, &mut r))])),
    ];
    layers.extend(conv_head(&mut r, 3));
    out.push(("residual_add", graph(layers), seq.clone()));
    let modules = (0..c)
        .map(|_| Sequential::new(vec![Box::new(Conv1d::new(1, 2, 3, 1, &mut r)) as BoxLayer<f64>]))
        .collect();
    let mut layers: Vec<BoxLayer<f64>> = vec![Box::new(PerChannel::new(modules))];
    layers.extend(conv_head(&mut r, 2 * c));
    out.push(("per_channel", graph(layers), seq.clone()));
    let h = r.gen_range(2..6);
    out.push(("lstm", graph(vec![Box::new(Lstm::new(c, h, &mut r)), Box::new(Dense::new(h, 5, &mut r))]), seq));
    out
}
