//! Central finite-difference verification of analytic gradients.

use super::graph::LayerGraph;
use super::layer::{Mode, Slot};
use super::tensor::Tensor;
use crate::error::Result;

pub const FD_STEP: f64 = 1e-5;

/// Gradients smaller than this are compared on an absolute scale, since
/// finite-difference noise is about `1e-10` in 64-bit.
pub const REL_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct ParamCheck {
    pub name: String,
    pub checked: usize,
    pub max_rel_err: f64,
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub max_rel_err: f64,
    pub worst: String,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub tolerance: f64,
    pub step: f64,
    /// Check at most this many elements per parameter tensor (evenly strided);
    /// `None` checks every element.
    pub max_per_param: Option<usize>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            tolerance: 1e-4,
            step: FD_STEP,
            max_per_param: None,
        }
    }
}

/// Compare analytic and finite-difference gradients of the mean softmax
/// cross-entropy for every parameter. The graph must not contain active dropout.
pub fn gradient_check(graph: &mut LayerGraph<f64>, input: &Tensor<f64>, labels: &[usize], tolerance: f64) -> Result<GradCheckReport> {
    gradient_check_with(
        graph,
        input,
        labels,
        GradCheckOptions {
            tolerance,
            ..Default::default()
        },
    )
}

pub fn gradient_check_with(
    graph: &mut LayerGraph<f64>,
    input: &Tensor<f64>,
    labels: &[usize],
    opts: GradCheckOptions,
) -> Result<GradCheckReport> {
    graph.set_mode(Mode::Train);
    graph.zero_grad();
    graph.loss_and_backward(input, labels)?;

    let analytic: Vec<(String, Vec<f64>)> = graph
        .named()
        .into_iter()
        .filter_map(|n| match n.slot {
            Slot::Param(p) => Some((n.name, p.grad.data().to_vec())),
            Slot::Buffer(_) => None,
        })
        .collect();

    let mut params = Vec::with_capacity(analytic.len());
    for (pi, (name, grads)) in analytic.iter().enumerate() {
        let n = grads.len();
        let stride = match opts.max_per_param {
            Some(m) if m > 0 && n > m => n.div_ceil(m),
            _ => 1,
        };
        let mut worst = 0.0f64;
        let mut checked = 0;
        for idx in (0..n).step_by(stride) {
            // A perturbation that crosses a ReLU kink gives a one-sided slope. Such
            // a crossing disappears at a smaller step while a wrong gradient does not,
            // so a failing element is retried at step/10 and step/100.
            let mut err = f64::INFINITY;
            for shrink in [1.0, 0.1, 0.01] {
                let h = opts.step * shrink;
                err = err.min(relative_error(grads[idx], central_difference(graph, pi, idx, h, input, labels)?));
                if err < opts.tolerance {
                    break;
                }
            }
            worst = worst.max(err);
            checked += 1;
        }
        params.push(ParamCheck {
            name: name.clone(),
            checked,
            max_rel_err: worst,
        });
    }
    let (max_rel_err, worst) = params
        .iter()
        .fold((0.0f64, String::new()), |(m, w), p| {
            if p.max_rel_err > m {
                (p.max_rel_err, p.name.clone())
            } else {
                (m, w)
            }
        });
    Ok(GradCheckReport {
        passed: max_rel_err < opts.tolerance,
        params,
        max_rel_err,
        worst,
        tolerance: opts.tolerance,
    })
}

fn central_difference(
    graph: &mut LayerGraph<f64>,
    pi: usize,
    idx: usize,
    h: f64,
    input: &Tensor<f64>,
    labels: &[usize],
) -> Result<f64> {
    let orig = param_value(graph, pi, idx);
    set_param(graph, pi, idx, orig + h);
    let up = graph.loss(input, labels);
    set_param(graph, pi, idx, orig - h);
    let down = graph.loss(input, labels);
    set_param(graph, pi, idx, orig);
    Ok((up? - down?) / (2.0 * h))
}

fn param_value(graph: &mut LayerGraph<f64>, pi: usize, idx: usize) -> f64 {
    with_param(graph, pi, |t| t.data()[idx])
}

fn set_param(graph: &mut LayerGraph<f64>, pi: usize, idx: usize, v: f64) {
    with_param(graph, pi, |t| t.data_mut()[idx] = v);
}

fn with_param<R>(graph: &mut LayerGraph<f64>, pi: usize, f: impl FnOnce(&mut Tensor<f64>) -> R) -> R {
    let slot = graph
        .named()
        .into_iter()
        .filter_map(|n| match n.slot {
            Slot::Param(p) => Some(p),
            Slot::Buffer(_) => None,
        })
        .nth(pi)
        .expect("parameter index in range");
    f(&mut slot.value)
}
