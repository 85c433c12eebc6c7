//! Minimal differentiable-layer engine with analytic backward passes.

pub mod activation;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod graph;
pub mod init;
pub mod layer;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod tensor;

pub use activation::{dropout_apply, global_avg_pool, relu_apply, Dropout, GlobalAvgPool, Relu};
pub use conv::{conv1d_apply, Conv1d, ConvGeom};
pub use dense::{dense_apply, Dense};
pub use gradcheck::{gradient_check, gradient_check_with, GradCheckOptions, GradCheckReport};
pub use graph::LayerGraph;
pub use layer::{BoxLayer, Ctx, DenseConcat, Layer, LayerKind, Mode, Named, Param, PerChannel, Residual, Sequential, Slot};
pub use loss::{softmax_cross_entropy, softmax_rows};
pub use lstm::{lstm_forward, Lstm, LstmOutput};
pub use norm::{batch_norm_apply, instance_norm_apply, BatchNorm, InstanceNorm, NormState};
pub use tensor::{Scalar, Tensor};
