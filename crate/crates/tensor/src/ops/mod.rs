//! Differentiable operations. All of them are free functions taking tensor
//! references and returning a fresh tensor.

mod conv;
mod elementwise;
mod linalg;
mod loss;
mod norm;
mod reduce;
mod shape;
mod softmax;

pub use conv::{conv2d, max_feature_map, max_pool2d};
pub use elementwise::{add, mul, relu, scale, sub};
pub use linalg::{bmm, linear, matmul, scaled_dot_product_attention};
pub use loss::cross_entropy_smoothed;
pub use norm::{batch_norm2d, layer_norm, BatchNormMode};
pub use reduce::{mean_all, mean_axis, sum_all};
pub use shape::{concat, permute, reshape, transpose};
pub use softmax::softmax;
