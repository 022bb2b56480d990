//! Primitive layers with forward and analytic backward passes.
//!
//! Every function is pure over its inputs; backward functions take whatever
//! the forward pass needs replayed (inputs, argmax indices, masks, caches).

mod act;
mod conv;
mod dense;
mod norm;
mod pool;

pub use act::{
    bounded_unit, bounded_unit_backward, relu, relu6, relu6_backward, relu_backward, sigmoid, sigmoid_backward,
    sigmoid_scalar,
};
pub use conv::{
    conv2d, conv2d_backward, depthwise_conv2d, depthwise_conv2d_backward, geometry, separable_conv2d,
    separable_conv2d_backward, ConvGrads, Geometry, Padding, SeparableGrads,
};
pub use dense::{dense, dense_backward, dropout, dropout_backward, spatial_mean, spatial_mean_backward, DenseGrads};
pub use norm::{
    batch_norm, batch_norm_backward, batch_norm_infer, batch_norm_infer_cached, batch_norm_train, update_running,
    BnCache, BnGrads, BnStats,
};
pub use pool::{maxpool2d, maxpool2d_backward};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}
