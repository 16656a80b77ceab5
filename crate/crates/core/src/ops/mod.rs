//! Differentiable operations over [`Tensor`](crate::Tensor) values recorded
//! on a [`Tape`](crate::Tape).

mod basic;
pub(crate) mod conv;
mod deform;
mod matrix;
mod norm;
mod pool;
mod structure;

pub use basic::{add, add_n, mul, mul_mask, relu, scale, sigmoid, sine, straight_through, sum};
pub use conv::conv2d;
pub use deform::{deform_conv2d_sampled, deformable_conv2d};
pub use matrix::{
    add_row_bias, concat_cols, concat_rows, gather_map, gather_rows, matmul, reshape, slice_cols,
    transpose,
};
pub use norm::{channel_norm, cross_entropy, layer_normalize, softmax};
pub use pool::{global_average_pool, max_pool2d, patch_average_pool};
pub use structure::mul_bcast_spatial;
