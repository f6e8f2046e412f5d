//! Tape-free numeric kernels. The autograd layer wraps these.

pub mod conv;
mod im2col;
pub mod layout;
pub mod matmul;

pub use conv::{conv3d_forward, Conv3dSpec};
pub use layout::{concat, max_axis, mean_axis, permute, resize_nearest3d, softmax};
pub use matmul::matmul;
