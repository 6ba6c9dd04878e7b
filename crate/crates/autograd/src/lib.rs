//! Reverse-mode automatic differentiation over 4-D `[B, C, H, W]` tensors,
//! with just the operators a convolutional segmentation network needs:
//! convolution (strided, dilated, asymmetric), deformable convolution,
//! batch normalization, bilinear resampling, channel concatenation and
//! element-wise arithmetic, plus the Adam optimizer.
//!
//! Graphs are built eagerly as tensors are computed. Calling
//! [`Tensor::backward`] on a result walks the graph once in reverse and
//! returns gradients for every tracked leaf and parameter.

pub mod layers;
pub mod module;
pub mod ops;
pub mod optim;
mod scalar;
mod tensor;

pub use layers::{BatchNorm2d, Conv2d};
pub use module::{named_buffers, named_params, param_count, Buffer, Mode, Module, Param, Slot, Visitor};
pub use ops::conv::{conv2d, ConvOptions};
pub use ops::deform::deform_conv2d;
pub use ops::elementwise::sigmoid_scalar;
pub use optim::{Adam, AdamConfig, Moments};
pub use scalar::Scalar;
pub use tensor::{numel, Gradients, Shape, Tensor};
