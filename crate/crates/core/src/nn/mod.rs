//! Small dense neural-network toolkit: valid 2-D convolutions, fully-connected
//! layers, batched backpropagation, RMSprop and a gradient checker.

mod activation;
mod conv;
mod dense;
mod gemm;
pub mod gradcheck;
mod network;
mod optim;
mod tensor;
mod train;

pub use activation::Activation;
pub use conv::{conv_backward, conv_forward, ConvGrads, ConvLayer};
pub use dense::{dense_backward, dense_forward, DenseGrads, DenseLayer};
pub use gradcheck::{gradient_check, GradCheckOptions, GradCheckReport};
pub use network::{ForwardCache, Gradients, Layer, Network, ParamSet, Shape3};
pub use optim::{rmsprop_step, RmspropConfig, RmspropState};
pub use tensor::Tensor3;
pub use train::{compute_loss, fit_network, mean_squared_error, Dataset, FitOptions, Precision};
