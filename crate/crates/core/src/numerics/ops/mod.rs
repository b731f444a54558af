//! Forward operations and their analytic gradients.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod norm;
pub mod pool;
pub mod upconv;

pub use activation::{gelu, gelu_backward, gelu_derivative, gelu_forward};
pub use conv::{conv2d_backward_input, conv2d_backward_params, conv2d_forward};
pub use linear::{linear_backward_input, linear_backward_params, linear_forward};
pub use loss::{
    cross_entropy, cross_entropy_backward, log_softmax, logsumexp, mean_of_squares, mean_of_squares_backward,
    one_hot, softmax,
};
pub use norm::{batchnorm_backward, batchnorm_forward, batchnorm_update_running, BnCache, BnMode};
pub use pool::{maxpool2_backward, maxpool2_forward, upsample2_backward, upsample2_forward};
pub use upconv::{upconv2d_backward_input, upconv2d_backward_params, upconv2d_forward};
