//! Forward and backward kernels for every layer type the network uses.

pub mod conv;
pub mod dense;
pub mod gru;
pub mod norm;
pub mod pool;

pub use conv::{conv3d, conv3d_backward, Conv3dGrads, Padding3};
pub use dense::{
    dropout_linear, dropout_volumetric, linear, linear_backward, relu_backward, relu_inplace,
    sigmoid, sigmoid_backward, softmax_rows, softmax_rows_backward, tanh_backward, DropoutMask,
};
pub use gru::{gru_sequence, gru_sequence_backward, gru_step, gru_step_backward, GruParams, GruState};
pub use norm::{batchnorm_backward, batchnorm_eval, batchnorm_train, BnCache, Mode, RunningStats};
pub use pool::{maxpool3d_spatial, maxpool3d_spatial_backward, Pooled};
