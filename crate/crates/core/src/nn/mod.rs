//! Feed-forward networks: activations, costs, forward and backward passes,
//! weight penalties, inverted dropout and initialization.

mod activation;
mod loss;
mod network;

pub use activation::{activate, activate_derivative, sigmoid, softmax_rows, softplus, Activation};
pub use loss::{
    backprop, backprop_with, data_loss, loss, output_delta, Backprop, LossKind, Objective,
    Regularizer, PRED_CLAMP,
};
pub use network::{
    forward, gaussian_matrix, init_layer, init_network, DropoutSpec, ForwardPass, InitScheme,
    LayerParams, NetworkParams,
};
