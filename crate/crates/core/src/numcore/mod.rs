//! Dense numeric primitives: forward evaluation, analytic gradients,
//! finite-difference checking and the Adam optimizer.

mod adam;
mod backward;
mod gradcheck;
mod layers;
mod lstm;
mod params;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use backward::{layer_backward, layer_forward, ForwardCache, Layer, LayerGrads};
pub use gradcheck::{grad_check, grad_check_worst, WorstCoordinate, REL_ERROR_FLOOR};
pub use layers::{
    concat, log_softmax, mean_rows, sigmoid, sigmoid_backward, softmax, softmax_backward, split,
    tanh_backward, weighted_sum, weighted_sum_backward, Linear,
};
pub use lstm::{lstm_step, LstmCell, LstmStepCache, LstmTrace};
pub use params::{accumulate, ParamSet, ParamView};
pub use tensor::{add_assign, all_finite, axpy, dot, Tensor2};
