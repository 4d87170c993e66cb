//! Dense matrices and a reverse-mode tape covering the operations the
//! network needs: matmul, elementwise activations, products, softmax and
//! softmax cross-entropy.

mod matrix;
mod tape;

pub use matrix::Matrix;
pub use tape::{log_sum_exp, relu, sigmoid, softmax, softmax_slice, Activation, Gradients, NodeId, Tape};
