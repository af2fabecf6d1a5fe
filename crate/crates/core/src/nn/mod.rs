//! Dense networks with manual backpropagation and a finite-difference oracle.

mod grad;
mod init;
mod layer;
mod loss;
mod tensor;

pub use grad::{backward, backward_from, finite_diff_grad, sgd_step, GradientSet, LayerGrad};
pub use init::init_weights;
pub use layer::{
    forward, predict, Activation, ArchitectureSpec, DenseLayer, ForwardCache, LayerSpec,
};
pub use loss::{LossKind, CLAMP};
pub use tensor::Tensor2;
