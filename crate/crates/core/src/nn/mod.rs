//! Dense classifier engine: MLP forward/backward with manual gradients,
//! softmax losses, plain SGD and the analytic FLOPs meter.

mod flops;
mod loss;
mod mlp;
mod tensor;

pub use flops::FlopsCounter;
pub use loss::{kl_distill, loss_ce, per_sample_ce, softmax};
pub use mlp::{
    argmax_rows, backward, forward, infer, predict, sgd_step, DenseLayer, ForwardCache, Gradients,
    MlpParams,
};
pub use tensor::Tensor;
