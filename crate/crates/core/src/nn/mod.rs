//! Small dense-tensor network library: valid convolutions, dense layers,
//! rectifiers and softmax with hand-written backward passes, Adam, and a
//! binary checkpoint format.

pub mod adam;
pub mod checkpoint;
mod gemm;
pub mod layers;
pub mod network;
pub mod tensor;

pub use adam::{Adam, AdamConfig};
pub use layers::{
    conv2d_backward, conv2d_forward, dense_backward, dense_forward, log_softmax, relu, relu_backward,
    softmax, Conv2d, Dense,
};
pub use network::{ArchSpec, ConvSpec, Grads, Head, HeadKind, Layer, Network, Trace};
pub use tensor::Tensor;
