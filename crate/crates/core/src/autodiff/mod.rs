//! Reverse-mode differentiation over dense `f64` tensors, plus AdamW.

mod adamw;
mod graph;
mod tensor;

pub use adamw::{AdamW, AdamWConfig};
pub use graph::{sigmoid, Gradients, Graph, OpKind, Var};
pub(crate) use graph::gemm;
pub use tensor::Tensor;
