//! Small dense-matrix autodiff: a value type, a reverse-mode tape with the
//! handful of primitives a message-passing network needs, Adam, and Xavier
//! initialization. Everything is `f64`.

mod adam;
mod error;
mod init;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use error::DiffError;
pub use init::{xavier_init, xavier_uniform};
pub use tape::{Activation, Gradients, Tape, Var, LOG_FLOOR};
pub use tensor::Tensor;
