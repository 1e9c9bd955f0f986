//! Minimal dense-tensor engine with reverse-mode differentiation and an
//! adaptive-moment optimizer. 64-bit floats throughout; 2-D tensors only;
//! no broadcasting beyond row-wise bias/scalar forms provided as explicit
//! ops. Deterministic: op order on the tape and reduction order are fixed.

mod optim;
mod tape;
mod tensor;

pub use optim::{adam_step, AdamConfig, ParameterStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
