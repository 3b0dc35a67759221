//! Dense tensors, a reverse-mode tape, and Adam.

mod gradcheck;
mod optim;
mod tape;
mod tensor;

pub use gradcheck::{check_gradients, GradCheckReport, GRADCHECK_FLOOR};
pub use optim::{clip_global_norm, lr_schedule, AdamConfig, LrSchedule, OptimizerState};
pub use tape::{sigmoid, Gradients, Tape, Var};
pub use tensor::Tensor;
