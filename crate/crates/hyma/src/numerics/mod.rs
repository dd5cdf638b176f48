//! Minimal dense-tensor engine: reverse-mode autodiff on a per-step tape,
//! Adam, and the warmup+cosine learning-rate schedule.

mod adam;
mod params;
mod schedule;
mod tape;
mod tensor;

pub use adam::{adam_step, AdamState};
pub use params::ParamSet;
pub use schedule::LrSchedule;
pub use tape::{NodeId, Tape};
pub use tensor::{Precision, Tensor};
