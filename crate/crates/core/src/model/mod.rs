//! Diffusion convolution, the DCGRU cell, and the seq2seq forecasters.

mod cell;
mod checkpoint;
mod conv;
mod schedule;
mod seq2seq;

pub use cell::{dcgru_step, DcgruCell, DenseGruCell, GATE_BIAS_INIT};
pub use checkpoint::Checkpoint;
pub use conv::{
    diffusion_conv, diffusion_conv_var, diffusion_features, effective_weight, DiffusionFilter,
    FilterVars,
};
pub use schedule::{sampling_probability, tau_for_midpoint, SamplingSchedule};
pub use seq2seq::{
    Batch, DcrnnModel, Forward, GruSeq2Seq, ModelConfig, RecurrentModel, Seq2SeqModel, LAYERS,
};
