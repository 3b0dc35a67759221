//! Comparison forecasters: constant mean, seasonal naive, ARIMAX, and the
//! dense GRU seq2seq (see [`crate::model::GruSeq2Seq`]).

mod arimax;
mod classical;

pub use crate::model::GruSeq2Seq;
pub use arimax::{ArimaxFit, ArimaxModel, Segment, AR_ORDER, ROWS_PER_PARAMETER};
pub use classical::{ConstantMean, SeasonalNaive};
