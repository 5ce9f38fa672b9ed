//! Causal language model over `[style][phonetic][acoustic]` sequences.

mod generate;
mod model;
mod sample;
mod train;

pub use generate::{Generation, LmHidden};
pub use model::{
    pack, packed_ids, LanguageModel, LmConfig, LmLoss, PackedSequence, Segment, Trunk,
    CHECKPOINT_NAME,
};
pub use sample::{apply_repetition_penalty, sample_next, sampling_distribution, SamplingParams};
pub use train::{segment, train_lm, LmExample, LmTrainOptions, LmTrainReport, LossRow, Segmented};
