//! Discrete VAE tokenizers for content and acoustic features.

mod model;
mod quantize;
mod tokens;
mod train;

pub use model::{DvaeConfig, DvaeLoss, DvaeModel, DOWNSAMPLE};
pub use quantize::{nearest_code, nearest_codes, quantize};
pub use tokens::{
    load_tokens, read_tokens, save_tokens, write_tokens, TokenKind, TokenSeq,
    ACOUSTIC_TOKEN_RATE, PHONETIC_TOKEN_RATE,
};
pub use train::{feature_stats, train_dvae, DvaeTrainOptions, DvaeTrainReport};
