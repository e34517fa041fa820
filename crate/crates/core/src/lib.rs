//! Priority-guided byte-pair encoding over 2D grids of vector-quantization
//! indices.
//!
//! Images are quantized into grids of base codebook indices, a vocabulary of
//! rectangular composite tokens is trained by repeatedly merging the
//! highest-priority adjacent pair, and trained vocabularies encode grids
//! into short token sequences that splice into text with BOI/EOI markers.

pub mod cli;
pub mod error;
pub mod eval;
pub mod format;
pub mod grid;
pub mod plan;
pub mod quantizer;
pub mod stats;
pub mod tokenizer;
pub mod trainer;
pub mod vocab;

pub use error::{Error, Result};
pub use grid::{
    region_raster_order, IdKind, IdLayout, Orientation, QuantGrid, Region, Shape, TokenGrid,
    TokenId,
};
pub use quantizer::{fit_toy_codebook, quantize, Codebook, PatchGrid};
pub use stats::{PairCounts, PairKey, PairScore};
pub use tokenizer::{assemble, decode, encode, TokenSequence};
pub use trainer::{train, TrainStatus, TrainerConfig, Training};
pub use vocab::{expand, MergeRule, Vocabulary};
