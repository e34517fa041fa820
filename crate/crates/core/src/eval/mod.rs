//! Desk-scale checks of the modeling claims: a synthetic 2D Markov source,
//! per-cell n-gram likelihoods and embedding-table expansion.

pub mod embedding;
pub mod markov;
pub mod ngram;

pub use embedding::{expand_embeddings, EmbeddingSpec, EmbeddingTable};
pub use markov::MarkovGridSource;
pub use ngram::{ngram_nll, split_train_eval, EvalSequence, NgramModel, NllReport};
