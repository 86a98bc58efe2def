//! Memory-augmented GRU sequence-to-sequence generation of classical Chinese
//! quatrains with controllable style.
//!
//! The pipeline: [`corpus`] loads poems and builds vocabularies and training
//! pairs; [`seq2seq`] is the attention-based encoder/decoder trained with
//! AdaDelta on the reverse-mode kernel in [`autodiff`]; [`memory`] builds a
//! style memory from exemplar poems and blends cosine-weighted reads into
//! the output distribution; [`generate`] decodes quatrains under structural,
//! rhyme and tonal constraints; [`eval`] measures style adherence with
//! character n-gram statistics. [`container`] is the on-disk format shared
//! by checkpoints, embedding tables and memory files.

pub mod autodiff;
pub mod container;
pub mod corpus;
pub mod embedding;
pub mod seq2seq;

pub use autodiff::{Scalar, Tensor};
pub use corpus::{Poem, Quatrain, TokenId, TrainingPair, Vocabulary};
