//! Impression-conditioned font glyph generation that stays robust when
//! impression labels are missing.
//!
//! The pipeline completes sparse label vectors from label co-occurrence
//! statistics, compresses the auxiliary classifier's label posterior through
//! a low-dimensional encoder-decoder, and trains a progressive
//! auxiliary-classifier GAN conditioned on characters, impressions and a
//! word-embedding semantic vector.

pub mod analysis;
pub mod autodiff;
pub mod checkpoint;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod glyph;
pub mod labelspace;
pub mod nets;
pub mod nn;
pub mod semantics;
pub mod training;
pub mod util;

pub use error::{Error, Result};
pub use corpus::{Corpus, FontRecord, LabelVocabulary};
pub use glyph::{GlyphImage, CHARSET, NUM_CHARS};
pub use labelspace::{CompletedLabelVector, CooccurrenceMatrix, LabelMatrix};
pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use training::{train, Model, TrainConfig};
