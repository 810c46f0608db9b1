//! Context-aware removal of unrelated foreground objects.
//!
//! Class labels are embedded with a skip-gram model trained on captions
//! reduced to class mentions. A thing whose mean cosine similarity to the
//! other classes of its image is low is masked and inpainted away.

pub mod corpus;
pub mod embedding;
pub mod error;
pub mod eval;
pub mod inpaint;
pub mod lexicon;
pub mod mask;
pub mod pipeline;
pub mod relation;

pub use error::{Error, ErrorCategory, Result};
