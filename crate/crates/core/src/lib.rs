//! Query-focused multi-document summarization toolkit.
//!
//! Dataset construction (`dataforge`, backed by `bm25` retrieval and `rouge`
//! scoring), the hierarchical summarizer (`herosumm`) and the training and
//! decoding loop (`runway`). Text handling lives in `textcore`.

mod error;

pub mod bm25;
pub mod dataforge;
pub mod herosumm;
pub mod rouge;
pub mod runway;
pub mod textcore;

pub use error::{Error, Result};
