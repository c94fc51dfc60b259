//! Topic-guided abstractive summarization at desk scale.

pub mod error;
pub mod guidance;
pub mod checkpoint;
pub mod corpus;
pub mod decode;
pub mod lda;
pub mod metrics;
pub mod model;
pub mod numerics;
pub mod pipeline;

pub use error::{Error, Result};
