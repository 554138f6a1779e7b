//! Generating image-specific text for fine-grained classification.
//!
//! The pipeline runs in five stages:
//!
//! 1. [`captions`]: render domain-specific prompts and collect long class
//!    descriptions from a language model (remote or fixture-backed).
//! 2. [`matcher`]: embed training images and class descriptions, keep the
//!    `n` most similar descriptions that share the image's label.
//! 3. [`captions::summarize_caption`]: compress each matched description and
//!    append the class name.
//! 4. [`trainer`]: contrastively fine-tune the encoder pair on the resulting
//!    image/text pairs.
//! 5. [`classifier`] and [`eval`]: linear probe on the tuned image embeddings,
//!    top-k accuracy with bootstrap and k-shot aggregation.
//!
//! [`pipeline`] ties these together behind a declarative config with a
//! content-addressed artifact store.

pub mod captions;
pub mod classifier;
pub mod data;
pub mod embedding;
mod error;
pub mod eval;
pub mod hashing;
pub mod linalg;
pub mod matfile;
pub mod matcher;
pub mod pipeline;
pub mod synth;
pub mod trainer;

pub use error::{Error, Result};
