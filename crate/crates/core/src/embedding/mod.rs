//! Image and text encoders behind one interface, plus similarity helpers
//! and the on-disk embedding cache.

mod backend;
pub mod cache;
mod pretrained;
pub mod synthetic;
mod vector;

pub use backend::{
    encode_images, encode_texts, read_image, Backend, BackendDescriptor, BackendKind, Encoder,
    ProjectionHeads, MODEL_DIR_ENV,
};
pub use cache::{CacheKey, EmbeddingCache};
pub use pretrained::PrecomputedEncoder;
pub use vector::{cosine_similarity, l2_normalize, normalized_f64, EmbeddingVector, Source};
