//! Dataset manifests: loading, k-shot subsampling, near-duplicate handling.

mod dedup;
mod kshot;
mod manifest;

pub use dedup::{find_near_duplicates, resolve_split_leakage, DuplicatePair, DEFAULT_DUPLICATE_THRESHOLD};
pub use kshot::{sample_kshot, KShotSpec, DEFAULT_KSHOT_SEEDS};
pub use manifest::{load_manifest, DatasetManifest, ImageRecord, Split};
