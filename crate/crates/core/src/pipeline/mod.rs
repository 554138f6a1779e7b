//! End-to-end runs from a declarative config, with a content-addressed
//! artifact store and run manifests.

mod artifacts;
mod config;
mod evaluate;
mod run;

pub use artifacts::{file_hash, RunStore, StageRecord};
pub use config::{
    preset, CaptionSource, CaptionsConfig, EvalConfig, MatchConfig, PipelineConfig, Preset, TrainSection,
    CACHE_DIR_ENV,
};
pub use evaluate::{image_features, score_split, MethodScores, SplitFeatures};
pub use run::{open_provider, run_pipeline, RunManifest, RunOutcome, METHOD_FROZEN_LP, METHOD_GIST, METHOD_ZERO_SHOT};
