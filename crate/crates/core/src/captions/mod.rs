//! Class description generation: prompt templates, language-model
//! providers, summarization, caption stores and the manual review pass.

mod generate;
mod provider;
mod review;
mod store;
mod summarize;
mod template;

pub use generate::{generate_class_captions, generate_store, CaptionBounds, GenerationOptions, SkipReport};
pub use provider::{
    CachedProvider, CaptionProvider, CompletionRequest, FixtureEntry, FixtureProvider, RemoteProvider,
    SamplingParams, API_KEY_ENV, ENDPOINT_ENV,
};
pub use review::{append_verdict, apply_verdicts, load_verdicts, review_captions, ReviewSummary, Verdict, VerdictEntry};
pub use store::{
    append_class_name, build_flyp_captions, caption_id, CaptionRecord, CaptionStore, Provenance, FLYP_TEMPLATE_ID,
};
pub use summarize::{summarize_caption, summarize_store, summary_prompt, Summary, DEFAULT_SUMMARY_BUDGET};
pub use template::{builtin, display_class_name, render_prompts, PromptTemplate, RenderedPrompt};
