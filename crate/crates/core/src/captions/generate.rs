use std::collections::HashSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::provider::{CaptionProvider, CompletionRequest, SamplingParams};
use super::store::{caption_id, CaptionRecord, CaptionStore, Provenance};
use super::template::{render_prompts, PromptTemplate, RenderedPrompt};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CaptionBounds {
    pub m_min: usize,
    pub m_max: usize,
}

impl Default for CaptionBounds {
    fn default() -> Self {
        CaptionBounds { m_min: 20, m_max: 60 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationOptions {
    pub per_prompt: usize,
    #[serde(default)]
    pub params: SamplingParams,
    /// Upper bound on in-flight provider requests.
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkipReport {
    /// `(prompt, sample_index)` of every empty or whitespace-only response.
    pub empty: Vec<(String, u32)>,
    /// Responses identical to an earlier one for the same class.
    pub duplicates: usize,
    /// Captions dropped to respect the per-class maximum.
    pub over_budget: usize,
}

impl SkipReport {
    fn merge(&mut self, other: SkipReport) {
        self.empty.extend(other.empty);
        self.duplicates += other.duplicates;
        self.over_budget += other.over_budget;
    }
}

/// Requests `per_prompt` completions for each prompt. Records come back
/// interleaved by sample index (all prompts' first sample, then all second
/// samples, ...), so truncating the list keeps every axis value covered.
pub fn generate_class_captions<P: CaptionProvider + ?Sized>(
    provider: &P,
    class_name: &str,
    prompts: &[RenderedPrompt],
    per_prompt: usize,
    params: &SamplingParams,
) -> Result<(Vec<CaptionRecord>, SkipReport)> {
    let requests: Vec<(&RenderedPrompt, CompletionRequest)> = (0..per_prompt as u32)
        .flat_map(|i| {
            prompts
                .iter()
                .map(move |p| (p, CompletionRequest::new(p.text.clone(), *params, i)))
        })
        .collect();
    let responses: Vec<String> = requests
        .par_iter()
        .map(|(_, req)| provider.complete(req))
        .collect::<Result<_>>()?;

    let mut report = SkipReport::default();
    let mut seen = HashSet::new();
    let mut records = Vec::new();
    for ((prompt, req), response) in requests.iter().zip(responses) {
        let text = response.trim();
        if text.is_empty() {
            report.empty.push((req.prompt.clone(), req.sample_index));
            continue;
        }
        if !seen.insert(text.to_string()) {
            report.duplicates += 1;
            continue;
        }
        records.push(CaptionRecord {
            caption_id: caption_id(class_name, text),
            label: class_name.to_string(),
            long_text: text.to_string(),
            short_text: None,
            provenance: Provenance {
                template_id: prompt.template_id.clone(),
                axis_value: prompt.axis_value.clone(),
                model_id: provider.model_id().to_string(),
                request_hash: req.hash(provider.model_id()),
            },
        });
    }
    Ok((records, report))
}

/// Generates descriptions for every class and enforces `bounds` on the
/// per-class count: extra captions are dropped, too few is an error.
pub fn generate_store<P: CaptionProvider + ?Sized>(
    provider: &P,
    dataset_name: &str,
    classes: &[String],
    template: &PromptTemplate,
    options: &GenerationOptions,
    bounds: CaptionBounds,
) -> Result<(CaptionStore, SkipReport)> {
    if bounds.m_min == 0 || bounds.m_min > bounds.m_max {
        return Err(Error::Config(format!("bad caption bounds {bounds:?}")));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.concurrency.max(1))
        .build()
        .map_err(|e| Error::Provider(e.to_string()))?;
    let mut report = SkipReport::default();
    let mut all = Vec::new();
    for class in classes {
        let prompts = render_prompts(template, class)?;
        let (mut records, r) = pool.install(|| {
            generate_class_captions(provider, class, &prompts, options.per_prompt, &options.params)
        })?;
        report.merge(r);
        if records.len() > bounds.m_max {
            report.over_budget += records.len() - bounds.m_max;
            records.truncate(bounds.m_max);
        }
        if records.len() < bounds.m_min {
            return Err(Error::Provider(format!(
                "class {class:?} yielded {} captions, at least {} required",
                records.len(),
                bounds.m_min
            )));
        }
        all.extend(records);
    }
    let store = CaptionStore::new(dataset_name, bounds.m_max, all)?;
    Ok((store, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::provider::FixtureProvider;

    fn nine_prompt_template() -> PromptTemplate {
        PromptTemplate {
            template_id: "derm9".into(),
            body: "Describe {class} on the {axis}.".into(),
            axis_name: Some("body part".into()),
            axis_values: Some(
                ["face", "neck", "arms", "torso", "legs", "scalp", "hands", "feet", "mouth"]
                    .map(String::from)
                    .to_vec(),
            ),
        }
    }

    fn fixture_for(template: &PromptTemplate, class: &str, per_prompt: usize) -> FixtureProvider {
        let mut p = FixtureProvider::new("fx");
        for prompt in render_prompts(template, class).unwrap() {
            let axis = prompt.axis_value.clone().unwrap_or_default();
            p.insert(
                prompt.text,
                (0..per_prompt).map(|i| format!("{class} on {axis}, variant {i}")).collect(),
            );
        }
        p
    }

    #[test]
    fn nine_prompts_five_each() {
        let t = nine_prompt_template();
        let p = fixture_for(&t, "livedo reticularis", 5);
        let prompts = render_prompts(&t, "livedo reticularis").unwrap();
        let (records, report) =
            generate_class_captions(&p, "livedo reticularis", &prompts, 5, &SamplingParams::default()).unwrap();
        assert_eq!(records.len(), 45);
        assert!(report.empty.is_empty());
        for r in &records {
            assert_eq!(r.provenance.template_id, "derm9");
            assert!(t.has_axis_value(r.provenance.axis_value.as_deref().unwrap()));
            assert_eq!(r.provenance.model_id, "fx");
        }
        // interleaved: first nine records are sample 0 of each prompt
        assert!(records[..9].iter().all(|r| r.long_text.ends_with("variant 0")));
    }

    #[test]
    fn empty_response_is_skipped() {
        let t = nine_prompt_template();
        let prompts = render_prompts(&t, "x").unwrap();
        let mut p2 = FixtureProvider::new("fx");
        for (i, pr) in prompts.iter().enumerate() {
            let text = if i == 2 { "   ".to_string() } else { format!("text {i}") };
            p2.insert(pr.text.clone(), vec![text]);
        }
        let (records, report) =
            generate_class_captions(&p2, "x", &prompts, 1, &SamplingParams::default()).unwrap();
        assert_eq!(records.len(), 8);
        assert_eq!(report.empty, vec![(prompts[2].text.clone(), 0)]);
    }

    #[test]
    fn exact_duplicates_collapse() {
        let t = nine_prompt_template();
        let prompts = render_prompts(&t, "x").unwrap();
        let mut p = FixtureProvider::new("fx");
        for pr in &prompts {
            p.insert(pr.text.clone(), vec!["same".into()]);
        }
        let (records, report) = generate_class_captions(&p, "x", &prompts, 1, &SamplingParams::default()).unwrap();
        assert_eq!(records.len(), 1);
        assert_eq!(report.duplicates, 8);
    }

    #[test]
    fn store_respects_bounds() {
        let t = nine_prompt_template();
        let classes = vec!["a".to_string(), "b".to_string()];
        let mut p = FixtureProvider::new("fx");
        for c in &classes {
            for pr in render_prompts(&t, c).unwrap() {
                let axis = pr.axis_value.clone().unwrap();
                p.insert(pr.text, (0..8).map(|i| format!("{c} {axis} {i}")).collect());
            }
        }
        let opts = GenerationOptions {
            per_prompt: 8,
            params: SamplingParams::default(),
            concurrency: 3,
        };
        let (store, report) = generate_store(&p, "d", &classes, &t, &opts, CaptionBounds::default()).unwrap();
        for c in &classes {
            let n = store.count_for(c);
            assert!((20..=60).contains(&n), "{n}");
        }
        assert_eq!(report.over_budget, 2 * (72 - 60));
        let too_strict = CaptionBounds { m_min: 100, m_max: 200 };
        assert!(generate_store(&p, "d", &classes, &t, &opts, too_strict).is_err());
    }

    #[test]
    fn provider_failure_propagates() {
        let t = nine_prompt_template();
        let prompts = render_prompts(&t, "x").unwrap();
        let p = FixtureProvider::new("empty");
        assert!(generate_class_captions(&p, "x", &prompts, 1, &SamplingParams::default()).is_err());
    }
}
