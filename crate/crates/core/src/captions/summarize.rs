use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::provider::{CaptionProvider, CompletionRequest, SamplingParams};
use super::store::CaptionStore;
use crate::{Error, Result};

/// Summary length cap, in whitespace-separated words.
pub const DEFAULT_SUMMARY_BUDGET: usize = 30;

pub fn summary_prompt(long_text: &str, budget: usize) -> String {
    format!(
        "Summarize the following description into a concise, comma-separated list of its \
         key visual features, using at most {budget} words.\n\n{long_text}"
    )
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Summary {
    pub text: String,
    /// Set when the model's answer had to be cut to fit.
    pub truncated: bool,
}

fn clean(response: &str) -> String {
    response
        .trim()
        .trim_matches(|c| c == '"' || c == '\u{201c}' || c == '\u{201d}')
        .trim()
        .to_string()
}

fn word_count(s: &str) -> usize {
    s.split_whitespace().count()
}

fn acceptable(summary: &str, long_text: &str, budget: usize) -> bool {
    !summary.is_empty()
        && word_count(summary) <= budget
        && summary.chars().count() < long_text.chars().count()
}

fn truncate_words(text: &str, long_text: &str, budget: usize) -> Option<String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let long_len = long_text.chars().count();
    (1..=budget.min(words.len())).rev().find_map(|n| {
        let cut = words[..n].join(" ");
        let cut = cut.trim_end_matches([',', ';', ':']).to_string();
        (!cut.is_empty() && cut.chars().count() < long_len).then_some(cut)
    })
}

/// Asks for a concise summary of a long description. An answer that is over
/// budget (or not shorter than the original) is re-requested once, then cut
/// at a word boundary and flagged.
pub fn summarize_caption<P: CaptionProvider + ?Sized>(
    provider: &P,
    long_text: &str,
    budget: usize,
    params: &SamplingParams,
) -> Result<Summary> {
    if long_text.trim().is_empty() {
        return Err(Error::invalid("cannot summarize an empty caption"));
    }
    if budget == 0 {
        return Err(Error::Config("summary budget must be positive".into()));
    }
    let prompt = summary_prompt(long_text, budget);
    let first = clean(&provider.complete(&CompletionRequest::new(prompt.clone(), *params, 0))?);
    if acceptable(&first, long_text, budget) {
        return Ok(Summary {
            text: first,
            truncated: false,
        });
    }
    let second = clean(&provider.complete(&CompletionRequest::new(prompt, *params, 1))?);
    if acceptable(&second, long_text, budget) {
        return Ok(Summary {
            text: second,
            truncated: false,
        });
    }
    let basis = if second.is_empty() { &first } else { &second };
    truncate_words(basis, long_text, budget)
        .map(|text| Summary {
            text,
            truncated: true,
        })
        .ok_or_else(|| Error::Provider(format!("no usable summary for {long_text:?}")))
}

/// Summarizes the listed captions in place. Returns the ids whose summary
/// was truncated.
pub fn summarize_store<P: CaptionProvider + ?Sized>(
    provider: &P,
    store: &mut CaptionStore,
    caption_ids: &BTreeSet<String>,
    budget: usize,
    params: &SamplingParams,
) -> Result<Vec<String>> {
    let work: Vec<(String, String)> = caption_ids
        .iter()
        .map(|id| {
            store
                .get(id)
                .map(|r| (id.clone(), r.long_text.clone()))
                .ok_or_else(|| Error::invalid(format!("unknown caption {id:?}")))
        })
        .collect::<Result<_>>()?;
    let summaries: Vec<Summary> = work
        .par_iter()
        .map(|(_, long)| summarize_caption(provider, long, budget, params))
        .collect::<Result<_>>()?;
    let mut truncated = Vec::new();
    for ((id, _), s) in work.into_iter().zip(summaries) {
        if s.truncated {
            log::warn!("summary for {id} truncated to {budget} words");
            truncated.push(id.clone());
        }
        store.set_short_text(&id, s.text)?;
    }
    Ok(truncated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::captions::provider::FixtureProvider;

    const LEVIDO: &str = "The image shows a person's back. The skin is mottled with a network of red \
        or purple discoloration. The discoloration appears in a reticular pattern with a lace-like \
        structure.";
    const B727: &str = "The Boeing 727-200 is a trijet, narrow-body airliner known for its distinctive \
        T-tail configuration. It has a relatively short and stout fuselage with three engines \
        mounted at the rear tail section. The aircraft's wings are swept-back and positioned low on \
        the fuselage. Its unmistakable appearance is further enhanced by the distinctive trijet \
        engine arrangement and the characteristic dorsal intake on top of the tail.";
    const B727_SHORT: &str = "trijet, narrow-body airliner, T-tail configuration, short and stout \
        fuselage, three rear-mounted engines, swept-back low wings, distinctive trijet engine \
        arrangement, dorsal intake on top of tail";

    fn fixture(long: &str, answers: &[&str]) -> FixtureProvider {
        let mut p = FixtureProvider::new("fx");
        p.insert(
            summary_prompt(long, DEFAULT_SUMMARY_BUDGET),
            answers.iter().map(|s| s.to_string()).collect(),
        );
        p
    }

    #[test]
    fn canned_summaries_pass_through() {
        let short = "mottled red or purple discoloration in reticular pattern";
        let p = fixture(LEVIDO, &[short]);
        let s = summarize_caption(&p, LEVIDO, DEFAULT_SUMMARY_BUDGET, &SamplingParams::default()).unwrap();
        assert_eq!(s.text, short);
        assert!(!s.truncated);

        let p = fixture(B727, &[B727_SHORT]);
        let s = summarize_caption(&p, B727, DEFAULT_SUMMARY_BUDGET, &SamplingParams::default()).unwrap();
        assert!(s.text.starts_with("trijet, narrow-body airliner, T-tail configuration, "));
        assert!(!s.truncated);
    }

    #[test]
    fn over_budget_retries_then_truncates() {
        let long = "word ".repeat(80);
        let verbose = "a b c d e f g h i j k l m n o p q r s t u v w x y z aa bb cc dd ee ff gg";
        let p = fixture(&long, &[verbose, "short enough"]);
        let s = summarize_caption(&p, &long, DEFAULT_SUMMARY_BUDGET, &SamplingParams::default()).unwrap();
        assert_eq!(s.text, "short enough");
        assert!(!s.truncated);

        let p = fixture(&long, &[verbose, verbose]);
        let s = summarize_caption(&p, &long, DEFAULT_SUMMARY_BUDGET, &SamplingParams::default()).unwrap();
        assert!(s.truncated);
        assert_eq!(s.text.split_whitespace().count(), DEFAULT_SUMMARY_BUDGET);
    }

    #[test]
    fn empty_input_rejected() {
        let p = FixtureProvider::new("fx");
        assert!(summarize_caption(&p, "  ", 30, &SamplingParams::default()).is_err());
    }
}
