//! Toy fine-grained dataset for the concept encoder, with canned language
//! model responses, so the whole pipeline runs offline.
//!
//! Each class owns a few attribute words. An image depicts some of its
//! class's attributes plus a setting word, and carries a large nuisance
//! component. Generated descriptions mention attributes, the setting and
//! filler words; summaries keep only attributes and setting.

use std::collections::{BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::captions::{
    display_class_name, render_prompts, summary_prompt, FixtureEntry, PromptTemplate, DEFAULT_SUMMARY_BUDGET,
};
use crate::data::{DatasetManifest, ImageRecord, Split};
use crate::embedding::synthetic::{tokenize, SyntheticImage};
use crate::hashing::substream;
use crate::pipeline::{CaptionSource, CaptionsConfig, EvalConfig, MatchConfig, PipelineConfig, TrainSection};
use crate::trainer::{OptimizerKind, TrainConfig};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ToyConfig {
    pub classes: usize,
    pub images_per_class: usize,
    pub train_per_class: usize,
    pub val_per_class: usize,
    pub attributes_per_class: usize,
    pub attributes_per_image: usize,
    /// Scale of the per-image nuisance component.
    pub nuisance: f64,
    pub settings: Vec<String>,
    pub per_prompt: usize,
    pub dim: usize,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            classes: 10,
            images_per_class: 20,
            train_per_class: 10,
            val_per_class: 2,
            attributes_per_class: 4,
            attributes_per_image: 2,
            nuisance: 0.3,
            settings: ["shore", "forest", "meadow", "marsh", "cliff", "garden"]
                .map(String::from)
                .to_vec(),
            per_prompt: 4,
            dim: 64,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ToyDataset {
    pub root: PathBuf,
    pub manifest: PathBuf,
    pub fixtures: PathBuf,
    pub template: PathBuf,
    pub config: PathBuf,
    pub classes: Vec<String>,
}

const FILLER: &[&str] = &[
    "often", "seen", "usually", "small", "patch", "edge", "near", "soft", "light", "visible",
    "typically", "area", "around", "mostly", "sometimes", "faint", "clear", "shape", "side", "top",
];

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        const C: &[u8] = b"bdfgklmnprstvz";
        const V: &[u8] = b"aeiou";
        loop {
            let syllables = rng.gen_range(2..=3);
            let w: String = (0..syllables)
                .flat_map(|_| [C[rng.gen_range(0..C.len())] as char, V[rng.gen_range(0..V.len())] as char])
                .collect();
            if tokenize(&w) == [w.clone()] && self.used.insert(w.clone()) {
                return w;
            }
        }
    }
}

pub fn toy_template(settings: &[String]) -> PromptTemplate {
    PromptTemplate {
        template_id: "toy".into(),
        body: "Describe what a {class} looks like when photographed at the {axis}.".into(),
        axis_name: Some("setting".into()),
        axis_values: Some(settings.to_vec()),
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, from: &'a [String], k: usize) -> Vec<&'a String> {
    let mut v: Vec<&String> = from.choose_multiple(rng, k.min(from.len())).collect();
    v.sort();
    v
}

/// Writes images, manifest, prompt template, caption fixtures and a
/// pipeline config (`gist.toml`) under `dir`.
pub fn write_toy_dataset(dir: &Path, cfg: &ToyConfig) -> Result<ToyDataset> {
    if cfg.train_per_class + cfg.val_per_class >= cfg.images_per_class {
        return Err(Error::Config("toy split leaves no test images".into()));
    }
    if cfg.attributes_per_image == 0 || cfg.attributes_per_image > cfg.attributes_per_class {
        return Err(Error::Config("attributes_per_image must be in 1..=attributes_per_class".into()));
    }
    if cfg.settings.is_empty() || cfg.classes == 0 {
        return Err(Error::Config("toy dataset needs classes and settings".into()));
    }
    let img_dir = dir.join("images");
    std::fs::create_dir_all(&img_dir).map_err(|e| Error::io(&img_dir, e))?;
    let mut rng = substream(cfg.seed, &[0]);
    let mut words = Words {
        used: FILLER.iter().chain(["toy"].iter()).map(|s| s.to_string()).collect(),
    };
    words.used.extend(cfg.settings.iter().cloned());

    let mut classes = Vec::new();
    let mut attributes = Vec::new();
    for _ in 0..cfg.classes {
        classes.push(format!("{}_{}", words.fresh(&mut rng), words.fresh(&mut rng)));
        attributes.push((0..cfg.attributes_per_class).map(|_| words.fresh(&mut rng)).collect::<Vec<_>>());
    }

    let mut records = Vec::new();
    let mut instance = cfg.seed.wrapping_mul(1_000_003);
    for (ci, class) in classes.iter().enumerate() {
        for j in 0..cfg.images_per_class {
            let mut concepts: Vec<String> = pick(&mut rng, &attributes[ci], cfg.attributes_per_image)
                .into_iter()
                .cloned()
                .collect();
            concepts.push(cfg.settings.choose(&mut rng).unwrap().clone());
            instance += 1;
            let img = SyntheticImage {
                concepts,
                nuisance: cfg.nuisance,
                instance,
            };
            let id = format!("{class}-{j:03}");
            let path = img_dir.join(format!("{id}.syn"));
            std::fs::write(&path, img.to_bytes()).map_err(|e| Error::io(&path, e))?;
            let split = if j < cfg.train_per_class {
                Split::Train
            } else if j < cfg.train_per_class + cfg.val_per_class {
                Split::Val
            } else {
                Split::Test
            };
            records.push(ImageRecord {
                image_id: id.clone(),
                path: PathBuf::from("images").join(format!("{id}.syn")),
                label: class.clone(),
                split,
            });
        }
    }
    let manifest = DatasetManifest::new("toy", classes.clone(), records)?;
    let manifest_path = dir.join("manifest.jsonl");
    manifest.write(&manifest_path)?;

    let template = toy_template(&cfg.settings);
    let template_path = dir.join("template.json");
    std::fs::write(&template_path, serde_json::to_string_pretty(&template)?)
        .map_err(|e| Error::io(&template_path, e))?;

    let mut fixtures = Vec::new();
    for (ci, class) in classes.iter().enumerate() {
        let shown = display_class_name(class);
        let mut seen = BTreeSet::new();
        for prompt in render_prompts(&template, class)? {
            let setting = prompt.axis_value.clone().unwrap_or_default();
            let mut completions = Vec::new();
            while completions.len() < cfg.per_prompt {
                let attrs = pick(&mut rng, &attributes[ci], cfg.attributes_per_image);
                let fill: Vec<&&str> = FILLER.choose_multiple(&mut rng, 3).collect();
                let attr_text = attrs.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(" and ");
                let long = format!(
                    "A {shown} photographed at the {setting} shows {attr_text} markings, {} {} along the {}.",
                    fill[0], fill[1], fill[2]
                );
                if !seen.insert(long.clone()) {
                    continue;
                }
                let short = format!(
                    "{}, {setting}",
                    attrs.iter().map(|s| s.as_str()).collect::<Vec<_>>().join(", ")
                );
                fixtures.push(FixtureEntry {
                    prompt: summary_prompt(&long, DEFAULT_SUMMARY_BUDGET),
                    completions: vec![short],
                });
                completions.push(long);
            }
            fixtures.push(FixtureEntry {
                prompt: prompt.text,
                completions,
            });
        }
    }
    let fixtures_path = dir.join("fixtures.jsonl");
    let mut text = String::new();
    for f in &fixtures {
        text.push_str(&serde_json::to_string(f)?);
        text.push('\n');
    }
    std::fs::write(&fixtures_path, text).map_err(|e| Error::io(&fixtures_path, e))?;

    let config = toy_pipeline_config(cfg);
    let config_path = dir.join("gist.toml");
    std::fs::write(&config_path, config.to_toml()).map_err(|e| Error::io(&config_path, e))?;
    Ok(ToyDataset {
        root: dir.to_path_buf(),
        manifest: manifest_path,
        fixtures: fixtures_path,
        template: template_path,
        config: config_path,
        classes,
    })
}

/// Pipeline settings for the toy dataset, with paths relative to its
/// directory.
pub fn toy_pipeline_config(cfg: &ToyConfig) -> PipelineConfig {
    PipelineConfig {
        experiment_id: format!("toy-{}", cfg.seed),
        dataset: "manifest.jsonl".into(),
        backend: format!("synthetic-concept-{}", cfg.dim),
        runs_dir: None,
        cache_dir: None,
        captions: CaptionsConfig {
            source: CaptionSource::Generated,
            template_id: None,
            template_file: Some("template.json".into()),
            per_prompt: Some(cfg.per_prompt),
            m_min: 20,
            m_max: 60,
            provider: "fixture:fixtures.jsonl".into(),
            provider_note: Some("canned toy responses".into()),
            params: Default::default(),
            summary_budget: DEFAULT_SUMMARY_BUDGET,
            concurrency: 4,
            review_sidecar: None,
        },
        matching: MatchConfig {
            n: Some(3),
            mode: Default::default(),
        },
        train: TrainSection {
            config: TrainConfig {
                batch_size: 32,
                epochs: 30,
                learning_rate: 5e-3,
                weight_decay: 0.0,
                optimizer: OptimizerKind::Adamw,
                logit_scale_init: Some(10.0),
                seed: cfg.seed,
                ..Default::default()
            },
            select_on_validation: true,
            selection_probe_epochs: 200,
            kshot_epochs: 30,
        },
        probe: Default::default(),
        eval: EvalConfig::default(),
    }
}
