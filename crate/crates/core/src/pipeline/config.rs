use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::captions::{builtin, CaptionBounds, PromptTemplate, SamplingParams, DEFAULT_SUMMARY_BUDGET};
use crate::classifier::{ProbeConfig, DEFAULT_TEMPLATES};
use crate::eval::StdKind;
use crate::matcher::{default_n_for, CaptionTextMode};
use crate::trainer::TrainConfig;
use crate::{Error, Result};

/// Where fine-tuning captions come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionSource {
    /// Language-model descriptions, matched per image.
    #[default]
    Generated,
    /// Class-name-only captions.
    Flyp,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptionsConfig {
    #[serde(default)]
    pub source: CaptionSource,
    /// Built-in prompt set; ignored when `template_file` is given.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_id: Option<String>,
    /// JSON-serialized prompt template.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub template_file: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_prompt: Option<usize>,
    #[serde(default = "default_m_min")]
    pub m_min: usize,
    #[serde(default = "default_m_max")]
    pub m_max: usize,
    /// `fixture:<path>` or `remote:<model>`.
    pub provider: String,
    /// Free-form note stored with the run (e.g. which model version).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provider_note: Option<String>,
    #[serde(default)]
    pub params: SamplingParams,
    #[serde(default = "default_summary_budget")]
    pub summary_budget: usize,
    #[serde(default = "default_concurrency")]
    pub concurrency: usize,
    /// Keep/discard verdicts from `gist captions review`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub review_sidecar: Option<PathBuf>,
}

fn default_m_min() -> usize {
    CaptionBounds::default().m_min
}

fn default_m_max() -> usize {
    CaptionBounds::default().m_max
}

fn default_summary_budget() -> usize {
    DEFAULT_SUMMARY_BUDGET
}

fn default_concurrency() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MatchConfig {
    /// Falls back to the dataset preset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<usize>,
    #[serde(default)]
    pub mode: CaptionTextMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    #[serde(flatten)]
    pub config: TrainConfig,
    /// Pick the epoch with the best validation linear-probe accuracy.
    #[serde(default = "yes")]
    pub select_on_validation: bool,
    /// Probe epochs used for checkpoint selection.
    #[serde(default = "default_selection_epochs")]
    pub selection_probe_epochs: usize,
    /// Fine-tuning epochs for k-shot settings; `epochs` applies to full data.
    #[serde(default = "default_kshot_epochs")]
    pub kshot_epochs: usize,
}

fn yes() -> bool {
    true
}

fn default_selection_epochs() -> usize {
    ProbeConfig::default().epochs
}

fn default_kshot_epochs() -> usize {
    50
}

impl Default for TrainSection {
    fn default() -> Self {
        TrainSection {
            config: TrainConfig::default(),
            select_on_validation: true,
            selection_probe_epochs: default_selection_epochs(),
            kshot_epochs: default_kshot_epochs(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub bootstrap: usize,
    pub seed: u64,
    /// k values to run in addition to the full training set.
    pub kshot: Vec<usize>,
    pub kshot_seeds: Vec<u64>,
    pub kshot_std: StdKind,
    pub full: bool,
    pub frozen_probe: bool,
    pub zero_shot: bool,
    pub zero_shot_templates: Vec<String>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            bootstrap: 1000,
            seed: 0,
            kshot: Vec::new(),
            kshot_seeds: crate::data::DEFAULT_KSHOT_SEEDS.to_vec(),
            kshot_std: StdKind::Sample,
            full: true,
            frozen_probe: true,
            zero_shot: true,
            zero_shot_templates: DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub experiment_id: String,
    /// Dataset manifest (JSON Lines).
    pub dataset: PathBuf,
    pub backend: String,
    /// Defaults to `runs/` next to the config file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub runs_dir: Option<PathBuf>,
    /// Embedding cache root; falls back to `$GIST_CACHE_DIR`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cache_dir: Option<PathBuf>,
    pub captions: CaptionsConfig,
    #[serde(rename = "match")]
    pub matching: MatchConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

pub const CACHE_DIR_ENV: &str = "GIST_CACHE_DIR";

/// Per-dataset defaults: prompt set, caption count and matched-caption
/// count.
#[derive(Debug, Clone, PartialEq)]
pub struct Preset {
    pub template_id: &'static str,
    pub per_prompt: usize,
    pub n: usize,
    pub provider_note: &'static str,
}

pub fn preset(dataset: &str) -> Option<Preset> {
    let (template_id, per_prompt, provider_note) = match dataset.to_ascii_lowercase().as_str() {
        "fitzpatrick40" => ("dermatology", 5, "gpt-3"),
        "cub200" | "cub200-2011" => ("bird", 15, "gpt-4"),
        "flowers102" => ("flower", 40, "gpt-3"),
        "fgvc-aircraft" | "fgvc_aircraft" | "aircraft" => ("airplane", 40, "gpt-3"),
        _ => return None,
    };
    Some(Preset {
        template_id,
        per_prompt,
        n: default_n_for(dataset)?,
        provider_note,
    })
}

impl PipelineConfig {
    pub fn parse(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config and makes its relative paths relative to the file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::parse(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.dataset);
        fix(self.runs_dir.get_or_insert_with(|| PathBuf::from("runs")));
        if let Some(p) = &mut self.cache_dir {
            fix(p);
        }
        if let Some(p) = &mut self.captions.template_file {
            fix(p);
        }
        if let Some(p) = &mut self.captions.review_sidecar {
            fix(p);
        }
        if let Some(rest) = self.captions.provider.strip_prefix("fixture:") {
            let mut p = PathBuf::from(rest);
            fix(&mut p);
            self.captions.provider = format!("fixture:{}", p.display());
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn runs_dir(&self) -> PathBuf {
        self.runs_dir.clone().unwrap_or_else(|| PathBuf::from("runs"))
    }

    pub fn cache_dir(&self) -> Option<PathBuf> {
        self.cache_dir
            .clone()
            .or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from))
    }

    pub fn bounds(&self) -> CaptionBounds {
        CaptionBounds {
            m_min: self.captions.m_min,
            m_max: self.captions.m_max,
        }
    }

    pub fn template(&self, dataset: &str) -> Result<PromptTemplate> {
        if let Some(path) = &self.captions.template_file {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let t: PromptTemplate =
                serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
            t.validate()?;
            return Ok(t);
        }
        let id = match &self.captions.template_id {
            Some(id) => id.clone(),
            None => preset(dataset)
                .map(|p| p.template_id.to_string())
                .ok_or_else(|| Error::Config(format!("no template given and no preset for dataset {dataset:?}")))?,
        };
        builtin::lookup(&id).ok_or_else(|| Error::Config(format!("unknown template id {id:?}")))
    }

    pub fn per_prompt(&self, dataset: &str) -> Result<usize> {
        self.captions
            .per_prompt
            .or_else(|| preset(dataset).map(|p| p.per_prompt))
            .ok_or_else(|| Error::Config("captions.per_prompt is required for this dataset".into()))
    }

    pub fn n(&self, dataset: &str) -> Result<usize> {
        self.matching
            .n
            .or_else(|| default_n_for(dataset))
            .ok_or_else(|| Error::Config("match.n is required for this dataset".into()))
    }

    /// Checks everything that can be checked without running a stage.
    pub fn validate(&self) -> Result<()> {
        if self.experiment_id.is_empty()
            || !self
                .experiment_id
                .chars()
                .all(|c| c.is_ascii_alphanumeric() || "-_.".contains(c))
        {
            return Err(Error::Config(format!(
                "experiment_id {:?} must be non-empty and use only letters, digits, '-', '_' or '.'",
                self.experiment_id
            )));
        }
        if !self.dataset.is_file() {
            return Err(Error::Config(format!("dataset manifest {} does not exist", self.dataset.display())));
        }
        if let Some(n) = self.matching.n {
            if !(1..=5).contains(&n) {
                return Err(Error::Config(format!("match.n = {n} must be between 1 and 5")));
            }
        }
        let c = &self.captions;
        if c.m_min == 0 || c.m_min > c.m_max {
            return Err(Error::Config(format!("caption bounds {}..{} are invalid", c.m_min, c.m_max)));
        }
        if c.per_prompt == Some(0) {
            return Err(Error::Config("captions.per_prompt must be at least 1".into()));
        }
        if c.summary_budget == 0 {
            return Err(Error::Config("captions.summary_budget must be at least 1".into()));
        }
        match c.provider.split_once(':') {
            Some(("fixture", p)) => {
                if !Path::new(p).is_file() {
                    return Err(Error::Config(format!("caption fixture {p} does not exist")));
                }
            }
            Some(("remote", m)) if !m.is_empty() => {}
            _ => {
                return Err(Error::Config(format!(
                    "captions.provider {:?} must be fixture:<path> or remote:<model>",
                    c.provider
                )))
            }
        }
        if let Some(p) = &c.template_file {
            if !p.is_file() {
                return Err(Error::Config(format!("template file {} does not exist", p.display())));
            }
        }
        if let Some(id) = &c.template_id {
            if c.template_file.is_none() && builtin::lookup(id).is_none() {
                return Err(Error::Config(format!("unknown template id {id:?}")));
            }
        }
        self.train.config.validate()?;
        if self.probe.batch_size == 0 || !(self.probe.learning_rate > 0.0) {
            return Err(Error::Config("probe batch_size and learning_rate must be positive".into()));
        }
        let e = &self.eval;
        if e.bootstrap == 0 {
            return Err(Error::Config("eval.bootstrap must be at least 1".into()));
        }
        if !e.kshot.is_empty() && e.kshot_seeds.is_empty() {
            return Err(Error::Config("eval.kshot_seeds is empty".into()));
        }
        if e.kshot.contains(&0) {
            return Err(Error::Config("k-shot sizes must be at least 1".into()));
        }
        if e.zero_shot && e.zero_shot_templates.is_empty() {
            return Err(Error::Config("eval.zero_shot_templates is empty".into()));
        }
        Ok(())
    }
}
