use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use gist_core::captions::{
    builtin, generate_store, review_captions, summarize_store, CaptionBounds, CaptionStore, GenerationOptions,
    PromptTemplate, SamplingParams, DEFAULT_SUMMARY_BUDGET,
};
use gist_core::classifier::{
    build_zeroshot_head, train_linear_probe, LinearProbe, ProbeConfig, Scorer, ZeroShotHead,
    DEFAULT_TEMPLATES,
};
use gist_core::data::{
    find_near_duplicates, load_manifest, resolve_split_leakage, sample_kshot, DatasetManifest, ImageRecord, KShotSpec,
    Split, DEFAULT_DUPLICATE_THRESHOLD,
};
use gist_core::embedding::{encode_images, encode_texts, Backend, ProjectionHeads};
use gist_core::eval::{
    aggregate_kshot, bootstrap_accuracy, format_cell, topk_accuracy, BootstrapConfig, StdKind,
};
use gist_core::eval::{render_report, ReportFormat};
use gist_core::matcher::{assemble_pairs, match_training_images, CaptionTextMode, MatchAssignment};
use gist_core::pipeline::{image_features, open_provider, run_pipeline, PipelineConfig, CACHE_DIR_ENV};
use gist_core::synth::{write_toy_dataset, ToyConfig};
use gist_core::trainer::{finetune, LogitScale, TrainConfig, TrainStatus, PRETRAINED_LOGIT_SCALE};
use gist_core::Error;

#[derive(Parser)]
#[command(name = "gist", version, about = "Image-specific text generation and contrastive fine-tuning for fine-grained classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Dataset manifests: validation, k-shot sampling, near-duplicate removal.
    #[command(subcommand)]
    Data(DataCmd),
    /// Class descriptions: generation, summarization, manual review.
    #[command(subcommand)]
    Captions(CaptionsCmd),
    /// Write embeddings as JSON Lines.
    #[command(subcommand)]
    Embed(EmbedCmd),
    /// Keep the n most similar same-class captions for each training image.
    Match(MatchArgs),
    /// Contrastively fine-tune projection heads on matched pairs.
    Finetune(FinetuneArgs),
    /// Linear probe on image embeddings: train, predict.
    #[command(subcommand)]
    Probe(ProbeCmd),
    /// Template-averaged zero-shot head: build, predict.
    #[command(subcommand)]
    Zeroshot(ZeroshotCmd),
    /// Top-k accuracy with bootstrap statistics, or k-shot aggregation.
    Eval(EvalArgs),
    /// Run the whole pipeline from a config file.
    Run(RunArgs),
    /// Write a toy dataset with canned captions and a ready-to-run config.
    Synth(SynthArgs),
}

#[derive(Args)]
struct BackendOpts {
    /// Model id, e.g. `synthetic-concept-64` or an exported model directory name.
    #[arg(long)]
    backend: String,
    /// Projection heads stem written by `finetune`.
    #[arg(long)]
    heads: Option<PathBuf>,
    /// Embedding cache root (default: $GIST_CACHE_DIR).
    #[arg(long)]
    cache: Option<PathBuf>,
}

impl BackendOpts {
    fn open(&self) -> anyhow::Result<Backend> {
        let mut b = Backend::open(&self.backend)?;
        if let Some(dir) = self.cache.clone().or_else(|| std::env::var_os(CACHE_DIR_ENV).map(PathBuf::from)) {
            b = b.with_cache(&dir)?;
        }
        if let Some(stem) = &self.heads {
            let (heads, base) = ProjectionHeads::load(stem)?;
            if base != b.base_model_id() {
                bail!("heads were trained on {base:?}, not {:?}", b.base_model_id());
            }
            b = b.with_heads(heads)?;
        }
        Ok(b)
    }
}

#[derive(Subcommand)]
enum DataCmd {
    /// Parse a manifest and print split and class counts.
    Validate {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Keep k training images per class.
    Kshot {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Keep all images of classes with fewer than k.
        #[arg(long)]
        clamp: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Find near-duplicate images and move test-spanning pairs to train.
    Dedup {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long, default_value_t = DEFAULT_DUPLICATE_THRESHOLD)]
        threshold: f64,
        /// Resolved manifest.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Duplicate pairs as JSON Lines.
        #[arg(long)]
        pairs: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum CaptionsCmd {
    Generate {
        #[arg(long)]
        manifest: PathBuf,
        /// Built-in prompt set: dermatology, bird, flower, airplane.
        #[arg(long, conflicts_with = "template_file")]
        template: Option<String>,
        #[arg(long)]
        template_file: Option<PathBuf>,
        #[arg(long)]
        per_prompt: usize,
        /// `fixture:<path>` or `remote:<model>`.
        #[arg(long)]
        provider: String,
        #[arg(long, default_value_t = 20)]
        m_min: usize,
        #[arg(long, default_value_t = 60)]
        m_max: usize,
        #[arg(long, default_value_t = 0.7)]
        temperature: f64,
        #[arg(long, default_value_t = 4)]
        concurrency: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Summarize captions (all, or only those listed in a matches file).
    Summarize {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        provider: String,
        #[arg(long)]
        matches: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_SUMMARY_BUDGET)]
        budget: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Interactive keep/discard pass; verdicts go to a resumable sidecar.
    Review {
        #[arg(long)]
        captions: PathBuf,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum EmbedCmd {
    Images {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long, value_enum)]
        split: Option<SplitArg>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One text per input line.
    Texts {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Split {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Args)]
struct MatchArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long)]
    captions: PathBuf,
    #[command(flatten)]
    backend: BackendOpts,
    #[arg(long)]
    n: usize,
    /// Review sidecar whose discards are excluded.
    #[arg(long)]
    sidecar: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct FinetuneArgs {
    /// TOML with `dataset`, `captions`, `matches`, `backend`, `out` and a `[train]` table.
    #[arg(long)]
    config: PathBuf,
    /// `fixed:<v>` or `learnable:<v>`; overrides the config.
    #[arg(long)]
    logit_scale: Option<LogitScale>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FinetuneFile {
    dataset: PathBuf,
    captions: PathBuf,
    matches: PathBuf,
    backend: String,
    out: PathBuf,
    #[serde(default)]
    mode: CaptionTextMode,
    #[serde(default)]
    train: TrainConfig,
}

#[derive(Subcommand)]
enum ProbeCmd {
    /// Train a linear probe on training-split embeddings.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long, default_value_t = 500)]
        epochs: usize,
        #[arg(long, default_value_t = 0.05)]
        lr: f64,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write per-image class scores as JSON Lines.
    Predict {
        #[arg(long)]
        probe: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Subcommand)]
enum ZeroshotCmd {
    Build {
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        /// Repeatable; must contain `{class}`.
        #[arg(long = "template")]
        templates: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    Predict {
        #[arg(long)]
        head: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[command(flatten)]
        backend: BackendOpts,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
#[command(args_conflicts_with_subcommands = true)]
struct EvalArgs {
    #[command(subcommand)]
    kshot: Option<EvalCmd>,
    /// Scores written by `probe predict` or `zeroshot predict`.
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long, default_value_t = 1000)]
    bootstrap: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Subcommand)]
enum EvalCmd {
    /// Mean and std over per-seed accuracies (percent).
    Kshot {
        #[arg(long, value_delimiter = ',', default_values_t = [0u64, 1, 2])]
        seeds: Vec<u64>,
        /// One accuracy per seed, in seed order.
        #[arg(long, value_delimiter = ',')]
        accuracies: Vec<f64>,
        #[arg(long)]
        population: bool,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long, default_value = "table-text")]
    format: ReportFormat,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    nuisance: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct ScoreLine {
    image_id: String,
    label: String,
    /// Position of `label` in the class order the scores follow.
    label_index: usize,
    scores: Vec<f64>,
}

#[derive(Serialize)]
struct EmbeddingLine<'a> {
    id: &'a str,
    values: &'a [f32],
}

fn absolute(p: &Path) -> anyhow::Result<PathBuf> {
    p.canonicalize().with_context(|| format!("{}", p.display()))
}

fn manifest_at(p: &Path) -> anyhow::Result<DatasetManifest> {
    Ok(load_manifest(&absolute(p)?)?)
}

fn write_lines<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> anyhow::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(path).with_context(|| path.display().to_string())?);
    for item in items {
        serde_json::to_writer(&mut out, &item)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn read_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let f = fs::File::open(path).with_context(|| path.display().to_string())?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| Ok(serde_json::from_str(&l?).with_context(|| format!("{}:{}", path.display(), i + 1))?))
        .collect()
}

fn load_captions(path: &Path) -> anyhow::Result<CaptionStore> {
    let name = path.file_stem().and_then(|s| s.to_str()).unwrap_or("captions");
    Ok(CaptionStore::load(path, name)?)
}

fn write_scores(
    path: &Path,
    scorer: &dyn Scorer,
    manifest: &DatasetManifest,
    backend: &Backend,
    split: Split,
) -> anyhow::Result<()> {
    if scorer.class_order() != manifest.classes() {
        bail!("head classes differ from the manifest's classes");
    }
    let records: Vec<ImageRecord> = manifest.split(split).cloned().collect();
    let f = image_features(backend, manifest, &records)?;
    let lines = records
        .iter()
        .zip(&f.features)
        .map(|(r, x)| {
            Ok(ScoreLine {
                image_id: r.image_id.clone(),
                label: r.label.clone(),
                label_index: manifest.class_index(&r.label).expect("manifest label"),
                scores: scorer.scores(x)?,
            })
        })
        .collect::<anyhow::Result<Vec<_>>>()?;
    write_lines(path, lines)
}

fn data(cmd: DataCmd) -> anyhow::Result<()> {
    match cmd {
        DataCmd::Validate { manifest } => {
            let m = manifest_at(&manifest)?;
            println!(
                "{}: {} classes, train {}, val {}, test {}",
                m.name(),
                m.classes().len(),
                m.count(Split::Train),
                m.count(Split::Val),
                m.count(Split::Test)
            );
        }
        DataCmd::Kshot { manifest, k, seed, clamp, out } => {
            let m = manifest_at(&manifest)?;
            let sub = sample_kshot(&m, &KShotSpec { k, seed, clamp })?;
            sub.write(&out)?;
            println!("kept {} training images", sub.count(Split::Train));
        }
        DataCmd::Dedup { manifest, backend, threshold, out, pairs } => {
            let m = manifest_at(&manifest)?;
            let b = backend.open()?;
            let embs = encode_images(&b, m.records())?;
            let map: BTreeMap<String, _> = m.records().iter().map(|r| r.image_id.clone()).zip(embs).collect();
            let dups = find_near_duplicates(&map, threshold)?;
            println!("{} near-duplicate pairs at threshold {threshold}", dups.len());
            if let Some(p) = pairs {
                write_lines(&p, &dups)?;
            }
            if let Some(o) = out {
                let fixed = resolve_split_leakage(&m, &dups)?;
                fixed.write(&o)?;
                println!(
                    "test {} -> {}, train {} -> {}",
                    m.count(Split::Test),
                    fixed.count(Split::Test),
                    m.count(Split::Train),
                    fixed.count(Split::Train)
                );
            }
        }
    }
    Ok(())
}

fn captions(cmd: CaptionsCmd) -> anyhow::Result<()> {
    match cmd {
        CaptionsCmd::Generate {
            manifest,
            template,
            template_file,
            per_prompt,
            provider,
            m_min,
            m_max,
            temperature,
            concurrency,
            out,
        } => {
            let m = manifest_at(&manifest)?;
            let tpl: PromptTemplate = match (template, template_file) {
                (_, Some(f)) => serde_json::from_str(&fs::read_to_string(&f).with_context(|| f.display().to_string())?)?,
                (Some(id), None) => builtin::lookup(&id).ok_or_else(|| Error::Config(format!("unknown template {id:?}")))?,
                (None, None) => bail!(Error::Config("--template or --template-file is required".into())),
            };
            let p = open_provider(&provider, &llm_cache())?;
            let options = GenerationOptions {
                per_prompt,
                params: SamplingParams {
                    temperature,
                    ..Default::default()
                },
                concurrency,
            };
            let (store, skips) = generate_store(&*p, m.name(), m.classes(), &tpl, &options, CaptionBounds { m_min, m_max })?;
            store.write(&out)?;
            println!(
                "{} captions; skipped {} empty, {} duplicate, {} over budget",
                store.records().len(),
                skips.empty.len(),
                skips.duplicates,
                skips.over_budget
            );
        }
        CaptionsCmd::Summarize { captions, provider, matches, budget, out } => {
            let mut store = load_captions(&captions)?;
            let ids: BTreeSet<String> = match matches {
                Some(p) => read_lines::<MatchAssignment>(&p)?
                    .iter()
                    .flat_map(|m| m.caption_ids().map(str::to_string).collect::<Vec<_>>())
                    .collect(),
                None => store.records().iter().map(|r| r.caption_id.clone()).collect(),
            };
            let p = open_provider(&provider, &llm_cache())?;
            let truncated = summarize_store(&*p, &mut store, &ids, budget, &SamplingParams::default())?;
            store.write(&out)?;
            println!("summarized {} captions, {} truncated", ids.len(), truncated.len());
        }
        CaptionsCmd::Review { captions, sidecar } => {
            let store = load_captions(&captions)?;
            let sidecar = sidecar.unwrap_or_else(|| captions.with_extension("verdicts.jsonl"));
            let stdin = io::stdin();
            let s = review_captions(&store, &sidecar, stdin.lock(), io::stdout())?;
            println!("\nkept {}, discarded {}, {} left to review", s.kept, s.discarded, s.remaining);
        }
    }
    Ok(())
}

fn llm_cache() -> PathBuf {
    std::env::var_os(CACHE_DIR_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(".gist-cache"))
        .join("llm")
}

fn embed(cmd: EmbedCmd) -> anyhow::Result<()> {
    match cmd {
        EmbedCmd::Images { manifest, backend, split, out } => {
            let m = manifest_at(&manifest)?;
            let b = backend.open()?;
            let records: Vec<ImageRecord> = match split {
                Some(s) => m.split(s.into()).cloned().collect(),
                None => m.records().to_vec(),
            };
            let embs = encode_images(&b, &records)?;
            write_lines(
                &out,
                records.iter().zip(&embs).map(|(r, e)| EmbeddingLine {
                    id: &r.image_id,
                    values: &e.values,
                }),
            )?;
            println!("{} image embeddings, d = {}", embs.len(), b.descriptor().d);
        }
        EmbedCmd::Texts { input, backend, out } => {
            let text = fs::read_to_string(&input).with_context(|| input.display().to_string())?;
            let lines: Vec<&str> = text.lines().filter(|l| !l.trim().is_empty()).collect();
            let b = backend.open()?;
            let embs = encode_texts(&b, &lines)?;
            write_lines(
                &out,
                lines.iter().zip(&embs).map(|(t, e)| EmbeddingLine { id: t, values: &e.values }),
            )?;
            println!("{} text embeddings", embs.len());
        }
    }
    Ok(())
}

fn run_match(a: MatchArgs) -> anyhow::Result<()> {
    if !(1..=5).contains(&a.n) {
        bail!(Error::Config(format!("--n {} must be between 1 and 5", a.n)));
    }
    let m = manifest_at(&a.manifest)?;
    let mut store = load_captions(&a.captions)?;
    if let Some(p) = &a.sidecar {
        store = gist_core::captions::apply_verdicts(&store, &gist_core::captions::load_verdicts(p)?);
    }
    let b = a.backend.open()?;
    let matches = match_training_images(&m, &store, &b, a.n)?;
    write_lines(&a.out, &matches)?;
    println!("matched {} images", matches.len());
    Ok(())
}

fn run_finetune(a: FinetuneArgs) -> anyhow::Result<()> {
    let text = fs::read_to_string(&a.config).with_context(|| a.config.display().to_string())?;
    let mut cfg: FinetuneFile = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    let base = absolute(&a.config)?.parent().unwrap().to_path_buf();
    for p in [&mut cfg.dataset, &mut cfg.captions, &mut cfg.matches, &mut cfg.out] {
        if p.is_relative() {
            *p = base.join(&*p);
        }
    }
    if let Some(s) = a.logit_scale {
        cfg.train.set_logit_scale(s);
    }
    let m = load_manifest(&cfg.dataset)?;
    let store = load_captions(&cfg.captions)?;
    let matches: Vec<MatchAssignment> = read_lines(&cfg.matches)?;
    let pairs = assemble_pairs(&m, &store, &matches, cfg.mode)?;
    let backend = Backend::open(&cfg.backend)?
        .trainable(cfg.train.logit_scale_init.unwrap_or(PRETRAINED_LOGIT_SCALE))?;
    let outcome = finetune(&backend, &pairs, &cfg.train, None)?;
    outcome.heads.save(&cfg.out, backend.base_model_id())?;
    let log_path = cfg.out.with_extension("log.json");
    fs::write(&log_path, serde_json::to_string_pretty(&outcome.steps)?)?;
    if let (Some(first), Some(last)) = (outcome.steps.first(), outcome.steps.last()) {
        println!(
            "{} steps, loss {:.4} -> {:.4}, logit scale {:.3}",
            outcome.steps.len(),
            first.loss_mean,
            last.loss_mean,
            outcome.heads.logit_scale
        );
    }
    if let TrainStatus::Diverged { step } = outcome.status {
        bail!(Error::Diverged { step });
    }
    Ok(())
}

fn probe(cmd: ProbeCmd) -> anyhow::Result<()> {
    match cmd {
        ProbeCmd::Train { manifest, backend, epochs, lr, batch_size, seed, out } => {
            let m = manifest_at(&manifest)?;
            let b = backend.open()?;
            let train: Vec<ImageRecord> = m.split(Split::Train).cloned().collect();
            let f = image_features(&b, &m, &train)?;
            let cfg = ProbeConfig {
                epochs,
                learning_rate: lr,
                batch_size,
                seed,
                ..Default::default()
            };
            let trained = train_linear_probe(&f.features, &f.labels, m.classes(), &cfg)?;
            let mut p = trained.probe;
            p.trained_on = Some(b.descriptor().model_id);
            p.save(&out)?;
            println!(
                "trained on {} images, final loss {:.4}",
                train.len(),
                trained.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        ProbeCmd::Predict { probe, manifest, backend, split, out } => {
            let p = LinearProbe::load(&probe)?;
            write_scores(&out, &p, &manifest_at(&manifest)?, &backend.open()?, split.into())?;
        }
    }
    Ok(())
}

fn zeroshot(cmd: ZeroshotCmd) -> anyhow::Result<()> {
    match cmd {
        ZeroshotCmd::Build { manifest, backend, templates, out } => {
            let m = manifest_at(&manifest)?;
            let templates = if templates.is_empty() {
                DEFAULT_TEMPLATES.iter().map(|s| s.to_string()).collect()
            } else {
                templates
            };
            let head = build_zeroshot_head(&backend.open()?, m.classes(), &templates)?;
            head.save(&out)?;
        }
        ZeroshotCmd::Predict { head, manifest, backend, split, out } => {
            let h = ZeroShotHead::load(&head)?;
            write_scores(&out, &h, &manifest_at(&manifest)?, &backend.open()?, split.into())?;
        }
    }
    Ok(())
}

fn eval(a: EvalArgs) -> anyhow::Result<()> {
    if let Some(EvalCmd::Kshot { seeds, accuracies, population }) = a.kshot {
        let values: Vec<Option<f64>> = (0..seeds.len()).map(|i| accuracies.get(i).copied()).collect();
        if accuracies.len() > seeds.len() {
            bail!(Error::Config(format!("{} accuracies for {} seeds", accuracies.len(), seeds.len())));
        }
        let kind = if population { StdKind::Population } else { StdKind::Sample };
        let (mean, std) = aggregate_kshot(&values, seeds.len(), kind)?;
        println!("{}", format_cell(mean, std));
        return Ok(());
    }
    let Some(path) = a.scores else {
        bail!(Error::Config("--scores is required".into()));
    };
    let lines: Vec<ScoreLine> = read_lines(&path)?;
    let Some(first) = lines.first() else {
        bail!("no scores in {}", path.display());
    };
    let n_classes = first.scores.len();
    let scores: Vec<Vec<f64>> = lines.iter().map(|l| l.scores.clone()).collect();
    let labels: Vec<usize> = lines.iter().map(|l| l.label_index).collect();
    let boot = BootstrapConfig {
        resamples: a.bootstrap,
        seed: a.seed,
    };
    for k in [1, 3.min(n_classes)] {
        let point = topk_accuracy(&scores, &labels, k)?;
        let s = bootstrap_accuracy(&scores, &labels, boot, k)?;
        println!(
            "top-{k}: {:.2}  bootstrap {}",
            100.0 * point,
            format_cell(100.0 * s.mean, 100.0 * s.std)
        );
    }
    Ok(())
}

fn run(a: RunArgs) -> anyhow::Result<()> {
    let cfg = PipelineConfig::load(&a.config)?;
    let outcome = run_pipeline(&cfg)?;
    print!("{}", render_report(&outcome.report, a.format));
    eprintln!(
        "run directory {} ({} of {} stages cached)",
        outcome.run_dir.display(),
        outcome.cached_stages,
        outcome.manifest.stages.len()
    );
    Ok(())
}

fn synth(a: SynthArgs) -> anyhow::Result<()> {
    let mut cfg = ToyConfig {
        seed: a.seed,
        ..Default::default()
    };
    if let Some(n) = a.nuisance {
        cfg.nuisance = n;
    }
    fs::create_dir_all(&a.out)?;
    let ds = write_toy_dataset(&a.out, &cfg)?;
    println!("{}", ds.config.display());
    Ok(())
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::Template { .. }) => 2,
        _ => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Data(c) => data(c),
        Command::Captions(c) => captions(c),
        Command::Embed(c) => embed(c),
        Command::Match(a) => run_match(a),
        Command::Finetune(a) => run_finetune(a),
        Command::Probe(c) => probe(c),
        Command::Zeroshot(c) => zeroshot(c),
        Command::Eval(a) => eval(a),
        Command::Run(a) => run(a),
        Command::Synth(a) => synth(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
