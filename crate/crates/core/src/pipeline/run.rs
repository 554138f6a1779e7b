use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;

use super::artifacts::{file_hash, RunStore, StageRecord};
use super::config::{CaptionSource, PipelineConfig};
use super::evaluate::{image_features, score_split, MethodScores};
use crate::captions::{
    apply_verdicts, build_flyp_captions, generate_store, load_verdicts, summarize_store, CachedProvider,
    CaptionProvider, CaptionStore, FixtureProvider, GenerationOptions, RemoteProvider,
};
use crate::classifier::{build_zeroshot_head, train_linear_probe, LinearProbe, ProbeConfig};
use crate::data::{load_manifest, sample_kshot, DatasetManifest, ImageRecord, KShotSpec, Split};
use crate::embedding::{Backend, BackendDescriptor, ProjectionHeads};
use crate::eval::{aggregate_kshot, render_report, EvalReport, MetricRow, ReportFormat, StdSource};
use crate::hashing::{canonical_hash, sha256_hex};
use crate::matcher::{assemble_pairs, match_training_images, CaptionTextMode, MatchAssignment};
use crate::trainer::{finetune, TrainConfig, TrainStatus, ValidationSet, PRETRAINED_LOGIT_SCALE};
use crate::{Error, Result};

pub const METHOD_GIST: &str = "GIST";
pub const METHOD_FLYP: &str = "FLYP";
pub const METHOD_FROZEN_LP: &str = "Frozen LP";
pub const METHOD_ZERO_SHOT: &str = "Zero-shot";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub experiment_id: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub dataset_hash: String,
    pub caption_store_hash: String,
    pub backend: BackendDescriptor,
    pub train_seed: u64,
    pub eval_seed: u64,
    pub kshot_seeds: Vec<u64>,
    pub stages: Vec<StageRecord>,
    pub report_hash: String,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub report: EvalReport,
    pub manifest: RunManifest,
    pub run_dir: PathBuf,
    /// Stages skipped because their outputs already existed.
    pub cached_stages: usize,
}

/// `fixture:<path>` or `remote:<model>`. Remote responses are cached under
/// `llm_cache`.
pub fn open_provider(spec: &str, llm_cache: &Path) -> Result<Box<dyn CaptionProvider>> {
    match spec.split_once(':') {
        Some(("fixture", path)) => {
            let path = Path::new(path);
            let id = format!("fixture-{}", &file_hash(path)?[..12]);
            Ok(Box::new(FixtureProvider::load(path)?.with_model_id(id)))
        }
        Some(("remote", model)) if !model.is_empty() => {
            Ok(Box::new(CachedProvider::new(RemoteProvider::from_env(model)?, llm_cache)?))
        }
        _ => Err(Error::Config(format!("unknown caption provider {spec:?}"))),
    }
}

fn stage_err(stage: &str) -> impl Fn(Error) -> Error + '_ {
    move |e| match e {
        Error::Config(_) | Error::Stage { .. } => e,
        other => Error::Stage {
            stage: stage.to_string(),
            source: Box::new(other),
        },
    }
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n").map_err(|e| Error::io(path, e))
}

fn write_jsonl<T: Serialize>(path: &Path, values: &[T]) -> Result<()> {
    let mut out = String::new();
    for v in values {
        out.push_str(&serde_json::to_string(v)?);
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

fn read_jsonl<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(f)
        .lines()
        .enumerate()
        .filter(|(_, l)| l.as_ref().map_or(true, |l| !l.trim().is_empty()))
        .map(|(i, l)| {
            let l = l.map_err(|e| Error::io(path, e))?;
            serde_json::from_str(&l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_slice(&fs::read(path).map_err(|e| Error::io(path, e))?)?)
}

struct Setting {
    name: String,
    kshot: Option<KShotSpec>,
}

#[derive(Serialize, Deserialize)]
struct TrainLog {
    status: TrainStatus,
    selected_epoch: usize,
    selected_val_accuracy: Option<f64>,
    epochs: Vec<crate::trainer::EpochLog>,
    steps: Vec<crate::trainer::StepLog>,
}

fn train_records(manifest: &DatasetManifest) -> Vec<ImageRecord> {
    manifest.split(Split::Train).cloned().collect()
}

fn probe_on(
    backend: &Backend,
    manifest: &DatasetManifest,
    train: &[ImageRecord],
    probe: &ProbeConfig,
    trained_on: &str,
) -> Result<LinearProbe> {
    let f = image_features(backend, manifest, train)?;
    let mut p = train_linear_probe(&f.features, &f.labels, manifest.classes(), probe)?.probe;
    p.trained_on = Some(trained_on.to_string());
    Ok(p)
}

/// generate → (review) → match → summarize → fine-tune → probe → eval.
///
/// Every stage writes into the run's artifact store; a rerun with unchanged
/// inputs reuses the stored outputs. The report and run manifest are
/// written to the run directory.
pub fn run_pipeline(config: &PipelineConfig) -> Result<RunOutcome> {
    config.validate()?;
    let manifest = load_manifest(&config.dataset).map_err(stage_err("data"))?;
    let name = manifest.name().to_string();
    let dataset_hash = sha256_hex(manifest.to_jsonl().as_bytes());
    let mut frozen = Backend::open(&config.backend)?;
    if let Some(dir) = config.cache_dir() {
        frozen = frozen.with_cache(&dir)?;
    }
    let runs = config.runs_dir();
    let store = RunStore::open(runs.join(&config.experiment_id))?;
    let mut stages: Vec<StageRecord> = Vec::new();
    let mode = config.matching.mode;
    let n = config.n(&name)?;

    // captions
    let provider_for = || open_provider(&config.captions.provider, &runs.join("llm_cache"));
    let provider_id = match config.captions.provider.split_once(':') {
        Some(("fixture", p)) => format!("fixture:{}", file_hash(Path::new(p)).map_err(stage_err("generate"))?),
        _ => config.captions.provider.clone(),
    };
    let (dir, rec) = match config.captions.source {
        CaptionSource::Generated => {
            let template = config.template(&name)?;
            let options = GenerationOptions {
                per_prompt: config.per_prompt(&name)?,
                params: config.captions.params,
                concurrency: config.captions.concurrency,
            };
            let inputs = json!({
                "dataset": name,
                "classes": manifest.classes(),
                "template": template,
                "per_prompt": options.per_prompt,
                "params": options.params,
                "bounds": config.bounds(),
                "provider": provider_id,
            });
            store.stage("generate", &inputs, |dir| {
                let provider = provider_for()?;
                let (captions, skips) =
                    generate_store(&*provider, &name, manifest.classes(), &template, &options, config.bounds())?;
                captions.write(&dir.join("captions.jsonl"))?;
                write_json(&dir.join("skips.json"), &skips)
            })?
        }
        CaptionSource::Flyp => {
            let inputs = json!({ "dataset": name, "classes": manifest.classes(), "source": "flyp" });
            store.stage("generate", &inputs, |dir| {
                build_flyp_captions(&name, manifest.classes())?.write(&dir.join("captions.jsonl"))
            })?
        }
    };
    let mut caption_hash = rec.output_hash("captions.jsonl").to_string();
    stages.push(rec);
    let generated = CaptionStore::load(&dir.join("captions.jsonl"), &name).map_err(stage_err("generate"))?;

    // review verdicts
    let verdicts = match &config.captions.review_sidecar {
        Some(p) if p.exists() => load_verdicts(p).map_err(stage_err("review"))?,
        _ => BTreeMap::new(),
    };
    let captions = apply_verdicts(&generated, &verdicts);
    let verdict_hash = canonical_hash(&verdicts);

    // match
    let inputs = json!({
        "captions": caption_hash,
        "verdicts": verdict_hash,
        "dataset": dataset_hash,
        "backend": frozen.config_hash(),
        "n": n,
    });
    let (dir, rec) = store.stage("match", &inputs, |dir| {
        let matches = match_training_images(&manifest, &captions, &frozen, n)?;
        write_jsonl(&dir.join("matches.jsonl"), &matches)
    })?;
    let matches_hash = rec.output_hash("matches.jsonl").to_string();
    stages.push(rec);
    let matches: Vec<MatchAssignment> = read_jsonl(&dir.join("matches.jsonl")).map_err(stage_err("match"))?;

    // summarize
    let mut captions = captions;
    if mode == CaptionTextMode::ShortWithClass && config.captions.source == CaptionSource::Generated {
        let ids: BTreeSet<String> = matches
            .iter()
            .flat_map(|m| m.caption_ids().map(str::to_string))
            .collect();
        let inputs = json!({
            "captions": caption_hash,
            "verdicts": verdict_hash,
            "matched": canonical_hash(&ids),
            "budget": config.captions.summary_budget,
            "params": config.captions.params,
            "provider": provider_id,
        });
        let (dir, rec) = store.stage("summarize", &inputs, |dir| {
            let provider = provider_for()?;
            let mut summarized = captions.clone();
            let truncated = summarize_store(
                &*provider,
                &mut summarized,
                &ids,
                config.captions.summary_budget,
                &config.captions.params,
            )?;
            summarized.write(&dir.join("captions.jsonl"))?;
            write_json(&dir.join("truncated.json"), &truncated)
        })?;
        caption_hash = rec.output_hash("captions.jsonl").to_string();
        stages.push(rec);
        captions = CaptionStore::load(&dir.join("captions.jsonl"), &name).map_err(stage_err("summarize"))?;
    }

    // settings
    let mut settings = Vec::new();
    if config.eval.full {
        settings.push(Setting {
            name: "full".into(),
            kshot: None,
        });
    }
    for &k in &config.eval.kshot {
        for &seed in &config.eval.kshot_seeds {
            settings.push(Setting {
                name: format!("{k}-shot"),
                kshot: Some(KShotSpec { k, seed, clamp: false }),
            });
        }
    }

    let test_records: Vec<ImageRecord> = manifest.split(Split::Test).cloned().collect();
    if test_records.is_empty() {
        return Err(Error::Stage {
            stage: "eval".into(),
            source: Box::new(Error::invalid("dataset has no test images")),
        });
    }
    let val_records: Vec<ImageRecord> = manifest.split(Split::Val).cloned().collect();
    let tuned_method = match config.captions.source {
        CaptionSource::Generated => METHOD_GIST,
        CaptionSource::Flyp => METHOD_FLYP,
    };
    let logit_scale = config.train.config.logit_scale_init.unwrap_or(PRETRAINED_LOGIT_SCALE);
    let bootstrap = crate::eval::BootstrapConfig {
        resamples: config.eval.bootstrap,
        seed: config.eval.seed,
    };

    let mut results: Vec<(String, String, MethodScores)> = Vec::new();
    for setting in &settings {
        let label = match &setting.kshot {
            None => setting.name.clone(),
            Some(s) => format!("{}-seed{}", setting.name, s.seed),
        };
        let subset = match &setting.kshot {
            None => manifest.clone(),
            Some(spec) => sample_kshot(&manifest, spec).map_err(stage_err("kshot"))?,
        };
        let train = train_records(&subset);
        let train_ids: BTreeSet<&str> = train.iter().map(|r| r.image_id.as_str()).collect();
        let sub_matches: Vec<MatchAssignment> = matches
            .iter()
            .filter(|m| train_ids.contains(m.image_id.as_str()))
            .cloned()
            .collect();
        let subset_hash = canonical_hash(&train_ids);

        let ft_stage = format!("finetune-{label}");
        let inputs = json!({
            "captions": caption_hash,
            "verdicts": verdict_hash,
            "matches": matches_hash,
            "subset": subset_hash,
            "dataset": dataset_hash,
            "mode": mode,
            "train": config.train,
            "probe": config.probe,
            "backend": frozen.config_hash(),
            "logit_scale": logit_scale,
        });
        let (dir, rec) = store.stage(&ft_stage, &inputs, |dir| {
            let pairs = assemble_pairs(&subset, &captions, &sub_matches, mode)?;
            let trainable = frozen.clone().trainable(logit_scale)?;
            let validation = if config.train.select_on_validation && !val_records.is_empty() {
                let tr = image_features(&frozen, &manifest, &train)?;
                let va = image_features(&frozen, &manifest, &val_records)?;
                Some(ValidationSet {
                    classes: manifest.classes().to_vec(),
                    train_features: tr.features,
                    train_labels: tr.labels,
                    val_features: va.features,
                    val_labels: va.labels,
                    probe: ProbeConfig {
                        epochs: config.train.selection_probe_epochs,
                        ..config.probe.clone()
                    },
                })
            } else {
                None
            };
            let train_cfg = TrainConfig {
                epochs: if setting.kshot.is_some() {
                    config.train.kshot_epochs
                } else {
                    config.train.config.epochs
                },
                ..config.train.config.clone()
            };
            let outcome = finetune(&trainable, &pairs, &train_cfg, validation.as_ref())?;
            outcome.heads.save(&dir.join("heads"), frozen.base_model_id())?;
            write_json(
                &dir.join("train_log.json"),
                &TrainLog {
                    status: outcome.status.clone(),
                    selected_epoch: outcome.selected_epoch,
                    selected_val_accuracy: outcome.selected_val_accuracy,
                    epochs: outcome.epochs,
                    steps: outcome.steps,
                },
            )?;
            match outcome.status {
                TrainStatus::Completed => Ok(()),
                TrainStatus::Diverged { step } => Err(Error::Diverged { step }),
            }
        })?;
        let heads_hash = rec.output_hash("heads.bin").to_string();
        stages.push(rec);
        let (heads, _) = ProjectionHeads::load(&dir.join("heads")).map_err(stage_err(&ft_stage))?;
        let tuned = frozen.clone().with_heads(heads)?;

        let eval_stage = format!("eval-{label}");
        let inputs = json!({
            "heads": heads_hash,
            "subset": subset_hash,
            "dataset": dataset_hash,
            "probe": config.probe,
            "bootstrap": bootstrap,
            "frozen_probe": config.eval.frozen_probe,
            "backend": frozen.config_hash(),
        });
        let (dir, rec) = store.stage(&eval_stage, &inputs, |dir| {
            let mut scores = BTreeMap::new();
            let probe = probe_on(&tuned, &manifest, &train, &config.probe, &heads_hash)?;
            probe.save(&dir.join("probe_tuned"))?;
            let test = image_features(&tuned, &manifest, &test_records)?;
            scores.insert("tuned".to_string(), score_split(&probe, &test, bootstrap)?);
            if config.eval.frozen_probe {
                let probe = probe_on(&frozen, &manifest, &train, &config.probe, "frozen")?;
                probe.save(&dir.join("probe_frozen"))?;
                let test = image_features(&frozen, &manifest, &test_records)?;
                scores.insert("frozen".to_string(), score_split(&probe, &test, bootstrap)?);
            }
            write_json(&dir.join("scores.json"), &scores)
        })?;
        stages.push(rec);
        let scores: BTreeMap<String, MethodScores> =
            read_json(&dir.join("scores.json")).map_err(stage_err(&eval_stage))?;
        results.push((tuned_method.to_string(), setting.name.clone(), scores["tuned"].clone()));
        if let Some(s) = scores.get("frozen") {
            results.push((METHOD_FROZEN_LP.to_string(), setting.name.clone(), s.clone()));
        }
    }

    if config.eval.zero_shot {
        let inputs = json!({
            "dataset": dataset_hash,
            "backend": frozen.config_hash(),
            "templates": config.eval.zero_shot_templates,
            "bootstrap": bootstrap,
        });
        let (dir, rec) = store.stage("eval-zero-shot", &inputs, |dir| {
            let head = build_zeroshot_head(&frozen, manifest.classes(), &config.eval.zero_shot_templates)?;
            head.save(&dir.join("zeroshot_head"))?;
            let test = image_features(&frozen, &manifest, &test_records)?;
            write_json(&dir.join("scores.json"), &score_split(&head, &test, bootstrap)?)
        })?;
        stages.push(rec);
        let s: MethodScores = read_json(&dir.join("scores.json")).map_err(stage_err("eval-zero-shot"))?;
        results.push((METHOD_ZERO_SHOT.to_string(), "zero-shot".to_string(), s));
    }

    let mut report = build_report(config, &results)?;
    report.provenance = stages
        .iter()
        .map(|s| (s.stage.clone(), s.input_hash.clone()))
        .collect();
    report.validate()?;
    let report_json = render_report(&report, ReportFormat::Json);
    let root = store.root();
    fs::write(root.join("report.json"), &report_json).map_err(|e| Error::io(root, e))?;
    fs::write(root.join("report.txt"), render_report(&report, ReportFormat::TableText))
        .map_err(|e| Error::io(root, e))?;
    let config_value = serde_json::to_value(config)?;
    let run_manifest = RunManifest {
        experiment_id: config.experiment_id.clone(),
        config_hash: canonical_hash(&config_value),
        config: config_value,
        dataset_hash,
        caption_store_hash: caption_hash,
        backend: frozen.descriptor(),
        train_seed: config.train.config.seed,
        eval_seed: config.eval.seed,
        kshot_seeds: config.eval.kshot_seeds.clone(),
        stages: stages.clone(),
        report_hash: sha256_hex(report_json.as_bytes()),
    };
    write_json(&root.join("manifest.json"), &run_manifest)?;
    Ok(RunOutcome {
        report,
        manifest: run_manifest,
        run_dir: root.to_path_buf(),
        cached_stages: stages.iter().filter(|s| s.cached).count(),
    })
}

fn build_report(config: &PipelineConfig, results: &[(String, String, MethodScores)]) -> Result<EvalReport> {
    let mut groups: Vec<((String, String), Vec<&MethodScores>)> = Vec::new();
    for (method, setting, s) in results {
        let key = (method.clone(), setting.clone());
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(s),
            None => groups.push((key, vec![s])),
        }
    }
    let pct = |x: f64| 100.0 * x;
    let mut rows = Vec::new();
    for ((method, setting), runs) in groups {
        let row = if setting.ends_with("-shot") && setting != "zero-shot" {
            let expected = config.eval.kshot_seeds.len();
            let top1: Vec<Option<f64>> = runs.iter().map(|r| Some(pct(r.top1))).collect();
            let top3: Vec<Option<f64>> = runs.iter().map(|r| Some(pct(r.top3))).collect();
            let (m1, s1) = aggregate_kshot(&top1, expected, config.eval.kshot_std)?;
            let (m3, s3) = aggregate_kshot(&top3, expected, config.eval.kshot_std)?;
            let mean_boot = |f: fn(&MethodScores) -> f64| runs.iter().map(|r| pct(f(r))).sum::<f64>() / runs.len() as f64;
            MetricRow {
                method,
                setting,
                top1_mean: m1,
                top1_std: s1,
                top3_mean: m3,
                top3_std: s3,
                std_source: StdSource::KshotSeeds,
                bootstrap_top1_std: Some(mean_boot(|r| r.bootstrap_top1.std)),
                bootstrap_top3_std: Some(mean_boot(|r| r.bootstrap_top3.std)),
                per_seed_top1: top1.into_iter().flatten().collect(),
            }
        } else {
            let r = runs[0];
            MetricRow {
                method,
                setting,
                top1_mean: pct(r.bootstrap_top1.mean),
                top1_std: pct(r.bootstrap_top1.std),
                top3_mean: pct(r.bootstrap_top3.mean),
                top3_std: pct(r.bootstrap_top3.std),
                std_source: StdSource::Bootstrap,
                bootstrap_top1_std: None,
                bootstrap_top3_std: None,
                per_seed_top1: Vec::new(),
            }
        };
        rows.push(row);
    }
    Ok(EvalReport {
        experiment_id: config.experiment_id.clone(),
        rows,
        bootstrap: crate::eval::BootstrapConfig {
            resamples: config.eval.bootstrap,
            seed: config.eval.seed,
        },
        kshot_std: config.eval.kshot_std,
        provenance: BTreeMap::new(),
    })
}
