//! Resumable stage graph driven by a [`PipelineConfig`].
//!
//! Every stage has a key hashed from its config section and its upstream
//! keys. After a stage succeeds, `work/state/<stage>.json` records the key and
//! the files it wrote. On the next run the stage is reported as cached when
//! the key still matches and those files still exist.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::augment::{augment_dataset, AugmentOptions, IdentityTranslator, TableTranslator, TranslationProvider};
use crate::cache::{content_hash, hash_parts, DiskCache};
use crate::classify::{self, backend_by_name, ModelHandle};
use crate::config::{PipelineConfig, ProviderKind, TranslatorKind};
use crate::corpus::{label_distribution, load_dataset, merge, save_dataset, Dataset, Origin, Split};
use crate::ensemble::{self, EnsembleSpec, Member, ENSEMBLE_MODEL_NAME};
use crate::error::{Error, Result};
use crate::evaluate::{render_report, score, Artifact, EvalReport, ReportFormat, ResultsTable};
use crate::ocr::{extract_text, LocalOcrProvider, MockOcrProvider, OcrOptions, OcrProvider};
use crate::prediction::{read_jsonl, write_jsonl, Prediction};
use crate::prompt::{
    resolve_fallback, run_llm, sample_exemplars, submit_finetune, LlmOptions, LlmProvider, MockLlmProvider, PromptMode,
    PromptSpec,
};
use crate::retry::RetryPolicy;

// Bumped whenever an artifact format changes so old state is recomputed.
const ARTIFACT_VERSION: &str = "hatemm-artifacts-1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Ingest,
    Ocr,
    Augment,
    Train,
    Predict,
    Llm,
    Ensemble,
    Evaluate,
}

impl Stage {
    pub const ALL: [Stage; 8] = [
        Stage::Ingest,
        Stage::Ocr,
        Stage::Augment,
        Stage::Train,
        Stage::Predict,
        Stage::Llm,
        Stage::Ensemble,
        Stage::Evaluate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Ocr => "ocr",
            Stage::Augment => "augment",
            Stage::Train => "train",
            Stage::Predict => "predict",
            Stage::Llm => "llm",
            Stage::Ensemble => "ensemble",
            Stage::Evaluate => "evaluate",
        }
    }

    /// Stages whose artifacts this one reads.
    pub fn deps(self) -> &'static [Stage] {
        match self {
            Stage::Ingest => &[],
            Stage::Ocr => &[Stage::Ingest],
            Stage::Augment => &[Stage::Ocr],
            Stage::Train => &[Stage::Augment],
            Stage::Predict => &[Stage::Train],
            Stage::Llm => &[Stage::Augment],
            Stage::Ensemble => &[Stage::Predict],
            Stage::Evaluate => &[Stage::Predict, Stage::Llm, Stage::Ensemble],
        }
    }

    /// `self` plus everything it transitively depends on, in run order.
    pub fn closure(self) -> Vec<Stage> {
        let mut needed = BTreeSet::from([self]);
        for s in Stage::ALL.iter().rev() {
            if needed.contains(s) {
                needed.extend(s.deps());
            }
        }
        needed.into_iter().collect()
    }

    /// `stages` plus every stage downstream of them.
    pub fn downstream(stages: &BTreeSet<Stage>) -> BTreeSet<Stage> {
        let mut out = stages.clone();
        for s in Stage::ALL {
            if s.deps().iter().any(|d| out.contains(d)) {
                out.insert(s);
            }
        }
        out
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(format!("unknown stage {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    Cached,
    /// Not applicable under this config (e.g. augmentation for task A).
    Disabled,
    /// Dry run: the stage would execute.
    WouldRun,
}

impl fmt::Display for StageStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StageStatus::Ran => "ran",
            StageStatus::Cached => "cached",
            StageStatus::Disabled => "disabled",
            StageStatus::WouldRun => "would run",
        })
    }
}

#[derive(Debug, Clone)]
pub struct StageReport {
    pub stage: Stage,
    pub status: StageStatus,
    pub key: String,
    /// Human-readable output (distribution table, skip counts, ...).
    pub notes: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Stages to recompute; their downstream stages are recomputed too.
    pub force: BTreeSet<Stage>,
    pub dry_run: bool,
}

#[derive(Debug, Clone)]
pub struct RunSummary {
    pub stages: Vec<StageReport>,
    /// Results table, when the evaluate stage was part of the run.
    pub table: Option<ResultsTable>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StageState {
    stage: Stage,
    key: String,
    outputs: Vec<PathBuf>,
}

struct StageOutput {
    files: Vec<PathBuf>,
    notes: Vec<String>,
}

/// Where each stage writes.
#[derive(Debug, Clone)]
pub struct Layout {
    pub work: PathBuf,
    pub data: PathBuf,
    pub predictions: PathBuf,
    pub llm: PathBuf,
    pub state: PathBuf,
    pub cache: PathBuf,
    pub models: PathBuf,
    pub reports: PathBuf,
}

impl Layout {
    fn new(config: &PipelineConfig) -> Self {
        let work = config.paths.work_dir.clone();
        Layout {
            data: work.join("data"),
            predictions: work.join("predictions"),
            llm: work.join("llm"),
            state: work.join("state"),
            cache: config.paths.cache_dir(),
            models: config.paths.models_dir(),
            reports: config.paths.reports_dir().join(config.run_name()),
            work,
        }
    }

    pub fn ingested(&self) -> PathBuf {
        self.data.join("ingested.csv")
    }

    pub fn ocr(&self) -> PathBuf {
        self.data.join("ocr.csv")
    }

    /// Dataset used for training: OCR output plus augmented copies.
    pub fn final_dataset(&self) -> PathBuf {
        self.data.join("final.csv")
    }

    pub fn predictions(&self, model: &str, split: Split) -> PathBuf {
        self.predictions.join(format!("{model}.{split}.jsonl"))
    }

    pub fn report_json(&self) -> PathBuf {
        self.reports.join("report.json")
    }

    pub fn report_text(&self) -> PathBuf {
        self.reports.join("report.txt")
    }

    fn state_file(&self, stage: Stage) -> PathBuf {
        self.state.join(format!("{stage}.json"))
    }
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
        _ => Error::io(path, e),
    })
}

fn file_hash(path: Option<&Path>) -> Result<String> {
    match path {
        Some(p) => Ok(content_hash(&read_file(p)?)),
        None => Ok(String::new()),
    }
}

fn json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string(value)?)
}

pub struct Pipeline {
    config: PipelineConfig,
    layout: Layout,
}

impl Pipeline {
    pub fn new(config: PipelineConfig) -> Self {
        let layout = Layout::new(&config);
        Pipeline { config, layout }
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    fn llm_enabled(&self) -> bool {
        self.config.llm.enabled
    }

    /// Stage keys for the current config and inputs.
    pub fn keys(&self) -> Result<BTreeMap<Stage, String>> {
        let c = &self.config;
        let mut keys = BTreeMap::new();

        let manifest = &c.paths.manifest;
        let mut parts = vec![ARTIFACT_VERSION.to_string(), "ingest".into(), c.task.to_string()];
        parts.push(content_hash(&read_file(manifest)?));
        let dataset = load_dataset(manifest, &c.scheme())?;
        for inst in dataset.instances() {
            if let Some(p) = &inst.image_path {
                // Unreadable images are the OCR stage's problem.
                parts.push(file_hash(Some(p)).unwrap_or_default());
            }
        }
        keys.insert(Stage::Ingest, hash_parts(&parts));

        let k = |keys: &BTreeMap<Stage, String>, s: Stage| keys[&s].clone();
        let ocr = hash_parts([
            k(&keys, Stage::Ingest),
            json(&c.ocr)?,
            file_hash(c.ocr.mock_table.as_deref())?,
        ]);
        keys.insert(Stage::Ocr, ocr);

        let augment = hash_parts([
            k(&keys, Stage::Ocr),
            c.augment_enabled().to_string(),
            json(&c.augment)?,
            json(&c.chains())?,
            file_hash(c.augment.table.as_deref())?,
        ]);
        keys.insert(Stage::Augment, augment);

        let models: Vec<(String, String, crate::classify::ModelConfig)> = c
            .models
            .iter()
            .map(|m| (m.name.clone(), m.backend.clone(), m.model_config(c.seed)))
            .collect();
        let train = hash_parts([k(&keys, Stage::Augment), json(&models)?]);
        keys.insert(Stage::Train, train);
        keys.insert(
            Stage::Predict,
            hash_parts(["predict".to_string(), k(&keys, Stage::Train)]),
        );

        let llm = hash_parts([k(&keys, Stage::Augment), c.seed.to_string(), json(&c.llm)?]);
        keys.insert(Stage::Llm, llm);

        let ens = hash_parts([k(&keys, Stage::Predict), json(&c.ensemble)?]);
        keys.insert(Stage::Ensemble, ens);

        let eval = hash_parts([
            k(&keys, Stage::Predict),
            k(&keys, Stage::Llm),
            k(&keys, Stage::Ensemble),
            json(&c.report)?,
            c.run_name(),
        ]);
        keys.insert(Stage::Evaluate, eval);
        Ok(keys)
    }

    fn is_cached(&self, stage: Stage, key: &str) -> bool {
        let Ok(bytes) = std::fs::read(self.layout.state_file(stage)) else {
            return false;
        };
        let Ok(state) = serde_json::from_slice::<StageState>(&bytes) else {
            return false;
        };
        state.stage == stage && state.key == key && state.outputs.iter().all(|p| p.exists())
    }

    /// Runs `target` and the stages it depends on.
    pub fn run(&self, target: Stage, options: &RunOptions) -> Result<RunSummary> {
        let keys = self.keys()?;
        let forced = Stage::downstream(&options.force);
        let mut summary = RunSummary {
            stages: Vec::new(),
            table: None,
        };
        for stage in target.closure() {
            let key = keys[&stage].clone();
            let mut report = StageReport {
                stage,
                status: StageStatus::Ran,
                key: key.clone(),
                notes: Vec::new(),
            };
            if self.disabled(stage) {
                report.status = StageStatus::Disabled;
            } else if !forced.contains(&stage) && self.is_cached(stage, &key) {
                report.status = StageStatus::Cached;
            } else if options.dry_run {
                report.status = StageStatus::WouldRun;
            } else {
                let state_path = self.layout.state_file(stage);
                if state_path.exists() {
                    std::fs::remove_file(&state_path).map_err(|e| Error::io(&state_path, e))?;
                }
                log::info!("stage {stage}: running");
                let out = self.execute(stage)?;
                let state = StageState {
                    stage,
                    key: key.clone(),
                    outputs: out.files,
                };
                write_file(&state_path, &serde_json::to_vec_pretty(&state)?)?;
                report.notes = out.notes;
            }
            if report.status == StageStatus::Cached && stage == Stage::Ingest {
                if let Ok(text) = std::fs::read_to_string(self.layout.data.join("distribution.txt")) {
                    report.notes.push(text);
                }
            }
            log::info!("stage {stage}: {}", report.status);
            summary.stages.push(report);
        }
        if target == Stage::Evaluate && !options.dry_run {
            summary.table = Some(self.load_table()?);
        }
        Ok(summary)
    }

    fn disabled(&self, stage: Stage) -> bool {
        match stage {
            Stage::Llm => !self.llm_enabled(),
            Stage::Ensemble => self.config.ensemble.is_none(),
            _ => false,
        }
    }

    fn execute(&self, stage: Stage) -> Result<StageOutput> {
        match stage {
            Stage::Ingest => self.ingest(),
            Stage::Ocr => self.ocr(),
            Stage::Augment => self.augment(),
            Stage::Train => self.train(),
            Stage::Predict => self.predict(),
            Stage::Llm => self.llm(),
            Stage::Ensemble => self.ensemble(),
            Stage::Evaluate => self.evaluate(),
        }
    }

    fn load(&self, path: &Path) -> Result<Dataset> {
        load_dataset(path, &self.config.scheme())
    }

    fn ingest(&self) -> Result<StageOutput> {
        let dataset = self.load(&self.config.paths.manifest)?;
        let dist = label_distribution(&dataset)?;
        let out = self.layout.ingested();
        save_dataset(&dataset, &out)?;
        let txt = self.layout.data.join("distribution.txt");
        let js = self.layout.data.join("distribution.json");
        let table = dist.to_string();
        write_file(&txt, table.as_bytes())?;
        write_file(&js, &serde_json::to_vec_pretty(&dist)?)?;
        Ok(StageOutput {
            files: vec![out, txt, js],
            notes: vec![table],
        })
    }

    fn ocr_provider(&self) -> Result<Box<dyn OcrProvider>> {
        let c = &self.config.ocr;
        match c.provider {
            ProviderKind::Mock => {
                let Some(table) = &c.mock_table else {
                    return Ok(Box::new(MockOcrProvider::new()));
                };
                let map: BTreeMap<String, String> = serde_json::from_slice(&read_file(table)?)?;
                let base = table.parent().unwrap_or(Path::new("."));
                let provider = MockOcrProvider::from_files(map.into_iter().map(|(p, t)| (base.join(p), t)))?;
                Ok(Box::new(provider))
            }
            ProviderKind::Local => Ok(Box::new(match &c.command {
                Some(cmd) => LocalOcrProvider::new(
                    cmd.clone(),
                    c.args
                        .clone()
                        .unwrap_or_else(|| vec!["{input}".into(), "stdout".into()]),
                ),
                None => LocalOcrProvider::default(),
            })),
            ProviderKind::Cloud => cloud_ocr(),
        }
    }

    fn ocr(&self) -> Result<StageOutput> {
        let c = &self.config.ocr;
        let dataset = self.load(&self.layout.ingested())?;
        let provider = self.ocr_provider()?;
        let cache = DiskCache::open(&self.layout.cache, "ocr")?;
        let options = OcrOptions {
            retry: RetryPolicy {
                retries: c.retries,
                base_delay_ms: c.backoff_ms,
            },
            max_in_flight: c.max_in_flight,
            on_unreadable: c.on_unreadable,
        };
        let outcome = extract_text(&dataset, provider.as_ref(), &cache, &options)?;
        let out = self.layout.ocr();
        save_dataset(&outcome.dataset, &out)?;
        let results = self.layout.data.join("ocr_results.jsonl");
        write_jsonl(&results, &outcome.results)?;
        let mut notes = vec![format!(
            "{} images recognized, {} provider calls",
            outcome.results.len(),
            outcome.provider_calls
        )];
        if !outcome.unreadable.is_empty() {
            notes.push(format!("skipped {} unreadable images", outcome.unreadable.len()));
        }
        if !outcome.empty_text.is_empty() {
            notes.push(format!("{} images yielded no text", outcome.empty_text.len()));
        }
        Ok(StageOutput {
            files: vec![out, results],
            notes,
        })
    }

    fn translator(&self) -> Result<Box<dyn TranslationProvider>> {
        let c = &self.config.augment;
        match c.translator {
            TranslatorKind::Identity => Ok(Box::new(IdentityTranslator)),
            TranslatorKind::Table => {
                let path = c
                    .table
                    .as_ref()
                    .ok_or_else(|| Error::Config("augment.table is required for the table translator".into()))?;
                let map: BTreeMap<String, String> = serde_json::from_slice(&read_file(path)?)?;
                let mut t = TableTranslator::new();
                for (key, out) in map {
                    let parts: Vec<&str> = key.splitn(3, '>').collect();
                    t = match parts.as_slice() {
                        [from, to] => t.hop(from, to, out),
                        [from, to, text] => t.exact(from, to, text, out),
                        _ => return Err(Error::Config(format!("bad translation table key {key:?}"))),
                    };
                }
                Ok(Box::new(t))
            }
            TranslatorKind::Cloud => cloud_translator(),
        }
    }

    fn augment(&self) -> Result<StageOutput> {
        let dataset = self.load(&self.layout.ocr())?;
        let out = self.layout.final_dataset();
        if !self.config.augment_enabled() {
            save_dataset(&dataset, &out)?;
            return Ok(StageOutput {
                files: vec![out],
                notes: vec!["augmentation off; training on original data".into()],
            });
        }
        let c = &self.config.augment;
        let provider = self.translator()?;
        let cache = DiskCache::open(&self.layout.cache, "translate")?;
        let options = AugmentOptions {
            retry: RetryPolicy {
                retries: c.retries,
                base_delay_ms: c.backoff_ms,
            },
            max_in_flight: c.max_in_flight,
            drop_exact_duplicates: c.drop_exact_duplicates,
        };
        let targets = self.config.target_labels()?;
        let outcome = augment_dataset(
            &dataset,
            &self.config.chains(),
            provider.as_ref(),
            targets.as_ref(),
            Some(&cache),
            &options,
        )?;
        let merged = merge(&dataset, &outcome.dataset)?;
        save_dataset(&merged, &out)?;
        let skipped = self.layout.data.join("augment_skipped.jsonl");
        write_jsonl(&skipped, &outcome.skipped)?;
        Ok(StageOutput {
            files: vec![out, skipped],
            notes: vec![format!(
                "{} augmented copies, {} skipped, {} dropped as duplicates",
                outcome.dataset.len(),
                outcome.skipped.len(),
                outcome.dropped_duplicates
            )],
        })
    }

    fn train(&self) -> Result<StageOutput> {
        let dataset = self.load(&self.layout.final_dataset())?;
        let train_set = dataset.subset(Split::Train);
        let eval_set = dataset.subset(Split::Eval);
        let mut files = Vec::new();
        let mut notes = Vec::new();
        for entry in &self.config.models {
            let backend = backend_by_name(&entry.backend)?;
            let config = entry.model_config(self.config.seed);
            let (handle, summary) = classify::train(&entry.name, &config, &train_set, &eval_set, backend.as_ref())?;
            let dir = self.layout.models.join(&entry.name);
            handle.save(&dir)?;
            let summary_path = dir.join("summary.json");
            write_file(&summary_path, &serde_json::to_vec_pretty(&summary)?)?;
            notes.push(format!(
                "{}: {} training instances, best epoch {}",
                entry.name, summary.train_size, summary.best_epoch
            ));
            files.push(dir.join("model.json"));
            files.push(summary_path);
        }
        Ok(StageOutput { files, notes })
    }

    fn predict(&self) -> Result<StageOutput> {
        let dataset = self.load(&self.layout.final_dataset())?;
        let mut files = Vec::new();
        let mut notes = Vec::new();
        for split in [Split::Eval, Split::Test] {
            let instances: Vec<_> = dataset.split(split).filter(|i| i.has_text()).cloned().collect();
            let missing = dataset.split_len(split) - instances.len();
            if missing > 0 {
                notes.push(format!("{split}: {missing} instances without text are not predicted"));
            }
            for entry in &self.config.models {
                let backend = backend_by_name(&entry.backend)?;
                let handle = ModelHandle::load(&self.layout.models.join(&entry.name))?;
                let preds = classify::predict(&handle, &instances, backend.as_ref())?;
                let path = self.layout.predictions(&entry.name, split);
                write_jsonl(&path, &preds)?;
                files.push(path);
            }
        }
        Ok(StageOutput { files, notes })
    }

    fn llm_provider(&self) -> Result<Box<dyn LlmProvider>> {
        let c = &self.config.llm;
        match c.provider {
            ProviderKind::Mock => Ok(Box::new(MockLlmProvider::constant(
                c.mock_response.clone().unwrap_or_default(),
            ))),
            ProviderKind::Local => Err(Error::Config("no local LLM provider is available".into())),
            ProviderKind::Cloud => cloud_llm(&c.model),
        }
    }

    fn llm(&self) -> Result<StageOutput> {
        let c = &self.config.llm;
        let dataset = self.load(&self.layout.final_dataset())?;
        let train_set = dataset.subset(Split::Train);
        let scheme = self.config.scheme();
        let provider = self.llm_provider()?;
        let fallback = resolve_fallback(&c.fallback, &train_set)?;

        let mut spec = PromptSpec::for_scheme(&scheme, c.mode);
        if let Some(name) = &c.task_name {
            spec.task_name = name.clone();
        }
        if let Some(def) = &c.task_definition {
            spec.task_definition = def.clone();
        }
        if c.mode == PromptMode::FewShot {
            spec = spec.with_exemplars(sample_exemplars(&train_set, c.exemplars_per_class, self.config.seed));
        }

        let mut files = Vec::new();
        let mut notes = Vec::new();
        let model_id = if c.mode == PromptMode::Finetuned {
            let dir = self.layout.llm.join("finetune");
            let job = submit_finetune(
                &train_set,
                &dataset.subset(Split::Eval),
                provider.as_ref(),
                c.finetune_epochs,
                Some(&dir),
            )?;
            let job_path = dir.join("job.json");
            write_file(&job_path, &serde_json::to_vec_pretty(&job)?)?;
            files.push(job_path);
            notes.push(format!("fine-tuned model {}", job.model_id));
            Some(job.model_id)
        } else {
            None
        };

        let options = LlmOptions {
            retry: RetryPolicy {
                retries: c.retries,
                base_delay_ms: c.backoff_ms,
            },
            max_in_flight: c.max_in_flight,
            requests_per_minute: c.requests_per_minute,
            budget: c.budget,
        };
        for split in [Split::Eval, Split::Test] {
            let part = dataset.subset(split).filter(|i| i.has_text());
            if part.is_empty() {
                continue;
            }
            let transcript = self.layout.llm.join(format!("transcript.{split}.jsonl"));
            let run = run_llm(
                &part,
                &spec,
                provider.as_ref(),
                model_id.as_deref(),
                fallback,
                &options,
                Some(&transcript),
            )?;
            let path = self.layout.predictions(c.mode.model_name(), split);
            write_jsonl(&path, &run.predictions)?;
            notes.push(format!("{split}: {} fallbacks", run.fallbacks));
            files.push(path);
            files.push(transcript);
        }
        Ok(StageOutput { files, notes })
    }

    fn ensemble(&self) -> Result<StageOutput> {
        let cfg = self
            .config
            .ensemble
            .as_ref()
            .expect("ensemble stage runs only when configured");
        let dataset = self.load(&self.layout.final_dataset())?;
        let eval_gold = dataset.subset(Split::Eval).filter(|i| i.has_text());

        let mut eval_reports = HashMap::new();
        for name in &cfg.members {
            let preds: Vec<Prediction> = read_jsonl(&self.layout.predictions(name, Split::Eval))?;
            eval_reports.insert(name.clone(), score(&preds, &eval_gold)?);
        }
        let mut members = match &cfg.weights {
            Some(w) => cfg
                .members
                .iter()
                .zip(w)
                .map(|(n, &w)| Member::new(n.clone(), w))
                .collect(),
            None if cfg.rule == ensemble::VoteRule::Weighted => ensemble::derive_weights(&eval_reports, &cfg.members)?,
            None => cfg
                .members
                .iter()
                .map(|n| Member::new(n.clone(), 1.0))
                .collect::<Vec<_>>(),
        };
        if cfg.order_by_eval_f1 {
            // Stable, so equal scores keep config order.
            members.sort_by(|a, b| {
                eval_reports[&b.model_name]
                    .macro_f1
                    .total_cmp(&eval_reports[&a.model_name].macro_f1)
            });
        }
        let spec = EnsembleSpec {
            members,
            rule: cfg.rule,
            tie_break: cfg.tie_break,
        };
        let spec_path = self.layout.work.join("ensemble").join("spec.json");
        write_file(&spec_path, &serde_json::to_vec_pretty(&spec)?)?;
        let mut files = vec![spec_path];
        for split in [Split::Eval, Split::Test] {
            let mut per_model = HashMap::new();
            for m in &spec.members {
                let path = self.layout.predictions(&m.model_name, split);
                per_model.insert(m.model_name.clone(), read_jsonl::<Prediction>(&path)?);
            }
            if per_model.values().all(|p| p.is_empty()) {
                continue;
            }
            let fused = ensemble::fuse(&per_model, &spec)?;
            let path = self.layout.predictions(ENSEMBLE_MODEL_NAME, split);
            write_jsonl(&path, &fused)?;
            files.push(path);
        }
        let order: Vec<&str> = spec.members.iter().map(|m| m.model_name.as_str()).collect();
        Ok(StageOutput {
            files,
            notes: vec![format!("members in priority order: {}", order.join(", "))],
        })
    }

    fn score_split(&self, dataset: &Dataset, model: &str, split: Split) -> Result<Option<EvalReport>> {
        let gold = dataset.subset(split).filter(|i| i.has_text());
        if gold.is_empty() || gold.instances().iter().any(|i| i.label.is_none()) {
            return Ok(None);
        }
        let path = self.layout.predictions(model, split);
        let preds: Vec<Prediction> = read_jsonl(&path)?;
        score(&preds, &gold).map(Some)
    }

    fn evaluate(&self) -> Result<StageOutput> {
        let dataset = self.load(&self.layout.final_dataset())?;
        let augmented = dataset.instances().iter().any(|i| i.origin == Origin::Augmented);
        let suffix = if augmented { " (Aug.)" } else { "" };
        let mut table = ResultsTable::new(format!("Task {}: macro-F1", self.config.task));

        let mut rows: Vec<(&str, String, String)> = Vec::new();
        if self.llm_enabled() {
            let mode = self.config.llm.mode;
            let name = mode.model_name().to_string();
            let shown = if mode == PromptMode::Finetuned {
                format!("{name}{suffix}")
            } else {
                name.clone()
            };
            rows.push(("llm", name, shown));
        }
        for m in &self.config.models {
            rows.push(("models", m.name.clone(), format!("{}{suffix}", m.name)));
        }
        if self.config.ensemble.is_some() {
            rows.push(("ensemble", ENSEMBLE_MODEL_NAME.to_string(), format!("Ensemble{suffix}")));
        }
        for (group, model, shown) in rows {
            let eval = self.score_split(&dataset, &model, Split::Eval)?;
            let test = self.score_split(&dataset, &model, Split::Test)?;
            table = table.row(group, &shown, eval, test);
        }

        let json_path = self.layout.report_json();
        let text_path = self.layout.report_text();
        let mut files = Vec::new();
        if let Artifact::Json(j) = render_report(&table, ReportFormat::Json)? {
            write_file(&json_path, j.as_bytes())?;
            files.push(json_path);
        }
        if let Artifact::Text(t) = render_report(&table, ReportFormat::TextTable)? {
            write_file(&text_path, t.as_bytes())?;
            files.push(text_path);
        }
        if self.config.report.plot {
            if let Artifact::Images(images) = render_report(&table, ReportFormat::Plot)? {
                for (name, png) in images {
                    let path = self.layout.reports.join("heatmaps").join(name);
                    write_file(&path, &png)?;
                    files.push(path);
                }
            }
        }
        Ok(StageOutput {
            files,
            notes: Vec::new(),
        })
    }

    /// Reads the results table written by the evaluate stage.
    pub fn load_table(&self) -> Result<ResultsTable> {
        let path = self.layout.report_json();
        let bytes = read_file(&path).map_err(|e| match e {
            Error::MissingFile(_) => {
                Error::Precondition(format!("no report at {}; run the evaluate stage first", path.display()))
            }
            other => other,
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[cfg(feature = "cloud")]
fn cloud_ocr() -> Result<Box<dyn OcrProvider>> {
    Ok(Box::new(crate::cloud::GoogleVisionOcr::from_env()?))
}

#[cfg(feature = "cloud")]
fn cloud_translator() -> Result<Box<dyn TranslationProvider>> {
    Ok(Box::new(crate::cloud::GoogleTranslate::from_env()?))
}

#[cfg(feature = "cloud")]
fn cloud_llm(model: &str) -> Result<Box<dyn LlmProvider>> {
    Ok(Box::new(crate::cloud::OpenAiLlm::from_env(model)?))
}

#[cfg(not(feature = "cloud"))]
fn no_cloud<T>() -> Result<T> {
    Err(Error::Config(
        "cloud providers need a build with the `cloud` feature".into(),
    ))
}

#[cfg(not(feature = "cloud"))]
fn cloud_ocr() -> Result<Box<dyn OcrProvider>> {
    no_cloud()
}

#[cfg(not(feature = "cloud"))]
fn cloud_translator() -> Result<Box<dyn TranslationProvider>> {
    no_cloud()
}

#[cfg(not(feature = "cloud"))]
fn cloud_llm(_model: &str) -> Result<Box<dyn LlmProvider>> {
    no_cloud()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closure_and_downstream() {
        assert_eq!(Stage::Ingest.closure(), vec![Stage::Ingest]);
        assert_eq!(
            Stage::Llm.closure(),
            vec![Stage::Ingest, Stage::Ocr, Stage::Augment, Stage::Llm]
        );
        assert_eq!(Stage::Evaluate.closure(), Stage::ALL.to_vec());
        let d = Stage::downstream(&BTreeSet::from([Stage::Ensemble]));
        assert_eq!(d, BTreeSet::from([Stage::Ensemble, Stage::Evaluate]));
        let d = Stage::downstream(&BTreeSet::from([Stage::Augment]));
        assert!(!d.contains(&Stage::Ocr) && d.contains(&Stage::Llm) && d.contains(&Stage::Evaluate));
    }

    #[test]
    fn stage_names_parse() {
        for s in Stage::ALL {
            assert_eq!(s.as_str().parse::<Stage>().unwrap(), s);
        }
        assert!("deploy".parse::<Stage>().is_err());
    }
}
