//! Pipeline configuration, read from a TOML file.
//!
//! Relative paths are resolved against the directory holding the config file.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::augment::{default_chains, validate_chains, ChainSpec, SOURCE_LANG};
use crate::classify::ModelConfig;
use crate::ensemble::{TieBreak, VoteRule};
use crate::error::{Error, Result};
use crate::ocr::UnreadablePolicy;
use crate::prompt::{FallbackPolicy, PromptMode, FINETUNE_EPOCHS};
use crate::retry::RetryPolicy;
use crate::scheme::{LabelScheme, TaskId};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub task: TaskId,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub paths: Paths,
    #[serde(default)]
    pub ocr: OcrConfig,
    #[serde(default)]
    pub augment: AugmentConfig,
    #[serde(default, rename = "chain")]
    pub chains: Vec<ChainSpec>,
    #[serde(default, rename = "model")]
    pub models: Vec<ModelEntry>,
    #[serde(default)]
    pub ensemble: Option<EnsembleConfig>,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub report: ReportConfig,
}

fn default_seed() -> u64 {
    42
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Paths {
    pub manifest: PathBuf,
    #[serde(default = "default_work_dir")]
    pub work_dir: PathBuf,
    pub cache_dir: Option<PathBuf>,
    pub models_dir: Option<PathBuf>,
    pub reports_dir: Option<PathBuf>,
}

fn default_work_dir() -> PathBuf {
    PathBuf::from("work")
}

impl Paths {
    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir.clone().unwrap_or_else(|| self.work_dir.join("cache"))
    }

    pub fn models_dir(&self) -> PathBuf {
        self.models_dir.clone().unwrap_or_else(|| self.work_dir.join("models"))
    }

    pub fn reports_dir(&self) -> PathBuf {
        self.reports_dir
            .clone()
            .unwrap_or_else(|| self.work_dir.join("reports"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProviderKind {
    Mock,
    Local,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcrConfig {
    pub provider: ProviderKind,
    /// JSON object mapping image paths to their text, for the mock provider.
    pub mock_table: Option<PathBuf>,
    /// Executable and arguments for the local provider; `{input}` is the image path.
    pub command: Option<String>,
    pub args: Option<Vec<String>>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
    pub on_unreadable: UnreadablePolicy,
}

impl Default for OcrConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        OcrConfig {
            provider: ProviderKind::Mock,
            mock_table: None,
            command: None,
            args: None,
            retries: retry.retries,
            backoff_ms: retry.base_delay_ms,
            max_in_flight: 4,
            on_unreadable: UnreadablePolicy::Fail,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TranslatorKind {
    Identity,
    Table,
    Cloud,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    /// Defaults to on for task B and off for task A.
    pub enabled: Option<bool>,
    pub translator: TranslatorKind,
    /// JSON translation table for the `table` translator.
    pub table: Option<PathBuf>,
    /// Label names to augment; empty means every training instance.
    pub target_labels: Vec<String>,
    pub drop_exact_duplicates: bool,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        AugmentConfig {
            enabled: None,
            translator: TranslatorKind::Identity,
            table: None,
            target_labels: Vec::new(),
            drop_exact_duplicates: false,
            retries: retry.retries,
            backoff_ms: retry.base_delay_ms,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelEntry {
    pub name: String,
    /// In-tree backend: `stub-hash`, `stub-memorize` or `linear`.
    pub backend: String,
    #[serde(default)]
    pub backbone: Option<String>,
    #[serde(default)]
    pub learning_rate: Option<f64>,
    #[serde(default)]
    pub train_batch_size: Option<usize>,
    #[serde(default)]
    pub test_batch_size: Option<usize>,
    #[serde(default)]
    pub epochs: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub max_sequence_length: Option<usize>,
    #[serde(default)]
    pub train_on_eval: Option<bool>,
}

impl ModelEntry {
    /// Resolved training configuration; the global seed applies unless the
    /// entry sets its own.
    pub fn model_config(&self, global_seed: u64) -> ModelConfig {
        let d = ModelConfig::default();
        ModelConfig {
            backbone: self.backbone.clone().unwrap_or_else(|| self.name.clone()),
            learning_rate: self.learning_rate.unwrap_or(d.learning_rate),
            train_batch_size: self.train_batch_size.unwrap_or(d.train_batch_size),
            test_batch_size: self.test_batch_size.unwrap_or(d.test_batch_size),
            epochs: self.epochs.unwrap_or(d.epochs),
            seed: self.seed.unwrap_or(global_seed),
            max_sequence_length: self.max_sequence_length.unwrap_or(d.max_sequence_length),
            train_on_eval: self.train_on_eval.unwrap_or(d.train_on_eval),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub members: Vec<String>,
    #[serde(default)]
    pub rule: VoteRule,
    #[serde(default)]
    pub tie_break: TieBreak,
    /// Explicit weights in member order; derived from eval macro-F1 when absent.
    #[serde(default)]
    pub weights: Option<Vec<f64>>,
    /// Sort members by descending eval macro-F1 before voting.
    #[serde(default = "yes")]
    pub order_by_eval_f1: bool,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    pub enabled: bool,
    pub provider: ProviderKind,
    pub mode: PromptMode,
    /// Base model for the cloud provider.
    pub model: String,
    pub task_name: Option<String>,
    pub task_definition: Option<String>,
    pub exemplars_per_class: usize,
    pub finetune_epochs: u32,
    pub fallback: FallbackPolicy,
    /// Response of the mock provider for prompts it has not memorized.
    pub mock_response: Option<String>,
    pub requests_per_minute: Option<u32>,
    pub budget: Option<usize>,
    pub retries: u32,
    pub backoff_ms: u64,
    pub max_in_flight: usize,
}

impl Default for LlmConfig {
    fn default() -> Self {
        let retry = RetryPolicy::default();
        LlmConfig {
            enabled: false,
            provider: ProviderKind::Mock,
            mode: PromptMode::ZeroShot,
            model: "gpt-3.5-turbo".into(),
            task_name: None,
            task_definition: None,
            exemplars_per_class: 3,
            finetune_epochs: FINETUNE_EPOCHS,
            fallback: FallbackPolicy::MajorityClass,
            mock_response: None,
            requests_per_minute: None,
            budget: None,
            retries: retry.retries,
            backoff_ms: retry.base_delay_ms,
            max_in_flight: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportConfig {
    /// Write confusion-matrix heatmaps next to the report.
    pub plot: bool,
    /// Report directory name; defaults to `task-<A|B>`.
    pub run_name: Option<String>,
}

impl Default for ReportConfig {
    fn default() -> Self {
        ReportConfig {
            plot: true,
            run_name: None,
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads a config file and resolves its paths against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.to_path_buf()),
            _ => Error::io(path, e),
        })?;
        let mut config = Self::from_toml(&text)?;
        config.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        config.validate()?;
        Ok(config)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.paths.manifest);
        fix(&mut self.paths.work_dir);
        for p in [
            &mut self.paths.cache_dir,
            &mut self.paths.models_dir,
            &mut self.paths.reports_dir,
            &mut self.ocr.mock_table,
            &mut self.augment.table,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn scheme(&self) -> LabelScheme {
        LabelScheme::for_task(self.task)
    }

    pub fn augment_enabled(&self) -> bool {
        self.augment.enabled.unwrap_or(self.task == TaskId::B)
    }

    /// Configured chains, or the two default chains when none are given.
    pub fn chains(&self) -> Vec<ChainSpec> {
        if self.chains.is_empty() {
            default_chains()
        } else {
            self.chains.clone()
        }
    }

    pub fn target_labels(&self) -> Result<Option<BTreeSet<usize>>> {
        if self.augment.target_labels.is_empty() {
            return Ok(None);
        }
        let scheme = self.scheme();
        self.augment
            .target_labels
            .iter()
            .map(|name| {
                scheme.resolve(name).ok_or_else(|| Error::Label {
                    row: None,
                    value: name.clone(),
                    task: scheme.task().to_string(),
                })
            })
            .collect::<Result<BTreeSet<_>>>()
            .map(Some)
    }

    pub fn run_name(&self) -> String {
        self.report
            .run_name
            .clone()
            .unwrap_or_else(|| format!("task-{}", self.task))
    }

    pub fn validate(&self) -> Result<()> {
        validate_chains(&self.chains(), SOURCE_LANG)?;
        self.target_labels()?;
        let mut names = BTreeSet::new();
        for m in &self.models {
            if m.name.is_empty() || m.name.contains(['/', '\\']) {
                return Err(Error::Config(format!("invalid model name {:?}", m.name)));
            }
            if !names.insert(m.name.as_str()) {
                return Err(Error::Config(format!("model {:?} defined twice", m.name)));
            }
            m.model_config(self.seed).validate()?;
        }
        if let Some(e) = &self.ensemble {
            if e.members.len() < 2 {
                return Err(Error::Config("ensemble needs at least two members".into()));
            }
            if let Some(unknown) = e.members.iter().find(|m| !names.contains(m.as_str())) {
                return Err(Error::Config(format!(
                    "ensemble member {unknown:?} is not a configured model"
                )));
            }
            if e.weights.as_ref().is_some_and(|w| w.len() != e.members.len()) {
                return Err(Error::Config("ensemble weights must match members".into()));
            }
        }
        if self.llm.enabled && self.llm.finetune_epochs == 0 {
            return Err(Error::Config("llm.finetune_epochs must be at least 1".into()));
        }
        Ok(())
    }
}
