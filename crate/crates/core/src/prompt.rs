//! LLM prompting: prompt construction, tagged-label parsing, zero-shot,
//! few-shot and fine-tuned runs.
//!
//! Prompts have three blocks: a role line naming the task, a definition
//! listing the allowed labels, and the task instruction carrying the input
//! text. The model is asked to answer as `<label> NAME <\label>`.

use std::collections::HashMap;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::hash_parts;
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::ocr::thread_pool;
use crate::prediction::{write_jsonl, Prediction};
use crate::retry::RetryPolicy;
use crate::scheme::{LabelScheme, TaskId};

pub const OPEN_TAG: &str = "<label>";
pub const CLOSE_TAG: &str = "<\\label>";
const ALT_CLOSE_TAG: &str = "</label>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptMode {
    ZeroShot,
    FewShot,
    Finetuned,
}

impl PromptMode {
    pub fn model_name(self) -> &'static str {
        match self {
            PromptMode::ZeroShot => "llm-zero-shot",
            PromptMode::FewShot => "llm-few-shot",
            PromptMode::Finetuned => "llm-finetuned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exemplar {
    pub text: String,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub task_name: String,
    pub task_definition: String,
    pub labels: Vec<String>,
    pub mode: PromptMode,
    #[serde(default)]
    pub exemplars: Vec<Exemplar>,
}

impl PromptSpec {
    /// Default task wording for a sub-task. The definitions are neutral
    /// descriptions and can be replaced through configuration.
    pub fn for_scheme(scheme: &LabelScheme, mode: PromptMode) -> Self {
        let (task_name, task_definition) = match scheme.task() {
            TaskId::A => (
                "hate speech detection",
                "Hate speech is language in a text-embedded image that attacks or demeans a person or group \
                 on the basis of who they are. Decide whether the text contains hate speech",
            ),
            TaskId::B => (
                "hate speech target detection",
                "The text comes from a text-embedded image that contains hate speech. Decide whether the hate \
                 speech targets an individual, a community, or an organization",
            ),
        };
        PromptSpec {
            task_name: task_name.into(),
            task_definition: task_definition.into(),
            labels: scheme.names().map(str::to_string).collect(),
            mode,
            exemplars: Vec::new(),
        }
    }

    pub fn with_exemplars(mut self, exemplars: Vec<Exemplar>) -> Self {
        self.exemplars = exemplars;
        self
    }

    pub fn validate(&self, scheme: &LabelScheme) -> Result<()> {
        if !self.labels.iter().map(String::as_str).eq(scheme.names()) {
            return Err(Error::Config(format!(
                "prompt labels {:?} do not match task {} labels",
                self.labels,
                scheme.task()
            )));
        }
        let few = self.mode == PromptMode::FewShot;
        if few == self.exemplars.is_empty() {
            return Err(Error::Config(
                "exemplars are required for few-shot prompts and only for them".into(),
            ));
        }
        if let Some(bad) = self.exemplars.iter().find(|e| scheme.code_of(&e.label).is_none()) {
            return Err(Error::UnknownLabel(bad.label.clone()));
        }
        Ok(())
    }
}

fn label_alternatives(labels: &[String]) -> String {
    labels.join(" or ")
}

/// Renders the prompt for one input text.
pub fn build_prompt(spec: &PromptSpec, text: &str) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("cannot prompt with empty text".into()));
    }
    let definition = spec.task_definition.trim().trim_end_matches('.');
    let mut prompt = format!(
        "Role: You are a helpful AI assistant. You are given the task of {}.\n\n\
         Definition: {definition}. You will be given a text to label either {}.\n\n",
        spec.task_name,
        label_alternatives(&spec.labels),
    );
    if spec.mode == PromptMode::FewShot {
        prompt.push_str("Examples:\n");
        for ex in &spec.exemplars {
            prompt.push_str(&format!("{} → {}\n", ex.text, ex.label));
        }
        prompt.push('\n');
    }
    prompt.push_str(&format!(
        "Task: Generate the label for this text in the following format: {OPEN_TAG} Your_Predicted_Label {CLOSE_TAG}. Thanks.\n\
         Text: {text}"
    ));
    Ok(prompt)
}

/// `<label> NAME <\label>`
pub fn wrap_label(name: &str) -> String {
    format!("{OPEN_TAG} {name} {CLOSE_TAG}")
}

/// Extracts the first tagged label from a response. Both `<\label>` and
/// `</label>` close the tag; matching against label names ignores case.
pub fn parse_label(response: &str, scheme: &LabelScheme) -> Result<usize> {
    let lower = response.to_ascii_lowercase();
    let start = lower.find(OPEN_TAG).ok_or_else(|| Error::Parse(response.to_string()))? + OPEN_TAG.len();
    let rest = &lower[start..];
    let end = [CLOSE_TAG, ALT_CLOSE_TAG]
        .iter()
        .filter_map(|tag| rest.find(tag))
        .min()
        .ok_or_else(|| Error::Parse(response.to_string()))?;
    let content = response[start..start + end].trim();
    scheme
        .code_of(content)
        .ok_or_else(|| Error::UnknownLabel(content.to_string()))
}

pub trait LlmProvider: Send + Sync {
    fn name(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String>;
    /// Starts a provider-side fine-tuning job and returns the resulting model id.
    fn finetune(&self, train: &[FinetuneRecord], eval: &[FinetuneRecord], epochs: u32) -> Result<String>;
    fn complete_with(&self, model_id: &str, prompt: &str) -> Result<String>;
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FinetuneRecord {
    pub prompt: String,
    pub completion: String,
}

impl FinetuneRecord {
    /// Chat-style JSON line: one user message and one assistant message.
    pub fn to_chat_json(&self) -> serde_json::Value {
        serde_json::json!({
            "messages": [
                {"role": "user", "content": self.prompt},
                {"role": "assistant", "content": self.completion},
            ]
        })
    }
}

/// Default number of provider-side fine-tuning epochs.
pub const FINETUNE_EPOCHS: u32 = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FinetuneJob {
    pub model_id: String,
    pub epochs: u32,
    pub train_records: usize,
    pub eval_records: usize,
}

fn records(dataset: &Dataset, spec: &PromptSpec) -> Result<Vec<FinetuneRecord>> {
    let scheme = dataset.scheme();
    dataset
        .instances()
        .iter()
        .filter(|i| i.has_text())
        .map(|inst| {
            let label = inst
                .label
                .ok_or_else(|| Error::Precondition(format!("fine-tuning instance {:?} has no label", inst.id)))?;
            Ok(FinetuneRecord {
                prompt: build_prompt(spec, &inst.text)?,
                completion: wrap_label(scheme.name_of(label).expect("validated label")),
            })
        })
        .collect()
}

/// Serializes the splits as prompt/completion records and submits a
/// fine-tuning job. When `records_dir` is given the records are also written
/// there as `train.jsonl` and `eval.jsonl`.
pub fn submit_finetune(
    train_set: &Dataset,
    eval_set: &Dataset,
    provider: &dyn LlmProvider,
    epochs: u32,
    records_dir: Option<&Path>,
) -> Result<FinetuneJob> {
    if epochs == 0 {
        return Err(Error::Precondition("fine-tuning needs at least one epoch".into()));
    }
    train_set.scheme().ensure_same(eval_set.scheme())?;
    let spec = PromptSpec::for_scheme(train_set.scheme(), PromptMode::Finetuned);
    let train = records(train_set, &spec)?;
    let eval = records(eval_set, &spec)?;
    if train.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    if let Some(dir) = records_dir {
        for (name, recs) in [("train.jsonl", &train), ("eval.jsonl", &eval)] {
            let lines: Vec<serde_json::Value> = recs.iter().map(FinetuneRecord::to_chat_json).collect();
            write_jsonl(&dir.join(name), &lines)?;
        }
    }
    let model_id = provider.finetune(&train, &eval, epochs)?;
    Ok(FinetuneJob {
        model_id,
        epochs,
        train_records: train.len(),
        eval_records: eval.len(),
    })
}

/// Label used when a response cannot be parsed.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FallbackPolicy {
    /// Most frequent training label, ties to the lowest code.
    #[default]
    MajorityClass,
    Label(String),
}

pub fn resolve_fallback(policy: &FallbackPolicy, train: &Dataset) -> Result<usize> {
    let scheme = train.scheme();
    match policy {
        FallbackPolicy::Label(name) => scheme.resolve(name).ok_or_else(|| Error::UnknownLabel(name.clone())),
        FallbackPolicy::MajorityClass => {
            let mut counts = vec![0usize; scheme.len()];
            for label in train.instances().iter().filter_map(|i| i.label) {
                counts[label] += 1;
            }
            Ok((0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b }))
        }
    }
}

/// Draws up to `per_class` exemplars of each label from the non-empty
/// training texts, shuffled with `seed`.
pub fn sample_exemplars(train: &Dataset, per_class: usize, seed: u64) -> Vec<Exemplar> {
    let scheme = train.scheme();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for label in scheme.labels() {
        let mut pool: Vec<&str> = train
            .instances()
            .iter()
            .filter(|i| i.label == Some(label.code) && i.has_text())
            .map(|i| i.text.as_str())
            .collect();
        pool.shuffle(&mut rng);
        out.extend(pool.into_iter().take(per_class).map(|t| Exemplar {
            text: t.to_string(),
            label: label.name.clone(),
        }));
    }
    out.shuffle(&mut rng);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LlmOptions {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Requests per minute across all workers; `None` means unthrottled.
    pub requests_per_minute: Option<u32>,
    /// Maximum number of provider requests for the run.
    pub budget: Option<usize>,
}

impl Default for LlmOptions {
    fn default() -> Self {
        LlmOptions {
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            requests_per_minute: None,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub instance_id: String,
    pub mode: PromptMode,
    pub model: String,
    pub prompt: String,
    pub response: String,
    pub label: usize,
    pub error: Option<String>,
}

#[derive(Debug, Clone)]
pub struct LlmRun {
    pub predictions: Vec<Prediction>,
    pub transcript: Vec<TranscriptEntry>,
    /// Instances that received the fallback label.
    pub fallbacks: usize,
}

struct Throttle {
    interval: Option<Duration>,
    next: Mutex<Option<Instant>>,
}

impl Throttle {
    fn new(rpm: Option<u32>) -> Self {
        Throttle {
            interval: rpm
                .filter(|r| *r > 0)
                .map(|r| Duration::from_secs_f64(60.0 / f64::from(r))),
            next: Mutex::new(None),
        }
    }

    fn wait(&self) {
        let Some(interval) = self.interval else { return };
        let slot = {
            let mut next = self.next.lock().expect("throttle poisoned");
            let now = Instant::now();
            let slot = next.map_or(now, |n| n.max(now));
            *next = Some(slot + interval);
            slot
        };
        let now = Instant::now();
        if slot > now {
            std::thread::sleep(slot - now);
        }
    }
}

/// Labels every instance of `split` with the LLM. Unparseable responses get
/// `fallback`, so the run always yields one prediction per instance.
pub fn run_llm(
    split: &Dataset,
    spec: &PromptSpec,
    provider: &dyn LlmProvider,
    model_id: Option<&str>,
    fallback: usize,
    options: &LlmOptions,
    transcript_path: Option<&Path>,
) -> Result<LlmRun> {
    let scheme = split.scheme();
    spec.validate(scheme)?;
    if spec.mode == PromptMode::Finetuned && model_id.is_none() {
        return Err(Error::Precondition("fine-tuned mode requires a model id".into()));
    }
    if let Some(empty) = split.instances().iter().find(|i| !i.has_text()) {
        return Err(Error::EmptyText(empty.id.clone()));
    }
    let model = match (spec.mode, model_id) {
        (PromptMode::Finetuned, Some(id)) => id.to_string(),
        _ => provider.name().to_string(),
    };
    let throttle = Throttle::new(options.requests_per_minute);
    let requests = AtomicUsize::new(0);
    let call = |prompt: &str| -> Result<String> {
        options.retry.run(|| {
            let n = requests.fetch_add(1, Ordering::SeqCst) + 1;
            if options.budget.is_some_and(|b| n > b) {
                return Err(Error::BudgetExhausted(options.budget.unwrap_or_default()));
            }
            throttle.wait();
            match (spec.mode, model_id) {
                (PromptMode::Finetuned, Some(id)) => provider.complete_with(id, prompt),
                _ => provider.complete(prompt),
            }
        })
    };

    let pool = thread_pool(options.max_in_flight)?;
    let outcomes: Vec<Result<TranscriptEntry>> = pool.install(|| {
        split
            .instances()
            .par_iter()
            .map(|inst| {
                let prompt = build_prompt(spec, &inst.text)?;
                let response = call(&prompt)?;
                let (label, error) = match parse_label(&response, scheme) {
                    Ok(label) => (label, None),
                    Err(e) => {
                        log::warn!("{}: {e}; using fallback label", inst.id);
                        (fallback, Some(e.to_string()))
                    }
                };
                Ok(TranscriptEntry {
                    instance_id: inst.id.clone(),
                    mode: spec.mode,
                    model: model.clone(),
                    prompt,
                    response,
                    label,
                    error,
                })
            })
            .collect()
    });
    let transcript = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(path) = transcript_path {
        write_jsonl(path, &transcript)?;
    }
    let predictions = transcript
        .iter()
        .map(|t| Prediction::hard(t.instance_id.clone(), t.label, spec.mode.model_name()))
        .collect();
    let fallbacks = transcript.iter().filter(|t| t.error.is_some()).count();
    Ok(LlmRun {
        predictions,
        transcript,
        fallbacks,
    })
}

/// Scripted provider. Prompts containing a registered substring get that
/// response, everything else the default. Fine-tuning memorizes the records
/// and `complete_with` replays their completions.
#[derive(Debug, Default)]
pub struct MockLlmProvider {
    default_response: String,
    rules: Vec<(String, String)>,
    models: Mutex<HashMap<String, HashMap<String, String>>>,
    calls: AtomicUsize,
}

impl MockLlmProvider {
    pub fn constant(response: impl Into<String>) -> Self {
        MockLlmProvider {
            default_response: response.into(),
            ..Self::default()
        }
    }

    pub fn when_contains(mut self, needle: impl Into<String>, response: impl Into<String>) -> Self {
        self.rules.push((needle.into(), response.into()));
        self
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }

    fn respond(&self, prompt: &str) -> String {
        self.calls.fetch_add(1, Ordering::Relaxed);
        self.rules
            .iter()
            .find(|(needle, _)| prompt.contains(needle.as_str()))
            .map(|(_, r)| r.clone())
            .unwrap_or_else(|| self.default_response.clone())
    }
}

impl LlmProvider for MockLlmProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn complete(&self, prompt: &str) -> Result<String> {
        Ok(self.respond(prompt))
    }

    fn finetune(&self, train: &[FinetuneRecord], eval: &[FinetuneRecord], epochs: u32) -> Result<String> {
        let mut parts: Vec<String> = vec![epochs.to_string()];
        parts.extend(
            train
                .iter()
                .chain(eval)
                .flat_map(|r| [r.prompt.clone(), r.completion.clone()]),
        );
        let id = format!("mock-ft-{}", &hash_parts(&parts)[..12]);
        let memory = train.iter().map(|r| (r.prompt.clone(), r.completion.clone())).collect();
        self.models.lock().expect("mock poisoned").insert(id.clone(), memory);
        Ok(id)
    }

    fn complete_with(&self, model_id: &str, prompt: &str) -> Result<String> {
        let models = self.models.lock().expect("mock poisoned");
        let memory = models
            .get(model_id)
            .ok_or_else(|| Error::provider("mock", format!("unknown model {model_id}")))?;
        match memory.get(prompt) {
            Some(c) => {
                self.calls.fetch_add(1, Ordering::Relaxed);
                Ok(c.clone())
            }
            None => Ok(self.respond(prompt)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Instance, Split};

    fn scheme(task: TaskId) -> LabelScheme {
        LabelScheme::for_task(task)
    }

    fn split(texts: &[(&str, Option<usize>)], task: TaskId) -> Dataset {
        let instances = texts
            .iter()
            .enumerate()
            .map(|(i, (t, l))| Instance::new(format!("s{i}"), *t, *l, Split::Test))
            .collect();
        Dataset::new(scheme(task), instances).unwrap()
    }

    #[test]
    fn zero_shot_prompt_structure() {
        let spec = PromptSpec::for_scheme(&scheme(TaskId::A), PromptMode::ZeroShot);
        let p = build_prompt(&spec, "some caption").unwrap();
        assert!(p.contains("You are given the task of hate speech detection"));
        assert!(p.contains("NO-HATE") && p.contains("HATE"));
        assert!(p.contains("some caption"));
        assert!(p.contains("<label> Your_Predicted_Label <\\label>"));
        let role = p.find("Role:").unwrap();
        let def = p.find("Definition:").unwrap();
        let task = p.find("Task:").unwrap();
        assert!(role < def && def < task);
        assert!(p.find("some caption").unwrap() > task);
    }

    #[test]
    fn few_shot_inserts_exemplars_in_order() {
        let spec = PromptSpec::for_scheme(&scheme(TaskId::B), PromptMode::FewShot).with_exemplars(vec![
            Exemplar {
                text: "first example".into(),
                label: "COMMUNITY".into(),
            },
            Exemplar {
                text: "second example".into(),
                label: "INDIVIDUAL".into(),
            },
        ]);
        spec.validate(&scheme(TaskId::B)).unwrap();
        let p = build_prompt(&spec, "input").unwrap();
        let first = p.find("first example → COMMUNITY").unwrap();
        let second = p.find("second example → INDIVIDUAL").unwrap();
        assert!(p.find("Definition:").unwrap() < first && first < second && second < p.find("Task:").unwrap());
    }

    #[test]
    fn prompt_rejects_empty_text_and_bad_specs() {
        let spec = PromptSpec::for_scheme(&scheme(TaskId::A), PromptMode::ZeroShot);
        assert!(matches!(build_prompt(&spec, ""), Err(Error::Precondition(_))));
        let few = PromptSpec::for_scheme(&scheme(TaskId::A), PromptMode::FewShot);
        assert!(few.validate(&scheme(TaskId::A)).is_err());
        assert!(spec.validate(&scheme(TaskId::B)).is_err());
    }

    #[test]
    fn parse_examples() {
        assert_eq!(parse_label("<label> HATE <\\label>", &scheme(TaskId::A)).unwrap(), 1);
        assert_eq!(
            parse_label("<label> community <\\label>", &scheme(TaskId::B)).unwrap(),
            1
        );
        assert_eq!(
            parse_label("Sure! <LABEL>NO-HATE</label> because", &scheme(TaskId::A)).unwrap(),
            0
        );
        assert!(matches!(
            parse_label("I think it is hateful", &scheme(TaskId::A)),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_label("<label> HATE", &scheme(TaskId::A)),
            Err(Error::Parse(_))
        ));
        assert!(matches!(
            parse_label("<label> spam <\\label>", &scheme(TaskId::A)),
            Err(Error::UnknownLabel(l)) if l == "spam"
        ));
    }

    #[test]
    fn constant_provider_labels_everything() {
        let ds = split(&[("a", None), ("b", None), ("c", None)], TaskId::A);
        let spec = PromptSpec::for_scheme(ds.scheme(), PromptMode::ZeroShot);
        let provider = MockLlmProvider::constant(wrap_label("NO-HATE"));
        let run = run_llm(&ds, &spec, &provider, None, 1, &LlmOptions::default(), None).unwrap();
        assert!(run
            .predictions
            .iter()
            .all(|p| p.label == 0 && p.model_name == "llm-zero-shot"));
        assert_eq!(run.fallbacks, 0);
        assert_eq!(provider.calls(), 3);
    }

    #[test]
    fn malformed_response_falls_back_and_is_logged() {
        let dir = tempfile::tempdir().unwrap();
        let ds = split(&[("fine", None), ("garbled", None)], TaskId::A);
        let spec = PromptSpec::for_scheme(ds.scheme(), PromptMode::ZeroShot);
        let provider = MockLlmProvider::constant(wrap_label("HATE")).when_contains("Text: garbled", "no idea");
        let path = dir.path().join("run.jsonl");
        let run = run_llm(&ds, &spec, &provider, None, 0, &LlmOptions::default(), Some(&path)).unwrap();
        assert_eq!(run.predictions.len(), 2);
        assert_eq!(run.predictions[0].label, 1);
        assert_eq!(run.predictions[1].label, 0);
        assert_eq!(run.fallbacks, 1);
        let log = std::fs::read_to_string(&path).unwrap();
        assert_eq!(log.lines().count(), 2);
        assert!(log.lines().nth(1).unwrap().contains("no <label> tag pair"));
    }

    #[test]
    fn finetuned_mode_requires_model_and_budget_aborts() {
        let ds = split(&[("a", None), ("b", None)], TaskId::A);
        let spec = PromptSpec::for_scheme(ds.scheme(), PromptMode::Finetuned);
        let provider = MockLlmProvider::constant(wrap_label("HATE"));
        assert!(matches!(
            run_llm(&ds, &spec, &provider, None, 0, &LlmOptions::default(), None),
            Err(Error::Precondition(_))
        ));
        let zero = PromptSpec::for_scheme(ds.scheme(), PromptMode::ZeroShot);
        let capped = LlmOptions {
            budget: Some(1),
            max_in_flight: 1,
            ..LlmOptions::default()
        };
        assert!(matches!(
            run_llm(&ds, &zero, &provider, None, 0, &capped, None),
            Err(Error::BudgetExhausted(1))
        ));
    }

    #[test]
    fn finetune_submission_and_replay() {
        let dir = tempfile::tempdir().unwrap();
        let train = split(
            &[
                ("x one", Some(1)),
                ("y two", Some(0)),
                ("z three", Some(1)),
                ("w four", Some(0)),
            ],
            TaskId::A,
        );
        let eval = Dataset::empty(scheme(TaskId::A));
        let provider = MockLlmProvider::constant("nonsense");
        let job = submit_finetune(&train, &eval, &provider, FINETUNE_EPOCHS, Some(dir.path())).unwrap();
        assert_eq!(job.epochs, 4);
        assert_eq!(job.train_records, 4);
        assert!(job.model_id.starts_with("mock-ft-"));
        let lines = std::fs::read_to_string(dir.path().join("train.jsonl")).unwrap();
        assert_eq!(lines.lines().count(), 4);
        assert!(lines.contains("\"role\":\"assistant\""));

        let spec = PromptSpec::for_scheme(train.scheme(), PromptMode::Finetuned);
        let run = run_llm(
            &train,
            &spec,
            &provider,
            Some(&job.model_id),
            0,
            &LlmOptions::default(),
            None,
        )
        .unwrap();
        let labels: Vec<usize> = run.predictions.iter().map(|p| p.label).collect();
        assert_eq!(labels, vec![1, 0, 1, 0]);
        assert_eq!(run.transcript[0].model, job.model_id);

        let unlabeled = split(&[("a", None)], TaskId::A);
        assert!(matches!(
            submit_finetune(&unlabeled, &eval, &provider, 4, None),
            Err(Error::Precondition(_))
        ));
        assert!(submit_finetune(&train, &eval, &provider, 0, None).is_err());
    }

    #[test]
    fn fallback_and_exemplar_sampling() {
        let train = split(
            &[
                ("a", Some(0)),
                ("b", Some(1)),
                ("c", Some(1)),
                ("d", Some(0)),
                ("e", Some(1)),
            ],
            TaskId::A,
        );
        assert_eq!(resolve_fallback(&FallbackPolicy::MajorityClass, &train).unwrap(), 1);
        assert_eq!(
            resolve_fallback(&FallbackPolicy::Label("no-hate".into()), &train).unwrap(),
            0
        );
        let ex = sample_exemplars(&train, 3, 42);
        assert_eq!(ex.len(), 5);
        assert_eq!(ex, sample_exemplars(&train, 3, 42));
        let ex = sample_exemplars(&train, 1, 7);
        assert_eq!(ex.iter().filter(|e| e.label == "HATE").count(), 1);
        assert_eq!(ex.iter().filter(|e| e.label == "NO-HATE").count(), 1);
    }

    #[test]
    fn throttle_spaces_requests() {
        let t = Throttle::new(Some(6000));
        let start = Instant::now();
        for _ in 0..3 {
            t.wait();
        }
        assert!(start.elapsed() >= Duration::from_millis(20));
    }
}
