//! Text classifiers behind a swappable backend.
//!
//! The harness owns the training loop: it asks the backend for one epoch at
//! a time, scores the eval split after each epoch and keeps the checkpoint
//! with the best eval macro-F1. Backends keep their parameters in an opaque
//! JSON state so every model handle can be persisted and reloaded.
//!
//! Three backends ship in-tree:
//! - `stub-hash`: label = hash(text) mod k, no learning.
//! - `stub-memorize`: looks up training texts, falls back to the hash rule.
//! - `linear`: hashed bag-of-words softmax regression trained with
//!   mini-batch SGD using the configured learning rate, batch size and epochs.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::corpus::{Dataset, Instance};
use crate::error::{Error, Result};
use crate::evaluate::score;
use crate::prediction::{argmax, Prediction};
use crate::scheme::LabelScheme;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub backbone: String,
    pub learning_rate: f64,
    pub train_batch_size: usize,
    pub test_batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    pub max_sequence_length: usize,
    /// Also train on the eval split. Eval scores are then optimistic.
    pub train_on_eval: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            backbone: "xlm-roberta-base".into(),
            learning_rate: 1e-5,
            train_batch_size: 8,
            test_batch_size: 8,
            epochs: 5,
            seed: 42,
            max_sequence_length: 128,
            train_on_eval: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Precondition(format!("{what} must be positive")));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate");
        }
        if self.train_batch_size == 0 {
            return bad("train_batch_size");
        }
        if self.test_batch_size == 0 {
            return bad("test_batch_size");
        }
        if self.epochs == 0 {
            return bad("epochs");
        }
        if self.max_sequence_length == 0 {
            return bad("max_sequence_length");
        }
        Ok(())
    }
}

pub trait ClassifierBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Fresh parameters before the first epoch.
    fn init(&self, config: &ModelConfig, scheme: &LabelScheme, train: &[&Instance]) -> Result<Value>;

    /// Runs one epoch, returning the mean training loss when the backend has one.
    fn train_epoch(
        &self,
        state: &mut Value,
        config: &ModelConfig,
        scheme: &LabelScheme,
        train: &[&Instance],
        epoch: usize,
    ) -> Result<Option<f64>>;

    /// Exactly one prediction per instance, in input order.
    fn predict(
        &self,
        state: &Value,
        config: &ModelConfig,
        scheme: &LabelScheme,
        instances: &[&Instance],
    ) -> Result<Vec<Prediction>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub name: String,
    pub backend: String,
    pub config: ModelConfig,
    pub scheme: LabelScheme,
    pub best_epoch: usize,
    pub state: Value,
}

impl ModelHandle {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("model.json");
        std::fs::write(&path, serde_json::to_vec(self)?).map_err(|e| Error::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join("model.json");
        let bytes = std::fs::read(&path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::MissingFile(path.clone()),
            _ => Error::io(&path, e),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochSummary {
    pub epoch: usize,
    pub loss: Option<f64>,
    pub eval_macro_f1: Option<f64>,
    pub eval_weighted_f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub model_name: String,
    pub backend: String,
    pub backbone: String,
    pub train_size: usize,
    /// Training instances dropped because their text is empty.
    pub excluded_empty_text: usize,
    pub epochs: Vec<EpochSummary>,
    pub best_epoch: usize,
}

/// Trains `name` on the labeled, non-empty training texts and returns the
/// checkpoint with the best eval macro-F1 (the last epoch when there is no
/// eval split).
pub fn train(
    name: &str,
    config: &ModelConfig,
    train_set: &Dataset,
    eval_set: &Dataset,
    backend: &dyn ClassifierBackend,
) -> Result<(ModelHandle, TrainSummary)> {
    config.validate()?;
    train_set.scheme().ensure_same(eval_set.scheme())?;
    train_set.ensure_labeled()?;
    eval_set.ensure_labeled()?;
    let scheme = train_set.scheme();

    let mut pool: Vec<&Instance> = train_set.instances().iter().collect();
    if config.train_on_eval {
        pool.extend(eval_set.instances());
    }
    let total = pool.len();
    pool.retain(|i| i.has_text());
    let excluded_empty_text = total - pool.len();
    if pool.is_empty() {
        return Err(Error::EmptyTrainSet);
    }
    let eval_instances: Vec<&Instance> = eval_set.instances().iter().filter(|i| i.has_text()).collect();
    let eval_gold = eval_set.filter(|i| i.has_text());

    let mut state = backend.init(config, scheme, &pool)?;
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut best: Option<(usize, f64, Value)> = None;
    for epoch in 1..=config.epochs {
        let loss = backend.train_epoch(&mut state, config, scheme, &pool, epoch)?;
        let (eval_macro_f1, eval_weighted_f1) = if eval_instances.is_empty() {
            (None, None)
        } else {
            let preds = run_batches(backend, &state, config, scheme, &eval_instances, name)?;
            let report = score(&preds, &eval_gold)?;
            (Some(report.macro_f1), Some(report.weighted_f1))
        };
        log::info!(
            "{name} epoch {epoch}/{}: loss {loss:?} eval macro-F1 {eval_macro_f1:?}",
            config.epochs
        );
        let metric = eval_macro_f1.unwrap_or(f64::NEG_INFINITY);
        if eval_macro_f1.is_none() || best.as_ref().is_none_or(|(_, b, _)| metric > *b) {
            best = Some((epoch, metric, state.clone()));
        }
        epochs.push(EpochSummary {
            epoch,
            loss,
            eval_macro_f1,
            eval_weighted_f1,
        });
    }
    let (best_epoch, _, best_state) = best.expect("at least one epoch");
    let handle = ModelHandle {
        name: name.to_string(),
        backend: backend.name().to_string(),
        config: config.clone(),
        scheme: scheme.clone(),
        best_epoch,
        state: best_state,
    };
    let summary = TrainSummary {
        model_name: name.to_string(),
        backend: backend.name().to_string(),
        backbone: config.backbone.clone(),
        train_size: pool.len(),
        excluded_empty_text,
        epochs,
        best_epoch,
    };
    Ok((handle, summary))
}

fn run_batches(
    backend: &dyn ClassifierBackend,
    state: &Value,
    config: &ModelConfig,
    scheme: &LabelScheme,
    instances: &[&Instance],
    model_name: &str,
) -> Result<Vec<Prediction>> {
    let batches: Vec<Result<Vec<Prediction>>> = instances
        .par_chunks(config.test_batch_size)
        .map(|batch| {
            let preds = backend.predict(state, config, scheme, batch)?;
            if preds.len() != batch.len() {
                return Err(Error::Backend(format!(
                    "{} returned {} predictions for {} instances",
                    backend.name(),
                    preds.len(),
                    batch.len()
                )));
            }
            Ok(preds)
        })
        .collect();
    let mut out = Vec::with_capacity(instances.len());
    for (batch, preds) in instances.chunks(config.test_batch_size).zip(batches) {
        for (inst, mut p) in batch.iter().zip(preds?) {
            check_prediction(&p, scheme, backend.name())?;
            p.instance_id = inst.id.clone();
            p.model_name = model_name.to_string();
            out.push(p);
        }
    }
    Ok(out)
}

fn check_prediction(p: &Prediction, scheme: &LabelScheme, backend: &str) -> Result<()> {
    if !scheme.contains(p.label) {
        return Err(Error::Backend(format!(
            "{backend} predicted out-of-scheme label {}",
            p.label
        )));
    }
    if let Some(scores) = &p.scores {
        let sum: f64 = scores.iter().sum();
        if scores.len() != scheme.len() || scores.iter().any(|s| *s < 0.0) || (sum - 1.0).abs() > 1e-6 {
            return Err(Error::Backend(format!("{backend} emitted an invalid score vector")));
        }
        if argmax(scores) != p.label {
            return Err(Error::Backend(format!("{backend} label disagrees with its scores")));
        }
    }
    Ok(())
}

/// Predicts every instance with `model`. Instances must have non-empty text.
pub fn predict(
    model: &ModelHandle,
    instances: &[Instance],
    backend: &dyn ClassifierBackend,
) -> Result<Vec<Prediction>> {
    if model.backend != backend.name() {
        return Err(Error::Backend(format!(
            "model {} was trained with backend {}, not {}",
            model.name,
            model.backend,
            backend.name()
        )));
    }
    if let Some(empty) = instances.iter().find(|i| !i.has_text()) {
        return Err(Error::EmptyText(empty.id.clone()));
    }
    let refs: Vec<&Instance> = instances.iter().collect();
    run_batches(backend, &model.state, &model.config, &model.scheme, &refs, &model.name)
}

/// Looks up an in-tree backend by name.
pub fn backend_by_name(name: &str) -> Result<Box<dyn ClassifierBackend>> {
    match name {
        "stub-hash" => Ok(Box::new(StubBackend::hashing())),
        "stub-memorize" => Ok(Box::new(StubBackend::memorizing())),
        "linear" => Ok(Box::new(LinearBackend)),
        other => Err(Error::Backend(format!(
            "unknown backend {other:?} (available: stub-hash, stub-memorize, linear)"
        ))),
    }
}

fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= u64::from(*b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

fn one_hot(k: usize, label: usize) -> Vec<f64> {
    let mut v = vec![0.0; k];
    v[label] = 1.0;
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StubMode {
    Hash,
    Memorize,
}

/// Deterministic backend for tests and dry runs.
#[derive(Debug, Clone, Copy)]
pub struct StubBackend {
    mode: StubMode,
}

impl StubBackend {
    pub fn hashing() -> Self {
        StubBackend { mode: StubMode::Hash }
    }

    pub fn memorizing() -> Self {
        StubBackend {
            mode: StubMode::Memorize,
        }
    }

    pub fn hash_label(text: &str, k: usize) -> usize {
        (fnv1a(text.trim().as_bytes()) % k as u64) as usize
    }
}

impl ClassifierBackend for StubBackend {
    fn name(&self) -> &str {
        match self.mode {
            StubMode::Hash => "stub-hash",
            StubMode::Memorize => "stub-memorize",
        }
    }

    fn init(&self, _config: &ModelConfig, scheme: &LabelScheme, train: &[&Instance]) -> Result<Value> {
        if self.mode == StubMode::Hash {
            return Ok(Value::Null);
        }
        // majority label per text; ties go to the lowest code
        let mut votes: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for inst in train {
            let label = inst.label.ok_or_else(|| Error::UnlabeledInstance(inst.id.clone()))?;
            votes.entry(inst.text.trim()).or_insert_with(|| vec![0; scheme.len()])[label] += 1;
        }
        let table: BTreeMap<&str, usize> = votes
            .into_iter()
            .map(|(text, counts)| {
                let best = (0..counts.len()).fold(0, |b, i| if counts[i] > counts[b] { i } else { b });
                (text, best)
            })
            .collect();
        Ok(serde_json::to_value(table)?)
    }

    fn train_epoch(
        &self,
        _state: &mut Value,
        _config: &ModelConfig,
        _scheme: &LabelScheme,
        _train: &[&Instance],
        _epoch: usize,
    ) -> Result<Option<f64>> {
        Ok(None)
    }

    fn predict(
        &self,
        state: &Value,
        _config: &ModelConfig,
        scheme: &LabelScheme,
        instances: &[&Instance],
    ) -> Result<Vec<Prediction>> {
        let table: HashMap<String, usize> = match self.mode {
            StubMode::Hash => HashMap::new(),
            StubMode::Memorize => serde_json::from_value(state.clone())?,
        };
        Ok(instances
            .iter()
            .map(|inst| {
                let text = inst.text.trim();
                let label = table
                    .get(text)
                    .copied()
                    .unwrap_or_else(|| Self::hash_label(text, scheme.len()));
                Prediction::scored(inst.id.clone(), one_hot(scheme.len(), label), self.name())
            })
            .collect())
    }
}

const LINEAR_BUCKETS: usize = 4096;

/// Hashed unigram+bigram features, scaled to unit length.
fn features(text: &str, max_tokens: usize) -> Vec<(usize, f64)> {
    let tokens: Vec<String> = text
        .split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .take(max_tokens)
        .map(str::to_lowercase)
        .collect();
    let mut counts: BTreeMap<usize, f64> = BTreeMap::new();
    let mut add = |key: &str| {
        *counts
            .entry((fnv1a(key.as_bytes()) % LINEAR_BUCKETS as u64) as usize)
            .or_default() += 1.0;
    };
    for t in &tokens {
        add(t);
    }
    for pair in tokens.windows(2) {
        add(&format!("{} {}", pair[0], pair[1]));
    }
    let norm = counts.values().map(|v| v * v).sum::<f64>().sqrt();
    counts
        .into_iter()
        .map(|(i, v)| (i, if norm > 0.0 { v / norm } else { 0.0 }))
        .collect()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct LinearState {
    /// `weights[class][bucket]`
    weights: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl LinearState {
    fn probabilities(&self, feats: &[(usize, f64)]) -> Vec<f64> {
        let logits: Vec<f64> = self
            .weights
            .iter()
            .zip(&self.bias)
            .map(|(w, b)| b + feats.iter().map(|(i, v)| w[*i] * v).sum::<f64>())
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / z).collect()
    }
}

/// Softmax regression over hashed n-gram features.
#[derive(Debug, Clone, Copy, Default)]
pub struct LinearBackend;

impl ClassifierBackend for LinearBackend {
    fn name(&self) -> &str {
        "linear"
    }

    fn init(&self, _config: &ModelConfig, scheme: &LabelScheme, _train: &[&Instance]) -> Result<Value> {
        let state = LinearState {
            weights: vec![vec![0.0; LINEAR_BUCKETS]; scheme.len()],
            bias: vec![0.0; scheme.len()],
        };
        Ok(serde_json::to_value(state)?)
    }

    fn train_epoch(
        &self,
        state: &mut Value,
        config: &ModelConfig,
        scheme: &LabelScheme,
        train: &[&Instance],
        epoch: usize,
    ) -> Result<Option<f64>> {
        let mut model: LinearState = serde_json::from_value(state.take())?;
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(epoch as u64));
        order.shuffle(&mut rng);
        let k = scheme.len();
        let mut total_loss = 0.0;
        for batch in order.chunks(config.train_batch_size) {
            let mut grad_w: BTreeMap<(usize, usize), f64> = BTreeMap::new();
            let mut grad_b = vec![0.0; k];
            for &idx in batch {
                let inst = train[idx];
                let label = inst.label.ok_or_else(|| Error::UnlabeledInstance(inst.id.clone()))?;
                let feats = features(&inst.text, config.max_sequence_length);
                let probs = model.probabilities(&feats);
                total_loss -= probs[label].max(1e-12).ln();
                for (c, p) in probs.iter().enumerate() {
                    let err = p - if c == label { 1.0 } else { 0.0 };
                    grad_b[c] += err;
                    for (i, v) in &feats {
                        *grad_w.entry((c, *i)).or_default() += err * v;
                    }
                }
            }
            let step = config.learning_rate / batch.len() as f64;
            for ((c, i), g) in grad_w {
                model.weights[c][i] -= step * g;
            }
            for (c, g) in grad_b.into_iter().enumerate() {
                model.bias[c] -= step * g;
            }
        }
        *state = serde_json::to_value(model)?;
        Ok(Some(total_loss / train.len() as f64))
    }

    fn predict(
        &self,
        state: &Value,
        config: &ModelConfig,
        _scheme: &LabelScheme,
        instances: &[&Instance],
    ) -> Result<Vec<Prediction>> {
        let model: LinearState = serde_json::from_value(state.clone())?;
        Ok(instances
            .iter()
            .map(|inst| {
                let probs = model.probabilities(&features(&inst.text, config.max_sequence_length));
                Prediction::scored(inst.id.clone(), probs, self.name())
            })
            .collect())
    }
}
