//! Text extraction from images through a pluggable OCR provider.
//!
//! Results are cached on disk keyed by the image's content hash and the
//! provider name, so each image is sent to a given provider at most once.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::atomic::{AtomicUsize, Ordering};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{content_hash, hash_parts, DiskCache};
use crate::corpus::Dataset;
use crate::error::{Error, Result};
use crate::retry::RetryPolicy;

/// Raw provider output: text blocks in reading order.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Recognition {
    pub blocks: Vec<String>,
    pub confidence: Option<f64>,
}

impl Recognition {
    pub fn text(text: impl Into<String>) -> Self {
        Recognition {
            blocks: vec![text.into()],
            confidence: None,
        }
    }
}

pub trait OcrProvider: Send + Sync {
    fn name(&self) -> &str;
    fn recognize(&self, image: &[u8]) -> Result<Recognition>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrResult {
    pub instance_id: String,
    pub text: String,
    pub confidence: Option<f64>,
    pub provider: String,
    pub content_hash: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CachedRecognition {
    text: String,
    confidence: Option<f64>,
    provider: String,
    content_hash: String,
}

/// Joins blocks with single spaces, turning whitespace controls into spaces
/// and dropping other control characters.
pub fn normalize_blocks<S: AsRef<str>>(blocks: &[S]) -> String {
    let mut out = String::new();
    for block in blocks {
        for word in block
            .as_ref()
            .chars()
            .filter_map(|c| match c {
                c if c.is_whitespace() => Some(' '),
                c if c.is_control() => None,
                c => Some(c),
            })
            .collect::<String>()
            .split(' ')
            .filter(|w| !w.is_empty())
        {
            if !out.is_empty() {
                out.push(' ');
            }
            out.push_str(word);
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum UnreadablePolicy {
    #[default]
    Fail,
    Skip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrOptions {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    pub on_unreadable: UnreadablePolicy,
}

impl Default for OcrOptions {
    fn default() -> Self {
        OcrOptions {
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            on_unreadable: UnreadablePolicy::Fail,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OcrOutcome {
    pub dataset: Dataset,
    pub results: Vec<OcrResult>,
    pub provider_calls: usize,
    /// Instances whose image could not be read (only with `UnreadablePolicy::Skip`).
    pub unreadable: Vec<String>,
    /// Instances whose OCR text came back empty; kept for manual review and
    /// left out of training.
    pub empty_text: Vec<String>,
}

fn cache_key(provider: &str, hash: &str) -> String {
    hash_parts([provider, hash])
}

pub(crate) fn thread_pool(max_in_flight: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(max_in_flight.max(1))
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))
}

/// Fills in `text` for every instance that lacks it. Instances that already
/// have text are left untouched.
pub fn extract_text(
    dataset: &Dataset,
    provider: &dyn OcrProvider,
    cache: &DiskCache,
    options: &OcrOptions,
) -> Result<OcrOutcome> {
    let pending: Vec<usize> = dataset
        .instances()
        .iter()
        .enumerate()
        .filter(|(_, i)| !i.has_text())
        .map(|(idx, _)| idx)
        .collect();
    let pool = thread_pool(options.max_in_flight)?;

    // read and hash images
    let hashed: Vec<(usize, Result<String>)> = pool.install(|| {
        pending
            .par_iter()
            .map(|&idx| {
                let inst = &dataset.instances()[idx];
                let read =
                    match &inst.image_path {
                        Some(path) => std::fs::read(path).map(|bytes| content_hash(&bytes)).map_err(|source| {
                            Error::ImageUnreadable {
                                id: inst.id.clone(),
                                path: path.clone(),
                                source,
                            }
                        }),
                        None => Err(Error::ImageUnreadable {
                            id: inst.id.clone(),
                            path: PathBuf::new(),
                            source: std::io::Error::new(std::io::ErrorKind::NotFound, "no image_path"),
                        }),
                    };
                (idx, read)
            })
            .collect()
    });

    let mut unreadable = Vec::new();
    let mut first_seen: Vec<(usize, String)> = Vec::new();
    let mut repeats: Vec<(usize, String)> = Vec::new();
    let mut seen: HashMap<String, ()> = HashMap::new();
    for (idx, hashed) in hashed {
        match hashed {
            Ok(hash) => {
                if seen.insert(hash.clone(), ()).is_none() {
                    first_seen.push((idx, hash));
                } else {
                    repeats.push((idx, hash));
                }
            }
            Err(e) => match options.on_unreadable {
                UnreadablePolicy::Fail => return Err(e),
                UnreadablePolicy::Skip => {
                    log::warn!("{e}; skipping");
                    unreadable.push(dataset.instances()[idx].id.clone());
                }
            },
        }
    }

    let calls = AtomicUsize::new(0);
    let fetch = |idx: usize, hash: &str| -> Result<CachedRecognition> {
        let key = cache_key(provider.name(), hash);
        if let Some(hit) = cache.get::<CachedRecognition>(&key)? {
            return Ok(hit);
        }
        let inst = &dataset.instances()[idx];
        let path = inst.image_path.as_ref().expect("hashed instances have a path");
        let bytes = std::fs::read(path).map_err(|source| Error::ImageUnreadable {
            id: inst.id.clone(),
            path: path.clone(),
            source,
        })?;
        let recognition = options.retry.run(|| {
            calls.fetch_add(1, Ordering::Relaxed);
            provider.recognize(&bytes)
        })?;
        let confidence = recognition.confidence.map(|c| c.clamp(0.0, 1.0));
        let record = CachedRecognition {
            text: normalize_blocks(&recognition.blocks),
            confidence,
            provider: provider.name().to_string(),
            content_hash: hash.to_string(),
        };
        cache.put(&key, &record)?;
        Ok(record)
    };

    let fetched: Vec<(usize, Result<CachedRecognition>)> = pool.install(|| {
        first_seen
            .par_iter()
            .map(|(idx, hash)| (*idx, fetch(*idx, hash)))
            .collect()
    });
    let mut records: Vec<(usize, CachedRecognition)> = Vec::with_capacity(pending.len());
    for (idx, rec) in fetched {
        records.push((idx, rec?));
    }
    for (idx, hash) in repeats {
        records.push((idx, fetch(idx, &hash)?));
    }
    records.sort_by_key(|(idx, _)| *idx);

    let mut instances = dataset.instances().to_vec();
    let mut results = Vec::with_capacity(records.len());
    let mut empty_text = Vec::new();
    for (idx, rec) in records {
        let inst = &mut instances[idx];
        if rec.text.is_empty() {
            log::warn!("empty OCR text for {}; flagged for review", inst.id);
            empty_text.push(inst.id.clone());
        }
        inst.text = rec.text.clone();
        results.push(OcrResult {
            instance_id: inst.id.clone(),
            text: rec.text,
            confidence: rec.confidence,
            provider: rec.provider,
            content_hash: rec.content_hash,
        });
    }

    Ok(OcrOutcome {
        dataset: Dataset::new(dataset.scheme().clone(), instances)?,
        results,
        provider_calls: calls.into_inner(),
        unreadable,
        empty_text,
    })
}

/// Deterministic provider backed by a table from image content hash to text.
/// Unknown images recognize as empty.
#[derive(Debug, Default)]
pub struct MockOcrProvider {
    table: HashMap<String, Recognition>,
    calls: AtomicUsize,
}

impl MockOcrProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_image(mut self, image: &[u8], text: impl Into<String>) -> Self {
        self.table.insert(content_hash(image), Recognition::text(text));
        self
    }

    /// Builds the table by reading each listed image file.
    pub fn from_files<I, P, S>(entries: I) -> Result<Self>
    where
        I: IntoIterator<Item = (P, S)>,
        P: AsRef<Path>,
        S: Into<String>,
    {
        let mut provider = Self::new();
        for (path, text) in entries {
            let path = path.as_ref();
            let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
            provider = provider.with_image(&bytes, text);
        }
        Ok(provider)
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::Relaxed)
    }
}

impl OcrProvider for MockOcrProvider {
    fn name(&self) -> &str {
        "mock"
    }

    fn recognize(&self, image: &[u8]) -> Result<Recognition> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        Ok(self.table.get(&content_hash(image)).cloned().unwrap_or_default())
    }
}

/// Runs a local OCR executable (tesseract by default) on each image.
#[derive(Debug, Clone)]
pub struct LocalOcrProvider {
    program: String,
    args: Vec<String>,
}

impl Default for LocalOcrProvider {
    fn default() -> Self {
        LocalOcrProvider {
            program: "tesseract".into(),
            args: vec!["{input}".into(), "stdout".into()],
        }
    }
}

impl LocalOcrProvider {
    /// `args` may contain `{input}`, replaced by the image's temporary path.
    pub fn new(program: impl Into<String>, args: Vec<String>) -> Self {
        LocalOcrProvider {
            program: program.into(),
            args,
        }
    }
}

impl OcrProvider for LocalOcrProvider {
    fn name(&self) -> &str {
        "local"
    }

    fn recognize(&self, image: &[u8]) -> Result<Recognition> {
        let mut tmp = tempfile::NamedTempFile::new().map_err(|e| Error::provider("local", e))?;
        std::io::Write::write_all(&mut tmp, image).map_err(|e| Error::provider("local", e))?;
        let input = tmp.path().to_string_lossy().into_owned();
        let args: Vec<String> = self.args.iter().map(|a| a.replace("{input}", &input)).collect();
        let output = Command::new(&self.program)
            .args(&args)
            .output()
            .map_err(|e| Error::provider("local", format!("cannot run {}: {e}", self.program)))?;
        if !output.status.success() {
            return Err(Error::provider(
                "local",
                format!(
                    "{} exited with {}: {}",
                    self.program,
                    output.status,
                    String::from_utf8_lossy(&output.stderr).trim()
                ),
            ));
        }
        let stdout = String::from_utf8_lossy(&output.stdout);
        Ok(Recognition {
            blocks: stdout.lines().map(str::to_string).collect(),
            confidence: None,
        })
    }
}
