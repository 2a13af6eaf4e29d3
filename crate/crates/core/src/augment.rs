//! Back-translation augmentation of the training split.
//!
//! Each chain routes a text from the source language through a sequence of
//! pivot languages and back, producing one paraphrased copy per training
//! instance per chain.

use std::collections::{BTreeSet, HashMap, HashSet};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cache::{content_hash, hash_parts, DiskCache};
use crate::corpus::{Dataset, Instance, Origin, Split};
use crate::error::{Error, Result};
use crate::ocr::thread_pool;
use crate::retry::RetryPolicy;

pub const SOURCE_LANG: &str = "en";

/// An ordered pivot sequence whose last element is the source language.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainSpec {
    pub tag: String,
    pub pivots: Vec<String>,
}

impl ChainSpec {
    pub fn new<S: Into<String>>(tag: impl Into<String>, pivots: impl IntoIterator<Item = S>) -> Self {
        ChainSpec {
            tag: tag.into(),
            pivots: pivots.into_iter().map(Into::into).collect(),
        }
    }

    pub fn validate(&self, source_lang: &str) -> Result<()> {
        if self.tag.trim().is_empty() || self.tag.contains('#') {
            return Err(Error::Config(format!("invalid chain tag {:?}", self.tag)));
        }
        if self.pivots.len() < 2 {
            return Err(Error::Config(format!(
                "chain {:?} needs at least two languages",
                self.tag
            )));
        }
        if self.pivots.last().map(String::as_str) != Some(source_lang) {
            return Err(Error::Config(format!(
                "chain {:?} must end in the source language {source_lang:?}",
                self.tag
            )));
        }
        Ok(())
    }

    /// `(from, to)` pairs starting at the source language.
    pub fn hops<'a>(&'a self, source_lang: &'a str) -> impl Iterator<Item = (&'a str, &'a str)> + 'a {
        std::iter::once(source_lang)
            .chain(self.pivots.iter().map(String::as_str))
            .zip(self.pivots.iter().map(String::as_str))
    }
}

/// Xhosa→Twi→English and Lao→Pashto→Yoruba→English.
pub fn default_chains() -> Vec<ChainSpec> {
    vec![
        ChainSpec::new("xh-tw", ["xh", "tw", "en"]),
        ChainSpec::new("lo-ps-yo", ["lo", "ps", "yo", "en"]),
    ]
}

pub fn validate_chains(chains: &[ChainSpec], source_lang: &str) -> Result<()> {
    let mut tags = HashSet::new();
    for chain in chains {
        chain.validate(source_lang)?;
        if !tags.insert(chain.tag.as_str()) {
            return Err(Error::Config(format!("duplicate chain tag {:?}", chain.tag)));
        }
    }
    Ok(())
}

pub trait TranslationProvider: Send + Sync {
    fn name(&self) -> &str;
    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct IdentityTranslator;

impl TranslationProvider for IdentityTranslator {
    fn name(&self) -> &str {
        "identity"
    }

    fn translate(&self, text: &str, _from: &str, _to: &str) -> Result<String> {
        Ok(text.to_string())
    }
}

/// Mock translator answering from a fixed table. Entries keyed by
/// `(from, to, text)` take precedence over per-hop entries keyed by `(from, to)`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct TableTranslator {
    hops: HashMap<String, String>,
    exact: HashMap<String, String>,
}

impl TableTranslator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn hop(mut self, from: &str, to: &str, output: impl Into<String>) -> Self {
        self.hops.insert(format!("{from}>{to}"), output.into());
        self
    }

    pub fn exact(mut self, from: &str, to: &str, text: &str, output: impl Into<String>) -> Self {
        self.exact.insert(format!("{from}>{to}>{text}"), output.into());
        self
    }
}

impl TranslationProvider for TableTranslator {
    fn name(&self) -> &str {
        "table"
    }

    fn translate(&self, text: &str, from: &str, to: &str) -> Result<String> {
        self.exact
            .get(&format!("{from}>{to}>{text}"))
            .or_else(|| self.hops.get(&format!("{from}>{to}")))
            .cloned()
            .ok_or_else(|| Error::provider("table", format!("no entry for {from}->{to}")))
    }
}

/// Translates `text` hop by hop along `chain`. When `cache` is given each hop
/// is cached by (provider, text hash, from, to).
pub fn back_translate(
    text: &str,
    chain: &ChainSpec,
    provider: &dyn TranslationProvider,
    cache: Option<&DiskCache>,
    retry: &RetryPolicy,
) -> Result<String> {
    if text.trim().is_empty() {
        return Err(Error::Precondition("cannot back-translate empty text".into()));
    }
    chain.validate(SOURCE_LANG)?;
    let mut current = text.to_string();
    for (from, to) in chain.hops(SOURCE_LANG) {
        let key = hash_parts([provider.name(), &content_hash(current.as_bytes()), from, to]);
        if let Some(hit) = cache.map(|c| c.get::<String>(&key)).transpose()?.flatten() {
            current = hit;
            continue;
        }
        let out = retry.run(|| provider.translate(&current, from, to))?;
        if out.trim().is_empty() {
            return Err(Error::provider(
                provider.name(),
                format!("empty translation {from}->{to}"),
            ));
        }
        if let Some(c) = cache {
            c.put(&key, &out)?;
        }
        current = out;
    }
    Ok(current)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentOptions {
    pub retry: RetryPolicy,
    pub max_in_flight: usize,
    /// Drop copies whose text is identical to the parent's.
    pub drop_exact_duplicates: bool,
}

impl Default for AugmentOptions {
    fn default() -> Self {
        AugmentOptions {
            retry: RetryPolicy::default(),
            max_in_flight: 4,
            drop_exact_duplicates: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Skipped {
    pub parent_id: String,
    pub chain_tag: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct AugmentOutcome {
    /// Augmented instances only, ordered by (parent id, chain tag).
    pub dataset: Dataset,
    pub skipped: Vec<Skipped>,
    pub dropped_duplicates: usize,
}

/// Produces one back-translated copy per (train instance, chain). With
/// `target_labels` only instances carrying one of those labels are used.
/// Provider failures skip the copy rather than failing the run.
pub fn augment_dataset(
    dataset: &Dataset,
    chains: &[ChainSpec],
    provider: &dyn TranslationProvider,
    target_labels: Option<&BTreeSet<usize>>,
    cache: Option<&DiskCache>,
    options: &AugmentOptions,
) -> Result<AugmentOutcome> {
    if chains.is_empty() {
        return Err(Error::Precondition("no augmentation chains configured".into()));
    }
    validate_chains(chains, SOURCE_LANG)?;
    let parents: Vec<&Instance> = dataset
        .split(Split::Train)
        .filter(|i| i.origin == Origin::Original)
        .collect();
    if let Some(unlabeled) = parents.iter().find(|i| i.label.is_none()) {
        return Err(Error::UnlabeledInstance(unlabeled.id.clone()));
    }
    let selected: Vec<&Instance> = parents
        .into_iter()
        .filter(|i| target_labels.is_none_or(|t| i.label.is_some_and(|l| t.contains(&l))))
        .collect();

    let jobs: Vec<(&Instance, &ChainSpec)> = selected
        .iter()
        .flat_map(|inst| chains.iter().map(move |c| (*inst, c)))
        .collect();
    let pool = thread_pool(options.max_in_flight)?;
    let results: Vec<(&Instance, &ChainSpec, Result<String>)> = pool.install(|| {
        jobs.par_iter()
            .map(|(inst, chain)| {
                (
                    *inst,
                    *chain,
                    back_translate(&inst.text, chain, provider, cache, &options.retry),
                )
            })
            .collect()
    });

    let mut augmented = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    let mut dropped_duplicates = 0;
    for (parent, chain, result) in results {
        match result {
            Ok(text) => {
                if options.drop_exact_duplicates && text == parent.text {
                    dropped_duplicates += 1;
                    continue;
                }
                augmented.push(Instance {
                    id: Instance::augmented_id(&parent.id, &chain.tag),
                    image_path: parent.image_path.clone(),
                    text,
                    label: parent.label,
                    split: Split::Train,
                    origin: Origin::Augmented,
                    chain_tag: Some(chain.tag.clone()),
                });
            }
            Err(e) => {
                log::warn!("skipping {} via {}: {e}", parent.id, chain.tag);
                skipped.push(Skipped {
                    parent_id: parent.id.clone(),
                    chain_tag: chain.tag.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    augmented.sort_by(|a, b| (a.parent_id(), a.chain_tag.as_deref()).cmp(&(b.parent_id(), b.chain_tag.as_deref())));
    if !skipped.is_empty() {
        log::warn!("{} augmentation copies skipped", skipped.len());
    }
    Ok(AugmentOutcome {
        dataset: Dataset::new(dataset.scheme().clone(), augmented)?,
        skipped,
        dropped_duplicates,
    })
}
