//! Datasets of text-embedded-image instances.
//!
//! A dataset is read from a CSV manifest with the header
//! `id,image_path,text,label,split` (the `text` and `label` columns are
//! optional) and written back with two extra columns, `origin,chain_tag`.
//! Labels may be given as names or integer codes.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::{Component, Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::LabelScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Eval,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Eval, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Eval => "eval",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            // "dev" is what the shared-task files call the evaluation phase
            "eval" | "dev" => Ok(Split::Eval),
            "test" => Ok(Split::Test),
            other => Err(Error::Schema(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    #[default]
    Original,
    Augmented,
}

impl Origin {
    fn as_str(self) -> &'static str {
        match self {
            Origin::Original => "original",
            Origin::Augmented => "augmented",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Instance {
    pub id: String,
    pub image_path: Option<PathBuf>,
    pub text: String,
    pub label: Option<usize>,
    pub split: Split,
    pub origin: Origin,
    pub chain_tag: Option<String>,
}

impl Instance {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<usize>, split: Split) -> Self {
        Instance {
            id: id.into(),
            image_path: None,
            text: text.into(),
            label,
            split,
            origin: Origin::Original,
            chain_tag: None,
        }
    }

    pub fn has_text(&self) -> bool {
        !self.text.trim().is_empty()
    }

    /// Id of the instance an augmented copy was derived from.
    pub fn parent_id(&self) -> Option<&str> {
        match (self.origin, &self.chain_tag) {
            (Origin::Augmented, Some(tag)) => self.id.strip_suffix(tag.as_str())?.strip_suffix('#'),
            _ => None,
        }
    }

    pub fn augmented_id(parent: &str, chain_tag: &str) -> String {
        format!("{parent}#{chain_tag}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    scheme: LabelScheme,
    instances: Vec<Instance>,
}

impl Dataset {
    /// Builds a dataset, checking id uniqueness, label validity and the
    /// augmented-instance invariants.
    pub fn new(scheme: LabelScheme, instances: Vec<Instance>) -> Result<Self> {
        let mut seen = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if !seen.insert(inst.id.as_str()) {
                return Err(Error::DuplicateId(inst.id.clone()));
            }
            if let Some(code) = inst.label {
                if !scheme.contains(code) {
                    return Err(Error::Label {
                        row: None,
                        value: code.to_string(),
                        task: scheme.task().to_string(),
                    });
                }
            }
            if inst.origin == Origin::Augmented {
                check_augmented(inst)?;
            }
        }
        let ds = Dataset { scheme, instances };
        ds.check_parent_labels()?;
        Ok(ds)
    }

    pub fn empty(scheme: LabelScheme) -> Self {
        Dataset {
            scheme,
            instances: Vec::new(),
        }
    }

    pub fn scheme(&self) -> &LabelScheme {
        &self.scheme
    }

    pub fn instances(&self) -> &[Instance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&Instance> {
        self.instances.iter().find(|i| i.id == id)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Instance> {
        self.instances.iter().filter(move |i| i.split == split)
    }

    pub fn split_len(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// A new dataset holding only the instances of `split`.
    pub fn subset(&self, split: Split) -> Dataset {
        Dataset {
            scheme: self.scheme.clone(),
            instances: self.split(split).cloned().collect(),
        }
    }

    pub fn filter(&self, mut keep: impl FnMut(&Instance) -> bool) -> Dataset {
        Dataset {
            scheme: self.scheme.clone(),
            instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    /// Fails with `UnlabeledInstance` on the first instance lacking a label.
    pub fn ensure_labeled(&self) -> Result<()> {
        match self.instances.iter().find(|i| i.label.is_none()) {
            Some(i) => Err(Error::UnlabeledInstance(i.id.clone())),
            None => Ok(()),
        }
    }

    fn check_parent_labels(&self) -> Result<()> {
        let labels: HashMap<&str, Option<usize>> = self
            .instances
            .iter()
            .filter(|i| i.origin == Origin::Original)
            .map(|i| (i.id.as_str(), i.label))
            .collect();
        for inst in self.instances.iter().filter(|i| i.origin == Origin::Augmented) {
            if let Some(parent_label) = inst.parent_id().and_then(|p| labels.get(p)) {
                if *parent_label != inst.label {
                    return Err(Error::InvalidInstance {
                        id: inst.id.clone(),
                        reason: "augmented label differs from its parent".into(),
                    });
                }
            }
        }
        Ok(())
    }
}

fn check_augmented(inst: &Instance) -> Result<()> {
    let invalid = |reason: &str| Error::InvalidInstance {
        id: inst.id.clone(),
        reason: reason.to_string(),
    };
    if inst.split != Split::Train {
        return Err(invalid("augmented instances must belong to the train split"));
    }
    if inst.parent_id().is_none() {
        return Err(invalid("augmented id must be <parent_id>#<chain_tag>"));
    }
    Ok(())
}

/// Union of an original dataset with a set of augmented training copies.
pub fn merge(original: &Dataset, augmented: &Dataset) -> Result<Dataset> {
    original.scheme.ensure_same(&augmented.scheme)?;
    if let Some(bad) = augmented
        .instances
        .iter()
        .find(|i| i.origin != Origin::Augmented || i.split != Split::Train)
    {
        return Err(Error::InvalidInstance {
            id: bad.id.clone(),
            reason: "only augmented train instances can be merged".into(),
        });
    }
    let mut instances = Vec::with_capacity(original.len() + augmented.len());
    instances.extend(original.instances.iter().cloned());
    instances.extend(augmented.instances.iter().cloned());
    Dataset::new(original.scheme.clone(), instances)
}

const COL_ID: &str = "id";
const COL_IMAGE: &str = "image_path";
const COL_TEXT: &str = "text";
const COL_LABEL: &str = "label";
const COL_SPLIT: &str = "split";
const COL_ORIGIN: &str = "origin";
const COL_CHAIN: &str = "chain_tag";

/// Reads and validates a manifest. Relative image paths are resolved against
/// the manifest's directory.
pub fn load_dataset(manifest: &Path, scheme: &LabelScheme) -> Result<Dataset> {
    if !manifest.is_file() {
        return Err(Error::MissingFile(manifest.to_path_buf()));
    }
    let base = manifest.parent().unwrap_or(Path::new("."));
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::Headers).from_path(manifest)?;
    let headers = reader.headers()?.clone();
    let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));

    let id_col = column(COL_ID).ok_or_else(|| Error::Schema(format!("missing column {COL_ID:?}")))?;
    let split_col = column(COL_SPLIT).ok_or_else(|| Error::Schema(format!("missing column {COL_SPLIT:?}")))?;
    let image_col = column(COL_IMAGE);
    let text_col = column(COL_TEXT);
    if image_col.is_none() && text_col.is_none() {
        return Err(Error::Schema(format!(
            "manifest needs a {COL_IMAGE:?} or {COL_TEXT:?} column"
        )));
    }
    let label_col = column(COL_LABEL);
    let origin_col = column(COL_ORIGIN);
    let chain_col = column(COL_CHAIN);

    let mut instances = Vec::new();
    for record in reader.records() {
        let record = record?;
        let row = record.position().map(|p| p.line() as usize);
        let cell = |col: Option<usize>| col.and_then(|c| record.get(c)).map(str::trim).filter(|s| !s.is_empty());
        let id = cell(Some(id_col))
            .ok_or_else(|| Error::Schema(format!("empty id at row {}", row.unwrap_or(0))))?
            .to_string();
        let text = cell(text_col).unwrap_or_default().to_string();
        let image_path = cell(image_col).map(|p| base.join(p));
        if text.is_empty() && image_path.is_none() {
            return Err(Error::InvalidInstance {
                id,
                reason: "row has neither text nor image_path".into(),
            });
        }
        let label = match cell(label_col) {
            Some(value) => Some(scheme.resolve(value).ok_or_else(|| Error::Label {
                row,
                value: value.to_string(),
                task: scheme.task().to_string(),
            })?),
            None => None,
        };
        let split = cell(Some(split_col))
            .ok_or_else(|| Error::Schema(format!("empty split for {id:?}")))?
            .parse()?;
        let origin = match cell(origin_col) {
            None | Some("original") => Origin::Original,
            Some("augmented") => Origin::Augmented,
            Some(other) => return Err(Error::Schema(format!("unknown origin {other:?} for {id:?}"))),
        };
        instances.push(Instance {
            id,
            image_path,
            text,
            label,
            split,
            origin,
            chain_tag: cell(chain_col).map(str::to_string),
        });
    }
    Dataset::new(scheme.clone(), instances)
}

/// Writes the dataset in manifest format with `origin,chain_tag` columns.
/// Image paths are written relative to the output file's directory.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let dir = path.parent().unwrap_or(Path::new("."));
    if !dir.as_os_str().is_empty() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut writer = csv::Writer::from_path(path)?;
    writer.write_record([COL_ID, COL_IMAGE, COL_TEXT, COL_LABEL, COL_SPLIT, COL_ORIGIN, COL_CHAIN])?;
    for inst in &dataset.instances {
        let image = inst
            .image_path
            .as_deref()
            .map(|p| relative_to(p, dir).to_string_lossy().into_owned())
            .unwrap_or_default();
        let label = inst.label.and_then(|c| dataset.scheme.name_of(c)).unwrap_or_default();
        writer.write_record([
            inst.id.as_str(),
            image.as_str(),
            inst.text.as_str(),
            label,
            inst.split.as_str(),
            inst.origin.as_str(),
            inst.chain_tag.as_deref().unwrap_or_default(),
        ])?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn absolute(path: &Path) -> PathBuf {
    let joined = if path.is_absolute() {
        path.to_path_buf()
    } else {
        std::env::current_dir().unwrap_or_default().join(path)
    };
    let mut out = PathBuf::new();
    for comp in joined.components() {
        match comp {
            Component::CurDir => {}
            Component::ParentDir => {
                out.pop();
            }
            other => out.push(other),
        }
    }
    out
}

fn relative_to(path: &Path, base: &Path) -> PathBuf {
    let path = absolute(path);
    let base = absolute(base);
    let common = path
        .components()
        .zip(base.components())
        .take_while(|(a, b)| a == b)
        .count();
    if common == 0 {
        return path;
    }
    let mut rel = PathBuf::new();
    for _ in base.components().skip(common) {
        rel.push("..");
    }
    for comp in path.components().skip(common) {
        rel.push(comp);
    }
    rel
}

/// Label counts and two-decimal percentages for one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitDistribution {
    pub split: Split,
    pub total: usize,
    pub counts: Vec<usize>,
    pub percentages: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelDistribution {
    pub labels: Vec<String>,
    pub splits: Vec<SplitDistribution>,
    /// Test splits left out because some of their instances are unlabeled.
    pub omitted: Vec<Split>,
}

impl LabelDistribution {
    pub fn for_split(&self, split: Split) -> Option<&SplitDistribution> {
        self.splits.iter().find(|s| s.split == split)
    }

    pub fn percentage(&self, split: Split, label: &str) -> Option<f64> {
        let idx = self.labels.iter().position(|l| l.eq_ignore_ascii_case(label))?;
        self.for_split(split).map(|s| s.percentages[idx])
    }
}

impl fmt::Display for LabelDistribution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<14}", "Label")?;
        for s in &self.splits {
            write!(f, "{:>16}", capitalize(s.split.as_str()))?;
        }
        writeln!(f)?;
        for (idx, label) in self.labels.iter().enumerate() {
            write!(f, "{label:<14}")?;
            for s in &self.splits {
                let cell = format!("{:.2} ({})", s.percentages[idx], s.counts[idx]);
                write!(f, "{cell:>16}")?;
            }
            writeln!(f)?;
        }
        write!(f, "{:<14}", "total")?;
        for s in &self.splits {
            write!(f, "{:>16}", s.total)?;
        }
        writeln!(f)?;
        for split in &self.omitted {
            writeln!(f, "note: {split} split omitted (unlabeled instances)")?;
        }
        Ok(())
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub(crate) fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

/// Per-split label percentages. Train and eval instances must be labeled;
/// a test split with unlabeled instances is omitted and reported in
/// `omitted`.
pub fn label_distribution(dataset: &Dataset) -> Result<LabelDistribution> {
    let k = dataset.scheme.len();
    let mut counts: BTreeMap<Split, Vec<usize>> = BTreeMap::new();
    let mut omitted = Vec::new();
    for split in Split::ALL {
        let members: Vec<&Instance> = dataset.split(split).collect();
        if members.is_empty() {
            continue;
        }
        if let Some(unlabeled) = members.iter().find(|i| i.label.is_none()) {
            if split == Split::Test {
                omitted.push(split);
                continue;
            }
            return Err(Error::UnlabeledInstance(unlabeled.id.clone()));
        }
        let row = counts.entry(split).or_insert_with(|| vec![0; k]);
        for inst in members {
            row[inst.label.expect("checked above")] += 1;
        }
    }
    let splits = counts
        .into_iter()
        .map(|(split, counts)| {
            let total: usize = counts.iter().sum();
            let percentages = counts
                .iter()
                .map(|&c| round2(100.0 * c as f64 / total as f64))
                .collect();
            SplitDistribution {
                split,
                total,
                counts,
                percentages,
            }
        })
        .collect();
    Ok(LabelDistribution {
        labels: dataset.scheme.names().map(str::to_string).collect(),
        splits,
        omitted,
    })
}
