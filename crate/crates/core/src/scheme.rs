//! Label vocabularies for the two sub-tasks.
//!
//! Task A is hate-speech detection (`NO-HATE`=0, `HATE`=1). Task B is target
//! detection (`INDIVIDUAL`=0, `COMMUNITY`=1, `ORGANIZATION`=2). Codes are
//! contiguous from zero so they double as matrix indices.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TaskId {
    A,
    B,
}

impl fmt::Display for TaskId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TaskId::A => f.write_str("A"),
            TaskId::B => f.write_str("B"),
        }
    }
}

impl FromStr for TaskId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_uppercase().as_str() {
            "A" => Ok(TaskId::A),
            "B" => Ok(TaskId::B),
            other => Err(Error::Config(format!("unknown task {other:?}, expected A or B"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Label {
    pub name: String,
    pub code: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScheme {
    task: TaskId,
    labels: Vec<Label>,
}

impl LabelScheme {
    pub fn for_task(task: TaskId) -> Self {
        let names: &[&str] = match task {
            TaskId::A => &["NO-HATE", "HATE"],
            TaskId::B => &["INDIVIDUAL", "COMMUNITY", "ORGANIZATION"],
        };
        let labels = names
            .iter()
            .enumerate()
            .map(|(code, name)| Label {
                name: (*name).to_string(),
                code,
            })
            .collect();
        LabelScheme { task, labels }
    }

    pub fn task(&self) -> TaskId {
        self.task
    }

    pub fn labels(&self) -> &[Label] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.labels.iter().map(|l| l.name.as_str())
    }

    pub fn name_of(&self, code: usize) -> Option<&str> {
        self.labels.get(code).map(|l| l.name.as_str())
    }

    pub fn contains(&self, code: usize) -> bool {
        code < self.labels.len()
    }

    /// Case-insensitive lookup by label name.
    pub fn code_of(&self, name: &str) -> Option<usize> {
        let name = name.trim();
        self.labels
            .iter()
            .find(|l| l.name.eq_ignore_ascii_case(name))
            .map(|l| l.code)
    }

    /// Resolves a manifest cell that may hold either a label name or an integer code.
    pub fn resolve(&self, value: &str) -> Option<usize> {
        let value = value.trim();
        match value.parse::<usize>() {
            Ok(code) if self.contains(code) => Some(code),
            Ok(_) => None,
            Err(_) => self.code_of(value),
        }
    }

    pub(crate) fn ensure_same(&self, other: &LabelScheme) -> Result<()> {
        if self == other {
            Ok(())
        } else {
            Err(Error::SchemeMismatch {
                left: self.task.to_string(),
                right: other.task.to_string(),
            })
        }
    }
}
