//! Hard-vote fusion of several models' predictions.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluate::EvalReport;
use crate::prediction::Prediction;

pub const ENSEMBLE_MODEL_NAME: &str = "ensemble";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VoteRule {
    #[default]
    Majority,
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    /// Among tied labels, the one voted by the earliest-listed member.
    #[default]
    MemberPriority,
    LowestCode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Member {
    pub model_name: String,
    pub weight: f64,
}

impl Member {
    pub fn new(model_name: impl Into<String>, weight: f64) -> Self {
        Member {
            model_name: model_name.into(),
            weight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleSpec {
    pub members: Vec<Member>,
    pub rule: VoteRule,
    pub tie_break: TieBreak,
}

impl EnsembleSpec {
    pub fn majority<S: Into<String>>(members: impl IntoIterator<Item = S>) -> Self {
        EnsembleSpec {
            members: members.into_iter().map(|m| Member::new(m, 1.0)).collect(),
            rule: VoteRule::Majority,
            tie_break: TieBreak::MemberPriority,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.members.len() < 2 {
            return Err(Error::Spec("an ensemble needs at least two members".into()));
        }
        let mut names = HashSet::new();
        for m in &self.members {
            if !names.insert(m.model_name.as_str()) {
                return Err(Error::Spec(format!("member {:?} listed twice", m.model_name)));
            }
            if !(m.weight > 0.0 && m.weight.is_finite()) {
                return Err(Error::Spec(format!(
                    "member {:?} has non-positive weight",
                    m.model_name
                )));
            }
        }
        Ok(())
    }

    /// Members sorted by descending weight; equal weights keep their order.
    pub fn ordered_by_weight(mut self) -> Self {
        self.members
            .sort_by(|a, b| b.weight.partial_cmp(&a.weight).unwrap_or(std::cmp::Ordering::Equal));
        self
    }

    fn effective_weight(&self, member: &Member) -> f64 {
        match self.rule {
            VoteRule::Majority => 1.0,
            VoteRule::Weighted => member.weight,
        }
    }
}

// Weighted sums within this relative distance of the maximum count as tied,
// which keeps the outcome independent of the weights' overall scale.
const TIE_TOLERANCE: f64 = 1e-9;

/// Fuses one instance's votes (`votes[i]` is member `i`'s label).
pub fn fuse_votes(votes: &[usize], spec: &EnsembleSpec) -> usize {
    let mut scores: BTreeMap<usize, f64> = BTreeMap::new();
    for (label, member) in votes.iter().zip(&spec.members) {
        *scores.entry(*label).or_default() += spec.effective_weight(member);
    }
    let max = scores.values().cloned().fold(f64::NEG_INFINITY, f64::max);
    let tied: Vec<usize> = scores
        .iter()
        .filter(|(_, s)| max - **s <= TIE_TOLERANCE * max.abs())
        .map(|(l, _)| *l)
        .collect();
    if tied.len() == 1 {
        return tied[0];
    }
    match spec.tie_break {
        TieBreak::LowestCode => tied[0],
        TieBreak::MemberPriority => *votes
            .iter()
            .find(|v| tied.contains(v))
            .expect("a tied label has at least one voter"),
    }
}

/// Fuses member predictions instance by instance. Output follows the first
/// member's instance order and carries the model name `ensemble`.
pub fn fuse(per_model: &HashMap<String, Vec<Prediction>>, spec: &EnsembleSpec) -> Result<Vec<Prediction>> {
    spec.validate()?;
    let mut tables: Vec<HashMap<&str, usize>> = Vec::with_capacity(spec.members.len());
    for member in &spec.members {
        let preds = per_model
            .get(&member.model_name)
            .ok_or_else(|| Error::Coverage(format!("no predictions for member {:?}", member.model_name)))?;
        let mut table = HashMap::with_capacity(preds.len());
        for p in preds {
            if table.insert(p.instance_id.as_str(), p.label).is_some() {
                return Err(Error::Coverage(format!(
                    "member {:?} predicts {:?} twice",
                    member.model_name, p.instance_id
                )));
            }
        }
        tables.push(table);
    }
    let order = &per_model[&spec.members[0].model_name];
    let n = order.len();
    if let Some((i, _)) = tables.iter().enumerate().find(|(_, t)| t.len() != n) {
        return Err(Error::Coverage(format!(
            "member {:?} covers {} instances, expected {n}",
            spec.members[i].model_name,
            tables[i].len()
        )));
    }
    let mut out = Vec::with_capacity(n);
    let mut votes = vec![0; tables.len()];
    for p in order {
        for (slot, (table, member)) in votes.iter_mut().zip(tables.iter().zip(&spec.members)) {
            *slot = *table.get(p.instance_id.as_str()).ok_or_else(|| {
                Error::Coverage(format!(
                    "member {:?} has no prediction for {:?}",
                    member.model_name, p.instance_id
                ))
            })?;
        }
        out.push(Prediction::hard(
            p.instance_id.clone(),
            fuse_votes(&votes, spec),
            ENSEMBLE_MODEL_NAME,
        ));
    }
    Ok(out)
}

/// Member weights equal to each member's eval macro-F1, in `members` order.
pub fn derive_weights(eval_reports: &HashMap<String, EvalReport>, members: &[String]) -> Result<Vec<Member>> {
    members
        .iter()
        .map(|name| {
            let report = eval_reports
                .get(name)
                .ok_or_else(|| Error::MissingReport(name.clone()))?;
            if report.macro_f1 <= 0.0 {
                return Err(Error::Spec(format!("member {name:?} has zero eval macro-F1")));
            }
            Ok(Member::new(name.clone(), report.macro_f1))
        })
        .collect()
}
