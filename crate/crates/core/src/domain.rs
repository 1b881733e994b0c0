//! Core value types and the classification metrics computed over them.
//!
//! Metrics are computed in exact rational arithmetic and only converted to
//! `f64` at the end, so results do not depend on summation order.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use num_traits::{ToPrimitive, Zero};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};

/// Binary sarcasm label. `Sarcastic` is the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Label {
    Sarcastic,
    NotSarcastic,
}

impl Label {
    pub const ALL: [Label; 2] = [Label::Sarcastic, Label::NotSarcastic];

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Sarcastic => "sarcastic",
            Label::NotSarcastic => "not_sarcastic",
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Sarcastic => Label::NotSarcastic,
            Label::NotSarcastic => Label::Sarcastic,
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sarcastic" => Ok(Label::Sarcastic),
            "not_sarcastic" => Ok(Label::NotSarcastic),
            other => Err(Error::Argument(format!("unknown label `{other}`"))),
        }
    }
}

/// Outcome of parsing a model's final answer.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Verdict {
    Decided(Label),
    /// The final-stage text that could not be mapped to a label.
    Unparseable { raw: String },
}

impl Verdict {
    pub fn label(&self) -> Option<Label> {
        match self {
            Verdict::Decided(label) => Some(*label),
            Verdict::Unparseable { .. } => None,
        }
    }

    /// Serialized token: `sarcastic`, `not_sarcastic` or `unparseable`.
    pub fn tag(&self) -> &'static str {
        match self {
            Verdict::Decided(label) => label.as_str(),
            Verdict::Unparseable { .. } => "unparseable",
        }
    }
}

// Serialized as its tag only. The raw text of an unparseable verdict lives in
// the record's transcripts and is restored from there when a record is read.
impl Serialize for Verdict {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_str(self.tag())
    }
}

impl<'de> Deserialize<'de> for Verdict {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let tag = String::deserialize(deserializer)?;
        match tag.as_str() {
            "unparseable" => Ok(Verdict::Unparseable { raw: String::new() }),
            other => other
                .parse::<Label>()
                .map(Verdict::Decided)
                .map_err(serde::de::Error::custom),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextTurn {
    pub speaker: String,
    pub text: String,
}

/// One labeled classification instance.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub dataset_id: String,
    pub utterance: String,
    #[serde(default)]
    pub context_turns: Vec<ContextTurn>,
    #[serde(default)]
    pub speaker: Option<String>,
    pub gold: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnparseablePolicy {
    /// Unparseable outputs are scored as the wrong label.
    #[default]
    CountAsWrong,
    /// Unparseable outputs are left out of the metric denominators.
    Exclude,
}

impl FromStr for UnparseablePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "count_as_wrong" | "count-as-wrong" => Ok(UnparseablePolicy::CountAsWrong),
            "exclude" => Ok(UnparseablePolicy::Exclude),
            other => Err(Error::Argument(format!(
                "unknown unparseable policy `{other}` (expected count-as-wrong or exclude)"
            ))),
        }
    }
}

/// Confusion counts with `Sarcastic` as the positive class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
    pub unparseable: u64,
}

impl ConfusionCounts {
    /// Records that enter the metric denominators.
    pub fn scored(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// Counts as seen with `NotSarcastic` as the positive class.
    pub fn swapped(&self) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tn,
            fp: self.fn_,
            fn_: self.fp,
            tn: self.tp,
            unparseable: self.unparseable,
        }
    }
}

pub fn confusion_counts<'a, I>(records: I, policy: UnparseablePolicy) -> Result<ConfusionCounts>
where
    I: IntoIterator<Item = (Label, &'a Verdict)>,
{
    let mut counts = ConfusionCounts::default();
    let mut seen = 0usize;
    for (gold, verdict) in records {
        seen += 1;
        match (gold, verdict.label()) {
            (Label::Sarcastic, Some(Label::Sarcastic)) => counts.tp += 1,
            (Label::NotSarcastic, Some(Label::Sarcastic)) => counts.fp += 1,
            (Label::Sarcastic, Some(Label::NotSarcastic)) => counts.fn_ += 1,
            (Label::NotSarcastic, Some(Label::NotSarcastic)) => counts.tn += 1,
            (gold, None) => {
                counts.unparseable += 1;
                if policy == UnparseablePolicy::CountAsWrong {
                    match gold {
                        Label::Sarcastic => counts.fn_ += 1,
                        Label::NotSarcastic => counts.fp += 1,
                    }
                }
            }
        }
    }
    if seen == 0 {
        return Err(Error::EmptyRun);
    }
    Ok(counts)
}

fn to_f64(r: Ratio<u64>) -> f64 {
    r.to_f64().expect("ratio of u64 values fits in f64")
}

pub fn accuracy_exact(counts: &ConfusionCounts) -> Result<Ratio<u64>> {
    let total = counts.scored();
    if total == 0 {
        return Err(Error::EmptyRun);
    }
    Ok(Ratio::new(counts.tp + counts.tn, total))
}

pub fn accuracy(counts: &ConfusionCounts) -> Result<f64> {
    accuracy_exact(counts).map(to_f64)
}

/// F1 of the positive class; zero when the class has no support and no predictions.
fn positive_f1(counts: &ConfusionCounts) -> Ratio<u64> {
    let denom = 2 * counts.tp + counts.fp + counts.fn_;
    if denom == 0 {
        Ratio::zero()
    } else {
        Ratio::new(2 * counts.tp, denom)
    }
}

pub fn per_class_f1_exact(counts: &ConfusionCounts) -> Result<BTreeMap<Label, Ratio<u64>>> {
    if counts.scored() == 0 {
        return Err(Error::EmptyRun);
    }
    Ok(BTreeMap::from([
        (Label::Sarcastic, positive_f1(counts)),
        (Label::NotSarcastic, positive_f1(&counts.swapped())),
    ]))
}

pub fn macro_f1_exact(counts: &ConfusionCounts) -> Result<Ratio<u64>> {
    let per_class = per_class_f1_exact(counts)?;
    let sum = per_class.values().fold(Ratio::zero(), |acc, f| acc + f);
    Ok(sum / 2)
}

pub fn macro_f1(counts: &ConfusionCounts) -> Result<f64> {
    macro_f1_exact(counts).map(to_f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class_f1: BTreeMap<Label, f64>,
    pub counts: ConfusionCounts,
    /// Records entering the metric denominators.
    pub n: u64,
    pub policy: UnparseablePolicy,
}

impl MetricsSummary {
    pub fn from_counts(counts: ConfusionCounts, policy: UnparseablePolicy) -> Result<Self> {
        let per_class = per_class_f1_exact(&counts)?;
        Ok(MetricsSummary {
            accuracy: accuracy(&counts)?,
            macro_f1: macro_f1(&counts)?,
            per_class_f1: per_class.into_iter().map(|(l, f)| (l, to_f64(f))).collect(),
            counts,
            n: counts.scored(),
            policy,
        })
    }

    /// Every record that was scored, unparseable ones included.
    pub fn total_records(&self) -> u64 {
        match self.policy {
            UnparseablePolicy::CountAsWrong => self.n,
            UnparseablePolicy::Exclude => self.n + self.counts.unparseable,
        }
    }

    pub fn unparseable_rate(&self) -> f64 {
        match self.total_records() {
            0 => 0.0,
            total => self.counts.unparseable as f64 / total as f64,
        }
    }
}
