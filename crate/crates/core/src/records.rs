//! Record schemas shared across pipeline stages.
//!
//! These are the line types of the JSONL files the companion crate reads and
//! writes: QA input records, built manifest records, and evaluation records.
//! Field names here are the wire format.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::cug::{Caption, CugTarget};
use crate::policy::PolicyKind;
use crate::sample::SampleOutcome;

/// Ground-truth label of a QA record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Yes,
    No,
    /// Free-form answer; excluded from yes/no test sets.
    Open,
}

/// Binary ground truth for evaluation records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BinaryLabel {
    Yes,
    No,
}

impl TryFrom<Label> for BinaryLabel {
    type Error = Label;

    fn try_from(label: Label) -> Result<Self, Self::Error> {
        match label {
            Label::Yes => Ok(BinaryLabel::Yes),
            Label::No => Ok(BinaryLabel::No),
            Label::Open => Err(Label::Open),
        }
    }
}

/// One input QA pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub id: String,
    pub image_id: String,
    pub prompt: String,
    pub response: String,
    pub label: Label,
    /// Free-form origin tag (e.g. dataset name); informational only.
    #[serde(default)]
    pub source: String,
}

/// One scored pool entry inside a manifest record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolEntry {
    pub policy: PolicyKind,
    pub text: String,
    pub raw_score: f64,
    pub score: f64,
}

/// One fully built training record: the scored pool, the sampled prompt, and
/// the caption-prefixed target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub record_id: String,
    pub image_id: String,
    pub original_prompt: String,
    pub pool: Vec<PoolEntry>,
    pub sampled: SampleOutcome,
    pub caption: Caption,
    pub target: CugTarget,
    pub lambda: f64,
    pub build_seed: u64,
}

/// Which prompt variant an evaluation record shows: the unmodified original
/// or one policy's rewrite.
///
/// Serialized as the policy name or the string `"original"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvalPolicy {
    Original,
    Policy(PolicyKind),
}

impl EvalPolicy {
    pub fn name(self) -> &'static str {
        match self {
            EvalPolicy::Original => "original",
            EvalPolicy::Policy(p) => p.name(),
        }
    }
}

impl fmt::Display for EvalPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl Serialize for EvalPolicy {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EvalPolicy {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct PolicyVisitor;

        impl Visitor<'_> for PolicyVisitor {
            type Value = EvalPolicy;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a policy name or \"original\"")
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<EvalPolicy, E> {
                if v == "original" {
                    return Ok(EvalPolicy::Original);
                }
                v.parse::<PolicyKind>().map(EvalPolicy::Policy).map_err(E::custom)
            }
        }

        deserializer.deserialize_str(PolicyVisitor)
    }
}

/// One evaluation-set record. `model_response` is empty until an eval run
/// fills it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub record_id: String,
    pub policy: EvalPolicy,
    pub prompt_shown: String,
    pub gt_label: BinaryLabel,
    #[serde(default)]
    pub model_response: String,
}
