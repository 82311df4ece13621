//! Prompt pool construction.
//!
//! One original prompt is rewritten once per requested policy to form a
//! [`PromptPool`]. Generation is pluggable: the offline [`RuleBasedGenerator`]
//! runs anywhere, while the companion crate provides a chat-completion
//! backed generator for real augmentation runs. Pools are built once per
//! dataset and persisted; downstream sampling re-draws from the stored pool
//! instead of re-generating.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::policy::{PolicyKind, TemplateError};
use crate::rules;
use crate::seed;

/// Where an augmented prompt came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Remote,
    RuleBased,
}

/// One rewritten prompt.
///
/// `raw_score` and `score` are absent until the pool has passed through the
/// embedding filter; the score stage fills them in.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AugmentedPrompt {
    /// Id of the source record.
    pub parent_id: String,
    pub policy: PolicyKind,
    pub text: String,
    /// Clamped cosine similarity against the original prompt.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_score: Option<f64>,
    /// `raw_score` after threshold filtering: zero or at least epsilon.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub score: Option<f64>,
    pub provenance: Provenance,
}

/// An original prompt with its augmented variants, in policy order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptPool {
    pub original: String,
    pub items: Vec<AugmentedPrompt>,
}

/// Augmentation failures.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum AugmentError {
    #[error("prompt must contain at least one word")]
    EmptyPrompt,
    #[error("at least one policy is required")]
    NoPolicies,
    #[error("generation failed for policy `{policy}`: {message}")]
    Generation { policy: PolicyKind, message: String },
    #[error("unusable completion for policy `{policy}`: {reason}")]
    ItemRejected { policy: PolicyKind, reason: RejectReason },
    #[error(transparent)]
    Template(#[from] TemplateError),
}

/// Why a completion was unusable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum RejectReason {
    #[error("the completion was empty")]
    EmptyCompletion,
    #[error("the completion echoed the instruction")]
    EchoedInstruction,
}

/// Output of one generation call.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GeneratedText {
    pub text: String,
    /// `false` when the generator had no applicable rewrite and returned the
    /// prompt unchanged.
    pub changed: bool,
}

/// A prompt rewriting backend. Implementations must be safe for concurrent
/// read-only use; the manifest builder generates from multiple threads.
///
/// `seed` is derived per item; deterministic generators must use only it for
/// randomness, remote generators may ignore it.
pub trait PromptGenerator: Sync {
    /// Stable identifier echoed into output file headers.
    fn id(&self) -> &str;

    fn provenance(&self) -> Provenance;

    fn generate(&self, policy: PolicyKind, prompt: &str, seed: u64) -> Result<GeneratedText, AugmentError>;
}

/// Offline generator applying the seeded rewriting rules from [`rules`].
#[derive(Debug, Clone, Copy, Default)]
pub struct RuleBasedGenerator;

impl PromptGenerator for RuleBasedGenerator {
    fn id(&self) -> &str {
        "rule-based"
    }

    fn provenance(&self) -> Provenance {
        Provenance::RuleBased
    }

    fn generate(&self, policy: PolicyKind, prompt: &str, seed: u64) -> Result<GeneratedText, AugmentError> {
        let outcome = rules::rule_based_augment(prompt, policy, seed)?;
        Ok(GeneratedText { text: outcome.text, changed: outcome.changed })
    }
}

/// A policy whose item was dropped, with the reason.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ItemFailure {
    pub policy: PolicyKind,
    pub reason: String,
}

/// A built pool plus per-item diagnostics.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentReport {
    pub pool: PromptPool,
    /// Items dropped because the generator's answer was unusable.
    pub failures: Vec<ItemFailure>,
    /// Policies kept in the pool whose rewrite left the prompt unchanged.
    pub unchanged: Vec<PolicyKind>,
}

/// Expands a policy list to exactly `n` entries by cycling it.
///
/// With the default seven policies and `n = 7` this is the identity; larger
/// `n` repeats policies round-robin, smaller `n` truncates.
pub fn expand_policies(policies: &[PolicyKind], n: usize) -> Vec<PolicyKind> {
    policies.iter().copied().cycle().take(n).collect()
}

/// Builds the augmented prompt pool for one record.
///
/// Items appear in `policies` order. An unusable completion drops only its
/// own item and is reported in [`AugmentReport::failures`]; a generation
/// failure (transport error, retries exhausted) aborts the whole pool and
/// names the failing policy.
pub fn augment_prompt<G: PromptGenerator + ?Sized>(
    parent_id: &str,
    prompt: &str,
    policies: &[PolicyKind],
    generator: &G,
    seed: u64,
) -> Result<AugmentReport, AugmentError> {
    let prompt = prompt.trim();
    if prompt.split_whitespace().next().is_none() {
        return Err(AugmentError::EmptyPrompt);
    }
    if policies.is_empty() {
        return Err(AugmentError::NoPolicies);
    }
    let mut items = Vec::with_capacity(policies.len());
    let mut failures = Vec::new();
    let mut unchanged = Vec::new();
    for (slot, &policy) in policies.iter().enumerate() {
        let item_seed = seed::derive(seed, &alloc::format!("augment:{policy}:{slot}"));
        match generator.generate(policy, prompt, item_seed) {
            Ok(generated) => {
                if !generated.changed {
                    unchanged.push(policy);
                }
                items.push(AugmentedPrompt {
                    parent_id: parent_id.to_string(),
                    policy,
                    text: generated.text,
                    raw_score: None,
                    score: None,
                    provenance: generator.provenance(),
                });
            }
            Err(AugmentError::ItemRejected { policy, reason }) => {
                failures.push(ItemFailure { policy, reason: reason.to_string() });
            }
            Err(err) => return Err(err),
        }
    }
    Ok(AugmentReport {
        pool: PromptPool { original: prompt.to_string(), items },
        failures,
        unchanged,
    })
}
