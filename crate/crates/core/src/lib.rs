//! Deterministic building blocks for prompt-augmented instruct tuning.
//!
//! The crate covers the data-side pipeline for visual question answering
//! datasets: rewriting a prompt under a fixed set of augmentation policies,
//! scoring the rewrites against the original with sentence embeddings,
//! sampling one rewrite in proportion to its score, prefixing the ground
//! truth with an image caption, and measuring the effect with yes/no answer
//! metrics. A small character-level n-gram model stands in for the tuned
//! model so the composite training loss can be verified end to end without
//! any network access.
//!
//! Everything here is `no_std` + `alloc` and fully deterministic: all
//! randomness flows from explicit seeds, and all maps are ordered. IO, file
//! formats, remote endpoints, and the CLI live in the companion `augcap`
//! crate.

#![cfg_attr(not(test), no_std)]
#![forbid(unsafe_code)]

extern crate alloc;

pub mod augment;
pub mod cug;
pub mod embed;
pub mod lm;
pub mod metrics;
pub mod policy;
pub mod records;
pub mod rules;
pub mod sample;
pub mod seed;

pub use augment::{
    augment_prompt, expand_policies, AugmentError, AugmentReport, AugmentedPrompt, GeneratedText,
    ItemFailure, PromptGenerator, PromptPool, Provenance, RejectReason, RuleBasedGenerator,
};
pub use cug::{
    compose_target, select_caption, split_response, Caption, CaptionSource, CugError, CugTarget,
    SelectionStrategy, SplitMode, CAPTION_SEPARATOR,
};
pub use embed::{
    score_pool, similarity, threshold_scores, EmbedError, Embedder, EmbeddingVector,
    HashedTfEmbedder, ScoreVector, FALLBACK_DIMENSION,
};
pub use lm::{composite_loss, context_string, LmError, LossBreakdown, LossMode, NgramModel, TargetText};
pub use metrics::{
    compute_metrics, extract_answer, extract_answer_with, per_policy_report, rows_from_records,
    AnswerRule, AnswerValue, EvalRow, ExtractedAnswer, MetricsReport, PolicyBucket, PolicyReport,
};
pub use policy::{
    render_policy_template, PolicyKind, PolicyParseError, PolicyTemplate, TemplateError, TemplateSet,
};
pub use records::{BinaryLabel, EvalPolicy, EvalRecord, Label, ManifestRecord, PoolEntry, PromptRecord};
pub use sample::{exact_distribution, sample_index, sample_prompt, ChosenIndex, SampleError, SampleOutcome};
