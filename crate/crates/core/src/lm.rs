//! Character-level n-gram model and the composite training loss.
//!
//! Tuning a real vision-language model is out of scope here, but the loss
//! algebra is not. This module provides a tiny add-k smoothed character
//! n-gram "model" that conditions on an image token plus a prompt and scores
//! targets by mean per-character negative log likelihood. On top of it,
//! [`composite_loss`] computes
//!
//! ```text
//! total = base + lambda * augmented
//! ```
//!
//! where `base` is the NLL of the target given the original prompt and
//! `augmented` is the expected NLL under score-proportional sampling of the
//! augmented prompts, either exactly (weighted sum) or by seeded Monte-Carlo
//! draws. Because the model is exact and deterministic, the loss identities
//! can be verified to machine precision.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cug::CugTarget;
use crate::records::ManifestRecord;
use crate::sample::{normalize_scores, sample_index};
use crate::seed;

/// Padding character prepended to every sequence; never part of the
/// vocabulary.
pub const BOS: char = '\u{2}';

/// Context string the model conditions on: an image token plus the prompt,
/// so the same prompt on different images makes different predictions.
pub fn context_string(image_id: &str, prompt: &str) -> String {
    alloc::format!("[img:{image_id}] {prompt}")
}

/// Model failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum LmError {
    #[error("order must be at least 1, got {0}")]
    InvalidOrder(usize),
    #[error("smoothing constant must be finite and positive, got {0}")]
    InvalidSmoothing(f64),
    #[error("training corpus must not be empty")]
    EmptyCorpus,
    #[error("target must not be empty")]
    EmptyTarget,
    #[error("monte-carlo mode needs at least one draw")]
    NoDraws,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
struct ContextCounts {
    next: BTreeMap<char, u64>,
    total: u64,
}

/// Add-k smoothed character n-gram model.
///
/// Counts are keyed by the `order - 1` characters before each position.
/// Probabilities are `(count + k) / (total + k * |V|)`; an unseen context
/// therefore backs off to the uniform distribution over the vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NgramModel {
    order: usize,
    smoothing: f64,
    counts: BTreeMap<String, ContextCounts>,
    vocabulary: BTreeSet<char>,
}

impl NgramModel {
    /// Fits the model on `(context, target)` pairs. Only transitions into
    /// target characters are counted; context characters condition but are
    /// never predicted. The vocabulary is every character seen in the
    /// corpus.
    pub fn fit(corpus: &[(String, String)], order: usize, smoothing: f64) -> Result<Self, LmError> {
        if order == 0 {
            return Err(LmError::InvalidOrder(order));
        }
        if !(smoothing > 0.0) || !smoothing.is_finite() {
            return Err(LmError::InvalidSmoothing(smoothing));
        }
        if corpus.is_empty() {
            return Err(LmError::EmptyCorpus);
        }
        let mut counts: BTreeMap<String, ContextCounts> = BTreeMap::new();
        let mut vocabulary = BTreeSet::new();
        for (context, target) in corpus {
            vocabulary.extend(context.chars());
            vocabulary.extend(target.chars());
            let sequence = padded(order, context, target);
            let start = (order - 1) + context.chars().count();
            for j in start..sequence.len() {
                let window: String = sequence[j - (order - 1)..j].iter().collect();
                let entry = counts.entry(window).or_default();
                *entry.next.entry(sequence[j]).or_insert(0) += 1;
                entry.total += 1;
            }
        }
        Ok(NgramModel { order, smoothing, counts, vocabulary })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn vocab_size(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn vocabulary(&self) -> impl Iterator<Item = char> + '_ {
        self.vocabulary.iter().copied()
    }

    /// Seen context windows, in sorted order.
    pub fn contexts(&self) -> impl Iterator<Item = &str> {
        self.counts.keys().map(String::as_str)
    }

    /// Smoothed probability of `next` after `window` (the `order - 1`
    /// preceding characters).
    pub fn char_prob(&self, window: &str, next: char) -> f64 {
        let (count, total) = match self.counts.get(window) {
            Some(entry) => (entry.next.get(&next).copied().unwrap_or(0), entry.total),
            None => (0, 0),
        };
        let k = self.smoothing;
        let v = self.vocabulary.len() as f64;
        (count as f64 + k) / (total as f64 + k * v)
    }

    /// Mean per-character negative log likelihood of `target` conditioned on
    /// the image token and prompt.
    pub fn sequence_nll(&self, image_id: &str, prompt: &str, target: TargetText<'_>) -> Result<f64, LmError> {
        let target = target.text();
        if target.is_empty() {
            return Err(LmError::EmptyTarget);
        }
        let context = context_string(image_id, prompt);
        let sequence = padded(self.order, &context, target);
        let start = (self.order - 1) + context.chars().count();
        let mut sum = 0.0;
        let mut count = 0usize;
        for j in start..sequence.len() {
            let window: String = sequence[j - (self.order - 1)..j].iter().collect();
            sum -= libm::log(self.char_prob(&window, sequence[j]));
            count += 1;
        }
        Ok(sum / count as f64)
    }

    /// Greedily decodes up to `max_chars` characters after `context`. Ties
    /// break toward the smallest character, so decoding is deterministic.
    pub fn greedy_decode(&self, context: &str, max_chars: usize) -> String {
        let mut sequence: Vec<char> = core::iter::repeat(BOS)
            .take(self.order - 1)
            .chain(context.chars())
            .collect();
        let mut out = String::new();
        for _ in 0..max_chars {
            let window: String = sequence[sequence.len() - (self.order - 1)..].iter().collect();
            let mut best: Option<(char, f64)> = None;
            for c in self.vocabulary.iter().copied() {
                let p = self.char_prob(&window, c);
                if best.is_none_or(|(_, bp)| p > bp) {
                    best = Some((c, p));
                }
            }
            let Some((c, _)) = best else { break };
            sequence.push(c);
            out.push(c);
        }
        out
    }
}

fn padded(order: usize, context: &str, target: &str) -> Vec<char> {
    core::iter::repeat(BOS)
        .take(order - 1)
        .chain(context.chars())
        .chain(target.chars())
        .collect()
}

/// The text a loss is computed against.
#[derive(Debug, Clone, Copy)]
pub enum TargetText<'a> {
    Plain(&'a str),
    /// The composed caption-prefixed target.
    Cug(&'a CugTarget),
}

impl TargetText<'_> {
    fn text(&self) -> &str {
        match self {
            TargetText::Plain(s) => s,
            TargetText::Cug(t) => &t.composed,
        }
    }
}

/// How the augmented expectation is evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LossMode {
    /// Weighted sum over the exact sampling distribution.
    Exact,
    /// Seeded Monte-Carlo estimate of the same expectation.
    MonteCarlo { seed: u64, draws: u32 },
}

/// A fully evaluated composite loss.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    /// NLL of the target given the original prompt.
    pub base: f64,
    /// Expected NLL of the target under sampled augmented prompts.
    pub augmented: f64,
    /// `base + lambda * augmented`.
    pub total: f64,
    pub lambda: f64,
    pub mode: LossMode,
}

/// Computes the composite loss of one manifest record.
///
/// The base term scores the caption-prefixed target against the original
/// prompt. The augmented term is the expectation of the same score over the
/// pool's sampling distribution; with an all-zero pool the expectation falls
/// back to the original prompt, making the total `(1 + lambda) * base`.
pub fn composite_loss(model: &NgramModel, record: &ManifestRecord, mode: LossMode) -> Result<LossBreakdown, LmError> {
    let target = TargetText::Cug(&record.target);
    let base = model.sequence_nll(&record.image_id, &record.original_prompt, target)?;
    let scores: Vec<f64> = record.pool.iter().map(|e| e.score).collect();
    let probabilities = normalize_scores(&scores);

    let augmented = if probabilities.is_empty() {
        base
    } else {
        let mut item_nll: BTreeMap<usize, f64> = BTreeMap::new();
        for (i, p) in probabilities.iter().enumerate() {
            if *p > 0.0 {
                item_nll.insert(i, model.sequence_nll(&record.image_id, &record.pool[i].text, target)?);
            }
        }
        match mode {
            LossMode::Exact => item_nll.iter().map(|(i, nll)| probabilities[*i] * nll).sum(),
            LossMode::MonteCarlo { seed: mc_seed, draws } => {
                if draws == 0 {
                    return Err(LmError::NoDraws);
                }
                let mut rng = seed::rng(mc_seed);
                let mut sum = 0.0;
                for _ in 0..draws {
                    let index = sample_index(&probabilities, &mut rng).expect("non-empty distribution");
                    sum += item_nll[&index];
                }
                sum / f64::from(draws)
            }
        }
    };

    Ok(LossBreakdown { base, augmented, total: base + record.lambda * augmented, lambda: record.lambda, mode })
}
