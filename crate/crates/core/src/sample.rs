//! Score-proportional prompt sampling.
//!
//! Training draws one augmented prompt per step with probability
//! proportional to its filtered score. Zeroed scores can never be drawn.
//! When every score is zero the sampler falls back to the original prompt
//! and says so through the `original` sentinel instead of failing the
//! record.

use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;
use rand::Rng;
use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::augment::PromptPool;
use crate::embed::ScoreVector;
use crate::seed;

/// Index of the drawn pool item, or the `original` sentinel when the whole
/// pool was filtered out.
///
/// Serialized as a plain number or the string `"original"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChosenIndex {
    Original,
    Pool(usize),
}

impl Serialize for ChosenIndex {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            ChosenIndex::Original => serializer.serialize_str("original"),
            ChosenIndex::Pool(i) => serializer.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for ChosenIndex {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct IndexVisitor;

        impl Visitor<'_> for IndexVisitor {
            type Value = ChosenIndex;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a pool index or the string \"original\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<ChosenIndex, E> {
                usize::try_from(v)
                    .map(ChosenIndex::Pool)
                    .map_err(|_| E::custom("pool index out of range"))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<ChosenIndex, E> {
                usize::try_from(v)
                    .map(ChosenIndex::Pool)
                    .map_err(|_| E::custom("pool index must be non-negative"))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<ChosenIndex, E> {
                if v == "original" {
                    Ok(ChosenIndex::Original)
                } else {
                    Err(E::custom("expected \"original\""))
                }
            }
        }

        deserializer.deserialize_any(IndexVisitor)
    }
}

/// One sampling draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleOutcome {
    pub chosen_text: String,
    pub chosen_index: ChosenIndex,
    /// Exact normalized distribution the draw was made from; empty when the
    /// pool had no positive scores.
    pub probabilities: Vec<f64>,
    /// Seed this draw was made with.
    pub seed: u64,
}

/// Sampling failures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
pub enum SampleError {
    #[error("pool has {pool} items but the score vector has {scores}")]
    LengthMismatch { pool: usize, scores: usize },
}

/// Exact sampling distribution implied by the scores: each score divided by
/// the score sum. All-zero scores yield an empty distribution.
pub fn exact_distribution(scores: &ScoreVector) -> Vec<f64> {
    normalize_scores(scores.scores())
}

pub(crate) fn normalize_scores(scores: &[f64]) -> Vec<f64> {
    let total: f64 = scores.iter().sum();
    if total <= 0.0 {
        return Vec::new();
    }
    scores.iter().map(|s| s / total).collect()
}

/// Draws an index from a normalized distribution by inverse-CDF scan.
/// Entries with probability zero are never returned. Returns `None` when no
/// entry is positive.
pub fn sample_index<R: Rng + ?Sized>(probabilities: &[f64], rng: &mut R) -> Option<usize> {
    let last_positive = probabilities.iter().rposition(|p| *p > 0.0)?;
    let u: f64 = rng.random();
    let mut cumulative = 0.0;
    for (i, &p) in probabilities.iter().enumerate().take(last_positive) {
        if p <= 0.0 {
            continue;
        }
        cumulative += p;
        if u < cumulative {
            return Some(i);
        }
    }
    // Rounding in the cumulative sum can leave the tail short of 1.0; the
    // final positive entry absorbs it.
    Some(last_positive)
}

/// Draws one prompt from the pool in proportion to its score.
///
/// The outcome records the exact distribution and the seed, so any draw can
/// be replayed. All-zero scores select the original prompt.
pub fn sample_prompt(pool: &PromptPool, scores: &ScoreVector, rng_seed: u64) -> Result<SampleOutcome, SampleError> {
    if pool.items.len() != scores.len() {
        return Err(SampleError::LengthMismatch { pool: pool.items.len(), scores: scores.len() });
    }
    let probabilities = exact_distribution(scores);
    let mut rng = seed::rng(rng_seed);
    match sample_index(&probabilities, &mut rng) {
        Some(index) => Ok(SampleOutcome {
            chosen_text: pool.items[index].text.clone(),
            chosen_index: ChosenIndex::Pool(index),
            probabilities,
            seed: rng_seed,
        }),
        None => Ok(SampleOutcome {
            chosen_text: pool.original.clone(),
            chosen_index: ChosenIndex::Original,
            probabilities,
            seed: rng_seed,
        }),
    }
}
