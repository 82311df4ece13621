//! Prompt embeddings, similarity scoring, and threshold filtering.
//!
//! An augmented prompt is kept only if it still means what the original
//! meant. The proxy for that is the dot product of unit-norm sentence
//! embeddings: `s_i = e(P) . e(P_i)`. Scores below the threshold `epsilon`
//! are zeroed, which removes the prompt from later sampling; scores at or
//! above it pass through unchanged.
//!
//! The crate ships a deterministic hashed bag-of-words embedder as the
//! offline fallback; a remote sentence-embedding endpoint can be plugged in
//! through the [`Embedder`] trait.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Default dimension of the hashed bag-of-words fallback embedder.
pub const FALLBACK_DIMENSION: usize = 4096;

/// Embedding and scoring failures.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum EmbedError {
    #[error("text has no alphanumeric tokens to embed: {0:?}")]
    NoTokens(String),
    #[error("embedding has zero norm and cannot be normalized")]
    ZeroNorm,
    #[error("embedding dimensions differ: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },
    #[error("embedder dimension must be at least 1, got {0}")]
    InvalidDimension(usize),
    #[error("score {value} at index {index} is neither zero nor >= epsilon {epsilon}")]
    InvalidScore { index: usize, value: f64, epsilon: f64 },
    #[error("embedding backend failed: {0}")]
    Backend(String),
}

/// A unit-norm embedding.
///
/// Construction normalizes, so every held value has L2 norm 1 within
/// floating-point error. Deserialization goes through the same path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct EmbeddingVector {
    values: Vec<f64>,
}

impl EmbeddingVector {
    /// Normalizes a raw vector to unit length.
    pub fn from_raw(values: Vec<f64>) -> Result<Self, EmbedError> {
        let mut values = values;
        let norm_sq: f64 = values.iter().map(|v| v * v).sum();
        if !(norm_sq > 0.0) || !norm_sq.is_finite() {
            return Err(EmbedError::ZeroNorm);
        }
        let norm = libm::sqrt(norm_sq);
        for v in &mut values {
            *v /= norm;
        }
        Ok(EmbeddingVector { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dimension(&self) -> usize {
        self.values.len()
    }
}

impl TryFrom<Vec<f64>> for EmbeddingVector {
    type Error = EmbedError;

    fn try_from(values: Vec<f64>) -> Result<Self, Self::Error> {
        EmbeddingVector::from_raw(values)
    }
}

impl From<EmbeddingVector> for Vec<f64> {
    fn from(v: EmbeddingVector) -> Self {
        v.values
    }
}

/// Dot product of two unit-norm embeddings, i.e. their cosine similarity.
pub fn similarity(a: &EmbeddingVector, b: &EmbeddingVector) -> Result<f64, EmbedError> {
    if a.dimension() != b.dimension() {
        return Err(EmbedError::DimensionMismatch { left: a.dimension(), right: b.dimension() });
    }
    Ok(a.values.iter().zip(&b.values).map(|(x, y)| x * y).sum())
}

/// A text embedder. Implementations must be safe for concurrent read-only
/// use; the manifest builder embeds records from multiple threads.
pub trait Embedder: Sync {
    /// Stable identifier echoed into output file headers.
    fn id(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError>;

    /// Embeds several texts. The default calls [`Embedder::embed`] per text;
    /// remote implementations override it with one batched request.
    fn embed_batch(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, EmbedError> {
        texts.iter().map(|t| self.embed(t)).collect()
    }
}

/// Deterministic hashed bag-of-words embedder.
///
/// Tokens are maximal alphanumeric runs, lowercased; each token is hashed
/// with FNV-1a into one of `dimension` buckets; the bucket counts are then
/// L2-normalized. No vocabulary, no network, no state.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HashedTfEmbedder {
    dimension: usize,
}

impl Default for HashedTfEmbedder {
    fn default() -> Self {
        HashedTfEmbedder { dimension: FALLBACK_DIMENSION }
    }
}

impl HashedTfEmbedder {
    pub fn new(dimension: usize) -> Result<Self, EmbedError> {
        if dimension == 0 {
            return Err(EmbedError::InvalidDimension(dimension));
        }
        Ok(HashedTfEmbedder { dimension })
    }
}

impl Embedder for HashedTfEmbedder {
    fn id(&self) -> &str {
        "hashed-tf"
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        let mut buckets = alloc::vec![0.0_f64; self.dimension];
        let mut any = false;
        for token in tokens(text) {
            let bucket = (seed::fnv1a64(token.as_bytes()) % self.dimension as u64) as usize;
            buckets[bucket] += 1.0;
            any = true;
        }
        if !any {
            return Err(EmbedError::NoTokens(text.to_string()));
        }
        EmbeddingVector::from_raw(buckets)
    }
}

/// Lowercased alphanumeric token runs of `text`.
fn tokens(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(|t| t.to_lowercase())
}

/// Similarity scores after threshold filtering.
///
/// Every entry is either exactly `0.0` (filtered out) or at least `epsilon`
/// (kept, value unchanged). Only [`threshold_scores`] and the validating
/// [`ScoreVector::new`] can produce one, so downstream samplers can rely on
/// the invariant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawScores")]
pub struct ScoreVector {
    scores: Vec<f64>,
    epsilon: f64,
}

#[derive(Deserialize)]
struct RawScores {
    scores: Vec<f64>,
    epsilon: f64,
}

impl TryFrom<RawScores> for ScoreVector {
    type Error = EmbedError;

    fn try_from(raw: RawScores) -> Result<Self, Self::Error> {
        ScoreVector::new(raw.scores, raw.epsilon)
    }
}

impl ScoreVector {
    /// Wraps already-thresholded scores, verifying each entry is zero or at
    /// least `epsilon`.
    pub fn new(scores: Vec<f64>, epsilon: f64) -> Result<Self, EmbedError> {
        for (index, &value) in scores.iter().enumerate() {
            if !(value == 0.0 || value >= epsilon) {
                return Err(EmbedError::InvalidScore { index, value, epsilon });
            }
        }
        Ok(ScoreVector { scores, epsilon })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    /// Indices with non-zero score.
    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.scores.iter().enumerate().filter(|(_, s)| **s > 0.0).map(|(i, _)| i)
    }
}

/// Zeroes every raw score below `epsilon`; scores at or above pass through
/// unchanged. `NaN` never compares at-or-above, so it is zeroed too.
///
/// `epsilon` is expected in `[0, 1]`; callers validate user input.
pub fn threshold_scores(raw: &[f64], epsilon: f64) -> ScoreVector {
    debug_assert!((0.0..=1.0).contains(&epsilon), "epsilon out of range: {epsilon}");
    let scores = raw.iter().map(|&s| if s >= epsilon { s } else { 0.0 }).collect();
    ScoreVector { scores, epsilon }
}

/// Embeds the original prompt and its rewrites in one batch and scores each
/// rewrite against the original.
///
/// Returns the raw clamped similarities alongside the thresholded scores,
/// index-aligned with `texts`. Raw similarities are clamped to `[-1, 1]`
/// before thresholding so floating-point noise in the unit norms cannot push
/// a score above 1.
pub fn score_pool<E: Embedder + ?Sized>(
    original: &str,
    texts: &[&str],
    embedder: &E,
    epsilon: f64,
) -> Result<(Vec<f64>, ScoreVector), EmbedError> {
    let mut batch = Vec::with_capacity(texts.len() + 1);
    batch.push(original);
    batch.extend_from_slice(texts);
    let vectors = embedder.embed_batch(&batch)?;
    if vectors.len() != batch.len() {
        return Err(EmbedError::Backend(alloc::format!(
            "embedder returned {} vectors for {} texts",
            vectors.len(),
            batch.len()
        )));
    }
    let original_vec = &vectors[0];
    let raw = vectors[1..]
        .iter()
        .map(|v| similarity(original_vec, v).map(|s| s.clamp(-1.0, 1.0)))
        .collect::<Result<Vec<f64>, EmbedError>>()?;
    let scored = threshold_scores(&raw, epsilon);
    Ok((raw, scored))
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent re-implementation of the fallback embedding pipeline used
    /// as the oracle: own hash constants, own tokenizer, own cosine.
    mod reference {
        pub fn hash(token: &str) -> u64 {
            let mut h: u64 = 14695981039346656037;
            for b in token.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(1099511628211);
            }
            h
        }

        pub fn tf(text: &str, dim: usize) -> Vec<f64> {
            let mut v = vec![0.0; dim];
            for run in text.split(|c: char| !c.is_alphanumeric()) {
                if run.is_empty() {
                    continue;
                }
                v[(hash(&run.to_lowercase()) % dim as u64) as usize] += 1.0;
            }
            v
        }

        pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
            let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
            dot / (na * nb)
        }
    }

    fn embed(text: &str) -> EmbeddingVector {
        HashedTfEmbedder::default().embed(text).unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm() {
        for text in ["dog", "is there a dog", "How many BALLOONS are in the image??", "a b c d e f g"] {
            let v = embed(text);
            let norm: f64 = v.values().iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((norm - 1.0).abs() < 1e-6, "{text}: {norm}");
        }
    }

    #[test]
    fn embedding_is_deterministic() {
        assert_eq!(embed("Is there a dog?"), embed("Is there a dog?"));
    }

    #[test]
    fn token_repetition_only_scales_direction() {
        assert_eq!(embed("dog dog"), embed("dog"));
        let sim = similarity(&embed("dog dog dog"), &embed("dog")).unwrap();
        assert!((sim - 1.0).abs() < 1e-12);
    }

    #[test]
    fn self_similarity_is_one() {
        let v = embed("is there a dog in the image");
        assert!((similarity(&v, &v).unwrap() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn similarity_matches_reference_pipeline() {
        let pairs = [
            ("is there a dog", "is there a cat"),
            ("how many balloons are in the image", "what is the count of balloons in the image"),
            ("Is There A DOG?", "is there a dog"),
            ("one two three", "four five six"),
        ];
        for (a, b) in pairs {
            let got = similarity(&embed(a), &embed(b)).unwrap();
            let want = reference::cosine(
                &reference::tf(a, FALLBACK_DIMENSION),
                &reference::tf(b, FALLBACK_DIMENSION),
            );
            assert!((got - want).abs() < 1e-12, "{a} / {b}: {got} vs {want}");
        }
    }

    #[test]
    fn case_variants_are_identical() {
        assert!((similarity(&embed("Is There A DOG?"), &embed("is there a dog")).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn disjoint_token_sets_score_zero() {
        let a = reference::tf("one two three", FALLBACK_DIMENSION);
        let b = reference::tf("four five six", FALLBACK_DIMENSION);
        let overlap = a.iter().zip(&b).any(|(x, y)| *x > 0.0 && *y > 0.0);
        assert!(!overlap, "fixture tokens collide; pick different tokens");
        let sim = similarity(&embed("one two three"), &embed("four five six")).unwrap();
        assert_eq!(sim, 0.0);
    }

    #[test]
    fn no_token_text_is_an_input_error() {
        let err = HashedTfEmbedder::default().embed("?? !! --").unwrap_err();
        assert_eq!(err, EmbedError::NoTokens("?? !! --".into()));
        assert!(err.to_string().contains("?? !! --"));
    }

    #[test]
    fn dimension_mismatch_is_an_error() {
        let a = HashedTfEmbedder::new(64).unwrap().embed("dog").unwrap();
        let b = HashedTfEmbedder::new(128).unwrap().embed("dog").unwrap();
        assert_eq!(
            similarity(&a, &b).unwrap_err(),
            EmbedError::DimensionMismatch { left: 64, right: 128 }
        );
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert_eq!(HashedTfEmbedder::new(0).unwrap_err(), EmbedError::InvalidDimension(0));
    }

    #[test]
    fn zero_norm_vector_is_rejected() {
        assert_eq!(EmbeddingVector::from_raw(vec![0.0, 0.0]).unwrap_err(), EmbedError::ZeroNorm);
        assert_eq!(EmbeddingVector::from_raw(vec![]).unwrap_err(), EmbedError::ZeroNorm);
    }

    #[test]
    fn threshold_zeroes_below_epsilon_and_keeps_at_or_above() {
        let scored = threshold_scores(&[0.9, 0.4, 0.5, 0.4999999, -0.2], 0.5);
        assert_eq!(scored.scores(), &[0.9, 0.0, 0.5, 0.0, 0.0]);
        assert_eq!(scored.epsilon(), 0.5);
    }

    #[test]
    fn threshold_at_zero_keeps_non_negative_scores() {
        let scored = threshold_scores(&[0.0, 0.3, 1.0, -0.1], 0.0);
        assert_eq!(scored.scores(), &[0.0, 0.3, 1.0, 0.0]);
    }

    #[test]
    fn threshold_zeroes_nan() {
        let scored = threshold_scores(&[f64::NAN, 0.7], 0.5);
        assert_eq!(scored.scores(), &[0.0, 0.7]);
    }

    #[test]
    fn score_vector_validates_entries() {
        assert!(ScoreVector::new(vec![0.0, 0.5, 0.9], 0.5).is_ok());
        assert_eq!(
            ScoreVector::new(vec![0.3], 0.5).unwrap_err(),
            EmbedError::InvalidScore { index: 0, value: 0.3, epsilon: 0.5 }
        );
    }

    #[test]
    fn score_pool_aligns_raw_and_thresholded() {
        let embedder = HashedTfEmbedder::default();
        let original = "is there a dog in the image";
        let texts = ["is there a dog in the image", "one two three", "is there a cat in the image"];
        let (raw, scored) = score_pool(original, &texts, &embedder, 0.5).unwrap();
        assert_eq!(raw.len(), 3);
        assert_eq!(scored.len(), 3);
        assert!((raw[0] - 1.0).abs() < 1e-12);
        assert_eq!(raw[1], 0.0);
        assert!(raw[2] > 0.5 && raw[2] < 1.0);
        assert_eq!(scored.scores()[1], 0.0);
        assert_eq!(scored.scores()[2], raw[2]);
        assert_eq!(scored.support().collect::<Vec<_>>(), vec![0, 2]);
    }

    #[test]
    fn embedding_serde_round_trips_through_normalization() {
        let v = embed("is there a dog");
        let json = serde_json::to_string(&v).unwrap();
        let back: EmbeddingVector = serde_json::from_str(&json).unwrap();
        assert_eq!(back.dimension(), v.dimension());
        for (a, b) in back.values().iter().zip(v.values()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
