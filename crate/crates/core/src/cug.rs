//! Caption-utilized target construction.
//!
//! Instead of training on the bare ground truth `G`, the target becomes the
//! image caption followed by the answer: `G_hat = C + " " + G`. The model
//! then has to describe the image before answering, which conditions the
//! answer on image content. This module composes such targets and splits
//! generated text back into its caption and answer parts for evaluation.

use alloc::string::{String, ToString};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Separator between caption and answer in a composed target.
pub const CAPTION_SEPARATOR: &str = " ";

/// Caption-handling failures.
#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CugError {
    #[error("caption text must not be empty")]
    EmptyCaption,
    #[error("response text must not be empty")]
    EmptyResponse,
    #[error("no captions to select from")]
    NoCaptions,
    #[error("composed target is inconsistent: {0}")]
    Inconsistent(String),
}

/// Who wrote the caption.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CaptionSource {
    Human,
    Machine,
}

/// One image caption, normalized to end in exactly one period.
///
/// Normalization trims surrounding whitespace and collapses any trailing run
/// of periods to one, appending one if absent. It is idempotent, so captions
/// survive serialization round trips unchanged.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawCaption")]
pub struct Caption {
    pub image_id: String,
    text: String,
    pub source: CaptionSource,
}

#[derive(Deserialize)]
struct RawCaption {
    image_id: String,
    text: String,
    source: CaptionSource,
}

impl TryFrom<RawCaption> for Caption {
    type Error = CugError;

    fn try_from(raw: RawCaption) -> Result<Self, Self::Error> {
        Caption::new(raw.image_id, &raw.text, raw.source)
    }
}

impl Caption {
    pub fn new(image_id: impl Into<String>, text: &str, source: CaptionSource) -> Result<Self, CugError> {
        let normalized = normalize_caption(text)?;
        Ok(Caption { image_id: image_id.into(), text: normalized, source })
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    /// Caption length in characters.
    pub fn char_len(&self) -> usize {
        self.text.chars().count()
    }
}

fn normalize_caption(text: &str) -> Result<String, CugError> {
    let trimmed = text.trim().trim_end_matches('.').trim_end();
    if trimmed.is_empty() {
        return Err(CugError::EmptyCaption);
    }
    let mut normalized = trimmed.to_string();
    normalized.push('.');
    Ok(normalized)
}

/// How to pick one caption from an image's caption list.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectionStrategy {
    /// First caption in the list's stable order.
    FirstById,
    /// Longest caption by character count; first wins ties.
    Longest,
    /// Seeded uniform draw.
    SeededRandom,
}

impl SelectionStrategy {
    pub fn name(self) -> &'static str {
        match self {
            SelectionStrategy::FirstById => "first_by_id",
            SelectionStrategy::Longest => "longest",
            SelectionStrategy::SeededRandom => "seeded_random",
        }
    }
}

impl core::fmt::Display for SelectionStrategy {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        f.write_str(self.name())
    }
}

impl core::str::FromStr for SelectionStrategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "first_by_id" => Ok(SelectionStrategy::FirstById),
            "longest" => Ok(SelectionStrategy::Longest),
            "seeded_random" => Ok(SelectionStrategy::SeededRandom),
            other => Err(alloc::format!(
                "unknown caption strategy `{other}`; expected first_by_id, longest, or seeded_random"
            )),
        }
    }
}

/// Picks one caption from a non-empty list.
///
/// The list's order is the loader's stable order (ascending annotation id
/// for COCO files, line order for plain JSONL), so every strategy is
/// deterministic for a fixed seed.
pub fn select_caption(captions: &[Caption], strategy: SelectionStrategy, seed: u64) -> Result<&Caption, CugError> {
    if captions.is_empty() {
        return Err(CugError::NoCaptions);
    }
    let index = match strategy {
        SelectionStrategy::FirstById => 0,
        SelectionStrategy::Longest => {
            let max = captions.iter().map(Caption::char_len).max().expect("non-empty");
            captions.iter().position(|c| c.char_len() == max).expect("non-empty")
        }
        SelectionStrategy::SeededRandom => seed::rng(seed).random_range(0..captions.len()),
    };
    Ok(&captions[index])
}

/// A training target with the caption prefixed to the response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawTarget")]
pub struct CugTarget {
    pub caption: Caption,
    pub response: String,
    /// `caption.text() + " " + response`.
    pub composed: String,
    /// Characters of `composed` occupied by the caption and separator; the
    /// exact split point for [`SplitMode::KnownBoundary`].
    pub caption_len: usize,
}

#[derive(Deserialize)]
struct RawTarget {
    caption: Caption,
    response: String,
    composed: String,
    caption_len: usize,
}

impl TryFrom<RawTarget> for CugTarget {
    type Error = CugError;

    fn try_from(raw: RawTarget) -> Result<Self, Self::Error> {
        let rebuilt = compose_target(&raw.caption, &raw.response)?;
        if rebuilt.composed != raw.composed || rebuilt.caption_len != raw.caption_len {
            return Err(CugError::Inconsistent(
                "composed text does not match caption and response".to_string(),
            ));
        }
        Ok(rebuilt)
    }
}

/// Composes the caption-prefixed target.
pub fn compose_target(caption: &Caption, response: &str) -> Result<CugTarget, CugError> {
    if response.is_empty() {
        return Err(CugError::EmptyResponse);
    }
    let mut composed = String::with_capacity(caption.text().len() + CAPTION_SEPARATOR.len() + response.len());
    composed.push_str(caption.text());
    composed.push_str(CAPTION_SEPARATOR);
    composed.push_str(response);
    let caption_len = caption.char_len() + CAPTION_SEPARATOR.chars().count();
    Ok(CugTarget {
        caption: caption.clone(),
        response: response.to_string(),
        composed,
        caption_len,
    })
}

/// How to split generated text back into caption and answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitMode {
    /// Split after exactly this many characters (a stored `caption_len`).
    KnownBoundary(usize),
    /// Split after the first `.`, `!` or `?` that is followed by whitespace.
    /// Text without such a terminator is treated as all answer.
    SentenceHeuristic,
}

/// Byte index after `chars` characters of `s`, saturating at the end.
fn byte_at_char(s: &str, chars: usize) -> usize {
    s.char_indices().nth(chars).map(|(i, _)| i).unwrap_or(s.len())
}

/// Splits `generated` into `(caption_part, answer_part)`.
///
/// With a known boundary the answer is exactly the characters past the
/// boundary, so splitting a composed target returns the original caption
/// text and response losslessly. The heuristic mode is for free-form model
/// output where no boundary was stored.
pub fn split_response(generated: &str, mode: SplitMode) -> (&str, &str) {
    match mode {
        SplitMode::KnownBoundary(caption_len) => {
            let boundary = byte_at_char(generated, caption_len);
            let (head, tail) = generated.split_at(boundary);
            (head.trim_end(), tail)
        }
        SplitMode::SentenceHeuristic => {
            let mut iter = generated.char_indices().peekable();
            while let Some((i, c)) = iter.next() {
                if matches!(c, '.' | '!' | '?') {
                    if let Some((j, next)) = iter.peek().copied() {
                        if next.is_whitespace() {
                            let head = &generated[..i + c.len_utf8()];
                            let tail = generated[j..].trim_start();
                            return (head, tail);
                        }
                    }
                }
            }
            ("", generated)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cap(text: &str) -> Caption {
        Caption::new("img-1", text, CaptionSource::Human).unwrap()
    }

    #[test]
    fn captions_end_in_exactly_one_period() {
        assert_eq!(cap("a dog on grass").text(), "a dog on grass.");
        assert_eq!(cap("a dog on grass.").text(), "a dog on grass.");
        assert_eq!(cap("a dog on grass...").text(), "a dog on grass.");
        assert_eq!(cap("  a dog on grass. ").text(), "a dog on grass.");
    }

    #[test]
    fn caption_normalization_is_idempotent() {
        for text in ["a dog", "a dog.", "a dog..", " a dog . "] {
            let once = cap(text);
            let twice = cap(once.text());
            assert_eq!(once.text(), twice.text(), "{text:?}");
        }
    }

    #[test]
    fn empty_caption_is_rejected() {
        assert_eq!(Caption::new("i", "", CaptionSource::Human).unwrap_err(), CugError::EmptyCaption);
        assert_eq!(Caption::new("i", " ... ", CaptionSource::Human).unwrap_err(), CugError::EmptyCaption);
    }

    #[test]
    fn select_first_by_id_takes_list_head() {
        let captions = [cap("first"), cap("second"), cap("third")];
        let chosen = select_caption(&captions, SelectionStrategy::FirstById, 0).unwrap();
        assert_eq!(chosen.text(), "first.");
    }

    #[test]
    fn select_longest_breaks_ties_by_order() {
        let captions = [cap("aa"), cap("bbbb"), cap("cccc"), cap("d")];
        let chosen = select_caption(&captions, SelectionStrategy::Longest, 0).unwrap();
        assert_eq!(chosen.text(), "bbbb.");
    }

    #[test]
    fn select_seeded_random_is_deterministic_and_covers_the_list() {
        let captions = [cap("aa"), cap("bb"), cap("cc")];
        let first = select_caption(&captions, SelectionStrategy::SeededRandom, 5).unwrap();
        let second = select_caption(&captions, SelectionStrategy::SeededRandom, 5).unwrap();
        assert_eq!(first, second);
        let mut seen = alloc::collections::BTreeSet::new();
        for seed in 0..50 {
            seen.insert(select_caption(&captions, SelectionStrategy::SeededRandom, seed).unwrap().text());
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn empty_caption_list_is_an_error() {
        assert_eq!(select_caption(&[], SelectionStrategy::FirstById, 0).unwrap_err(), CugError::NoCaptions);
    }

    #[test]
    fn compose_concatenates_with_one_separator() {
        let target = compose_target(&cap("a dog on grass"), "yes").unwrap();
        assert_eq!(target.composed, "a dog on grass. yes");
        assert_eq!(target.caption_len, 16);
        assert_eq!(target.response, "yes");
    }

    #[test]
    fn compose_rejects_empty_response() {
        assert_eq!(compose_target(&cap("a dog"), "").unwrap_err(), CugError::EmptyResponse);
    }

    #[test]
    fn known_boundary_split_is_lossless() {
        let caption = cap("Two dogs and a ball");
        let target = compose_target(&caption, "No, there are three dogs.").unwrap();
        let (head, tail) = split_response(&target.composed, SplitMode::KnownBoundary(target.caption_len));
        assert_eq!(head, caption.text());
        assert_eq!(tail, "No, there are three dogs.");
    }

    #[test]
    fn known_boundary_split_handles_multibyte_chars() {
        let caption = cap("ein Hund im Schnee, sehr süß");
        let target = compose_target(&caption, "ja, natürlich").unwrap();
        let (head, tail) = split_response(&target.composed, SplitMode::KnownBoundary(target.caption_len));
        assert_eq!(head, caption.text());
        assert_eq!(tail, "ja, natürlich");
    }

    #[test]
    fn heuristic_split_takes_first_sentence() {
        let (head, tail) = split_response("A dog on grass. No, there is no cat.", SplitMode::SentenceHeuristic);
        assert_eq!(head, "A dog on grass.");
        assert_eq!(tail, "No, there is no cat.");
    }

    #[test]
    fn heuristic_split_without_terminator_is_all_answer() {
        let (head, tail) = split_response("yes", SplitMode::SentenceHeuristic);
        assert_eq!(head, "");
        assert_eq!(tail, "yes");
    }

    #[test]
    fn heuristic_split_ignores_final_period() {
        let (head, tail) = split_response("No, there is no cat.", SplitMode::SentenceHeuristic);
        assert_eq!(head, "");
        assert_eq!(tail, "No, there is no cat.");
    }

    #[test]
    fn heuristic_split_handles_exclamations() {
        let (head, tail) = split_response("What a scene! Definitely yes.", SplitMode::SentenceHeuristic);
        assert_eq!(head, "What a scene!");
        assert_eq!(tail, "Definitely yes.");
    }

    #[test]
    fn target_serde_round_trips() {
        let target = compose_target(&cap("a dog on grass"), "yes").unwrap();
        let json = serde_json::to_string(&target).unwrap();
        let back: CugTarget = serde_json::from_str(&json).unwrap();
        assert_eq!(back, target);
    }

    #[test]
    fn tampered_target_json_is_rejected() {
        let target = compose_target(&cap("a dog on grass"), "yes").unwrap();
        let mut value: serde_json::Value = serde_json::to_value(&target).unwrap();
        value["composed"] = serde_json::Value::String("something else entirely".into());
        let err = serde_json::from_value::<CugTarget>(value).unwrap_err();
        assert!(err.to_string().contains("does not match"));
    }

}
