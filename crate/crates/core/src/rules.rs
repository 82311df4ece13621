//! Offline rule-based prompt rewriting.
//!
//! One rewriting rule per policy, driven entirely by a seed, so pipelines can
//! run with no text-generation endpoint at all. The rules are intentionally
//! conservative: they keep the token overlap with the original high enough
//! that a meaning-preserving rewrite survives the embedding filter, they
//! never edit a prompt's final punctuation, and they never alter a literal
//! `yes`/`no` token inside the prompt.
//!
//! When a rule has nothing to do (no misspellable letter, no removable word,
//! no known synonym) it returns the prompt unchanged and says so; the caller
//! keeps the item but flags it rather than silently dropping it.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::augment::AugmentError;
use crate::policy::PolicyKind;
use crate::seed;

/// Result of one rule application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RuleOutcome {
    pub text: String,
    /// `false` when no rule applied and `text` equals the input prompt.
    pub changed: bool,
}

/// Applies the rewriting rule for `policy` to `prompt`.
///
/// Pure: the same `(prompt, policy, seed)` always yields the same outcome.
/// The seed feeds every random choice inside a rule (edit positions, phrase
/// picks, synonym picks).
pub fn rule_based_augment(prompt: &str, policy: PolicyKind, seed: u64) -> Result<RuleOutcome, AugmentError> {
    let prompt = prompt.trim();
    if prompt.split_whitespace().next().is_none() {
        return Err(AugmentError::EmptyPrompt);
    }
    let mut rng = seed::rng(rule_seed(prompt, policy, seed));
    let rewritten = match policy {
        PolicyKind::Hard => hard(prompt, &mut rng),
        PolicyKind::Easy => substitute_synonyms(prompt, &mut rng, Direction::Simplify),
        PolicyKind::Short => short(prompt, &mut rng),
        PolicyKind::Long => long(prompt, &mut rng),
        PolicyKind::Rewrite => substitute_synonyms(prompt, &mut rng, Direction::Elaborate),
        PolicyKind::Spell => spell(prompt, &mut rng),
        PolicyKind::Append => append(prompt, &mut rng),
    };
    Ok(match rewritten {
        Some(text) if text != prompt => RuleOutcome { text, changed: true },
        _ => RuleOutcome { text: prompt.to_string(), changed: false },
    })
}

fn rule_seed(prompt: &str, policy: PolicyKind, seed: u64) -> u64 {
    seed::derive(seed::derive(seed, policy.name()), prompt)
}

/// Splits a prompt into its body and its trailing run of `.`, `!`, `?`.
fn split_terminal(prompt: &str) -> (&str, &str) {
    let cut = prompt
        .char_indices()
        .rev()
        .find(|(_, c)| !matches!(c, '.' | '!' | '?'))
        .map(|(i, c)| i + c.len_utf8())
        .unwrap_or(0);
    prompt.split_at(cut)
}

fn capitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn decapitalize_first(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_lowercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Word with surrounding punctuation stripped, lowercased.
fn bare_word(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric()).to_lowercase()
}

/// Picks `k` distinct elements, in seeded order, by partial Fisher-Yates.
fn pick_distinct<T: Copy>(items: &[T], k: usize, rng: &mut ChaCha8Rng) -> Vec<T> {
    let mut pool: Vec<T> = items.to_vec();
    let k = k.min(pool.len());
    for i in 0..k {
        let j = rng.random_range(i..pool.len());
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

// --- spell ---------------------------------------------------------------

/// Char ranges (by char index) of literal `yes`/`no` tokens.
fn protected_spans(prompt: &str) -> Vec<(usize, usize)> {
    let mut spans = Vec::new();
    let mut run_start = None;
    let mut run = String::new();
    for (i, c) in prompt.chars().chain(core::iter::once(' ')).enumerate() {
        if c.is_alphanumeric() {
            if run_start.is_none() {
                run_start = Some(i);
            }
            run.extend(c.to_lowercase());
        } else if let Some(start) = run_start.take() {
            if run == "yes" || run == "no" {
                spans.push((start, i));
            }
            run.clear();
        }
    }
    spans
}

/// Introduces one or two seeded character edits: substitute a letter with a
/// different one, or double a letter. Never touches terminal punctuation
/// (only letters are edited) and never edits inside a `yes`/`no` token.
fn spell(prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let chars: Vec<char> = prompt.chars().collect();
    let protected = protected_spans(prompt);
    let eligible: Vec<usize> = chars
        .iter()
        .enumerate()
        .filter(|(i, c)| c.is_alphabetic() && !protected.iter().any(|(s, e)| i >= s && i < e))
        .map(|(i, _)| i)
        .collect();
    if eligible.is_empty() {
        return None;
    }
    let edits = if eligible.len() == 1 { 1 } else { rng.random_range(1..=2) };
    let mut positions = pick_distinct(&eligible, edits, rng);
    positions.sort_unstable_by(|a, b| b.cmp(a));
    let mut out = chars;
    for pos in positions {
        if rng.random_range(0..3) < 2 {
            let current = out[pos];
            let excluded = current.to_ascii_lowercase();
            let alphabet: Vec<char> = ('a'..='z').filter(|c| *c != excluded).collect();
            let mut replacement = alphabet[rng.random_range(0..alphabet.len())];
            if current.is_uppercase() {
                replacement = replacement.to_ascii_uppercase();
            }
            out[pos] = replacement;
        } else {
            out.insert(pos + 1, out[pos]);
        }
    }
    Some(out.into_iter().collect())
}

// --- append --------------------------------------------------------------

const PREPEND_PHRASES: [&str; 3] = [
    "Look at the image.",
    "Check the picture.",
    "See the image first.",
];

const APPEND_PHRASES: [&str; 3] = [
    "Please answer briefly.",
    "Answer in short.",
    "Reply concisely, please.",
];

/// Adds a seeded phrase before or after the prompt; the original stays
/// contiguous and untouched.
fn append(prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    if rng.random_bool(0.5) {
        let phrase = PREPEND_PHRASES[rng.random_range(0..PREPEND_PHRASES.len())];
        Some(format!("{phrase} {prompt}"))
    } else {
        let phrase = APPEND_PHRASES[rng.random_range(0..APPEND_PHRASES.len())];
        Some(format!("{prompt} {phrase}"))
    }
}

// --- short ---------------------------------------------------------------

const REMOVABLE_WORDS: &[&str] = &[
    "please", "kindly", "really", "very", "just", "exactly", "precisely", "actually",
    "currently", "also", "carefully", "briefly", "perhaps", "possibly", "simply",
    "certainly", "overall", "truly", "particularly", "specifically",
];

/// Drops seeded removable modifier words, never going below three words.
fn short(prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let (body, punct) = split_terminal(prompt);
    let words: Vec<&str> = body.split_whitespace().collect();
    if words.len() <= 3 {
        return None;
    }
    let removable: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| REMOVABLE_WORDS.contains(&bare_word(w).as_str()))
        .map(|(i, _)| i)
        .collect();
    if removable.is_empty() {
        return None;
    }
    let cap = removable.len().min(words.len() - 3);
    let k = rng.random_range(1..=cap);
    let dropped = pick_distinct(&removable, k, rng);
    let kept: Vec<&str> = words
        .iter()
        .enumerate()
        .filter(|(i, _)| !dropped.contains(i))
        .map(|(_, w)| *w)
        .collect();
    Some(format!("{}{}", kept.join(" "), punct))
}

// --- long ----------------------------------------------------------------

const LEAD_INS: [&str; 3] = [
    "Could you please tell me,",
    "I would like to know,",
    "Before anything else,",
];

const TRAILING_CLAUSES: [&str; 4] = [
    "as far as you can tell",
    "based on what the image shows",
    "considering the whole scene",
    "to the best of your knowledge",
];

/// Lengthens the prompt with a seeded lead-in or a trailing clause inserted
/// before the final punctuation.
fn long(prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let (body, punct) = split_terminal(prompt);
    if body.is_empty() {
        return None;
    }
    if rng.random_bool(0.5) {
        let lead = LEAD_INS[rng.random_range(0..LEAD_INS.len())];
        Some(format!("{lead} {}{punct}", decapitalize_first(body)))
    } else {
        let clause = TRAILING_CLAUSES[rng.random_range(0..TRAILING_CLAUSES.len())];
        Some(format!("{body}, {clause}{punct}"))
    }
}

// --- rewrite / easy ------------------------------------------------------

/// Synonym pairs as (plain, elaborate). `Rewrite` substitutes left to right,
/// `Easy` right to left. Both sides are unique within their column.
const SYNONYMS: &[(&str, &str)] = &[
    ("image", "photograph"),
    ("picture", "portrayal"),
    ("see", "observe"),
    ("look", "gaze"),
    ("show", "display"),
    ("answer", "reply"),
    ("big", "enormous"),
    ("small", "tiny"),
    ("many", "numerous"),
    ("kind", "variety"),
    ("type", "category"),
    ("same", "identical"),
    ("different", "distinct"),
    ("near", "adjacent"),
    ("under", "beneath"),
    ("person", "individual"),
    ("people", "individuals"),
    ("animal", "creature"),
    ("car", "automobile"),
    ("street", "thoroughfare"),
    ("house", "residence"),
    ("color", "coloration"),
    ("visible", "discernible"),
    ("dog", "canine"),
    ("cat", "feline"),
    ("child", "youngster"),
    ("man", "gentleman"),
    ("woman", "lady"),
    ("happy", "cheerful"),
    ("old", "elderly"),
    ("front", "foreground"),
    ("back", "background"),
];

#[derive(Clone, Copy)]
enum Direction {
    /// plain -> elaborate (`Rewrite`)
    Elaborate,
    /// elaborate -> plain (`Easy`)
    Simplify,
}

fn synonym_for(word: &str, direction: Direction) -> Option<&'static str> {
    SYNONYMS.iter().find_map(|(plain, elaborate)| match direction {
        Direction::Elaborate if word == *plain => Some(*elaborate),
        Direction::Simplify if word == *elaborate => Some(*plain),
        _ => None,
    })
}

/// Replaces up to two seeded dictionary words with synonyms, preserving the
/// word's attached punctuation and leading capitalization.
fn substitute_synonyms(prompt: &str, rng: &mut ChaCha8Rng, direction: Direction) -> Option<String> {
    let (body, punct) = split_terminal(prompt);
    let mut words: Vec<String> = body.split_whitespace().map(String::from).collect();
    let candidates: Vec<usize> = words
        .iter()
        .enumerate()
        .filter(|(_, w)| synonym_for(&bare_word(w), direction).is_some())
        .map(|(i, _)| i)
        .collect();
    if candidates.is_empty() {
        return None;
    }
    let k = rng.random_range(1..=candidates.len().min(2));
    for idx in pick_distinct(&candidates, k, rng) {
        let word = &words[idx];
        let start = word.find(|c: char| c.is_alphanumeric()).unwrap_or(0);
        let end = word
            .rfind(|c: char| c.is_alphanumeric())
            .map(|i| i + word[i..].chars().next().unwrap().len_utf8())
            .unwrap_or(word.len());
        let core = &word[start..end];
        let replacement = synonym_for(&bare_word(word), direction).expect("candidate has a synonym");
        let replacement = if core.chars().next().is_some_and(char::is_uppercase) {
            capitalize_first(replacement)
        } else {
            replacement.to_string()
        };
        words[idx] = format!("{}{}{}", &word[..start], replacement, &word[end..]);
    }
    Some(format!("{}{}", words.join(" "), punct))
}

// --- hard ----------------------------------------------------------------

const LOCATIVE_MARKERS: [&str; 4] = [" in the ", " on the ", " at the ", " inside the "];

const PRESENCE_FORMS: [(&str, &str); 2] = [
    ("does the presence of ", " hold"),
    ("can the presence of ", " be confirmed"),
];

const COUNT_FORMS: [&str; 2] = ["what is the count of ", "what is the number of "];

const FORMAL_WRAPPERS: [&str; 3] = [
    "It would be of interest to ascertain the following: ",
    "Kindly provide your determination on the following: ",
    "One is asked to resolve the following: ",
];

/// Moves a short trailing locative phrase (e.g. "in the image") to the front.
/// Returns the fronted prefix and the remaining core.
fn front_tail_phrase(body: &str) -> (String, &str) {
    let lower = body.to_ascii_lowercase();
    let hit = LOCATIVE_MARKERS
        .iter()
        .filter_map(|m| lower.rfind(m).map(|pos| (pos, *m)))
        .max_by_key(|(pos, _)| *pos);
    if let Some((pos, _)) = hit {
        let phrase = &body[pos + 1..];
        let words = phrase.split_whitespace().count();
        if (2..=4).contains(&words) && pos > 0 {
            return (format!("{}, ", capitalize_first(phrase)), body[..pos].trim_end());
        }
    }
    (String::new(), body)
}

fn remove_first_copula(text: &str) -> String {
    let mut removed = false;
    let words: Vec<&str> = text
        .split_whitespace()
        .filter(|w| {
            let bare = bare_word(w);
            if !removed && (bare == "is" || bare == "are") && *w == bare.as_str() {
                removed = true;
                false
            } else {
                true
            }
        })
        .collect();
    words.join(" ")
}

/// Rewrites the prompt into a harder-to-parse form with the same meaning:
/// fronts a trailing locative phrase, then nominalizes presence ("is there
/// X" becomes "does the presence of X hold") and counting ("how many X"
/// becomes "what is the count of X") questions. Anything else is wrapped in
/// a seeded formal preamble.
fn hard(prompt: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    let (body, punct) = split_terminal(prompt);
    if body.is_empty() {
        return None;
    }
    let (prefix, core) = front_tail_phrase(body);
    let lower = core.to_ascii_lowercase();

    let presence = ["is there ", "are there "]
        .iter()
        .filter_map(|marker| lower.find(marker).map(|pos| (pos, marker.len())))
        .min_by_key(|(pos, _)| *pos);
    let transformed = if let Some((pos, marker_len)) = presence {
        let (replacement, suffix) = PRESENCE_FORMS[rng.random_range(0..PRESENCE_FORMS.len())];
        Some(format!("{}{replacement}{}{suffix}", &core[..pos], &core[pos + marker_len..]))
    } else if let Some(rest) = lower.strip_prefix("how many ") {
        let form = COUNT_FORMS[rng.random_range(0..COUNT_FORMS.len())];
        let rest = remove_first_copula(&core[core.len() - rest.len()..]);
        Some(format!("{form}{rest}"))
    } else {
        None
    };

    match transformed {
        Some(text) => {
            let rebuilt = if prefix.is_empty() { capitalize_first(&text) } else { format!("{prefix}{text}") };
            Some(format!("{rebuilt}{punct}"))
        }
        None => {
            let wrapper = FORMAL_WRAPPERS[rng.random_range(0..FORMAL_WRAPPERS.len())];
            Some(format!("{wrapper}{prompt}"))
        }
    }
}
