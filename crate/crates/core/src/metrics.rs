//! Yes/no answer extraction and evaluation metrics.
//!
//! Model responses are free text; the harness reduces each to `yes`, `no`,
//! or `unknown` by looking for a standalone yes/no token, then scores the
//! answers against binary ground truth. `yes` is the positive class. An
//! `unknown` answer is always incorrect for accuracy and counts as a
//! predicted negative for precision and recall.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use serde::{Deserialize, Serialize};

use crate::cug::{split_response, SplitMode};
use crate::policy::PolicyKind;
use crate::records::{BinaryLabel, EvalPolicy, EvalRecord};

/// A response reduced to its answer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerValue {
    Yes,
    No,
    Unknown,
}

/// Which standalone yes/no token wins when a response contains several.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerRule {
    /// First standalone token decides; matches how answers lead a sentence.
    #[default]
    FirstToken,
    /// Last standalone token decides.
    LastToken,
}

/// Extraction result with the matched token's character span in the original
/// response, when any.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtractedAnswer {
    pub value: AnswerValue,
    pub matched_span: Option<(usize, usize)>,
}

/// Standalone yes/no tokens of `text` as `(char_start, char_end, value)`.
/// A token is a maximal alphanumeric run, so `eyes` and `nothing` never
/// match.
fn answer_tokens(text: &str) -> Vec<(usize, usize, AnswerValue)> {
    let mut found = Vec::new();
    let mut run = String::new();
    let mut run_start = 0usize;
    let flush = |run: &mut String, start: usize, end: usize, found: &mut Vec<(usize, usize, AnswerValue)>| {
        if run.eq_ignore_ascii_case("yes") {
            found.push((start, end, AnswerValue::Yes));
        } else if run.eq_ignore_ascii_case("no") {
            found.push((start, end, AnswerValue::No));
        }
        run.clear();
    };
    let mut chars = 0usize;
    for (i, c) in text.chars().enumerate() {
        chars = i + 1;
        if c.is_alphanumeric() {
            if run.is_empty() {
                run_start = i;
            }
            run.push(c);
        } else if !run.is_empty() {
            flush(&mut run, run_start, i, &mut found);
        }
    }
    if !run.is_empty() {
        flush(&mut run, run_start, chars, &mut found);
    }
    found
}

fn pick(tokens: &[(usize, usize, AnswerValue)], rule: AnswerRule) -> Option<(usize, usize, AnswerValue)> {
    match rule {
        AnswerRule::FirstToken => tokens.first().copied(),
        AnswerRule::LastToken => tokens.last().copied(),
    }
}

/// Extracts the yes/no answer from a response using the default
/// first-token rule. See [`extract_answer_with`].
pub fn extract_answer(response: &str, cug_mode: bool) -> ExtractedAnswer {
    extract_answer_with(response, cug_mode, AnswerRule::FirstToken)
}

/// Extracts the yes/no answer from a response.
///
/// With `cug_mode` the caption sentence is split off first and only the
/// remainder is scanned; responses that put the answer before the caption
/// anyway fall back to a full scan. Spans always refer to the original
/// response.
pub fn extract_answer_with(response: &str, cug_mode: bool, rule: AnswerRule) -> ExtractedAnswer {
    if cug_mode {
        let (caption_part, answer_part) = split_response(response, SplitMode::SentenceHeuristic);
        if !caption_part.is_empty() {
            let byte_offset = response.len() - answer_part.len();
            let char_offset = response[..byte_offset].chars().count();
            let tokens = answer_tokens(answer_part);
            if let Some((start, end, value)) = pick(&tokens, rule) {
                return ExtractedAnswer {
                    value,
                    matched_span: Some((start + char_offset, end + char_offset)),
                };
            }
        }
    }
    let tokens = answer_tokens(response);
    match pick(&tokens, rule) {
        Some((start, end, value)) => ExtractedAnswer { value, matched_span: Some((start, end)) },
        None => ExtractedAnswer { value: AnswerValue::Unknown, matched_span: None },
    }
}

/// Accuracy of one policy's records.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PolicyBucket {
    pub n: usize,
    pub accuracy: f64,
}

/// Metrics over a set of answered records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub n: usize,
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub unknown_count: usize,
    /// Per-policy accuracy; empty unless built by [`per_policy_report`].
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_policy: BTreeMap<EvalPolicy, PolicyBucket>,
}

fn ratio(numerator: usize, denominator: usize) -> f64 {
    if denominator == 0 {
        0.0
    } else {
        numerator as f64 / denominator as f64
    }
}

/// Computes accuracy, precision, recall, and F1 over `(answer, truth)`
/// pairs. `yes` is the positive class; `unknown` is incorrect for accuracy
/// and a predicted negative for precision and recall.
pub fn compute_metrics(pairs: &[(AnswerValue, BinaryLabel)]) -> MetricsReport {
    let mut true_positive = 0usize;
    let mut false_positive = 0usize;
    let mut true_negative = 0usize;
    let mut false_negative = 0usize;
    let mut unknown_count = 0usize;
    for &(answer, truth) in pairs {
        match (answer, truth) {
            (AnswerValue::Yes, BinaryLabel::Yes) => true_positive += 1,
            (AnswerValue::Yes, BinaryLabel::No) => false_positive += 1,
            (AnswerValue::No, BinaryLabel::No) => true_negative += 1,
            (AnswerValue::No, BinaryLabel::Yes) => false_negative += 1,
            (AnswerValue::Unknown, truth) => {
                unknown_count += 1;
                if truth == BinaryLabel::Yes {
                    false_negative += 1;
                }
            }
        }
    }
    let precision = ratio(true_positive, true_positive + false_positive);
    let recall = ratio(true_positive, true_positive + false_negative);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    MetricsReport {
        n: pairs.len(),
        accuracy: ratio(true_positive + true_negative, pairs.len()),
        precision,
        recall,
        f1,
        unknown_count,
        per_policy: BTreeMap::new(),
    }
}

/// One answered evaluation record, ready for aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalRow {
    pub policy: EvalPolicy,
    pub answer: AnswerValue,
    pub gt: BinaryLabel,
}

/// Extracts answers from filled evaluation records.
pub fn rows_from_records(records: &[EvalRecord], cug_mode: bool, rule: AnswerRule) -> Vec<EvalRow> {
    records
        .iter()
        .map(|r| EvalRow {
            policy: r.policy,
            answer: extract_answer_with(&r.model_response, cug_mode, rule).value,
            gt: r.gt_label,
        })
        .collect()
}

/// A metrics report plus its rendered per-policy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyReport {
    pub metrics: MetricsReport,
    pub table: String,
}

fn is_correct(row: &EvalRow) -> bool {
    matches!(
        (row.answer, row.gt),
        (AnswerValue::Yes, BinaryLabel::Yes) | (AnswerValue::No, BinaryLabel::No)
    )
}

/// Aggregates rows into overall metrics, per-policy accuracy, and the
/// rendered accuracy table.
///
/// The table has one column per policy plus an `Overall` column covering all
/// augmented (non-original) records; its value is therefore the
/// record-weighted mean of the per-policy accuracies. Policies with no
/// records render as an em dash.
pub fn per_policy_report(rows: &[EvalRow]) -> PolicyReport {
    let pairs: Vec<(AnswerValue, BinaryLabel)> = rows.iter().map(|r| (r.answer, r.gt)).collect();
    let mut metrics = compute_metrics(&pairs);

    let mut buckets: BTreeMap<EvalPolicy, (usize, usize)> = BTreeMap::new();
    for row in rows {
        let (n, correct) = buckets.entry(row.policy).or_insert((0, 0));
        *n += 1;
        if is_correct(row) {
            *correct += 1;
        }
    }
    metrics.per_policy = buckets
        .iter()
        .map(|(&policy, &(n, correct))| (policy, PolicyBucket { n, accuracy: ratio(correct, n) }))
        .collect();

    let augmented: Vec<&EvalRow> = rows.iter().filter(|r| r.policy != EvalPolicy::Original).collect();
    let augmented_n = augmented.len();
    let augmented_correct = augmented.iter().filter(|r| is_correct(r)).count();

    let mut columns: Vec<(&str, Option<PolicyBucket>)> = PolicyKind::ALL
        .iter()
        .map(|&p| (p.header(), metrics.per_policy.get(&EvalPolicy::Policy(p)).copied()))
        .collect();
    let overall = (augmented_n > 0)
        .then(|| PolicyBucket { n: augmented_n, accuracy: ratio(augmented_correct, augmented_n) });
    columns.push(("Overall", overall));

    PolicyReport { table: render_table(&columns), metrics }
}

fn render_table(columns: &[(&str, Option<PolicyBucket>)]) -> String {
    const EMPTY_CELL: &str = "\u{2014}";
    let label_width = "accuracy".len();
    let mut header = alloc::format!("{:label_width$}", "");
    let mut accuracy_row = alloc::format!("{:label_width$}", "accuracy");
    let mut n_row = alloc::format!("{:label_width$}", "n");
    for (name, bucket) in columns {
        let accuracy = match bucket {
            Some(b) => alloc::format!("{:.1}%", b.accuracy * 100.0),
            None => String::from(EMPTY_CELL),
        };
        let n = match bucket {
            Some(b) => alloc::format!("{}", b.n),
            None => String::from(EMPTY_CELL),
        };
        let width = name.len().max(accuracy.chars().count()).max(n.chars().count()) + 2;
        header.push_str(&alloc::format!("{name:>width$}"));
        accuracy_row.push_str(&pad_left(&accuracy, width));
        n_row.push_str(&pad_left(&n, width));
    }
    alloc::format!("{header}\n{accuracy_row}\n{n_row}\n")
}

fn pad_left(cell: &str, width: usize) -> String {
    let pad = width.saturating_sub(cell.chars().count());
    let mut out = String::new();
    for _ in 0..pad {
        out.push(' ');
    }
    out.push_str(cell);
    out
}
