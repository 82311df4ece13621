//! End-to-end dataset builds: augment, score, sample, compose.
//!
//! The per-record seed schedule makes output independent of thread count and
//! record order: every record derives its own seed from the build seed and
//! its id, and each stage (augment slots, sampling, caption choice) derives
//! a tagged sub-seed from that.

use std::collections::BTreeMap;

use augcap_core::augment::{augment_prompt, expand_policies, AugmentError, PromptGenerator, PromptPool};
use augcap_core::cug::{compose_target, select_caption, Caption, CugError, SelectionStrategy};
use augcap_core::embed::{score_pool, EmbedError, Embedder, ScoreVector};
use augcap_core::policy::PolicyKind;
use augcap_core::records::{
    BinaryLabel, EvalPolicy, EvalRecord, ManifestRecord, PoolEntry, PromptRecord,
};
use augcap_core::sample::{sample_prompt, ChosenIndex, SampleError};
use augcap_core::seed;
use rayon::prelude::*;

use crate::io::{PoolLine, SampleLine};

/// Knobs shared by manifest and eval-set builds.
#[derive(Debug, Clone, PartialEq)]
pub struct BuildOptions {
    /// Policies to draw from, in order.
    pub policies: Vec<PolicyKind>,
    /// Pool size per record; the policy list is cycled to this length.
    pub n: usize,
    /// Score threshold: similarities below it are zeroed.
    pub epsilon: f64,
    /// Weight of the augmented term in the composite loss; recorded on each
    /// manifest record.
    pub lambda: f64,
    pub seed: u64,
    pub caption_strategy: SelectionStrategy,
    /// Worker threads; records are still emitted in input order.
    pub parallelism: usize,
}

impl Default for BuildOptions {
    fn default() -> Self {
        BuildOptions {
            policies: PolicyKind::ALL.to_vec(),
            n: PolicyKind::ALL.len(),
            epsilon: 0.5,
            lambda: 0.5,
            seed: 0,
            caption_strategy: SelectionStrategy::FirstById,
            parallelism: 1,
        }
    }
}

impl BuildOptions {
    /// Checks option ranges; the CLI maps failures to usage errors.
    pub fn validate(&self) -> Result<(), String> {
        if self.policies.is_empty() {
            return Err("policy list must not be empty".to_string());
        }
        if self.n == 0 {
            return Err("pool size must be at least 1".to_string());
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must be in [0, 1], got {}", self.epsilon));
        }
        if !self.lambda.is_finite() || !(0.0..=1.0).contains(&self.lambda) {
            return Err(format!("lambda must be in [0, 1], got {}", self.lambda));
        }
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".to_string());
        }
        Ok(())
    }
}

/// Counters accumulated across a build.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct BuildSummary {
    pub records: usize,
    /// Augmented prompts kept across all pools.
    pub pool_items: usize,
    /// Items dropped because the generator's answer was unusable.
    pub dropped_items: usize,
    /// Kept items whose rewrite left the prompt unchanged.
    pub unchanged_items: usize,
    /// Kept items zeroed by the score threshold.
    pub zero_score_items: usize,
    /// Records whose sampling fell back to the original prompt.
    pub original_fallbacks: usize,
    /// Records excluded from the eval set for carrying an open label.
    pub skipped_open_records: usize,
}

impl BuildSummary {
    fn absorb(&mut self, other: BuildSummary) {
        self.records += other.records;
        self.pool_items += other.pool_items;
        self.dropped_items += other.dropped_items;
        self.unchanged_items += other.unchanged_items;
        self.zero_score_items += other.zero_score_items;
        self.original_fallbacks += other.original_fallbacks;
        self.skipped_open_records += other.skipped_open_records;
    }
}

/// Build failures. Per-item generator rejections shrink the pool instead of
/// erroring; everything here aborts the build.
#[derive(Debug, thiserror::Error)]
pub enum BuildError {
    #[error("invalid options: {0}")]
    Options(String),
    #[error("record `{record_id}`: {source}")]
    Augment { record_id: String, source: AugmentError },
    #[error("record `{record_id}`: {source}")]
    Embed { record_id: String, source: EmbedError },
    #[error("record `{record_id}`: {source}")]
    Sample { record_id: String, source: SampleError },
    #[error("record `{record_id}`: no captions for image `{image_id}`")]
    MissingCaptions { record_id: String, image_id: String },
    #[error("record `{record_id}`: {source}")]
    Target { record_id: String, source: CugError },
    #[error("record `{record_id}`: pool items carry no scores; run the score stage first")]
    Unscored { record_id: String },
    #[error("cannot start worker pool: {0}")]
    Parallelism(String),
}

/// Builds one training manifest record per input record.
pub fn build_manifest(
    records: &[PromptRecord],
    captions: &BTreeMap<String, Vec<Caption>>,
    generator: &dyn PromptGenerator,
    embedder: &dyn Embedder,
    options: &BuildOptions,
) -> Result<(Vec<ManifestRecord>, BuildSummary), BuildError> {
    options.validate().map_err(BuildError::Options)?;
    let built = run_parallel(records, options.parallelism, |record| {
        build_one(record, captions, generator, embedder, options)
    })?;
    Ok(merge(built))
}

/// Builds evaluation rows: for each yes/no record, the original prompt plus
/// every augmented prompt that survived the score threshold. Open-label
/// records are skipped and counted.
pub fn build_testset(
    records: &[PromptRecord],
    generator: &dyn PromptGenerator,
    embedder: &dyn Embedder,
    options: &BuildOptions,
) -> Result<(Vec<EvalRecord>, BuildSummary), BuildError> {
    options.validate().map_err(BuildError::Options)?;
    let built = run_parallel(records, options.parallelism, |record| {
        testset_rows(record, generator, embedder, options)
    })?;
    let mut rows = Vec::new();
    let mut summary = BuildSummary::default();
    for (mut record_rows, counters) in built {
        rows.append(&mut record_rows);
        summary.absorb(counters);
    }
    Ok((rows, summary))
}

fn run_parallel<I: Sync, T: Send>(
    items: &[I],
    parallelism: usize,
    work: impl Fn(&I) -> Result<T, BuildError> + Sync,
) -> Result<Vec<T>, BuildError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallelism)
        .build()
        .map_err(|e| BuildError::Parallelism(e.to_string()))?;
    pool.install(|| items.par_iter().map(&work).collect())
}

/// Stage one: builds an unscored prompt pool per record.
pub fn augment_pools(
    records: &[PromptRecord],
    generator: &dyn PromptGenerator,
    options: &BuildOptions,
) -> Result<(Vec<PoolLine>, BuildSummary), BuildError> {
    options.validate().map_err(BuildError::Options)?;
    let policies = expand_policies(&options.policies, options.n);
    let built = run_parallel(records, options.parallelism, |record| {
        let record_seed = seed::record_seed(options.seed, &record.id);
        let report = augment_prompt(&record.id, &record.prompt, &policies, generator, record_seed)
            .map_err(|source| BuildError::Augment { record_id: record.id.clone(), source })?;
        let counters = BuildSummary {
            records: 1,
            pool_items: report.pool.items.len(),
            dropped_items: report.failures.len(),
            unchanged_items: report.unchanged.len(),
            ..BuildSummary::default()
        };
        let line = PoolLine {
            record_id: record.id.clone(),
            image_id: record.image_id.clone(),
            original: report.pool.original,
            items: report.pool.items,
        };
        Ok((line, counters))
    })?;
    Ok(merge(built))
}

/// Stage two: fills `raw_score` and `score` on every pool item.
pub fn score_pools(
    lines: &[PoolLine],
    embedder: &dyn Embedder,
    options: &BuildOptions,
) -> Result<(Vec<PoolLine>, BuildSummary), BuildError> {
    options.validate().map_err(BuildError::Options)?;
    let built = run_parallel(lines, options.parallelism, |line| {
        let texts: Vec<&str> = line.items.iter().map(|i| i.text.as_str()).collect();
        let (raw, scores) = score_pool(&line.original, &texts, embedder, options.epsilon)
            .map_err(|source| BuildError::Embed { record_id: line.record_id.clone(), source })?;
        let mut scored = line.clone();
        for (item, (raw, score)) in scored.items.iter_mut().zip(raw.iter().zip(scores.scores())) {
            item.raw_score = Some(*raw);
            item.score = Some(*score);
        }
        let counters = BuildSummary {
            records: 1,
            pool_items: scored.items.len(),
            zero_score_items: scores.scores().iter().filter(|s| **s == 0.0).count(),
            ..BuildSummary::default()
        };
        Ok((scored, counters))
    })?;
    Ok(merge(built))
}

/// Stage three: draws one prompt per record from its scored pool.
///
/// `epsilon` must be the threshold the scores were produced with; it is
/// normally read back from the scored file's header.
pub fn sample_pools(lines: &[PoolLine], epsilon: f64, build_seed: u64) -> Result<(Vec<SampleLine>, BuildSummary), BuildError> {
    let mut rows = Vec::with_capacity(lines.len());
    let mut summary = BuildSummary::default();
    for line in lines {
        let mut scores = Vec::with_capacity(line.items.len());
        for item in &line.items {
            let score = item.score.ok_or_else(|| BuildError::Unscored { record_id: line.record_id.clone() })?;
            scores.push(score);
        }
        let scores = ScoreVector::new(scores, epsilon)
            .map_err(|source| BuildError::Embed { record_id: line.record_id.clone(), source })?;
        let pool = PromptPool { original: line.original.clone(), items: line.items.clone() };
        let record_seed = seed::record_seed(build_seed, &line.record_id);
        let outcome = sample_prompt(&pool, &scores, seed::derive(record_seed, "sample"))
            .map_err(|source| BuildError::Sample { record_id: line.record_id.clone(), source })?;
        summary.records += 1;
        summary.pool_items += line.items.len();
        if outcome.chosen_index == ChosenIndex::Original {
            summary.original_fallbacks += 1;
        }
        rows.push(SampleLine { record_id: line.record_id.clone(), image_id: line.image_id.clone(), sampled: outcome });
    }
    Ok((rows, summary))
}

fn merge<T>(built: Vec<(T, BuildSummary)>) -> (Vec<T>, BuildSummary) {
    let mut rows = Vec::with_capacity(built.len());
    let mut summary = BuildSummary::default();
    for (row, counters) in built {
        rows.push(row);
        summary.absorb(counters);
    }
    (rows, summary)
}

struct ScoredPool {
    pool: augcap_core::augment::PromptPool,
    raw: Vec<f64>,
    scores: augcap_core::embed::ScoreVector,
    counters: BuildSummary,
}

fn score_record(
    record: &PromptRecord,
    generator: &dyn PromptGenerator,
    embedder: &dyn Embedder,
    options: &BuildOptions,
    record_seed: u64,
) -> Result<ScoredPool, BuildError> {
    let policies = expand_policies(&options.policies, options.n);
    let report = augment_prompt(&record.id, &record.prompt, &policies, generator, record_seed)
        .map_err(|source| BuildError::Augment { record_id: record.id.clone(), source })?;
    let texts: Vec<&str> = report.pool.items.iter().map(|i| i.text.as_str()).collect();
    let (raw, scores) = score_pool(&report.pool.original, &texts, embedder, options.epsilon)
        .map_err(|source| BuildError::Embed { record_id: record.id.clone(), source })?;
    let counters = BuildSummary {
        records: 1,
        pool_items: report.pool.items.len(),
        dropped_items: report.failures.len(),
        unchanged_items: report.unchanged.len(),
        zero_score_items: scores.scores().iter().filter(|s| **s == 0.0).count(),
        ..BuildSummary::default()
    };
    Ok(ScoredPool { pool: report.pool, raw, scores, counters })
}

fn build_one(
    record: &PromptRecord,
    captions: &BTreeMap<String, Vec<Caption>>,
    generator: &dyn PromptGenerator,
    embedder: &dyn Embedder,
    options: &BuildOptions,
) -> Result<(ManifestRecord, BuildSummary), BuildError> {
    let record_seed = seed::record_seed(options.seed, &record.id);
    let mut scored = score_record(record, generator, embedder, options, record_seed)?;

    let outcome = sample_prompt(&scored.pool, &scored.scores, seed::derive(record_seed, "sample"))
        .map_err(|source| BuildError::Sample { record_id: record.id.clone(), source })?;
    if outcome.chosen_index == ChosenIndex::Original {
        scored.counters.original_fallbacks += 1;
    }

    let missing = || BuildError::MissingCaptions {
        record_id: record.id.clone(),
        image_id: record.image_id.clone(),
    };
    let available = captions.get(&record.image_id).ok_or_else(missing)?;
    let caption = match select_caption(available, options.caption_strategy, seed::derive(record_seed, "caption")) {
        Ok(c) => c,
        Err(CugError::NoCaptions) => return Err(missing()),
        Err(source) => return Err(BuildError::Target { record_id: record.id.clone(), source }),
    };
    let target = compose_target(caption, record.response.trim())
        .map_err(|source| BuildError::Target { record_id: record.id.clone(), source })?;

    let pool = scored
        .pool
        .items
        .iter()
        .zip(scored.raw.iter().zip(scored.scores.scores()))
        .map(|(item, (raw, score))| PoolEntry {
            policy: item.policy,
            text: item.text.clone(),
            raw_score: *raw,
            score: *score,
        })
        .collect();

    let row = ManifestRecord {
        record_id: record.id.clone(),
        image_id: record.image_id.clone(),
        original_prompt: scored.pool.original,
        pool,
        sampled: outcome,
        caption: caption.clone(),
        target,
        lambda: options.lambda,
        build_seed: options.seed,
    };
    Ok((row, scored.counters))
}

fn testset_rows(
    record: &PromptRecord,
    generator: &dyn PromptGenerator,
    embedder: &dyn Embedder,
    options: &BuildOptions,
) -> Result<(Vec<EvalRecord>, BuildSummary), BuildError> {
    let gt_label = match BinaryLabel::try_from(record.label) {
        Ok(label) => label,
        Err(_) => {
            let counters = BuildSummary { skipped_open_records: 1, ..BuildSummary::default() };
            return Ok((Vec::new(), counters));
        }
    };
    let record_seed = seed::record_seed(options.seed, &record.id);
    let scored = score_record(record, generator, embedder, options, record_seed)?;

    let mut rows = Vec::with_capacity(scored.pool.items.len() + 1);
    rows.push(EvalRecord {
        record_id: record.id.clone(),
        policy: EvalPolicy::Original,
        prompt_shown: scored.pool.original.clone(),
        gt_label,
        model_response: String::new(),
    });
    for (item, score) in scored.pool.items.iter().zip(scored.scores.scores()) {
        if *score > 0.0 {
            rows.push(EvalRecord {
                record_id: record.id.clone(),
                policy: EvalPolicy::Policy(item.policy),
                prompt_shown: item.text.clone(),
                gt_label,
                model_response: String::new(),
            });
        }
    }
    Ok((rows, scored.counters))
}
