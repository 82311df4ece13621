//! Argument parsing and command glue.
//!
//! Every command echoes its resolved configuration into the output file's
//! header line, logs progress to standard error, and writes data only to
//! files (`report` and `oracle` additionally print their human-readable
//! result to standard output). Exit codes: 0 success, 1 runtime failure,
//! 2 usage error.

use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Duration;

use augcap_core::augment::{PromptGenerator, RuleBasedGenerator};
use augcap_core::cug::SelectionStrategy;
use augcap_core::embed::{Embedder, HashedTfEmbedder, FALLBACK_DIMENSION};
use augcap_core::lm::{composite_loss, context_string, LossMode, NgramModel, TargetText};
use augcap_core::metrics::{per_policy_report, rows_from_records, AnswerRule};
use augcap_core::policy::{PolicyKind, TemplateSet};
use augcap_core::records::{EvalRecord, ManifestRecord};
use augcap_core::seed;
use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;

use crate::io::{
    load_captions, load_qa_pairs, read_jsonl, write_jsonl, CaptionFormat, FileHeader, PoolLine,
};
use crate::pipeline::{
    augment_pools, build_manifest, build_testset, sample_pools, score_pools, BuildError,
    BuildOptions, BuildSummary,
};
use crate::remote::{ChatCompletionGenerator, ChatEndpoint, EndpointOptions, RemoteEmbedder};

/// Failures split by exit code: usage errors exit 2, runtime failures 1.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Runtime(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<crate::io::IoError> for CliError {
    fn from(err: crate::io::IoError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

impl From<BuildError> for CliError {
    fn from(err: BuildError) -> Self {
        match err {
            BuildError::Options(message) => CliError::Usage(message),
            other => CliError::Runtime(other.to_string()),
        }
    }
}

impl From<crate::remote::RemoteError> for CliError {
    fn from(err: crate::remote::RemoteError) -> Self {
        CliError::Runtime(err.to_string())
    }
}

#[derive(Parser, Debug)]
#[command(
    name = "augcap",
    version,
    about = "Prompt augmentation, similarity filtering, and caption-grounded dataset building"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build augmented prompt pools for a QA file.
    Augment(AugmentCmd),
    /// Score pool items against their originals and apply the threshold.
    Score(ScoreCmd),
    /// Draw one prompt per record from its scored pool.
    Sample(SampleCmd),
    /// Run the full build: augment, score, sample, compose targets.
    Build(BuildCmd),
    /// Build the augmented yes/no evaluation set.
    Testset(TestsetCmd),
    /// Fill evaluation records with responses from a chat endpoint, or
    /// verify an already filled file.
    Eval(EvalCmd),
    /// Compute metrics and the per-policy accuracy table.
    Report(ReportCmd),
    /// Fit the reference n-gram model on a manifest and verify the
    /// composite-loss identities.
    Oracle(OracleCmd),
}

#[derive(Args, Debug)]
struct PoolArgs {
    /// Comma-separated policy list.
    #[arg(long, value_delimiter = ',', default_value = "hard,easy,short,long,rewrite,spell,append")]
    policies: Vec<String>,
    /// Pool size per record; the policy list is cycled to this length.
    #[arg(long, default_value_t = 7)]
    n: usize,
}

impl PoolArgs {
    fn parse_policies(&self) -> Result<Vec<PolicyKind>, CliError> {
        self.policies
            .iter()
            .map(|name| PolicyKind::from_str(name.trim()).map_err(|e| CliError::Usage(e.to_string())))
            .collect()
    }
}

#[derive(Args, Debug)]
struct GeneratorArgs {
    /// Rewrite backend: rule or chat.
    #[arg(long, default_value = "rule")]
    generator: String,
    /// Chat-completion endpoint URL; required with --generator chat.
    #[arg(long)]
    gen_endpoint: Option<String>,
    /// Model name sent to the chat endpoint; required with --generator chat.
    #[arg(long)]
    gen_model: Option<String>,
    /// Sampling temperature sent to the chat endpoint.
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    /// Extra attempts after a failed request.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Linear backoff step between retries, in milliseconds.
    #[arg(long, default_value_t = 250)]
    backoff_ms: u64,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "AUGCAP_API_KEY")]
    api_key_env: String,
    /// JSON file with the per-policy instruction templates (array of
    /// {policy, instruction_text}, one entry per policy).
    #[arg(long)]
    templates: Option<PathBuf>,
}

impl GeneratorArgs {
    fn endpoint_options(&self, url: String, model: String) -> EndpointOptions {
        EndpointOptions {
            url,
            model,
            api_key: std::env::var(&self.api_key_env).ok(),
            timeout: Duration::from_secs(self.timeout_s),
            retries: self.retries,
            backoff: Duration::from_millis(self.backoff_ms),
        }
    }

    fn build(&self) -> Result<(Box<dyn PromptGenerator>, serde_json::Value), CliError> {
        match self.generator.as_str() {
            "rule" => Ok((Box::new(RuleBasedGenerator), serde_json::json!({"id": "rule-based"}))),
            "chat" => {
                let url = self
                    .gen_endpoint
                    .clone()
                    .ok_or_else(|| CliError::Usage("--gen-endpoint is required with --generator chat".into()))?;
                let model = self
                    .gen_model
                    .clone()
                    .ok_or_else(|| CliError::Usage("--gen-model is required with --generator chat".into()))?;
                let templates = match &self.templates {
                    Some(path) => load_templates(path)?,
                    None => TemplateSet::default(),
                };
                let config = serde_json::json!({
                    "id": "chat-completion",
                    "endpoint": url,
                    "model": model,
                    "temperature": self.temperature,
                    "retries": self.retries,
                    "api_key_env": self.api_key_env,
                    "templates": if self.templates.is_some() { "custom" } else { "default" },
                });
                let endpoint = ChatEndpoint::new(self.endpoint_options(url, model), self.temperature)?;
                Ok((Box::new(ChatCompletionGenerator::new(endpoint, templates)), config))
            }
            other => Err(CliError::Usage(format!("unknown generator `{other}`; expected rule or chat"))),
        }
    }
}

fn load_templates(path: &Path) -> Result<TemplateSet, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Runtime(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CliError::Usage(format!("invalid template file {}: {e}", path.display())))
}

#[derive(Args, Debug)]
struct EmbedArgs {
    /// Embedding backend: hashed-tf or remote.
    #[arg(long, default_value = "hashed-tf")]
    embedder: String,
    /// Embedding endpoint URL; required with --embedder remote.
    #[arg(long)]
    embed_endpoint: Option<String>,
    /// Model name sent to the embedding endpoint; required with --embedder remote.
    #[arg(long)]
    embed_model: Option<String>,
    /// Bucket count for the hashed-tf embedder.
    #[arg(long, default_value_t = FALLBACK_DIMENSION)]
    embed_dim: usize,
    /// Environment variable holding the embedding bearer token.
    #[arg(long, default_value = "AUGCAP_API_KEY")]
    embed_api_key_env: String,
    /// Extra attempts after a failed embedding request.
    #[arg(long, default_value_t = 3)]
    embed_retries: u32,
}

impl EmbedArgs {
    fn build(&self) -> Result<(Box<dyn Embedder>, serde_json::Value), CliError> {
        match self.embedder.as_str() {
            "hashed-tf" => {
                let embedder = HashedTfEmbedder::new(self.embed_dim)
                    .map_err(|e| CliError::Usage(e.to_string()))?;
                Ok((Box::new(embedder), serde_json::json!({"id": "hashed-tf", "dimension": self.embed_dim})))
            }
            "remote" => {
                let url = self
                    .embed_endpoint
                    .clone()
                    .ok_or_else(|| CliError::Usage("--embed-endpoint is required with --embedder remote".into()))?;
                let model = self
                    .embed_model
                    .clone()
                    .ok_or_else(|| CliError::Usage("--embed-model is required with --embedder remote".into()))?;
                let config = serde_json::json!({
                    "id": "remote",
                    "endpoint": url,
                    "model": model,
                    "api_key_env": self.embed_api_key_env,
                });
                let options = EndpointOptions {
                    api_key: std::env::var(&self.embed_api_key_env).ok(),
                    retries: self.embed_retries,
                    ..EndpointOptions::new(url, model)
                };
                Ok((Box::new(RemoteEmbedder::new(options)?), config))
            }
            other => Err(CliError::Usage(format!("unknown embedder `{other}`; expected hashed-tf or remote"))),
        }
    }
}

#[derive(Args, Debug)]
struct AugmentCmd {
    /// Input QA records (JSONL).
    #[arg(long)]
    qa: PathBuf,
    /// Output pools file (JSONL).
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pool: PoolArgs,
    #[command(flatten)]
    gen: GeneratorArgs,
    /// Base seed all per-record randomness derives from.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; output order stays input order.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Args, Debug)]
struct ScoreCmd {
    /// Input pools file from the augment stage.
    #[arg(long)]
    pools: PathBuf,
    /// Output scored pools file.
    #[arg(long)]
    out: PathBuf,
    /// Score threshold; similarities below it are zeroed.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    #[command(flatten)]
    embed: EmbedArgs,
    /// Worker threads; output order stays input order.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Args, Debug)]
struct SampleCmd {
    /// Input scored pools file.
    #[arg(long)]
    pools: PathBuf,
    /// Output samples file.
    #[arg(long)]
    out: PathBuf,
    /// Base seed all per-record randomness derives from.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Threshold the scores were produced with; defaults to the value
    /// recorded in the input file's header.
    #[arg(long)]
    epsilon: Option<f64>,
}

#[derive(Args, Debug)]
struct BuildCmd {
    /// Input QA records (JSONL).
    #[arg(long)]
    qa: PathBuf,
    /// Caption file.
    #[arg(long)]
    captions: PathBuf,
    /// Caption file layout: coco_annotations or plain_jsonl.
    #[arg(long, default_value = "coco_annotations")]
    caption_format: String,
    /// Output manifest file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pool: PoolArgs,
    /// Score threshold; similarities below it are zeroed.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Weight of the augmented loss term recorded on each record.
    #[arg(long, default_value_t = 0.5)]
    lambda: f64,
    /// Base seed all per-record randomness derives from.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Caption choice per record: first_by_id, longest, or seeded_random.
    #[arg(long, default_value = "first_by_id")]
    caption_strategy: String,
    #[command(flatten)]
    gen: GeneratorArgs,
    #[command(flatten)]
    embed: EmbedArgs,
    /// Worker threads; output order stays input order.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Args, Debug)]
struct TestsetCmd {
    /// Input QA records (JSONL).
    #[arg(long)]
    qa: PathBuf,
    /// Output evaluation set file.
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    pool: PoolArgs,
    /// Score threshold; items below it are left out of the set.
    #[arg(long, default_value_t = 0.5)]
    epsilon: f64,
    /// Base seed all per-record randomness derives from.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    gen: GeneratorArgs,
    #[command(flatten)]
    embed: EmbedArgs,
    /// Worker threads; output order stays input order.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
}

#[derive(Args, Debug)]
struct EvalCmd {
    /// Evaluation set file to fill or verify.
    #[arg(long)]
    eval: PathBuf,
    /// Output file with model responses; required unless --check.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Chat-completion endpoint URL; required unless --check.
    #[arg(long)]
    endpoint: Option<String>,
    /// Model name sent to the endpoint; required unless --check.
    #[arg(long)]
    model: Option<String>,
    /// Sampling temperature; answering is deterministic by default.
    #[arg(long, default_value_t = 0.0)]
    temperature: f64,
    /// Extra attempts after a failed request.
    #[arg(long, default_value_t = 3)]
    retries: u32,
    /// Linear backoff step between retries, in milliseconds.
    #[arg(long, default_value_t = 250)]
    backoff_ms: u64,
    /// Request timeout in seconds.
    #[arg(long, default_value_t = 30)]
    timeout_s: u64,
    /// Environment variable holding the bearer token.
    #[arg(long, default_value = "AUGCAP_API_KEY")]
    api_key_env: String,
    /// Worker threads; output order stays input order.
    #[arg(long, default_value_t = 1)]
    parallelism: usize,
    /// Only verify that every record already carries a model response.
    #[arg(long)]
    check: bool,
}

#[derive(Args, Debug)]
struct ReportCmd {
    /// Filled evaluation set file.
    #[arg(long)]
    eval: PathBuf,
    /// Also write the metrics document here as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also write the rendered table here as text.
    #[arg(long)]
    table: Option<PathBuf>,
    /// Split the caption sentence off responses before answer extraction.
    #[arg(long)]
    cug_mode: bool,
    /// Which standalone yes/no token decides: first_token or last_token.
    #[arg(long, default_value = "first_token")]
    answer_rule: String,
}

#[derive(Args, Debug)]
struct OracleCmd {
    /// Manifest file to verify.
    #[arg(long)]
    manifest: PathBuf,
    /// N-gram order of the reference model.
    #[arg(long, default_value_t = 3)]
    order: usize,
    /// Add-k smoothing constant.
    #[arg(long, default_value_t = 0.5)]
    smoothing: f64,
    /// Monte-Carlo draws per record.
    #[arg(long, default_value_t = 10_000)]
    draws: u32,
    /// Seed for the Monte-Carlo estimates.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Also write the check results here as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Also dump the fitted model here as JSON.
    #[arg(long)]
    dump_model: Option<PathBuf>,
}

/// Executes a parsed invocation.
pub fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Augment(cmd) => run_augment(cmd),
        Command::Score(cmd) => run_score(cmd),
        Command::Sample(cmd) => run_sample(cmd),
        Command::Build(cmd) => run_build(cmd),
        Command::Testset(cmd) => run_testset(cmd),
        Command::Eval(cmd) => run_eval(cmd),
        Command::Report(cmd) => run_report(cmd),
        Command::Oracle(cmd) => run_oracle(cmd),
    }
}

fn load_qa(path: &Path) -> Result<Vec<augcap_core::records::PromptRecord>, CliError> {
    let report = load_qa_pairs(path)?;
    for issue in &report.issues {
        log::warn!("{}:{}: skipped malformed line: {}", path.display(), issue.line, issue.message);
    }
    log::info!("loaded {} records from {}", report.rows.len(), path.display());
    Ok(report.rows)
}

fn log_summary(summary: &BuildSummary) {
    log::info!(
        "{} records, {} pool items ({} dropped, {} unchanged, {} zero-scored), {} original fallbacks, {} open records skipped",
        summary.records,
        summary.pool_items,
        summary.dropped_items,
        summary.unchanged_items,
        summary.zero_score_items,
        summary.original_fallbacks,
        summary.skipped_open_records,
    );
}

fn policy_names(policies: &[PolicyKind]) -> Vec<&'static str> {
    policies.iter().map(|p| p.name()).collect()
}

fn run_augment(cmd: AugmentCmd) -> Result<(), CliError> {
    let policies = cmd.pool.parse_policies()?;
    let records = load_qa(&cmd.qa)?;
    let (generator, generator_config) = cmd.gen.build()?;
    let options = BuildOptions {
        policies: policies.clone(),
        n: cmd.pool.n,
        seed: cmd.seed,
        parallelism: cmd.parallelism,
        ..BuildOptions::default()
    };
    let (lines, summary) = augment_pools(&records, generator.as_ref(), &options)?;
    log_summary(&summary);
    let config = serde_json::json!({
        "command": "augment",
        "seed": cmd.seed,
        "n": cmd.pool.n,
        "policies": policy_names(&policies),
        "generator": generator_config,
    });
    write_jsonl(&cmd.out, &FileHeader::new("pools", config), &lines)?;
    log::info!("wrote {} pools to {}", lines.len(), cmd.out.display());
    Ok(())
}

fn run_score(cmd: ScoreCmd) -> Result<(), CliError> {
    let (upstream, lines): (Option<FileHeader>, Vec<PoolLine>) = read_jsonl(&cmd.pools)?;
    let (embedder, embedder_config) = cmd.embed.build()?;
    let options = BuildOptions { epsilon: cmd.epsilon, parallelism: cmd.parallelism, ..BuildOptions::default() };
    let (scored, summary) = score_pools(&lines, embedder.as_ref(), &options)?;
    log_summary(&summary);
    let mut config = serde_json::json!({
        "command": "score",
        "epsilon": cmd.epsilon,
        "embedder": embedder_config,
    });
    if let Some(upstream) = upstream {
        config["upstream"] = upstream.config;
    }
    write_jsonl(&cmd.out, &FileHeader::new("pools", config), &scored)?;
    log::info!("wrote {} scored pools to {}", scored.len(), cmd.out.display());
    Ok(())
}

fn header_epsilon(header: &Option<FileHeader>) -> Option<f64> {
    header.as_ref().and_then(|h| h.config.get("epsilon")).and_then(|v| v.as_f64())
}

fn run_sample(cmd: SampleCmd) -> Result<(), CliError> {
    let (upstream, lines): (Option<FileHeader>, Vec<PoolLine>) = read_jsonl(&cmd.pools)?;
    let epsilon = header_epsilon(&upstream).or(cmd.epsilon).ok_or_else(|| {
        CliError::Usage(format!(
            "{} carries no epsilon in its header; pass --epsilon explicitly",
            cmd.pools.display()
        ))
    })?;
    let (samples, summary) = sample_pools(&lines, epsilon, cmd.seed)?;
    log_summary(&summary);
    let mut config = serde_json::json!({
        "command": "sample",
        "seed": cmd.seed,
        "epsilon": epsilon,
    });
    if let Some(upstream) = upstream {
        config["upstream"] = upstream.config;
    }
    write_jsonl(&cmd.out, &FileHeader::new("samples", config), &samples)?;
    log::info!("wrote {} samples to {}", samples.len(), cmd.out.display());
    Ok(())
}

fn run_build(cmd: BuildCmd) -> Result<(), CliError> {
    let policies = cmd.pool.parse_policies()?;
    let caption_format = CaptionFormat::from_str(&cmd.caption_format).map_err(CliError::Usage)?;
    let caption_strategy = SelectionStrategy::from_str(&cmd.caption_strategy).map_err(CliError::Usage)?;
    let records = load_qa(&cmd.qa)?;
    let captions = load_captions(&cmd.captions, caption_format)?;
    log::info!("loaded captions for {} images from {}", captions.len(), cmd.captions.display());
    let (generator, generator_config) = cmd.gen.build()?;
    let (embedder, embedder_config) = cmd.embed.build()?;
    let options = BuildOptions {
        policies: policies.clone(),
        n: cmd.pool.n,
        epsilon: cmd.epsilon,
        lambda: cmd.lambda,
        seed: cmd.seed,
        caption_strategy,
        parallelism: cmd.parallelism,
    };
    let (rows, summary) = build_manifest(&records, &captions, generator.as_ref(), embedder.as_ref(), &options)?;
    log_summary(&summary);
    let config = serde_json::json!({
        "command": "build",
        "seed": cmd.seed,
        "n": cmd.pool.n,
        "policies": policy_names(&policies),
        "epsilon": cmd.epsilon,
        "lambda": cmd.lambda,
        "caption_strategy": caption_strategy.name(),
        "caption_format": cmd.caption_format,
        "generator": generator_config,
        "embedder": embedder_config,
    });
    write_jsonl(&cmd.out, &FileHeader::new("manifest", config), &rows)?;
    log::info!("wrote {} manifest records to {}", rows.len(), cmd.out.display());
    Ok(())
}

fn run_testset(cmd: TestsetCmd) -> Result<(), CliError> {
    let policies = cmd.pool.parse_policies()?;
    let records = load_qa(&cmd.qa)?;
    let (generator, generator_config) = cmd.gen.build()?;
    let (embedder, embedder_config) = cmd.embed.build()?;
    let options = BuildOptions {
        policies: policies.clone(),
        n: cmd.pool.n,
        epsilon: cmd.epsilon,
        seed: cmd.seed,
        parallelism: cmd.parallelism,
        ..BuildOptions::default()
    };
    let (rows, summary) = build_testset(&records, generator.as_ref(), embedder.as_ref(), &options)?;
    log_summary(&summary);
    let config = serde_json::json!({
        "command": "testset",
        "seed": cmd.seed,
        "n": cmd.pool.n,
        "policies": policy_names(&policies),
        "epsilon": cmd.epsilon,
        "generator": generator_config,
        "embedder": embedder_config,
    });
    write_jsonl(&cmd.out, &FileHeader::new("evalset", config), &rows)?;
    log::info!("wrote {} evaluation records to {}", rows.len(), cmd.out.display());
    Ok(())
}

fn run_eval(cmd: EvalCmd) -> Result<(), CliError> {
    let (upstream, records): (Option<FileHeader>, Vec<EvalRecord>) = read_jsonl(&cmd.eval)?;
    if cmd.check {
        let missing: Vec<&str> = records
            .iter()
            .filter(|r| r.model_response.trim().is_empty())
            .map(|r| r.record_id.as_str())
            .collect();
        if missing.is_empty() {
            println!("all {} records carry a model response", records.len());
            return Ok(());
        }
        let shown: Vec<&str> = missing.iter().take(5).copied().collect();
        return Err(CliError::Runtime(format!(
            "{} of {} records have no model response (first missing: {})",
            missing.len(),
            records.len(),
            shown.join(", "),
        )));
    }

    let out = cmd.out.clone().ok_or_else(|| CliError::Usage("--out is required unless --check".into()))?;
    let endpoint_url = cmd
        .endpoint
        .clone()
        .ok_or_else(|| CliError::Usage("--endpoint is required unless --check".into()))?;
    let model = cmd.model.clone().ok_or_else(|| CliError::Usage("--model is required unless --check".into()))?;
    let options = EndpointOptions {
        url: endpoint_url.clone(),
        model: model.clone(),
        api_key: std::env::var(&cmd.api_key_env).ok(),
        timeout: Duration::from_secs(cmd.timeout_s),
        retries: cmd.retries,
        backoff: Duration::from_millis(cmd.backoff_ms),
    };
    let endpoint = ChatEndpoint::new(options, cmd.temperature)?;
    let already = records.iter().filter(|r| !r.model_response.trim().is_empty()).count();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cmd.parallelism)
        .build()
        .map_err(|e| CliError::Runtime(format!("cannot start worker pool: {e}")))?;
    let filled: Result<Vec<EvalRecord>, CliError> = pool.install(|| {
        records
            .par_iter()
            .map(|record| {
                if !record.model_response.trim().is_empty() {
                    return Ok(record.clone());
                }
                let reply = endpoint.complete(&record.prompt_shown).map_err(|e| {
                    CliError::Runtime(format!("record `{}`: {e}", record.record_id))
                })?;
                Ok(EvalRecord { model_response: reply, ..record.clone() })
            })
            .collect()
    });
    let filled = filled?;
    log::info!("filled {} of {} records ({} already answered)", filled.len() - already, filled.len(), already);
    let mut config = serde_json::json!({
        "command": "eval",
        "endpoint": endpoint_url,
        "model": model,
        "temperature": cmd.temperature,
        "retries": cmd.retries,
        "api_key_env": cmd.api_key_env,
    });
    if let Some(upstream) = upstream {
        config["upstream"] = upstream.config;
    }
    write_jsonl(&out, &FileHeader::new("evalset", config), &filled)?;
    log::info!("wrote {} answered records to {}", filled.len(), out.display());
    Ok(())
}

fn run_report(cmd: ReportCmd) -> Result<(), CliError> {
    let rule = match cmd.answer_rule.as_str() {
        "first_token" => AnswerRule::FirstToken,
        "last_token" => AnswerRule::LastToken,
        other => {
            return Err(CliError::Usage(format!(
                "unknown answer rule `{other}`; expected first_token or last_token"
            )))
        }
    };
    let (upstream, records): (Option<FileHeader>, Vec<EvalRecord>) = read_jsonl(&cmd.eval)?;
    let unanswered = records.iter().filter(|r| r.model_response.trim().is_empty()).count();
    if unanswered > 0 {
        log::warn!("{unanswered} of {} records have no model response; they count as Unknown", records.len());
    }
    let rows = rows_from_records(&records, cmd.cug_mode, rule);
    let report = per_policy_report(&rows);
    print!("{}", report.table);
    println!();
    let m = &report.metrics;
    println!("n          {}", m.n);
    println!("accuracy   {:.4}", m.accuracy);
    println!("precision  {:.4}", m.precision);
    println!("recall     {:.4}", m.recall);
    println!("f1         {:.4}", m.f1);
    println!("unknown    {}", m.unknown_count);

    let mut config = serde_json::json!({
        "command": "report",
        "cug_mode": cmd.cug_mode,
        "answer_rule": cmd.answer_rule,
    });
    if let Some(upstream) = upstream {
        config["upstream"] = upstream.config;
    }
    if let Some(path) = &cmd.json {
        let document = serde_json::json!({
            "header": FileHeader::new("report", config.clone()),
            "metrics": report.metrics,
        });
        std::fs::write(path, format!("{}\n", serde_json::to_string_pretty(&document).expect("serializable")))
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote metrics to {}", path.display());
    }
    if let Some(path) = &cmd.table {
        std::fs::write(path, &report.table)
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote table to {}", path.display());
    }
    Ok(())
}

#[derive(Debug, serde::Serialize)]
struct OracleCheck {
    name: &'static str,
    passed: bool,
    detail: String,
}

#[derive(Debug, serde::Serialize)]
struct OracleReport {
    records: usize,
    order: usize,
    smoothing: f64,
    draws: u32,
    seed: u64,
    checks: Vec<OracleCheck>,
}

fn run_oracle(cmd: OracleCmd) -> Result<(), CliError> {
    let (_, records): (Option<FileHeader>, Vec<ManifestRecord>) = read_jsonl(&cmd.manifest)?;
    if records.is_empty() {
        return Err(CliError::Runtime(format!("{} has no manifest records", cmd.manifest.display())));
    }
    let corpus: Vec<(String, String)> = records
        .iter()
        .map(|r| (context_string(&r.image_id, &r.original_prompt), r.target.composed.clone()))
        .collect();
    let model = NgramModel::fit(&corpus, cmd.order, cmd.smoothing)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    log::info!(
        "fitted order-{} model on {} records ({} characters of vocabulary)",
        cmd.order,
        records.len(),
        model.vocab_size(),
    );

    let report = oracle_checks(&model, &records, cmd.draws, cmd.seed)
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    for check in &report.checks {
        let verdict = if check.passed { "PASS" } else { "FAIL" };
        println!("{:<12} {verdict} ({})", check.name, check.detail);
    }

    if let Some(path) = &cmd.dump_model {
        let body = serde_json::to_string_pretty(&model).expect("serializable");
        std::fs::write(path, format!("{body}\n"))
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("dumped model to {}", path.display());
    }
    if let Some(path) = &cmd.json {
        let body = serde_json::to_string_pretty(&report).expect("serializable");
        std::fs::write(path, format!("{body}\n"))
            .map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))?;
        log::info!("wrote oracle report to {}", path.display());
    }

    let failed = report.checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        return Err(CliError::Runtime(format!("{failed} oracle checks failed")));
    }
    Ok(())
}

/// Verifies the composite-loss identities on every record, computing the
/// expected values independently from per-item NLLs rather than through the
/// loss function under test.
fn oracle_checks(
    model: &NgramModel,
    records: &[ManifestRecord],
    draws: u32,
    oracle_seed: u64,
) -> Result<OracleReport, augcap_core::lm::LmError> {
    const IDENTITY_TOLERANCE: f64 = 1e-12;
    // Monte-Carlo estimates accumulate rounding over `draws` additions, so a
    // small absolute floor sits alongside the three-standard-error band for
    // pools whose NLLs are (near-)identical.
    const MC_FLOOR: f64 = 1e-9;

    let mut identity_max: f64 = 0.0;
    let mut lambda_zero_max: f64 = 0.0;
    let mut expectation_max: f64 = 0.0;
    let mut convexity_excess: f64 = 0.0;
    let mut fallback_records = 0usize;
    let mut fallback_ok = true;
    let mut mc_max_error: f64 = 0.0;
    let mut mc_max_allowed: f64 = 0.0;
    let mut mc_ok = true;
    let mut nonnegative_ok = true;

    for record in records {
        let exact = composite_loss(model, record, LossMode::Exact)?;
        identity_max = identity_max.max((exact.total - (exact.base + record.lambda * exact.augmented)).abs());
        nonnegative_ok &= exact.base >= 0.0 && exact.augmented >= 0.0;

        let mut zeroed = record.clone();
        zeroed.lambda = 0.0;
        let collapsed = composite_loss(model, &zeroed, LossMode::Exact)?;
        lambda_zero_max = lambda_zero_max.max((collapsed.total - collapsed.base).abs());

        let total_score: f64 = record.pool.iter().map(|e| e.score).sum();
        if total_score > 0.0 {
            let mut weighted = 0.0;
            let mut low = f64::INFINITY;
            let mut high = f64::NEG_INFINITY;
            let mut variance = 0.0;
            let mut support = Vec::new();
            for entry in &record.pool {
                if entry.score > 0.0 {
                    let nll =
                        model.sequence_nll(&record.image_id, &entry.text, TargetText::Cug(&record.target))?;
                    let weight = entry.score / total_score;
                    weighted += weight * nll;
                    low = low.min(nll);
                    high = high.max(nll);
                    support.push((weight, nll));
                }
            }
            for (weight, nll) in &support {
                variance += weight * (nll - weighted).powi(2);
            }
            expectation_max = expectation_max.max((weighted - exact.augmented).abs());
            convexity_excess = convexity_excess
                .max(low - exact.augmented)
                .max(exact.augmented - high);

            let mode = LossMode::MonteCarlo { seed: seed::record_seed(oracle_seed, &record.record_id), draws };
            let mc = composite_loss(model, record, mode)?;
            identity_max = identity_max.max((mc.total - (mc.base + record.lambda * mc.augmented)).abs());
            let standard_error = (variance / draws as f64).sqrt();
            let allowed = 3.0 * standard_error + MC_FLOOR;
            let error = (mc.augmented - exact.augmented).abs();
            mc_max_error = mc_max_error.max(error);
            mc_max_allowed = mc_max_allowed.max(allowed);
            mc_ok &= error <= allowed;
        } else {
            fallback_records += 1;
            fallback_ok &= exact.augmented == exact.base
                && (exact.total - (1.0 + record.lambda) * exact.base).abs() <= IDENTITY_TOLERANCE;
        }
    }

    let checks = vec![
        OracleCheck {
            name: "identity",
            passed: identity_max <= IDENTITY_TOLERANCE,
            detail: format!("max |total - (base + lambda*augmented)| = {identity_max:.3e}, tolerance 1e-12"),
        },
        OracleCheck {
            name: "lambda-zero",
            passed: lambda_zero_max == 0.0,
            detail: format!("max |total - base| at lambda 0 = {lambda_zero_max:.3e}, must be exact"),
        },
        OracleCheck {
            name: "expectation",
            passed: expectation_max <= IDENTITY_TOLERANCE,
            detail: format!("max deviation from independent weighted sum = {expectation_max:.3e}"),
        },
        OracleCheck {
            name: "convexity",
            passed: convexity_excess <= IDENTITY_TOLERANCE,
            detail: format!("max excess beyond [min, max] support NLL = {convexity_excess:.3e}"),
        },
        OracleCheck {
            name: "nonnegative",
            passed: nonnegative_ok,
            detail: "base and augmented NLLs are nonnegative".to_string(),
        },
        OracleCheck {
            name: "fallback",
            passed: fallback_ok,
            detail: format!("{fallback_records} all-zero pools collapse to (1 + lambda) * base"),
        },
        OracleCheck {
            name: "monte-carlo",
            passed: mc_ok,
            detail: format!(
                "max error {mc_max_error:.3e} within 3 standard errors + {MC_FLOOR:.0e} (max allowance {mc_max_allowed:.3e}, {draws} draws)"
            ),
        },
    ];

    Ok(OracleReport {
        records: records.len(),
        order: model.order(),
        smoothing: model.smoothing(),
        draws,
        seed: oracle_seed,
        checks,
    })
}
