//! JSONL file formats and caption file loaders.
//!
//! Every output file starts with a header line carrying the resolved
//! configuration that produced it, followed by one JSON record per line.
//! Headers deliberately exclude filesystem paths and timestamps so rerunning
//! the same configuration yields byte-identical files wherever they land.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use augcap_core::augment::AugmentedPrompt;
use augcap_core::cug::{Caption, CaptionSource};
use augcap_core::records::PromptRecord;
use augcap_core::sample::SampleOutcome;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

/// IO and schema failures.
#[derive(Debug, thiserror::Error)]
pub enum IoError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}:{line}: {message}")]
    Parse { path: PathBuf, line: usize, message: String },
    #[error("{path}: {bad} of {total} lines are malformed (over the 1% limit)\n{report}")]
    TooManyMalformed { path: PathBuf, bad: usize, total: usize, report: String },
    #[error("{path}:{line}: duplicate record id `{id}`")]
    DuplicateId { path: PathBuf, line: usize, id: String },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

/// One malformed input line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LineIssue {
    pub line: usize,
    pub message: String,
}

/// Parsed rows plus any tolerated malformed lines.
#[derive(Debug)]
pub struct LoadReport<T> {
    pub rows: Vec<T>,
    pub issues: Vec<LineIssue>,
}

/// First line of every output file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FileHeader {
    pub tool: String,
    pub version: String,
    /// What the rows are: `pools`, `samples`, `manifest`, or `evalset`.
    pub kind: String,
    /// Resolved configuration; no paths, no timestamps.
    pub config: serde_json::Value,
}

impl FileHeader {
    pub fn new(kind: &str, config: serde_json::Value) -> Self {
        FileHeader {
            tool: "augcap".to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            kind: kind.to_string(),
            config,
        }
    }
}

#[derive(Serialize, Deserialize)]
struct HeaderLine {
    header: FileHeader,
}

/// One prompt pool stage row: a record's original prompt with its augmented
/// variants, scored or not yet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoolLine {
    pub record_id: String,
    pub image_id: String,
    pub original: String,
    pub items: Vec<AugmentedPrompt>,
}

/// One sampling stage row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleLine {
    pub record_id: String,
    pub image_id: String,
    pub sampled: SampleOutcome,
}

fn read_to_string(path: &Path) -> Result<String, IoError> {
    fs::read_to_string(path).map_err(|source| IoError::Read { path: path.to_path_buf(), source })
}

/// Writes a header line followed by one JSON object per row.
pub fn write_jsonl<T: Serialize>(path: &Path, header: &FileHeader, rows: &[T]) -> Result<(), IoError> {
    let wrap = |source| IoError::Write { path: path.to_path_buf(), source };
    let file = fs::File::create(path).map_err(wrap)?;
    let mut out = std::io::BufWriter::new(file);
    let to_io = |e: serde_json::Error| wrap(std::io::Error::other(e));
    let header_json = serde_json::to_string(&HeaderLine { header: header.clone() }).map_err(to_io)?;
    writeln!(out, "{header_json}").map_err(wrap)?;
    for row in rows {
        let line = serde_json::to_string(row).map_err(to_io)?;
        writeln!(out, "{line}").map_err(wrap)?;
    }
    out.flush().map_err(wrap)
}

/// Reads a JSONL file, accepting an optional leading header line. Malformed
/// rows are hard errors; use [`load_qa_pairs`] for tolerant input loading.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<(Option<FileHeader>, Vec<T>), IoError> {
    let text = read_to_string(path)?;
    let mut header = None;
    let mut rows = Vec::new();
    for (number, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        if number == 1 {
            if let Ok(parsed) = serde_json::from_str::<HeaderLine>(line) {
                header = Some(parsed.header);
                continue;
            }
        }
        let row = serde_json::from_str::<T>(line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: number,
            message: e.to_string(),
        })?;
        rows.push(row);
    }
    Ok((header, rows))
}

/// Loads QA input records.
///
/// Malformed lines are collected with their line numbers; loading aborts
/// when more than 1% of non-blank lines are malformed, and always aborts on
/// duplicate ids.
pub fn load_qa_pairs(path: &Path) -> Result<LoadReport<PromptRecord>, IoError> {
    let text = read_to_string(path)?;
    let mut rows: Vec<PromptRecord> = Vec::new();
    let mut issues = Vec::new();
    let mut seen_ids: BTreeMap<String, usize> = BTreeMap::new();
    let mut total = 0usize;
    for (number, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        total += 1;
        let record = match serde_json::from_str::<PromptRecord>(line) {
            Ok(r) => r,
            Err(e) => {
                issues.push(LineIssue { line: number, message: e.to_string() });
                continue;
            }
        };
        if let Some(problem) = validate_record(&record) {
            issues.push(LineIssue { line: number, message: problem });
            continue;
        }
        if let Some(first) = seen_ids.insert(record.id.clone(), number) {
            let _ = first;
            return Err(IoError::DuplicateId { path: path.to_path_buf(), line: number, id: record.id });
        }
        rows.push(record);
    }
    if issues.len() * 100 > total {
        let report = issues
            .iter()
            .map(|i| format!("  line {}: {}", i.line, i.message))
            .collect::<Vec<_>>()
            .join("\n");
        return Err(IoError::TooManyMalformed { path: path.to_path_buf(), bad: issues.len(), total, report });
    }
    Ok(LoadReport { rows, issues })
}

fn validate_record(record: &PromptRecord) -> Option<String> {
    if record.id.trim().is_empty() {
        return Some("field `id` must not be empty".to_string());
    }
    if record.image_id.trim().is_empty() {
        return Some("field `image_id` must not be empty".to_string());
    }
    if record.prompt.split_whitespace().next().is_none() {
        return Some("field `prompt` must contain at least one word".to_string());
    }
    if record.response.trim().is_empty() {
        return Some("field `response` must not be empty".to_string());
    }
    None
}

/// Caption file layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CaptionFormat {
    /// A COCO captions file: one JSON object with `images` and `annotations`.
    CocoAnnotations,
    /// One `{image_id, caption, source}` object per line.
    PlainJsonl,
}

impl std::str::FromStr for CaptionFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "coco_annotations" => Ok(CaptionFormat::CocoAnnotations),
            "plain_jsonl" => Ok(CaptionFormat::PlainJsonl),
            other => Err(format!("unknown caption format `{other}`; expected coco_annotations or plain_jsonl")),
        }
    }
}

#[derive(Deserialize)]
struct CocoFile {
    #[serde(default)]
    images: Vec<CocoImage>,
    annotations: Vec<CocoAnnotation>,
}

#[derive(Deserialize)]
struct CocoImage {
    id: u64,
}

#[derive(Deserialize)]
struct CocoAnnotation {
    id: u64,
    image_id: u64,
    caption: String,
}

#[derive(Deserialize)]
struct PlainCaptionLine {
    image_id: String,
    caption: String,
    #[serde(default = "default_source")]
    source: CaptionSource,
}

fn default_source() -> CaptionSource {
    CaptionSource::Human
}

/// Loads captions grouped by image id.
///
/// COCO lists are ordered by ascending annotation id, plain JSONL lists by
/// line order, so caption selection downstream is stable.
pub fn load_captions(path: &Path, format: CaptionFormat) -> Result<BTreeMap<String, Vec<Caption>>, IoError> {
    match format {
        CaptionFormat::CocoAnnotations => load_coco(path),
        CaptionFormat::PlainJsonl => load_plain(path),
    }
}

fn load_coco(path: &Path) -> Result<BTreeMap<String, Vec<Caption>>, IoError> {
    let text = read_to_string(path)?;
    let file: CocoFile = serde_json::from_str(&text)
        .map_err(|e| IoError::Format { path: path.to_path_buf(), message: e.to_string() })?;
    let mut by_image: BTreeMap<String, Vec<Caption>> = BTreeMap::new();
    for image in &file.images {
        by_image.entry(image.id.to_string()).or_default();
    }
    let mut annotations = file.annotations;
    annotations.sort_by_key(|a| (a.image_id, a.id));
    for annotation in annotations {
        let caption = Caption::new(annotation.image_id.to_string(), &annotation.caption, CaptionSource::Human)
            .map_err(|e| IoError::Format {
                path: path.to_path_buf(),
                message: format!("annotation {}: {e}", annotation.id),
            })?;
        by_image.entry(annotation.image_id.to_string()).or_default().push(caption);
    }
    Ok(by_image)
}

fn load_plain(path: &Path) -> Result<BTreeMap<String, Vec<Caption>>, IoError> {
    let text = read_to_string(path)?;
    let mut by_image: BTreeMap<String, Vec<Caption>> = BTreeMap::new();
    for (number, line) in text.lines().enumerate().map(|(i, l)| (i + 1, l)) {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: PlainCaptionLine = serde_json::from_str(line).map_err(|e| IoError::Parse {
            path: path.to_path_buf(),
            line: number,
            message: e.to_string(),
        })?;
        let caption = Caption::new(parsed.image_id.clone(), &parsed.caption, parsed.source).map_err(|e| {
            IoError::Parse { path: path.to_path_buf(), line: number, message: e.to_string() }
        })?;
        by_image.entry(parsed.image_id).or_default().push(caption);
    }
    Ok(by_image)
}
