use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tracing::warn;

use super::{CommentLabel, Corpus, CorpusError, PersuasionInstance, Source, UserRecord};

#[derive(Debug, Clone, Copy)]
pub struct IngestOptions {
    /// Fraction of malformed lines (over both files) above which ingestion
    /// fails instead of skipping them.
    pub max_malformed_fraction: f64,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self { max_malformed_fraction: 0.10 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MalformedLine {
    pub file: String,
    pub line: usize,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub thread_lines: usize,
    pub history_lines: usize,
    pub malformed: Vec<MalformedLine>,
    /// Records dropped from an instance because they were written at or after
    /// the post.
    pub dropped_future_records: usize,
}

#[derive(Deserialize)]
struct ThreadLine {
    instance_id: String,
    user_id: String,
    post_text: String,
    post_created_at: i64,
    comments: Vec<CommentLine>,
}

#[derive(Deserialize)]
struct CommentLine {
    comment_id: String,
    text: String,
    label: u8,
}

#[derive(Deserialize)]
struct HistoryLine {
    record_id: String,
    author_id: String,
    text: String,
    created_at: i64,
    source: Source,
}

pub fn ingest(threads_path: &Path, histories_path: &Path) -> Result<(Corpus, IngestReport), CorpusError> {
    ingest_with(threads_path, histories_path, IngestOptions::default())
}

pub fn ingest_with(
    threads_path: &Path,
    histories_path: &Path,
    opts: IngestOptions,
) -> Result<(Corpus, IngestReport), CorpusError> {
    let threads_src = read(threads_path)?;
    let histories_src = read(histories_path)?;
    let threads_name = threads_path.display().to_string();
    let histories_name = histories_path.display().to_string();

    let mut report = IngestReport::default();

    let mut threads: Vec<ThreadLine> = Vec::new();
    let mut seen_instances = BTreeSet::new();
    for (lineno, line) in numbered_lines(&threads_src) {
        report.thread_lines += 1;
        match parse_thread(line) {
            Ok(t) if !seen_instances.insert(t.instance_id.clone()) => {
                report.malformed.push(bad(&threads_name, lineno, format!("duplicate instance_id {}", t.instance_id)));
            }
            Ok(t) => threads.push(t),
            Err(reason) => report.malformed.push(bad(&threads_name, lineno, reason)),
        }
    }

    let mut by_author: BTreeMap<String, Vec<UserRecord>> = BTreeMap::new();
    let mut seen_records = BTreeSet::new();
    for (lineno, line) in numbered_lines(&histories_src) {
        report.history_lines += 1;
        match parse_history(line) {
            Ok(r) if !seen_records.insert(r.record_id.clone()) => {
                report.malformed.push(bad(&histories_name, lineno, format!("duplicate record_id {}", r.record_id)));
            }
            Ok(r) => by_author.entry(r.author_id.clone()).or_default().push(r),
            Err(reason) => report.malformed.push(bad(&histories_name, lineno, reason)),
        }
    }

    let total = report.thread_lines + report.history_lines;
    if !report.malformed.is_empty() {
        let fraction = report.malformed.len() as f64 / total as f64;
        if fraction > opts.max_malformed_fraction {
            let first = &report.malformed[0];
            return Err(CorpusError::SchemaViolation {
                file: first.file.clone(),
                line: first.line,
                message: format!(
                    "{} ({} of {} lines malformed, limit {:.0}%)",
                    first.reason,
                    report.malformed.len(),
                    total,
                    opts.max_malformed_fraction * 100.0
                ),
            });
        }
        for m in &report.malformed {
            warn!(file = %m.file, line = m.line, reason = %m.reason, "skipping malformed line");
        }
    }

    let mut instances = Vec::with_capacity(threads.len());
    for t in threads {
        let mut history = Vec::new();
        for r in by_author.get(&t.user_id).into_iter().flatten() {
            if r.created_at < t.post_created_at {
                history.push(r.clone());
            } else {
                warn!(instance = %t.instance_id, record = %r.record_id, "record postdates the post, dropped");
                report.dropped_future_records += 1;
            }
        }
        history.sort_by(|a, b| a.created_at.cmp(&b.created_at).then_with(|| a.record_id.cmp(&b.record_id)));
        instances.push(PersuasionInstance {
            instance_id: t.instance_id,
            user_id: t.user_id,
            post_text: t.post_text,
            post_created_at: t.post_created_at,
            comments: t
                .comments
                .into_iter()
                .map(|c| CommentLabel { comment_id: c.comment_id, text: c.text, label: c.label })
                .collect(),
            full_history: history,
            pool: None,
        });
    }
    instances.sort_by(|a, b| a.instance_id.cmp(&b.instance_id));

    if instances.is_empty() {
        return Err(CorpusError::EmptyCorpus);
    }
    Ok((Corpus { instances }, report))
}

fn read(path: &Path) -> Result<String, CorpusError> {
    fs::read_to_string(path).map_err(|source| CorpusError::FileUnreadable { path: path.to_path_buf(), source })
}

fn numbered_lines(src: &str) -> impl Iterator<Item = (usize, &str)> {
    src.lines().enumerate().map(|(i, l)| (i + 1, l)).filter(|(_, l)| !l.trim().is_empty())
}

fn bad(file: &str, line: usize, reason: String) -> MalformedLine {
    MalformedLine { file: file.to_string(), line, reason }
}

fn parse_thread(line: &str) -> Result<ThreadLine, String> {
    let t: ThreadLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if t.instance_id.is_empty() || t.user_id.is_empty() {
        return Err("empty instance_id or user_id".into());
    }
    if t.post_text.trim().is_empty() {
        return Err("empty post_text".into());
    }
    if t.post_created_at <= 0 {
        return Err("post_created_at must be positive".into());
    }
    let mut ids = BTreeSet::new();
    for c in &t.comments {
        if c.label > 1 {
            return Err(format!("comment {} has label {} (expected 0 or 1)", c.comment_id, c.label));
        }
        if !ids.insert(c.comment_id.as_str()) {
            return Err(format!("duplicate comment_id {}", c.comment_id));
        }
    }
    Ok(t)
}

fn parse_history(line: &str) -> Result<UserRecord, String> {
    let h: HistoryLine = serde_json::from_str(line).map_err(|e| e.to_string())?;
    if h.record_id.is_empty() {
        return Err("empty record_id".into());
    }
    if h.text.trim().is_empty() {
        return Err(format!("record {} has empty text", h.record_id));
    }
    if h.created_at <= 0 {
        return Err(format!("record {} has non-positive created_at", h.record_id));
    }
    Ok(UserRecord {
        record_id: h.record_id,
        author_id: h.author_id,
        text: h.text,
        created_at: h.created_at,
        source: h.source,
    })
}
