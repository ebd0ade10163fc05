//! Knowledge base and context repository loaded from plain-text corpora.
//!
//! A corpus directory holds `knowledge/*.txt` and `context/*.txt`. Each file
//! starts with `key: value` header lines, then a blank line, then the body:
//!
//! ```text
//! id: peak-hours
//! kind: conceptual
//! scope: NP
//! tags: price, daily
//!
//! Prices peak in the morning and evening.
//! ```
//!
//! Context files use `category:`, `start:` and `end:` instead of `kind:` and
//! `tags:`. A scope of `*` matches every dataset.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::NaiveDateTime;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::parse_timestamp;

pub const DEFAULT_KNOWLEDGE_BUDGET: usize = 12;
pub const WILDCARD_SCOPE: &str = "*";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnowledgeKind {
    Conceptual,
    Empirical,
}

impl FromStr for KnowledgeKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "conceptual" => Ok(Self::Conceptual),
            "empirical" => Ok(Self::Empirical),
            other => Err(format!("unknown kind `{other}` (expected conceptual or empirical)")),
        }
    }
}

impl fmt::Display for KnowledgeKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Conceptual => "conceptual",
            Self::Empirical => "empirical",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KnowledgeEntry {
    pub entry_id: String,
    pub kind: KnowledgeKind,
    pub dataset_scope: String,
    pub tags: Vec<String>,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextEvent {
    pub event_id: String,
    pub dataset_scope: String,
    pub start: NaiveDateTime,
    pub end: NaiveDateTime,
    pub category: String,
    pub body: String,
}

impl ContextEvent {
    /// Closed-interval overlap test.
    pub fn intersects(&self, start: NaiveDateTime, end: NaiveDateTime) -> bool {
        self.start <= end && start <= self.end
    }
}

fn in_scope(scope: &str, dataset: &str) -> bool {
    scope == WILDCARD_SCOPE || scope == dataset
}

/// Immutable after load.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct KnowledgeStore {
    entries: Vec<KnowledgeEntry>,
    events: Vec<ContextEvent>,
}

impl KnowledgeStore {
    pub fn new(entries: Vec<KnowledgeEntry>, events: Vec<ContextEvent>) -> Result<Self> {
        let mut seen = HashSet::new();
        for id in entries.iter().map(|e| &e.entry_id).chain(events.iter().map(|e| &e.event_id)) {
            if !seen.insert(id.clone()) {
                return Err(Error::DuplicateId {
                    id: id.clone(),
                    path: PathBuf::new(),
                });
            }
        }
        for e in &entries {
            if e.body.trim().is_empty() {
                return Err(Error::MalformedEntry {
                    path: PathBuf::from(&e.entry_id),
                    reason: "empty body".into(),
                });
            }
        }
        for e in &events {
            if e.start > e.end {
                return Err(Error::MalformedInterval {
                    path: PathBuf::from(&e.event_id),
                    reason: format!("start {} is after end {}", e.start, e.end),
                });
            }
        }
        Ok(Self { entries, events })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn entries(&self) -> &[KnowledgeEntry] {
        &self.entries
    }

    pub fn events(&self) -> &[ContextEvent] {
        &self.events
    }

    /// Entries scoped to `dataset` (or `*`), optionally sharing a tag with
    /// `tags`, conceptual first, then by id, truncated to `budget`.
    pub fn query_knowledge(
        &self,
        dataset: &str,
        tags: Option<&[String]>,
        budget: usize,
    ) -> Vec<KnowledgeEntry> {
        let mut hits: Vec<&KnowledgeEntry> = self
            .entries
            .iter()
            .filter(|e| in_scope(&e.dataset_scope, dataset))
            .filter(|e| match tags {
                Some(filter) => e.tags.iter().any(|t| filter.contains(t)),
                None => true,
            })
            .collect();
        hits.sort_by(|a, b| (a.kind, &a.entry_id).cmp(&(b.kind, &b.entry_id)));
        hits.into_iter().take(budget).cloned().collect()
    }

    /// Events scoped to `dataset` whose closed interval meets `[start, end]`,
    /// sorted by start (then id).
    pub fn query_context(
        &self,
        dataset: &str,
        start: NaiveDateTime,
        end: NaiveDateTime,
    ) -> Result<Vec<ContextEvent>> {
        if start > end {
            return Err(Error::invalid("interval", format!("start {start} is after end {end}")));
        }
        let mut hits: Vec<&ContextEvent> = self
            .events
            .iter()
            .filter(|e| in_scope(&e.dataset_scope, dataset) && e.intersects(start, end))
            .collect();
        hits.sort_by(|a, b| (a.start, &a.event_id).cmp(&(b.start, &b.event_id)));
        Ok(hits.into_iter().cloned().collect())
    }
}

/// Loads `knowledge/` and `context/` under `root`. Missing subdirectories are
/// treated as empty.
pub fn load_corpus(root: &Path) -> Result<KnowledgeStore> {
    let mut owners: BTreeMap<String, PathBuf> = BTreeMap::new();
    let mut claim = |id: &str, path: &Path| -> Result<()> {
        if owners.insert(id.to_string(), path.to_path_buf()).is_some() {
            return Err(Error::DuplicateId {
                id: id.to_string(),
                path: path.to_path_buf(),
            });
        }
        Ok(())
    };

    let mut entries = Vec::new();
    for path in corpus_files(&root.join("knowledge"))? {
        let entry = parse_knowledge_file(&path)?;
        claim(&entry.entry_id, &path)?;
        entries.push(entry);
    }
    let mut events = Vec::new();
    for path in corpus_files(&root.join("context"))? {
        let event = parse_context_file(&path)?;
        claim(&event.event_id, &path)?;
        events.push(event);
    }
    KnowledgeStore::new(entries, events)
}

fn corpus_files(dir: &Path) -> Result<Vec<PathBuf>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    let mut files = Vec::new();
    for item in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = item.map_err(|e| Error::io(dir, e))?.path();
        if path.is_file() && path.extension().is_some_and(|x| x == "txt") {
            files.push(path);
        }
    }
    files.sort();
    Ok(files)
}

struct RawFile {
    header: BTreeMap<String, String>,
    body: String,
}

fn malformed(path: &Path, reason: impl Into<String>) -> Error {
    Error::MalformedEntry {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn read_raw(path: &Path, allowed: &[&str]) -> Result<RawFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let text = text.replace("\r\n", "\n");
    let (head, body) = text
        .split_once("\n\n")
        .ok_or_else(|| malformed(path, "missing blank line between header and body"))?;
    let mut header = BTreeMap::new();
    for line in head.lines().filter(|l| !l.trim().is_empty()) {
        let (key, value) = line
            .split_once(':')
            .ok_or_else(|| malformed(path, format!("header line `{line}` lacks a colon")))?;
        let key = key.trim().to_string();
        if !allowed.contains(&key.as_str()) {
            return Err(malformed(path, format!("unknown header key `{key}`")));
        }
        if header.insert(key.clone(), value.trim().to_string()).is_some() {
            return Err(malformed(path, format!("header key `{key}` repeated")));
        }
    }
    let body = body.trim().to_string();
    if body.is_empty() {
        return Err(malformed(path, "empty body"));
    }
    Ok(RawFile { header, body })
}

fn required<'a>(raw: &'a RawFile, key: &str, path: &Path) -> Result<&'a str> {
    match raw.header.get(key) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(malformed(path, format!("missing `{key}:` header"))),
    }
}

fn parse_knowledge_file(path: &Path) -> Result<KnowledgeEntry> {
    let raw = read_raw(path, &["id", "kind", "scope", "tags"])?;
    let kind = required(&raw, "kind", path)?
        .parse()
        .map_err(|reason: String| malformed(path, reason))?;
    let tags = raw
        .header
        .get("tags")
        .map(|t| {
            t.split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect()
        })
        .unwrap_or_default();
    Ok(KnowledgeEntry {
        entry_id: required(&raw, "id", path)?.to_string(),
        kind,
        dataset_scope: required(&raw, "scope", path)?.to_string(),
        tags,
        body: raw.body.clone(),
    })
}

fn parse_context_file(path: &Path) -> Result<ContextEvent> {
    let raw = read_raw(path, &["id", "category", "scope", "start", "end"])?;
    let bad_interval = |reason: String| Error::MalformedInterval {
        path: path.to_path_buf(),
        reason,
    };
    let instant = |key: &str| -> Result<NaiveDateTime> {
        let text = raw
            .header
            .get(key)
            .ok_or_else(|| bad_interval(format!("missing `{key}:` header")))?;
        parse_timestamp(text).ok_or_else(|| bad_interval(format!("cannot parse {key} `{text}`")))
    };
    let start = instant("start")?;
    let end = instant("end")?;
    if start > end {
        return Err(bad_interval(format!("start {start} is after end {end}")));
    }
    Ok(ContextEvent {
        event_id: required(&raw, "id", path)?.to_string(),
        dataset_scope: required(&raw, "scope", path)?.to_string(),
        start,
        end,
        category: required(&raw, "category", path)?.to_string(),
        body: raw.body.clone(),
    })
}
