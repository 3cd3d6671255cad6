//! Newline-delimited corpus files, schema version 1.
//!
//! One JSON object per line:
//!
//! ```text
//! {"schema_version":1,"library":{"name":str,"dependents":int},
//!  "pr":{"id":str,"title":str,"body":str,"outcome":"merged"|"closed"|"opened",
//!        "created_at":str|null,"files":[{"path":str,"patch":str}]}}
//! ```
//!
//! A library without pull requests is stored as a single record with
//! `"pr":null`. Records may carry an optional trailing `"snapshot_at"`.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use chrono::{DateTime, SecondsFormat, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::ExtensionPolicy;
use crate::model::{validate_pull_request, Corpus, FileChange, LibraryRecord, Outcome, PullRequest};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("corpus file {0} does not exist")]
    FileMissing(PathBuf),
    #[error("line {line_no}: unsupported schema_version {version}")]
    SchemaVersionUnsupported { line_no: usize, version: u64 },
    #[error("line {line_no}: {message}")]
    FirstInvalidRecord { line_no: usize, message: String },
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("dependents file {path}: {message}")]
    DependentsCsv { path: PathBuf, message: String },
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct LibraryWire {
    pub name: String,
    pub dependents: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct FileWire {
    pub path: String,
    pub patch: String,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct PullWire {
    pub id: String,
    pub title: String,
    pub body: String,
    pub outcome: Outcome,
    pub created_at: Option<String>,
    pub files: Vec<FileWire>,
}

/// One line of a corpus file.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub schema_version: u32,
    pub library: LibraryWire,
    pub pr: Option<PullWire>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub snapshot_at: Option<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: u64,
}

fn format_time(t: &DateTime<Utc>) -> String {
    t.to_rfc3339_opts(SecondsFormat::Secs, true)
}

fn parse_time(s: &str) -> Result<DateTime<Utc>, String> {
    DateTime::parse_from_rfc3339(s)
        .map(|t| t.with_timezone(&Utc))
        .map_err(|e| format!("bad timestamp `{s}`: {e}"))
}

impl PullWire {
    pub fn from_pull(pr: &PullRequest) -> Self {
        PullWire {
            id: pr.id.clone(),
            title: pr.title.clone(),
            body: pr.body.clone(),
            outcome: pr.outcome,
            created_at: pr.created_at.as_ref().map(format_time),
            files: pr
                .files
                .iter()
                .map(|f| FileWire {
                    path: f.path.clone(),
                    patch: f.patch.clone(),
                })
                .collect(),
        }
    }

    pub fn into_pull(self, library: &str, policy: ExtensionPolicy) -> Result<PullRequest, String> {
        let created_at = self.created_at.as_deref().map(parse_time).transpose()?;
        let files = self
            .files
            .into_iter()
            .map(|f| {
                let path = f.path.clone();
                FileChange::from_patch(f.path, f.patch, policy).map_err(|e| format!("{path}: {e}"))
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PullRequest {
            id: self.id,
            repo: library.to_string(),
            title: self.title,
            body: self.body,
            outcome: self.outcome,
            files,
            created_at,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LoadOptions {
    /// Fail on the first invalid record instead of collecting it.
    pub strict: bool,
    pub extensions: ExtensionPolicy,
}

/// A record that was skipped during a lenient load.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LoadIssue {
    pub line_no: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct LoadedCorpus {
    pub corpus: Corpus,
    pub issues: Vec<LoadIssue>,
}

fn parse_record(line: &str, line_no: usize) -> Result<CorpusRecord, CorpusError> {
    let invalid = |message: String| CorpusError::FirstInvalidRecord { line_no, message };
    let probe: VersionProbe = serde_json::from_str(line).map_err(|e| invalid(e.to_string()))?;
    if probe.schema_version != SCHEMA_VERSION as u64 {
        return Err(CorpusError::SchemaVersionUnsupported {
            line_no,
            version: probe.schema_version,
        });
    }
    serde_json::from_str(line).map_err(|e| invalid(e.to_string()))
}

/// Parses corpus text. Invalid records are collected into `issues`, or
/// abort the load when `opts.strict` is set. An unsupported schema version
/// always aborts.
pub fn parse_corpus(text: &str, opts: LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    let mut libs: BTreeMap<String, LibraryRecord> = BTreeMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut snapshot: Option<DateTime<Utc>> = None;
    let mut issues = Vec::new();

    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let result = parse_record(line, line_no).and_then(|rec| {
            let invalid = |message: String| CorpusError::FirstInvalidRecord { line_no, message };
            let name = rec.library.name.clone();
            if name.is_empty() {
                return Err(invalid("empty library name".into()));
            }
            if let Some(existing) = libs.get(&name) {
                if existing.dependents != rec.library.dependents {
                    return Err(invalid(format!(
                        "library `{name}` has dependents {} here but {} earlier",
                        rec.library.dependents, existing.dependents
                    )));
                }
            }
            let snap = rec.snapshot_at.as_deref().map(parse_time).transpose().map_err(invalid)?;
            let pr = match rec.pr {
                None => None,
                Some(wire) => {
                    let pr = wire.into_pull(&name, opts.extensions).map_err(invalid)?;
                    let violations = validate_pull_request(&pr);
                    if let Some(v) = violations.first() {
                        return Err(invalid(format!("pull request `{}`: {v}", pr.id)));
                    }
                    if !seen.insert((name.clone(), pr.id.clone())) {
                        return Err(invalid(format!("duplicate pull request `{}` for `{name}`", pr.id)));
                    }
                    Some(pr)
                }
            };
            Ok((rec.library, pr, snap))
        });
        match result {
            Ok((lib, pr, snap)) => {
                let entry = libs
                    .entry(lib.name.clone())
                    .or_insert_with(|| LibraryRecord::new(lib.name, lib.dependents));
                entry.pulls.extend(pr);
                if snap.is_some() && snap > snapshot {
                    snapshot = snap;
                }
            }
            Err(e @ CorpusError::SchemaVersionUnsupported { .. }) => return Err(e),
            Err(e) if opts.strict => return Err(e),
            Err(CorpusError::FirstInvalidRecord { line_no, message }) => {
                issues.push(LoadIssue { line_no, message })
            }
            Err(e) => return Err(e),
        }
    }

    let mut corpus = Corpus {
        libraries: libs.into_values().collect(),
        snapshot_at: snapshot,
    };
    corpus.sort();
    Ok(LoadedCorpus { corpus, issues })
}

pub fn load_corpus(path: &Path, opts: LoadOptions) -> Result<LoadedCorpus, CorpusError> {
    if !path.exists() {
        return Err(CorpusError::FileMissing(path.to_path_buf()));
    }
    let text = fs::read_to_string(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_corpus(&text, opts)
}

/// Serializes a corpus in canonical order: library name, then PR id.
pub fn render_corpus(corpus: &Corpus) -> String {
    let mut sorted = corpus.clone();
    sorted.sort();
    let snapshot_at = sorted.snapshot_at.as_ref().map(format_time);
    let mut out = String::new();
    let mut push = |rec: CorpusRecord| {
        out.push_str(&serde_json::to_string(&rec).expect("records serialize"));
        out.push('\n');
    };
    for lib in &sorted.libraries {
        let library = LibraryWire {
            name: lib.name.clone(),
            dependents: lib.dependents,
        };
        if lib.pulls.is_empty() {
            push(CorpusRecord {
                schema_version: SCHEMA_VERSION,
                library: library.clone(),
                pr: None,
                snapshot_at: snapshot_at.clone(),
            });
        }
        for pr in &lib.pulls {
            push(CorpusRecord {
                schema_version: SCHEMA_VERSION,
                library: library.clone(),
                pr: Some(PullWire::from_pull(pr)),
                snapshot_at: snapshot_at.clone(),
            });
        }
    }
    out
}

/// Writes the corpus to a temporary file next to `path` and renames it into
/// place, so readers see either the old file or the complete new one.
pub fn save_corpus(corpus: &Corpus, path: &Path) -> Result<(), CorpusError> {
    let io = |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    };
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io)?;
    tmp.write_all(render_corpus(corpus).as_bytes()).map_err(io)?;
    tmp.as_file().sync_all().map_err(io)?;
    tmp.persist(path).map_err(|e| io(e.error))?;
    Ok(())
}

/// Reads `(name, dependents)` pairs from a CSV with a header row naming at
/// least the columns `name` and `dependents`.
pub fn load_dependents_csv(path: &Path) -> Result<Vec<(String, u64)>, CorpusError> {
    let err = |message: String| CorpusError::DependentsCsv {
        path: path.to_path_buf(),
        message,
    };
    let mut rdr = csv::Reader::from_path(path).map_err(|e| err(e.to_string()))?;
    let headers = rdr.headers().map_err(|e| err(e.to_string()))?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| err(format!("missing `{name}` column")))
    };
    let name_col = col("name")?;
    let deps_col = col("dependents")?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row.map_err(|e| err(e.to_string()))?;
        let name = row.get(name_col).unwrap_or_default().trim().to_string();
        let deps = row
            .get(deps_col)
            .unwrap_or_default()
            .trim()
            .replace(',', "")
            .parse::<u64>()
            .map_err(|e| err(format!("row {}: bad dependents: {e}", i + 2)))?;
        out.push((name, deps));
    }
    Ok(out)
}
