//! Domain types shared by every stage of the pipeline.
//!
//! All of these are plain values: cloning is cheap enough at study scale and
//! nothing here holds interior mutability, so they can be shared across
//! threads freely.

use std::fmt;
use std::str::FromStr;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::diff::{classify_file_change, ExtensionPolicy};

/// A library together with its dependence data and mined pull requests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LibraryRecord {
    pub name: String,
    pub dependents: u64,
    /// 1-based rank by descending dependents. Filled in by corpus-wide ranking.
    pub dependents_rank: Option<u64>,
    pub pulls: Vec<PullRequest>,
}

impl LibraryRecord {
    pub fn new(name: impl Into<String>, dependents: u64) -> Self {
        LibraryRecord {
            name: name.into(),
            dependents,
            dependents_rank: None,
            pulls: Vec::new(),
        }
    }
}

/// A set of libraries with their pull requests.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Corpus {
    pub libraries: Vec<LibraryRecord>,
    /// When the remote data was fetched.
    pub snapshot_at: Option<DateTime<Utc>>,
}

impl Corpus {
    pub fn pull_count(&self) -> usize {
        self.libraries.iter().map(|l| l.pulls.len()).sum()
    }

    /// Sorts libraries by name and pull requests by id.
    pub fn sort(&mut self) {
        self.libraries.sort_by(|a, b| a.name.cmp(&b.name));
        for lib in &mut self.libraries {
            lib.pulls.sort_by(|a, b| a.id.cmp(&b.id));
        }
    }
}

/// Review outcome of a pull request.
///
/// `Closed` always means closed without merge. A PR that was merged and later
/// closed is `Merged`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Merged,
    Closed,
    Opened,
}

impl Outcome {
    pub const ALL: [Outcome; 3] = [Outcome::Merged, Outcome::Closed, Outcome::Opened];

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Merged => "merged",
            Outcome::Closed => "closed",
            Outcome::Opened => "opened",
        }
    }
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PullRequest {
    pub id: String,
    /// Name of the library the PR was opened against.
    pub repo: String,
    pub title: String,
    pub body: String,
    pub outcome: Outcome,
    pub files: Vec<FileChange>,
    pub created_at: Option<DateTime<Utc>>,
}

impl PullRequest {
    pub fn new(id: impl Into<String>, repo: impl Into<String>, outcome: Outcome) -> Self {
        PullRequest {
            id: id.into(),
            repo: repo.into(),
            title: String::new(),
            body: String::new(),
            outcome,
            files: Vec::new(),
            created_at: None,
        }
    }

    pub fn with_title(mut self, title: impl Into<String>) -> Self {
        self.title = title.into();
        self
    }

    pub fn with_body(mut self, body: impl Into<String>) -> Self {
        self.body = body.into();
        self
    }

    pub fn with_file(mut self, file: FileChange) -> Self {
        self.files.push(file);
        self
    }
}

/// One changed file of a pull request.
///
/// The raw patch is kept next to the parsed hunks so that a corpus can be
/// written back out exactly as it was served.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FileChange {
    pub path: String,
    pub kind: FileKind,
    pub patch: String,
    pub hunks: Vec<DiffHunk>,
    /// Set when the patch body stopped early because a hunk's line counts did
    /// not match its header.
    pub truncated: bool,
}

impl FileChange {
    /// Parses `patch` and classifies `path` under the given extension policy.
    pub fn from_patch(
        path: impl Into<String>,
        patch: impl Into<String>,
        policy: ExtensionPolicy,
    ) -> Result<Self, crate::diff::DiffError> {
        let path = path.into();
        let patch = patch.into();
        let parsed = crate::diff::parse_unified_diff(&patch)?;
        Ok(FileChange {
            kind: classify_file_change(&path, policy),
            path,
            patch,
            hunks: parsed.hunks,
            truncated: parsed.truncated,
        })
    }

    pub fn added_lines(&self) -> impl Iterator<Item = (u64, &str)> + '_ {
        self.hunks.iter().flat_map(|h| h.added_lines())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FileKind {
    JavaScript,
    Manifest,
    Markdown,
    JsonOther,
    Other,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LineTag {
    Context,
    Added,
    Removed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffLine {
    pub tag: LineTag,
    pub content: String,
    /// Line number in the post-image. `None` for removed lines.
    pub new_lineno: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiffHunk {
    pub old_start: u64,
    pub new_start: u64,
    pub lines: Vec<DiffLine>,
}

impl DiffHunk {
    pub fn added_lines(&self) -> impl Iterator<Item = (u64, &str)> + '_ {
        self.lines.iter().filter_map(|l| match (l.tag, l.new_lineno) {
            (LineTag::Added, Some(n)) => Some((n, l.content.as_str())),
            _ => None,
        })
    }
}

/// The six lightweight signals of a risky dependency update.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum UnsafeFeature {
    NewScripts,
    HttpAccess,
    FsUse,
    NetUse,
    EvalUse,
    RequireUse,
}

impl UnsafeFeature {
    pub const ALL: [UnsafeFeature; 6] = [
        UnsafeFeature::NewScripts,
        UnsafeFeature::HttpAccess,
        UnsafeFeature::FsUse,
        UnsafeFeature::NetUse,
        UnsafeFeature::EvalUse,
        UnsafeFeature::RequireUse,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            UnsafeFeature::NewScripts => "new_scripts",
            UnsafeFeature::HttpAccess => "http_access",
            UnsafeFeature::FsUse => "fs_use",
            UnsafeFeature::NetUse => "net_use",
            UnsafeFeature::EvalUse => "eval_use",
            UnsafeFeature::RequireUse => "require_use",
        }
    }

    /// Short human label as used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            UnsafeFeature::NewScripts => "new scripts",
            UnsafeFeature::HttpAccess => "http",
            UnsafeFeature::FsUse => "fs",
            UnsafeFeature::NetUse => "net",
            UnsafeFeature::EvalUse => "eval",
            UnsafeFeature::RequireUse => "require",
        }
    }
}

impl fmt::Display for UnsafeFeature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum ChangeType {
    Feature,
    Bug,
    TestCases,
    Refactoring,
    Documentation,
    Other,
}

impl ChangeType {
    pub const ALL: [ChangeType; 6] = [
        ChangeType::Feature,
        ChangeType::Bug,
        ChangeType::TestCases,
        ChangeType::Refactoring,
        ChangeType::Documentation,
        ChangeType::Other,
    ];

    /// Key used in taxonomy config files and JSON reports.
    pub fn key(self) -> &'static str {
        match self {
            ChangeType::Feature => "feature",
            ChangeType::Bug => "bug",
            ChangeType::TestCases => "test_cases",
            ChangeType::Refactoring => "refactoring",
            ChangeType::Documentation => "documentation",
            ChangeType::Other => "other",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            ChangeType::Feature => "Feature",
            ChangeType::Bug => "Bug",
            ChangeType::TestCases => "Test Cases",
            ChangeType::Refactoring => "Refactoring",
            ChangeType::Documentation => "Doc",
            ChangeType::Other => "Other",
        }
    }
}

impl FromStr for ChangeType {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ChangeType::ALL
            .into_iter()
            .find(|t| t.key() == s)
            .ok_or_else(|| format!("unknown change type `{s}`"))
    }
}

/// Dependence stratum of a library.
#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
pub enum Tier {
    Top,
    Middle,
    Bottom,
    Unsampled,
}

impl Tier {
    /// Tiers that appear in reports, in report order.
    pub const SAMPLED: [Tier; 3] = [Tier::Top, Tier::Middle, Tier::Bottom];

    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Top => "top",
            Tier::Middle => "middle",
            Tier::Bottom => "bottom",
            Tier::Unsampled => "unsampled",
        }
    }
}

impl fmt::Display for Tier {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A broken invariant found by [`validate_pull_request`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub file_path: Option<String>,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.file_path {
            Some(p) => write!(f, "{p}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

/// Checks every structural invariant of a pull request and returns all
/// violations found. An empty vector means the PR is well formed.
pub fn validate_pull_request(pr: &PullRequest) -> Vec<Violation> {
    let mut out = Vec::new();
    if pr.id.is_empty() {
        out.push(Violation {
            file_path: None,
            message: "empty pull request id".into(),
        });
    }
    for file in &pr.files {
        let mut push = |message: String| {
            out.push(Violation {
                file_path: Some(file.path.clone()),
                message,
            })
        };
        if file.path.is_empty() {
            push("empty file path".into());
        }
        let strict = classify_file_change(&file.path, ExtensionPolicy::JsOnly);
        let extended = classify_file_change(&file.path, ExtensionPolicy::Extended);
        if file.kind != strict && file.kind != extended {
            push(format!("file kind {:?} does not match path", file.kind));
        }
        for hunk in &file.hunks {
            let mut last: Option<u64> = None;
            for line in &hunk.lines {
                match (line.tag, line.new_lineno) {
                    (LineTag::Removed, Some(_)) => push("new_lineno on Removed line".into()),
                    (LineTag::Context | LineTag::Added, None) => {
                        push(format!("missing new_lineno on {:?} line", line.tag))
                    }
                    (LineTag::Context | LineTag::Added, Some(n)) => {
                        if last.is_some_and(|prev| n <= prev) {
                            push(format!("non-increasing line numbers ({} then {n})", last.unwrap()));
                        }
                        last = Some(n);
                    }
                    (LineTag::Removed, None) => {}
                }
            }
        }
    }
    out
}
