//! Unified-diff parsing and lexical tracking of `package.json` structure.

use std::sync::LazyLock;

use regex::Regex;
use thiserror::Error;

use crate::model::{DiffHunk, DiffLine, FileChange, FileKind, LineTag};

static HUNK_HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^@@ -(\d+)(?:,(\d+))? \+(\d+)(?:,(\d+))? @@(.*)$").unwrap()
});

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DiffError {
    #[error("malformed hunk header on patch line {line_no}: `{text}`")]
    MalformedHunkHeader { line_no: usize, text: String },
    #[error("patch content before the first hunk header on line {line_no}")]
    MissingHunkHeader { line_no: usize },
    #[error("expected a package.json file, got {0:?}")]
    WrongFileKind(FileKind),
}

/// Result of parsing one file's patch body.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct ParsedDiff {
    pub hunks: Vec<DiffHunk>,
    /// True when a hunk body disagreed with its header counts. Parsing stops
    /// at the first such point and everything before it is kept.
    pub truncated: bool,
}

/// Which file extensions count as JavaScript.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ExtensionPolicy {
    /// `.js` only.
    JsOnly,
    /// `.js`, `.jsx`, `.mjs` and `.cjs`.
    #[default]
    Extended,
}

// Lines git emits ahead of the first hunk of a file.
fn is_file_header(line: &str) -> bool {
    const PREFIXES: [&str; 12] = [
        "diff --git ",
        "index ",
        "--- ",
        "+++ ",
        "new file mode",
        "deleted file mode",
        "old mode",
        "new mode",
        "similarity index",
        "rename from",
        "rename to",
        "Binary files",
    ];
    PREFIXES.iter().any(|p| line.starts_with(p))
}

/// Parses a per-file unified-diff patch into hunks.
///
/// Context and added lines carry their post-image line number. File headers
/// before the first `@@` are skipped.
pub fn parse_unified_diff(patch: &str) -> Result<ParsedDiff, DiffError> {
    let mut out = ParsedDiff::default();
    let mut current: Option<DiffHunk> = None;
    // Lines still owed to the current hunk, per side.
    let mut old_left = 0u64;
    let mut new_left = 0u64;
    let mut next_new = 0u64;

    for (idx, raw) in patch.lines().enumerate() {
        let line = raw.strip_suffix('\r').unwrap_or(raw);
        let line_no = idx + 1;

        if line.starts_with("@@") {
            if old_left > 0 || new_left > 0 {
                out.truncated = true;
                break;
            }
            let caps = HUNK_HEADER
                .captures(line)
                .ok_or_else(|| DiffError::MalformedHunkHeader {
                    line_no,
                    text: line.to_string(),
                })?;
            let num = |i: usize, default: u64| -> Result<u64, DiffError> {
                match caps.get(i) {
                    None => Ok(default),
                    Some(m) => m.as_str().parse().map_err(|_| DiffError::MalformedHunkHeader {
                        line_no,
                        text: line.to_string(),
                    }),
                }
            };
            let old_start = num(1, 0)?;
            old_left = num(2, 1)?;
            let new_start = num(3, 0)?;
            new_left = num(4, 1)?;
            next_new = new_start;
            if let Some(h) = current.take() {
                out.hunks.push(h);
            }
            current = Some(DiffHunk {
                old_start,
                new_start,
                lines: Vec::new(),
            });
            continue;
        }

        let Some(hunk) = current.as_mut() else {
            if is_file_header(line) {
                continue;
            }
            return Err(DiffError::MissingHunkHeader { line_no });
        };

        if line.starts_with('\\') {
            // "\ No newline at end of file"
            continue;
        }

        let (tag, content) = match line.as_bytes().first() {
            Some(b'+') => (LineTag::Added, &line[1..]),
            Some(b'-') => (LineTag::Removed, &line[1..]),
            Some(b' ') => (LineTag::Context, &line[1..]),
            // Some tools strip the single space of an empty context line.
            None => (LineTag::Context, ""),
            Some(_) => {
                out.truncated = true;
                break;
            }
        };

        let fits = match tag {
            LineTag::Added => new_left > 0,
            LineTag::Removed => old_left > 0,
            LineTag::Context => new_left > 0 && old_left > 0,
        };
        if !fits {
            out.truncated = true;
            break;
        }

        let new_lineno = match tag {
            LineTag::Removed => {
                old_left -= 1;
                None
            }
            LineTag::Added => {
                new_left -= 1;
                next_new += 1;
                Some(next_new - 1)
            }
            LineTag::Context => {
                old_left -= 1;
                new_left -= 1;
                next_new += 1;
                Some(next_new - 1)
            }
        };
        hunk.lines.push(DiffLine {
            tag,
            content: content.to_string(),
            new_lineno,
        });
    }

    if old_left > 0 || new_left > 0 {
        out.truncated = true;
    }
    if let Some(h) = current.take() {
        out.hunks.push(h);
    }
    Ok(out)
}

/// Maps a repo-relative path to its [`FileKind`].
///
/// A `package.json` anywhere in the tree is a manifest.
pub fn classify_file_change(path: &str, policy: ExtensionPolicy) -> FileKind {
    let basename = path.rsplit('/').next().unwrap_or(path);
    if basename == "package.json" {
        return FileKind::Manifest;
    }
    let ext = match basename.rsplit_once('.') {
        Some((stem, ext)) if !stem.is_empty() => ext.to_ascii_lowercase(),
        _ => return FileKind::Other,
    };
    match ext.as_str() {
        "js" => FileKind::JavaScript,
        "jsx" | "mjs" | "cjs" if policy == ExtensionPolicy::Extended => FileKind::JavaScript,
        "md" => FileKind::Markdown,
        "json" => FileKind::JsonOther,
        _ => FileKind::Other,
    }
}

/// An entry added to the `"scripts"` object of a manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptAddition {
    pub script_name: String,
    pub command: String,
    pub new_lineno: u64,
    pub file_path: String,
    /// The hunk did not show the enclosing object, so membership in
    /// `"scripts"` is assumed rather than observed.
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq)]
enum Token {
    Str(String),
    Colon,
    Comma,
    Open,
    Close,
    Other,
}

// JSON-ish lexer for one line. Unterminated strings run to end of line.
fn lex_json_line(line: &str) -> Vec<Token> {
    let mut out = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(c) = chars.next() {
        match c {
            '"' => {
                let mut s = String::new();
                while let Some(c) = chars.next() {
                    match c {
                        '"' => break,
                        '\\' => match chars.next() {
                            Some('n') => s.push('\n'),
                            Some('t') => s.push('\t'),
                            Some('r') => s.push('\r'),
                            Some('b') => s.push('\u{8}'),
                            Some('f') => s.push('\u{c}'),
                            Some('u') => {
                                let hex: String = chars.by_ref().take(4).collect();
                                match u32::from_str_radix(&hex, 16).ok().and_then(char::from_u32) {
                                    Some(ch) => s.push(ch),
                                    None => {
                                        s.push_str("\\u");
                                        s.push_str(&hex);
                                    }
                                }
                            }
                            Some(other) => s.push(other),
                            None => {}
                        },
                        c => s.push(c),
                    }
                }
                out.push(Token::Str(s));
            }
            ':' => out.push(Token::Colon),
            ',' => out.push(Token::Comma),
            '{' | '[' => out.push(Token::Open),
            '}' | ']' => out.push(Token::Close),
            c if c.is_whitespace() => {}
            _ => {
                while chars
                    .peek()
                    .is_some_and(|c| !matches!(c, '"' | ':' | ',' | '{' | '[' | '}' | ']') && !c.is_whitespace())
                {
                    chars.next();
                }
                out.push(Token::Other);
            }
        }
    }
    out
}

#[derive(Default)]
struct ManifestTracker {
    // Keys of containers opened inside the hunk; `None` for arrays and
    // key-less objects.
    stack: Vec<Option<String>>,
    // The hunk starts at the first line of the file, so depth is absolute.
    rooted: bool,
    last_str: Option<String>,
    pending_key: Option<String>,
    expect_value: bool,
}

enum Membership {
    Inside,
    Outside,
    Unknown,
}

impl ManifestTracker {
    fn membership(&self) -> Membership {
        match self.stack.last() {
            None if self.rooted => Membership::Outside,
            None => Membership::Unknown,
            Some(Some(k)) if k == "scripts" && (!self.rooted || self.stack.len() == 2) => {
                Membership::Inside
            }
            Some(_) => Membership::Outside,
        }
    }

    /// Feeds one post-image line; returns `(name, command, low_confidence)`
    /// for each string entry that sits in the scripts object.
    fn feed(&mut self, line: &str) -> Vec<(String, String, bool)> {
        let mut found = Vec::new();
        for tok in lex_json_line(line) {
            match tok {
                Token::Str(s) => {
                    if self.expect_value {
                        let key = self.pending_key.take().unwrap_or_default();
                        self.expect_value = false;
                        if !key.is_empty() {
                            match self.membership() {
                                Membership::Inside => found.push((key, s, false)),
                                Membership::Unknown => found.push((key, s, true)),
                                Membership::Outside => {}
                            }
                        }
                    } else {
                        self.last_str = Some(s);
                    }
                }
                Token::Colon => {
                    if let Some(k) = self.last_str.take() {
                        self.pending_key = Some(k);
                        self.expect_value = true;
                    }
                }
                Token::Open => {
                    let key = if self.expect_value {
                        self.pending_key.take()
                    } else {
                        None
                    };
                    self.stack.push(key);
                    self.expect_value = false;
                    self.last_str = None;
                }
                Token::Close => {
                    self.stack.pop();
                    self.reset();
                }
                Token::Comma | Token::Other => self.reset(),
            }
        }
        found
    }

    fn reset(&mut self) {
        self.last_str = None;
        self.pending_key = None;
        self.expect_value = false;
    }
}

/// Finds string entries added inside the `"scripts"` object of a manifest.
///
/// Structure is tracked lexically over the context and added lines of each
/// hunk independently. Entries whose enclosing object is not visible in the
/// hunk are still returned, marked `low_confidence`.
pub fn extract_manifest_script_additions(
    file: &FileChange,
) -> Result<Vec<ScriptAddition>, DiffError> {
    if file.kind != FileKind::Manifest {
        return Err(DiffError::WrongFileKind(file.kind));
    }
    let mut out = Vec::new();
    for hunk in &file.hunks {
        let first = hunk.lines.iter().find(|l| l.tag != LineTag::Removed);
        let rooted = hunk.new_start == 1
            && first.is_some_and(|l| l.new_lineno == Some(1) && l.content.trim_start().starts_with('{'));
        let mut tracker = ManifestTracker {
            rooted,
            ..ManifestTracker::default()
        };
        for line in &hunk.lines {
            if line.tag == LineTag::Removed {
                continue;
            }
            let entries = tracker.feed(&line.content);
            if line.tag != LineTag::Added {
                continue;
            }
            let Some(new_lineno) = line.new_lineno else {
                continue;
            };
            out.extend(entries.into_iter().map(|(name, command, low)| ScriptAddition {
                script_name: name,
                command,
                new_lineno,
                file_path: file.path.clone(),
                low_confidence: low,
            }));
        }
    }
    Ok(out)
}
