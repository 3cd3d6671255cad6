//! Line-level rules for the six unsafe features and the per-PR scan.
//!
//! Detection is line-scoped: each added line is matched on its own with
//! regular expressions.
//!
//! Two match modes exist. [`MatchMode::Refined`] (the default) requires
//! `require`/`eval` and module receivers to stand on an identifier boundary
//! and ignores matches that start inside string literals. [`MatchMode::Raw`]
//! drops both refinements.

use std::collections::BTreeSet;
use std::ops::Range;
use std::sync::LazyLock;

use regex::Regex;
use serde::Serialize;

use crate::diff::extract_manifest_script_additions;
use crate::model::{FileKind, PullRequest, UnsafeFeature};

/// Version of the rule catalog below. Bump whenever a pattern changes.
pub const RULE_CATALOG_VERSION: &str = "1.0.0";

const MAX_EXCERPT: usize = 120;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MatchMode {
    #[default]
    Refined,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ScanOptions {
    pub match_mode: MatchMode,
}

/// One entry of the rule catalog.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RuleInfo {
    pub id: &'static str,
    pub feature: UnsafeFeature,
    pub description: &'static str,
}

pub const RULES: [RuleInfo; 10] = [
    RuleInfo {
        id: "manifest-script",
        feature: UnsafeFeature::NewScripts,
        description: "string entry added inside the \"scripts\" object of package.json",
    },
    RuleInfo {
        id: "http-module",
        feature: UnsafeFeature::HttpAccess,
        description: "module `http`, `http2` or `https` loaded via require(), import or import()",
    },
    RuleInfo {
        id: "http-member-call",
        feature: UnsafeFeature::HttpAccess,
        description: "member call on a receiver named `http`, `http2` or `https`",
    },
    RuleInfo {
        id: "fs-module",
        feature: UnsafeFeature::FsUse,
        description: "module `fs` or `fs/promises` loaded via require(), import or import()",
    },
    RuleInfo {
        id: "fs-member-call",
        feature: UnsafeFeature::FsUse,
        description: "member call on a receiver named `fs`",
    },
    RuleInfo {
        id: "net-module",
        feature: UnsafeFeature::NetUse,
        description: "module `net` loaded via require(), import or import()",
    },
    RuleInfo {
        id: "net-member-call",
        feature: UnsafeFeature::NetUse,
        description: "member call on a receiver named `net`",
    },
    RuleInfo {
        id: "eval-call",
        feature: UnsafeFeature::EvalUse,
        description: "call of `eval(...)`",
    },
    RuleInfo {
        id: "function-constructor",
        feature: UnsafeFeature::EvalUse,
        description: "`new Function(...)`",
    },
    RuleInfo {
        id: "require-call",
        feature: UnsafeFeature::RequireUse,
        description: "call of `require(...)`",
    },
];

pub fn rule_catalog() -> &'static [RuleInfo] {
    &RULES
}

static REQUIRE_CALL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"require\s*\(").unwrap());
static EVAL_CALL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"eval\s*\(").unwrap());
static NEW_FUNCTION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"new\s+Function\s*\(").unwrap());
// `from 'x'`, `import 'x'`
static STATIC_SPECIFIER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:from|import)\s*['"`](?:node:)?([^'"`]*)['"`]"#).unwrap()
});
// `require('x')`, `import('x')`
static CALL_SPECIFIER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r#"(?:require|import)\s*\(\s*['"`](?:node:)?([^'"`]*)['"`]\s*\)"#).unwrap()
});
static MEMBER_CALL: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"(https|http2|http|fs|net)(?:\s*\.\s*[\w$]+)+\s*\(").unwrap()
});

fn module_feature(specifier: &str) -> Option<(UnsafeFeature, &'static str)> {
    match specifier {
        "http" | "http2" | "https" => Some((UnsafeFeature::HttpAccess, "http-module")),
        "fs" | "fs/promises" => Some((UnsafeFeature::FsUse, "fs-module")),
        "net" => Some((UnsafeFeature::NetUse, "net-module")),
        _ => None,
    }
}

fn receiver_feature(receiver: &str) -> (UnsafeFeature, &'static str) {
    match receiver {
        "fs" => (UnsafeFeature::FsUse, "fs-member-call"),
        "net" => (UnsafeFeature::NetUse, "net-member-call"),
        _ => (UnsafeFeature::HttpAccess, "http-member-call"),
    }
}

fn is_ident_char(c: char) -> bool {
    c.is_alphanumeric() || c == '_' || c == '$'
}

/// Walks `line` and reports, for every byte, whether it is inside a string
/// literal. Opening quotes count as code, closing quotes as string.
fn string_mask(line: &str) -> Vec<bool> {
    let mut mask = vec![false; line.len()];
    let mut quote: Option<char> = None;
    let mut escaped = false;
    for (i, c) in line.char_indices() {
        let inside = quote.is_some();
        match quote {
            Some(q) => {
                if escaped {
                    escaped = false;
                } else if c == '\\' {
                    escaped = true;
                } else if c == q {
                    quote = None;
                }
            }
            None => {
                if matches!(c, '\'' | '"' | '`') {
                    quote = Some(c);
                }
            }
        }
        for b in &mut mask[i..i + c.len_utf8()] {
            *b = inside;
        }
    }
    mask
}

/// Removes `//` comments and complete `/* ... */` spans, leaving string
/// literals alone. Quote tracking is local to the line.
pub fn strip_line_comments(line: &str) -> String {
    strip_line_comments_mapped(line).0
}

/// Like [`strip_line_comments`], also returning for each byte of the output
/// the byte offset it came from in the input.
pub fn strip_line_comments_mapped(line: &str) -> (String, Vec<usize>) {
    let mut out = String::with_capacity(line.len());
    let mut map = Vec::with_capacity(line.len());
    let bytes = line.as_bytes();
    let mut quote: Option<u8> = None;
    let mut escaped = false;
    let mut i = 0;
    while i < bytes.len() {
        let b = bytes[i];
        if let Some(q) = quote {
            if escaped {
                escaped = false;
            } else if b == b'\\' {
                escaped = true;
            } else if b == q {
                quote = None;
            }
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'/') {
            break;
        } else if b == b'/' && bytes.get(i + 1) == Some(&b'*') {
            if let Some(end) = line[i + 2..].find("*/") {
                i = i + 2 + end + 2;
                continue;
            }
        } else if matches!(b, b'\'' | b'"' | b'`') {
            quote = Some(b);
        }
        // Copy one whole char so the output stays valid UTF-8.
        let ch_len = line[i..].chars().next().map_or(1, char::len_utf8);
        out.push_str(&line[i..i + ch_len]);
        map.extend(i..i + ch_len);
        i += ch_len;
    }
    (out, map)
}

/// A rule firing on a span of a single line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LineMatch {
    pub feature: UnsafeFeature,
    pub rule_id: &'static str,
    pub span: Range<usize>,
}

/// Runs every line rule over an already comment-stripped line.
pub fn match_line(line: &str, kind: FileKind, mode: MatchMode) -> Vec<LineMatch> {
    if kind != FileKind::JavaScript {
        return Vec::new();
    }
    let refined = mode == MatchMode::Refined;
    let mask = if refined { string_mask(line) } else { Vec::new() };
    let in_code = |start: usize| !refined || !mask[start];
    let boundary = |start: usize| {
        !refined || !line[..start].chars().next_back().is_some_and(is_ident_char)
    };

    let mut out = Vec::new();
    let mut push = |feature, rule_id, span: Range<usize>| {
        out.push(LineMatch {
            feature,
            rule_id,
            span,
        })
    };

    for m in REQUIRE_CALL.find_iter(line) {
        if in_code(m.start()) && boundary(m.start()) {
            push(UnsafeFeature::RequireUse, "require-call", m.range());
        }
    }
    for m in EVAL_CALL.find_iter(line) {
        if in_code(m.start()) && boundary(m.start()) {
            push(UnsafeFeature::EvalUse, "eval-call", m.range());
        }
    }
    for m in NEW_FUNCTION.find_iter(line) {
        if in_code(m.start()) && boundary(m.start()) {
            push(UnsafeFeature::EvalUse, "function-constructor", m.range());
        }
    }
    for re in [&*STATIC_SPECIFIER, &*CALL_SPECIFIER] {
        for caps in re.captures_iter(line) {
            let whole = caps.get(0).unwrap();
            if !(in_code(whole.start()) && boundary(whole.start())) {
                continue;
            }
            if let Some((feature, rule)) = module_feature(&caps[1]) {
                push(feature, rule, whole.range());
            }
        }
    }
    for caps in MEMBER_CALL.captures_iter(line) {
        let whole = caps.get(0).unwrap();
        let start = whole.start();
        let after_dot = line[..start].ends_with('.');
        if !(in_code(start) && boundary(start)) || (refined && after_dot) {
            continue;
        }
        let (feature, rule) = receiver_feature(&caps[1]);
        push(feature, rule, whole.range());
    }
    out
}

/// Features present in one comment-stripped added line, under the default
/// (refined) match mode.
pub fn detect_features_in_line(line: &str, kind: FileKind) -> BTreeSet<UnsafeFeature> {
    detect_features_in_line_with(line, kind, MatchMode::Refined)
}

pub fn detect_features_in_line_with(
    line: &str,
    kind: FileKind,
    mode: MatchMode,
) -> BTreeSet<UnsafeFeature> {
    match_line(line, kind, mode)
        .into_iter()
        .map(|m| m.feature)
        .collect()
}

/// A PR counts as update-related when it touches JavaScript or a manifest.
pub fn is_update_related(pr: &PullRequest) -> bool {
    pr.files
        .iter()
        .any(|f| matches!(f.kind, FileKind::JavaScript | FileKind::Manifest))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FeatureHit {
    pub feature: UnsafeFeature,
    pub rule_id: &'static str,
    pub file_path: String,
    pub new_lineno: u64,
    /// Excerpt of the added line, at most 120 characters.
    pub matched_text: String,
    pub low_confidence: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct UnsafeReport {
    pub pr_id: String,
    pub update_related: bool,
    pub hits: Vec<FeatureHit>,
    pub features_present: BTreeSet<UnsafeFeature>,
}

impl UnsafeReport {
    pub fn is_unsafe(&self) -> bool {
        !self.hits.is_empty()
    }
}

fn excerpt(text: &str) -> String {
    match text.char_indices().nth(MAX_EXCERPT) {
        Some((cut, _)) => text[..cut].to_string(),
        None => text.to_string(),
    }
}

/// Scans the added lines of a PR for the six unsafe features.
pub fn scan_pull_request(pr: &PullRequest, opts: &ScanOptions) -> UnsafeReport {
    let update_related = is_update_related(pr);
    let mut hits = Vec::new();
    if update_related {
        for file in &pr.files {
            match file.kind {
                FileKind::JavaScript => {
                    for (lineno, raw) in file.added_lines() {
                        let (stripped, map) = strip_line_comments_mapped(raw);
                        let mut seen = BTreeSet::new();
                        for m in match_line(&stripped, file.kind, opts.match_mode) {
                            if !seen.insert(m.feature) {
                                continue;
                            }
                            let start = map[m.span.start];
                            let end = map[m.span.end - 1] + 1;
                            // extend to a char boundary of the original
                            let end = (end..=raw.len())
                                .find(|&e| raw.is_char_boundary(e))
                                .unwrap_or(raw.len());
                            hits.push(FeatureHit {
                                feature: m.feature,
                                rule_id: m.rule_id,
                                file_path: file.path.clone(),
                                new_lineno: lineno,
                                matched_text: excerpt(&raw[start..end]),
                                low_confidence: file.truncated,
                            });
                        }
                    }
                }
                FileKind::Manifest => {
                    let additions = extract_manifest_script_additions(file)
                        .expect("file kind checked above");
                    let mut seen_lines = BTreeSet::new();
                    for add in additions {
                        if !seen_lines.insert(add.new_lineno) {
                            continue;
                        }
                        let line = file
                            .added_lines()
                            .find(|(n, _)| *n == add.new_lineno)
                            .map(|(_, l)| l.trim())
                            .unwrap_or_default();
                        hits.push(FeatureHit {
                            feature: UnsafeFeature::NewScripts,
                            rule_id: "manifest-script",
                            file_path: add.file_path,
                            new_lineno: add.new_lineno,
                            matched_text: excerpt(line),
                            low_confidence: add.low_confidence || file.truncated,
                        });
                    }
                }
                _ => {}
            }
        }
    }
    hits.sort_by(|a, b| {
        (&a.file_path, a.new_lineno, a.feature).cmp(&(&b.file_path, b.new_lineno, b.feature))
    });
    let features_present = hits.iter().map(|h| h.feature).collect();
    UnsafeReport {
        pr_id: pr.id.clone(),
        update_related,
        hits,
        features_present,
    }
}
