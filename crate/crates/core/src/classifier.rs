//! Keyword-driven change-type labelling of pull requests.
//!
//! Titles and bodies are normalized (lowercased, punctuation removed, each
//! token reduced by a small rule-based lemmatizer) and matched against a
//! keyword taxonomy. File types add two more rules: Markdown files imply
//! documentation, and a PR touching only JSON files is labelled `Other`.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::model::{ChangeType, FileKind, PullRequest};

// Default keyword lists. They are normalized on load.
const FEATURE: &[&str] = &[
    "integrate", "add", "feat", "update", "upgrade", "support", "dependency", "feature",
    "improve", "version", "automate", "compatibility", "bundle", "improvement", "bump",
];
const BUG: &[&str] = &[
    "avoid", "fix", "resolve", "close", "bug", "solve", "solution", "issue", "fixing",
];
const TEST_CASES: &[&str] = &["test case", "test", "unit test", "CI", "continuous integration"];
const REFACTORING: &[&str] = &["remove", "unnecessary", "refactor", "performance", "optimise"];
const DOCUMENTATION: &[&str] = &["documentation", "doc"];
const ATTENTION: &[&str] = &["attention", "breaking", "performance"];

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("cannot read taxonomy file {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("taxonomy file is not a JSON object of string arrays: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("unknown change type `{0}` in taxonomy")]
    UnknownType(String),
}

/// Per-type keyword lists plus the attention keywords. Every keyword is kept
/// as a normalized token sequence; single words are one-token phrases.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct KeywordTaxonomy {
    pub types: BTreeMap<ChangeType, Vec<Vec<String>>>,
    pub attention: Vec<Vec<String>>,
}

fn normalize_list(words: &[impl AsRef<str>]) -> Vec<Vec<String>> {
    let mut out: Vec<Vec<String>> = Vec::new();
    for w in words {
        let toks = normalize_text(w.as_ref());
        if !toks.is_empty() && !out.contains(&toks) {
            out.push(toks);
        }
    }
    out
}

impl Default for KeywordTaxonomy {
    fn default() -> Self {
        let mut types = BTreeMap::new();
        types.insert(ChangeType::Feature, normalize_list(FEATURE));
        types.insert(ChangeType::Bug, normalize_list(BUG));
        types.insert(ChangeType::TestCases, normalize_list(TEST_CASES));
        types.insert(ChangeType::Refactoring, normalize_list(REFACTORING));
        types.insert(ChangeType::Documentation, normalize_list(DOCUMENTATION));
        types.insert(ChangeType::Other, Vec::new());
        KeywordTaxonomy {
            types,
            attention: normalize_list(ATTENTION),
        }
    }
}

impl KeywordTaxonomy {
    /// Builds a taxonomy from a JSON object such as
    /// `{"feature": ["add"], "attention": ["breaking"]}`.
    ///
    /// Keys that are present replace the default list for that type; absent
    /// keys keep their defaults. Unknown keys are rejected.
    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let raw: BTreeMap<String, Vec<String>> = serde_json::from_str(text)?;
        let mut tax = KeywordTaxonomy::default();
        for (key, words) in raw {
            if key == "attention" {
                tax.attention = normalize_list(&words);
                continue;
            }
            let ty: ChangeType = key.parse().map_err(|_| TaxonomyError::UnknownType(key))?;
            tax.types.insert(ty, normalize_list(&words));
        }
        Ok(tax)
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 over the canonical JSON of the normalized lists.
    pub fn hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("taxonomy serializes");
        hex::encode(Sha256::digest(canonical))
    }

    pub fn keywords(&self, ty: ChangeType) -> &[Vec<String>] {
        self.types.get(&ty).map(Vec::as_slice).unwrap_or(&[])
    }
}

/// Words the suffix rules must leave alone.
const KEEP: &[&str] = &[
    "always", "perhaps", "towards", "afterwards", "news", "series", "species", "canvas",
    "alias", "atlas", "christmas", "does", "goes", "was", "has", "is", "this", "thus",
    "plus", "minus", "bus", "gas", "yes", "its", "us", "as", "ms", "js", "ts", "css",
    "sass", "less", "express", "axios", "nodejs", "nextjs", "vuejs", "windows", "macos",
    "ios", "ci", "status", "corpus", "focus", "bonus", "virus", "lens", "redis", "kudos",
    "chaos", "whereas", "besides", "sometimes", "includes", "ffmpeg",
];

fn has_vowel(s: &str) -> bool {
    s.chars().any(|c| matches!(c, 'a' | 'e' | 'i' | 'o' | 'u' | 'y'))
}

fn char_len(s: &str) -> usize {
    s.chars().count()
}

// Word-final patterns after which a dropped silent `e` is restored, e.g.
// "updat" -> "update", "resolv" -> "resolve".
fn needs_e(stem: &str) -> bool {
    const ENDINGS: &[&str] = &[
        "at", "v", "iz", "is", "ur", "rad", "lud", "vid", "os", "as", "ir", "ar", "u", "uc",
        "ac", "ic", "bl", "dl", "gl", "pl", "tl", "kl", "fl", "cl", "ok",
    ];
    ENDINGS.iter().any(|e| stem.ends_with(e))
}

// Doubled consonants that get undoubled: "runn" -> "run", "bugg" -> "bug".
fn undouble(stem: &str) -> Option<&str> {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 4 && b[n - 1] == b[n - 2] && b"bdgmnprt".contains(&b[n - 1]) {
        Some(&stem[..n - 1])
    } else {
        None
    }
}

fn strip_verb_suffix(word: &str, suffix: &str) -> Option<String> {
    let stem = word.strip_suffix(suffix)?;
    if char_len(stem) < 3 || !has_vowel(stem) {
        return None;
    }
    if suffix == "ed" && stem.ends_with('e') {
        // "need", "speed", "proceed"
        return None;
    }
    if let Some(short) = undouble(stem) {
        return Some(short.to_string());
    }
    if needs_e(stem) {
        return Some(format!("{stem}e"));
    }
    Some(stem.to_string())
}

/// One step of the lemmatizer; returns `None` when no rule applies.
fn lemma_step(word: &str) -> Option<String> {
    if !word.is_ascii() || KEEP.contains(&word) || char_len(word) <= 3 {
        return None;
    }
    if let Some(stem) = word.strip_suffix("ies") {
        if char_len(stem) >= 2 {
            return Some(format!("{stem}y"));
        }
    }
    if let Some(stem) = word.strip_suffix("es") {
        if stem.ends_with("ss")
            || stem.ends_with('x')
            || stem.ends_with("zz")
            || stem.ends_with("ch")
            || stem.ends_with("sh")
        {
            return Some(stem.to_string());
        }
    }
    if word.ends_with('s')
        && !word.ends_with("ss")
        && !word.ends_with("us")
        && !word.ends_with("is")
    {
        return Some(word[..word.len() - 1].to_string());
    }
    if word.ends_with("ing") {
        return strip_verb_suffix(word, "ing");
    }
    if word.ends_with("ed") {
        return strip_verb_suffix(word, "ed");
    }
    None
}

/// Reduces a lowercase token to its lemma by applying the suffix rules until
/// none fires.
pub fn lemmatize(word: &str) -> String {
    let mut w = word.to_string();
    while let Some(next) = lemma_step(&w) {
        w = next;
    }
    w
}

/// Lowercases, replaces every non-alphanumeric character with a space, splits
/// on whitespace and lemmatizes each token.
pub fn normalize_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .to_lowercase()
        .chars()
        .map(|c| if c.is_alphanumeric() { c } else { ' ' })
        .collect();
    cleaned.split_whitespace().map(lemmatize).collect()
}

fn contains_phrase(tokens: &[String], phrase: &[String]) -> bool {
    !phrase.is_empty() && tokens.windows(phrase.len()).any(|w| w == phrase)
}

fn pr_tokens(pr: &PullRequest) -> Vec<String> {
    normalize_text(&format!("{} {}", pr.title, pr.body))
}

fn labels_for(tokens: &[String], kinds: &[FileKind], taxonomy: &KeywordTaxonomy) -> BTreeSet<ChangeType> {
    let mut out: BTreeSet<ChangeType> = ChangeType::ALL
        .into_iter()
        .filter(|&t| {
            taxonomy
                .keywords(t)
                .iter()
                .any(|phrase| contains_phrase(tokens, phrase))
        })
        .collect();
    if kinds.contains(&FileKind::Markdown) {
        out.insert(ChangeType::Documentation);
    }
    let json_only = !kinds.is_empty()
        && kinds
            .iter()
            .all(|k| matches!(k, FileKind::JsonOther | FileKind::Manifest));
    if json_only || out.is_empty() {
        out.insert(ChangeType::Other);
    }
    out
}

/// Multi-label change types of a PR. Never empty.
pub fn classify_change_types(pr: &PullRequest, taxonomy: &KeywordTaxonomy) -> BTreeSet<ChangeType> {
    let kinds: Vec<FileKind> = pr.files.iter().map(|f| f.kind).collect();
    labels_for(&pr_tokens(pr), &kinds, taxonomy)
}

pub fn has_attention_keywords(pr: &PullRequest, taxonomy: &KeywordTaxonomy) -> bool {
    let tokens = pr_tokens(pr);
    taxonomy
        .attention
        .iter()
        .any(|phrase| contains_phrase(&tokens, phrase))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ClassificationResult {
    pub pr_id: String,
    pub types: BTreeSet<ChangeType>,
    pub attention: bool,
}

/// Runs both the change-type and attention classification, normalizing the
/// text once.
pub fn classify(pr: &PullRequest, taxonomy: &KeywordTaxonomy) -> ClassificationResult {
    let tokens = pr_tokens(pr);
    let kinds: Vec<FileKind> = pr.files.iter().map(|f| f.kind).collect();
    ClassificationResult {
        pr_id: pr.id.clone(),
        types: labels_for(&tokens, &kinds, taxonomy),
        attention: taxonomy
            .attention
            .iter()
            .any(|phrase| contains_phrase(&tokens, phrase)),
    }
}
