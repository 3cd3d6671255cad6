//! Flags unsafe dependency updates in pull requests and summarizes them
//! across library dependence tiers.
//!
//! The pipeline is: load a corpus of pull requests ([`ingest`]), parse each
//! file patch ([`diff`]), scan added lines for the six unsafe features
//! ([`detector`]), label change types ([`classifier`]), then aggregate per
//! tier ([`stats`]) and render tables ([`report`]).

pub mod classifier;
pub mod cli;
pub mod detector;
pub mod diff;
pub mod ingest;
pub mod model;
pub mod report;
pub mod stats;

pub use classifier::{classify, ClassificationResult, KeywordTaxonomy};
pub use detector::{scan_pull_request, ScanOptions, UnsafeReport};
pub use model::{
    ChangeType, Corpus, DiffHunk, FileChange, FileKind, LibraryRecord, Outcome, PullRequest,
    Tier, UnsafeFeature,
};

#[cfg(doctest)]
pub mod book {
    #[doc = include_str!("../../../README.md")]
    pub mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub mod introduction {}
    #[doc = include_str!("../../../book/src/corpus.md")]
    pub mod corpus {}
    #[doc = include_str!("../../../book/src/detection.md")]
    pub mod detection {}
    #[doc = include_str!("../../../book/src/classification.md")]
    pub mod classification {}
    #[doc = include_str!("../../../book/src/tables.md")]
    pub mod tables {}
    #[doc = include_str!("../../../book/src/cli.md")]
    pub mod cli {}
}
