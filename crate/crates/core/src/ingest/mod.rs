//! Corpus storage and pull-request acquisition. This is the only module that
//! touches the filesystem or the network.

pub mod corpus;
pub mod forge;

pub use corpus::{
    load_corpus, load_dependents_csv, parse_corpus, render_corpus, save_corpus, CorpusError,
    CorpusRecord, LoadIssue, LoadOptions, LoadedCorpus,
};
pub use forge::{
    FetchError, FetchPolicy, ForgeClient, HttpResponse, ReplayTransport, ReqwestTransport, Transport,
};
