//! The `tailguard` command line.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0    | success |
//! | 2    | partial success (some repositories failed to ingest) |
//! | 64   | usage error |
//! | 65   | malformed corpus or dependents data |
//! | 74   | I/O error |
//! | 78   | invalid configuration file |

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Duration;

use chrono::{DateTime, NaiveDate, Utc};
use clap::{Parser, Subcommand, ValueEnum};

use crate::classifier::KeywordTaxonomy;
use crate::detector::{rule_catalog, MatchMode, ScanOptions, RULE_CATALOG_VERSION};
use crate::diff::ExtensionPolicy;
use crate::ingest::corpus::SCHEMA_VERSION;
use crate::ingest::{
    load_corpus, load_dependents_csv, save_corpus, CorpusError, FetchPolicy, ForgeClient,
    LoadOptions, ReqwestTransport, Transport,
};
use crate::model::{Corpus, LibraryRecord};
use crate::report::{emit_report, render_fig1_svg, run_scan, Format, REPORT_SCHEMA_VERSION};
use crate::stats::{assign_tiers, rank_libraries, SdKind, StatsError, TierConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 2;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_DATA: i32 = 65;
pub const EXIT_IO: i32 = 74;
pub const EXIT_CONFIG: i32 = 78;

#[derive(Parser, Debug)]
#[command(name = "tailguard", version, about = "Flag unsafe dependency updates in pull requests")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fetch pull requests from a forge into a corpus file.
    Ingest(IngestArgs),
    /// Scan a corpus and emit the per-tier report.
    Scan(ScanArgs),
    /// Print the detection rule catalog.
    Rules {
        #[arg(long)]
        json: bool,
    },
    /// Print tool, rule catalog and schema versions.
    Version,
}

#[derive(clap::Args, Debug)]
struct IngestArgs {
    /// Repositories as `owner/repo`.
    repos: Vec<String>,
    /// File with one `owner/repo[,library[,dependents]]` per line.
    #[arg(long)]
    repos_file: Option<PathBuf>,
    /// Corpus file to create or extend.
    #[arg(long, required = true)]
    out: PathBuf,
    #[arg(long, env = "TAILGUARD_TOKEN", hide_env_values = true)]
    token: Option<String>,
    #[arg(long, default_value = crate::ingest::forge::DEFAULT_BASE_URL)]
    base_url: String,
    /// Only fetch PRs created on or after this date (YYYY-MM-DD or RFC 3339).
    #[arg(long, value_parser = parse_since)]
    since: Option<DateTime<Utc>>,
    #[arg(long, default_value_t = 4)]
    max_in_flight: usize,
    #[arg(long, default_value_t = 3)]
    retry_budget: u32,
    #[arg(long, default_value_t = 1000)]
    backoff_ms: u64,
    #[arg(long, default_value_t = 100)]
    page_size: u32,
    /// Treat only `.js` files as JavaScript.
    #[arg(long)]
    strict_js: bool,
}

#[derive(clap::Args, Debug)]
struct ScanArgs {
    corpus: PathBuf,
    /// CSV with `name,dependents` columns used for ranking.
    #[arg(long)]
    tiers: Option<PathBuf>,
    /// JSON keyword taxonomy overriding the built-in lists.
    #[arg(long)]
    taxonomy: Option<PathBuf>,
    /// JSON tier thresholds.
    #[arg(long)]
    tier_config: Option<PathBuf>,
    #[arg(long, default_value = "md")]
    format: String,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Also write the feature frequency chart as SVG.
    #[arg(long)]
    plot: Option<PathBuf>,
    /// Match patterns without identifier, string and receiver checks.
    #[arg(long)]
    raw_regex: bool,
    /// Treat only `.js` files as JavaScript.
    #[arg(long)]
    strict_js: bool,
    /// Fail on the first invalid corpus record.
    #[arg(long)]
    strict: bool,
    #[arg(long, value_enum, default_value_t = SdArg::Population)]
    sd: SdArg,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum SdArg {
    Population,
    Sample,
}

fn parse_since(s: &str) -> Result<DateTime<Utc>, String> {
    if let Ok(t) = DateTime::parse_from_rfc3339(s) {
        return Ok(t.with_timezone(&Utc));
    }
    NaiveDate::parse_from_str(s, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight").and_utc())
        .map_err(|_| format!("`{s}` is neither YYYY-MM-DD nor RFC 3339"))
}

fn extensions(strict_js: bool) -> ExtensionPolicy {
    if strict_js {
        ExtensionPolicy::JsOnly
    } else {
        ExtensionPolicy::Extended
    }
}

/// Output streams and the HTTP transport used by `ingest`.
pub struct Io<'a> {
    pub stdout: &'a mut dyn Write,
    pub stderr: &'a mut dyn Write,
    /// Replaces the network client when set.
    pub transport: Option<&'a dyn Transport>,
}

/// Runs the CLI and returns the process exit code.
pub fn run<I, T>(args: I, io: &mut Io<'_>) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if e.use_stderr() {
                write!(io.stderr, "{rendered}")
            } else {
                write!(io.stdout, "{rendered}")
            };
            return code;
        }
    };
    let result = match cli.command {
        Command::Ingest(a) => cmd_ingest(a, io),
        Command::Scan(a) => cmd_scan(a, io),
        Command::Rules { json } => cmd_rules(json, io),
        Command::Version => cmd_version(io),
    };
    match result {
        Ok(code) => code,
        Err(Failure(code, msg)) => {
            let _ = writeln!(io.stderr, "tailguard: {msg}");
            code
        }
    }
}

struct Failure(i32, String);

fn fail<E: std::fmt::Display>(code: i32) -> impl Fn(E) -> Failure {
    move |e| Failure(code, e.to_string())
}

fn corpus_failure(e: CorpusError) -> Failure {
    let code = match e {
        CorpusError::Io { .. } => EXIT_IO,
        _ => EXIT_DATA,
    };
    Failure(code, e.to_string())
}

fn stats_failure(e: StatsError) -> Failure {
    let code = match e {
        StatsError::InvalidConfig(_) => EXIT_CONFIG,
        _ => EXIT_DATA,
    };
    Failure(code, e.to_string())
}

fn write_file(path: &Path, text: &str) -> Result<(), Failure> {
    std::fs::write(path, text).map_err(|e| Failure(EXIT_IO, format!("{}: {e}", path.display())))
}

struct RepoSpec {
    repo: String,
    library: String,
    dependents: Option<u64>,
}

fn parse_repo_spec(line: &str) -> Result<RepoSpec, String> {
    let mut parts = line.split(',').map(str::trim);
    let repo = parts.next().unwrap_or_default().to_string();
    let valid = matches!(repo.split_once('/'), Some((o, r)) if !o.is_empty() && !r.is_empty() && !r.contains('/'));
    if !valid {
        return Err(format!("`{repo}` is not of the form owner/repo"));
    }
    let library = match parts.next() {
        Some(l) if !l.is_empty() => l.to_string(),
        _ => repo.rsplit('/').next().unwrap_or_default().to_string(),
    };
    let dependents = match parts.next() {
        Some(d) if !d.is_empty() => Some(
            d.parse()
                .map_err(|_| format!("bad dependents count `{d}` for {repo}"))?,
        ),
        _ => None,
    };
    Ok(RepoSpec {
        repo,
        library,
        dependents,
    })
}

fn cmd_ingest(a: IngestArgs, io: &mut Io<'_>) -> Result<i32, Failure> {
    let mut specs = Vec::new();
    for r in &a.repos {
        specs.push(parse_repo_spec(r).map_err(|m| Failure(EXIT_USAGE, m))?);
    }
    if let Some(path) = &a.repos_file {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure(EXIT_IO, format!("{}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let spec = parse_repo_spec(line)
                .map_err(|m| Failure(EXIT_USAGE, format!("{}:{}: {m}", path.display(), i + 1)))?;
            specs.push(spec);
        }
    }
    if specs.is_empty() {
        return Err(Failure(EXIT_USAGE, "no repositories given".into()));
    }

    let policy = extensions(a.strict_js);
    let mut corpus = if a.out.exists() {
        load_corpus(
            &a.out,
            LoadOptions {
                strict: true,
                extensions: policy,
            },
        )
        .map_err(corpus_failure)?
        .corpus
    } else {
        Corpus::default()
    };

    let fetch = FetchPolicy {
        max_in_flight: a.max_in_flight.max(1),
        retry_budget: a.retry_budget,
        backoff_initial: Duration::from_millis(a.backoff_ms),
        since: a.since,
        page_size: a.page_size.clamp(1, 100),
        ..FetchPolicy::default()
    };
    let network;
    let transport: &dyn Transport = match io.transport {
        Some(t) => t,
        None => {
            network = ReqwestTransport::new().map_err(fail(EXIT_IO))?;
            &network
        }
    };
    let mut client = ForgeClient::new(transport, a.token.clone(), fetch).with_base_url(&a.base_url);
    client.extensions = policy;

    let mut failed = Vec::new();
    for spec in &specs {
        let stderr = &mut *io.stderr;
        let pulls: Result<Vec<_>, _> = client
            .fetch_repo_pull_requests(&spec.repo, &spec.library)
            .on_progress(|p| {
                let _ = writeln!(stderr, "{}: page {} ({} PRs so far)", p.repo, p.page, p.pulls_total);
            })
            .collect();
        match pulls {
            Ok(pulls) => merge_library(&mut corpus, spec, pulls),
            Err(e) => {
                let _ = writeln!(io.stderr, "tailguard: {}: {e}", spec.repo);
                failed.push(spec.repo.clone());
            }
        }
    }
    corpus.snapshot_at = Some(Utc::now());
    save_corpus(&corpus, &a.out).map_err(corpus_failure)?;

    if failed.is_empty() {
        Ok(EXIT_OK)
    } else {
        let _ = writeln!(io.stderr, "tailguard: failed repositories: {}", failed.join(", "));
        Ok(EXIT_PARTIAL)
    }
}

/// Adds fetched PRs to the library, replacing earlier copies with the same id.
fn merge_library(corpus: &mut Corpus, spec: &RepoSpec, pulls: Vec<crate::model::PullRequest>) {
    let idx = match corpus.libraries.iter().position(|l| l.name == spec.library) {
        Some(i) => i,
        None => {
            corpus.libraries.push(LibraryRecord::new(&spec.library, 0));
            corpus.libraries.len() - 1
        }
    };
    let lib = &mut corpus.libraries[idx];
    if let Some(d) = spec.dependents {
        lib.dependents = d;
    }
    let mut by_id: BTreeMap<String, crate::model::PullRequest> =
        lib.pulls.drain(..).map(|p| (p.id.clone(), p)).collect();
    for p in pulls {
        by_id.insert(p.id.clone(), p);
    }
    lib.pulls = by_id.into_values().collect();
    corpus.sort();
}

fn cmd_scan(a: ScanArgs, io: &mut Io<'_>) -> Result<i32, Failure> {
    let format: Format = a.format.parse().map_err(fail(EXIT_USAGE))?;
    let taxonomy = match &a.taxonomy {
        Some(p) => KeywordTaxonomy::load(p).map_err(fail(EXIT_CONFIG))?,
        None => KeywordTaxonomy::default(),
    };
    let tier_cfg: TierConfig = match &a.tier_config {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| Failure(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            let cfg: TierConfig = serde_json::from_str(&text)
                .map_err(|e| Failure(EXIT_CONFIG, format!("{}: {e}", p.display())))?;
            cfg.validate().map_err(stats_failure)?;
            cfg
        }
        None => TierConfig::default(),
    };

    let loaded = load_corpus(
        &a.corpus,
        LoadOptions {
            strict: a.strict,
            extensions: extensions(a.strict_js),
        },
    )
    .map_err(corpus_failure)?;
    for issue in &loaded.issues {
        let _ = writeln!(io.stderr, "tailguard: skipped line {}: {}", issue.line_no, issue.message);
    }
    let mut corpus = loaded.corpus;
    let population = match &a.tiers {
        Some(p) => load_dependents_csv(p).map_err(corpus_failure)?,
        None => Vec::new(),
    };
    rank_libraries(&mut corpus, &population);
    let tiers = assign_tiers(&corpus, &tier_cfg).map_err(stats_failure)?;

    let scan = ScanOptions {
        match_mode: if a.raw_regex {
            MatchMode::Raw
        } else {
            MatchMode::Refined
        },
    };
    let mut out = run_scan(&corpus, &tiers, &scan, &taxonomy).map_err(stats_failure)?;
    out.bundle.metadata.sd_kind = match a.sd {
        SdArg::Population => SdKind::Population,
        SdArg::Sample => SdKind::Sample,
    };

    let text = emit_report(&out.bundle, format);
    match &a.out {
        Some(p) => write_file(p, &text)?,
        None => io
            .stdout
            .write_all(text.as_bytes())
            .map_err(fail(EXIT_IO))?,
    }
    if let Some(p) = &a.plot {
        write_file(p, &render_fig1_svg(&out.bundle.fig1))?;
    }
    Ok(EXIT_OK)
}

fn cmd_rules(json: bool, io: &mut Io<'_>) -> Result<i32, Failure> {
    let text = if json {
        let doc = serde_json::json!({
            "version": RULE_CATALOG_VERSION,
            "rules": rule_catalog(),
        });
        serde_json::to_string_pretty(&doc).expect("catalog serializes") + "\n"
    } else {
        let mut s = format!("rule catalog {RULE_CATALOG_VERSION}\n");
        for r in rule_catalog() {
            s.push_str(&format!("{:<22} {:<12} {}\n", r.id, r.feature.as_str(), r.description));
        }
        s
    };
    io.stdout.write_all(text.as_bytes()).map_err(fail(EXIT_IO))?;
    Ok(EXIT_OK)
}

fn cmd_version(io: &mut Io<'_>) -> Result<i32, Failure> {
    let text = format!(
        "tailguard {}\nrule catalog {RULE_CATALOG_VERSION}\ncorpus schema {SCHEMA_VERSION}\nreport schema {REPORT_SCHEMA_VERSION}\n",
        env!("CARGO_PKG_VERSION")
    );
    io.stdout.write_all(text.as_bytes()).map_err(fail(EXIT_IO))?;
    Ok(EXIT_OK)
}
