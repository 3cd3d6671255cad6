//! Pull-request acquisition from a GitHub-compatible REST API.
//!
//! HTTP goes through the [`Transport`] trait so that recorded responses can
//! stand in for the network in tests.

use std::collections::{HashMap, VecDeque};
use std::sync::Mutex;
use std::time::Duration;

use chrono::{DateTime, TimeZone, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::diff::ExtensionPolicy;
use crate::model::{FileChange, Outcome, PullRequest};

pub const DEFAULT_BASE_URL: &str = "https://api.github.com";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum FetchError {
    #[error("authentication failed ({0})")]
    AuthFailure(String),
    #[error("rate limited{}", .reset_at.map(|t| format!(", resets at {t}")).unwrap_or_default())]
    RateLimited { reset_at: Option<DateTime<Utc>> },
    #[error("repository {0} not found")]
    RepoNotFound(String),
    #[error("transport error: {0}")]
    TransportError(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HttpResponse {
    pub status: u16,
    /// Header names are lowercase.
    pub headers: HashMap<String, String>,
    pub body: String,
}

impl HttpResponse {
    pub fn ok(body: impl Into<String>) -> Self {
        HttpResponse {
            status: 200,
            headers: HashMap::new(),
            body: body.into(),
        }
    }

    pub fn status(status: u16) -> Self {
        HttpResponse {
            status,
            ..Default::default()
        }
    }

    pub fn with_header(mut self, name: &str, value: impl Into<String>) -> Self {
        self.headers.insert(name.to_ascii_lowercase(), value.into());
        self
    }

    fn header(&self, name: &str) -> Option<&str> {
        self.headers.get(name).map(String::as_str)
    }
}

pub trait Transport: Sync {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, String>;
}

impl<T: Transport + ?Sized> Transport for &T {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, String> {
        (**self).get(url, token)
    }
}

pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new() -> Result<Self, FetchError> {
        let client = reqwest::blocking::Client::builder()
            .user_agent(concat!("tailguard/", env!("CARGO_PKG_VERSION")))
            .timeout(Duration::from_secs(60))
            .build()
            .map_err(|e| FetchError::TransportError(e.to_string()))?;
        Ok(ReqwestTransport { client })
    }
}

impl Transport for ReqwestTransport {
    fn get(&self, url: &str, token: Option<&str>) -> Result<HttpResponse, String> {
        let mut req = self
            .client
            .get(url)
            .header("Accept", "application/vnd.github+json");
        if let Some(t) = token.filter(|t| !t.is_empty()) {
            req = req.bearer_auth(t);
        }
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let headers = resp
            .headers()
            .iter()
            .filter_map(|(k, v)| Some((k.as_str().to_ascii_lowercase(), v.to_str().ok()?.to_string())))
            .collect();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpResponse {
            status,
            headers,
            body,
        })
    }
}

/// Serves canned responses by exact URL, in order. Requests for unknown
/// URLs, or beyond the recorded responses, get a 404.
#[derive(Default)]
pub struct ReplayTransport {
    responses: Mutex<HashMap<String, VecDeque<HttpResponse>>>,
    log: Mutex<Vec<String>>,
}

impl ReplayTransport {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&self, url: impl Into<String>, resp: HttpResponse) {
        self.responses
            .lock()
            .unwrap()
            .entry(url.into())
            .or_default()
            .push_back(resp);
    }

    /// URLs requested so far, in request order.
    pub fn requests(&self) -> Vec<String> {
        self.log.lock().unwrap().clone()
    }
}

impl Transport for ReplayTransport {
    fn get(&self, url: &str, _token: Option<&str>) -> Result<HttpResponse, String> {
        self.log.lock().unwrap().push(url.to_string());
        let mut map = self.responses.lock().unwrap();
        Ok(map
            .get_mut(url)
            .and_then(VecDeque::pop_front)
            .unwrap_or_else(|| HttpResponse::status(404)))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FetchPolicy {
    pub max_in_flight: usize,
    pub retry_budget: u32,
    pub backoff_initial: Duration,
    pub backoff_multiplier: f64,
    /// Only PRs created at or after this instant are fetched.
    pub since: Option<DateTime<Utc>>,
    pub page_size: u32,
}

impl Default for FetchPolicy {
    fn default() -> Self {
        FetchPolicy {
            max_in_flight: 4,
            retry_budget: 3,
            backoff_initial: Duration::from_secs(1),
            backoff_multiplier: 2.0,
            since: None,
            page_size: 100,
        }
    }
}

/// Emitted once per listing page.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Progress {
    pub repo: String,
    pub page: u32,
    pub pulls_on_page: usize,
    pub pulls_total: usize,
}

pub struct ForgeClient<T: Transport> {
    pub base_url: String,
    pub token: Option<String>,
    pub policy: FetchPolicy,
    pub extensions: ExtensionPolicy,
    transport: T,
    sleep: fn(Duration),
}

#[derive(Deserialize)]
struct PullJson {
    number: u64,
    title: Option<String>,
    body: Option<String>,
    state: String,
    merged_at: Option<String>,
    created_at: Option<String>,
}

#[derive(Deserialize)]
struct FileJson {
    filename: String,
    #[serde(default)]
    patch: Option<String>,
}

fn next_link(resp: &HttpResponse) -> Option<String> {
    let link = resp.header("link")?;
    link.split(',').find_map(|part| {
        let (url, rel) = part.split_once(';')?;
        rel.contains("rel=\"next\"")
            .then(|| url.trim().trim_start_matches('<').trim_end_matches('>').to_string())
    })
}

fn is_rate_limited(resp: &HttpResponse) -> bool {
    resp.status == 429
        || (resp.status == 403
            && (resp.header("x-ratelimit-remaining") == Some("0") || resp.header("retry-after").is_some()))
}

fn reset_time(resp: &HttpResponse) -> Option<DateTime<Utc>> {
    let secs: i64 = resp.header("x-ratelimit-reset")?.trim().parse().ok()?;
    Utc.timestamp_opt(secs, 0).single()
}

impl<T: Transport> ForgeClient<T> {
    pub fn new(transport: T, token: Option<String>, policy: FetchPolicy) -> Self {
        ForgeClient {
            base_url: DEFAULT_BASE_URL.to_string(),
            token,
            policy,
            extensions: ExtensionPolicy::default(),
            transport,
            sleep: std::thread::sleep,
        }
    }

    pub fn with_base_url(mut self, base: impl Into<String>) -> Self {
        self.base_url = base.into().trim_end_matches('/').to_string();
        self
    }

    /// Replaces the function used to wait between retries.
    pub fn with_sleep(mut self, sleep: fn(Duration)) -> Self {
        self.sleep = sleep;
        self
    }

    pub fn transport(&self) -> &T {
        &self.transport
    }

    /// GET with retry on rate limits, server errors and transport failures.
    fn get(&self, url: &str, repo: &str) -> Result<HttpResponse, FetchError> {
        let mut delay = self.policy.backoff_initial;
        let mut attempt = 0;
        loop {
            let last_try = attempt >= self.policy.retry_budget;
            let failure = match self.transport.get(url, self.token.as_deref()) {
                Ok(resp) if (200..300).contains(&resp.status) => return Ok(resp),
                Ok(resp) if resp.status == 401 => {
                    return Err(FetchError::AuthFailure(format!("HTTP 401 for {url}")))
                }
                Ok(resp) if resp.status == 404 => return Err(FetchError::RepoNotFound(repo.into())),
                Ok(resp) if is_rate_limited(&resp) => FetchError::RateLimited {
                    reset_at: reset_time(&resp),
                },
                Ok(resp) if resp.status == 403 => {
                    return Err(FetchError::AuthFailure(format!("HTTP 403 for {url}")))
                }
                Ok(resp) if resp.status >= 500 => {
                    FetchError::TransportError(format!("HTTP {} for {url}", resp.status))
                }
                Ok(resp) => {
                    return Err(FetchError::TransportError(format!("HTTP {} for {url}", resp.status)))
                }
                Err(e) => FetchError::TransportError(e),
            };
            if last_try {
                return Err(failure);
            }
            (self.sleep)(delay);
            delay = delay.mul_f64(self.policy.backoff_multiplier);
            attempt += 1;
        }
    }

    fn fetch_files(&self, repo: &str, number: u64) -> Result<Vec<FileJson>, FetchError> {
        let mut url = Some(format!(
            "{}/repos/{repo}/pulls/{number}/files?per_page={}",
            self.base_url, self.policy.page_size
        ));
        let mut files = Vec::new();
        while let Some(u) = url.take() {
            let resp = self.get(&u, repo)?;
            let page: Vec<FileJson> = serde_json::from_str(&resp.body)
                .map_err(|e| FetchError::TransportError(format!("bad JSON from {u}: {e}")))?;
            files.extend(page);
            url = next_link(&resp);
        }
        Ok(files)
    }

    fn build_pull(&self, repo: &str, library: &str, pj: PullJson) -> Result<PullRequest, FetchError> {
        let outcome = match (pj.state.as_str(), &pj.merged_at) {
            ("open", _) => Outcome::Opened,
            (_, Some(_)) => Outcome::Merged,
            _ => Outcome::Closed,
        };
        let created_at = pj
            .created_at
            .as_deref()
            .and_then(|s| DateTime::parse_from_rfc3339(s).ok())
            .map(|t| t.with_timezone(&Utc));
        let files = self
            .fetch_files(repo, pj.number)?
            .into_iter()
            .map(|f| {
                FileChange::from_patch(&f.filename, f.patch.unwrap_or_default(), self.extensions)
                    // A patch we cannot parse is kept as a metadata-only change.
                    .or_else(|_| FileChange::from_patch(&f.filename, "", self.extensions))
                    .expect("empty patch always parses")
            })
            .collect();
        Ok(PullRequest {
            id: pj.number.to_string(),
            repo: library.to_string(),
            title: pj.title.unwrap_or_default(),
            body: pj.body.unwrap_or_default(),
            outcome,
            files,
            created_at,
        })
    }

    /// Streams every PR of `repo` (`owner/name`), newest first. `library` is
    /// the name recorded on each PR.
    pub fn fetch_repo_pull_requests<'a>(&'a self, repo: &str, library: &str) -> PullStream<'a, T> {
        PullStream {
            client: self,
            repo: repo.to_string(),
            library: library.to_string(),
            next_url: Some(format!(
                "{}/repos/{repo}/pulls?state=all&sort=created&direction=desc&per_page={}",
                self.base_url, self.policy.page_size
            )),
            buffer: VecDeque::new(),
            page: 0,
            total: 0,
            failed: false,
            on_progress: None,
        }
    }
}

type ProgressFn<'a> = Box<dyn FnMut(&Progress) + 'a>;

pub struct PullStream<'a, T: Transport> {
    client: &'a ForgeClient<T>,
    repo: String,
    library: String,
    next_url: Option<String>,
    buffer: VecDeque<PullRequest>,
    page: u32,
    total: usize,
    failed: bool,
    on_progress: Option<ProgressFn<'a>>,
}

impl<'a, T: Transport> PullStream<'a, T> {
    pub fn on_progress(mut self, f: impl FnMut(&Progress) + 'a) -> Self {
        self.on_progress = Some(Box::new(f));
        self
    }

    fn fetch_page(&mut self, url: &str) -> Result<(), FetchError> {
        let client = self.client;
        let resp = client.get(url, &self.repo)?;
        let page: Vec<PullJson> = serde_json::from_str(&resp.body)
            .map_err(|e| FetchError::TransportError(format!("bad JSON from {url}: {e}")))?;
        self.next_url = next_link(&resp);

        let mut wanted = Vec::new();
        for pj in page {
            let created = pj
                .created_at
                .as_deref()
                .and_then(|s| DateTime::parse_from_rfc3339(s).ok());
            let too_old = matches!((client.policy.since, created), (Some(since), Some(c)) if c < since);
            if too_old {
                // listing is newest first, nothing further can qualify
                self.next_url = None;
                break;
            }
            wanted.push(pj);
        }

        let width = client.policy.max_in_flight.max(1);
        let mut pending = wanted.into_iter().peekable();
        let mut built = Vec::new();
        while pending.peek().is_some() {
            let chunk: Vec<PullJson> = pending.by_ref().take(width).collect();
            let results: Vec<Result<PullRequest, FetchError>> = std::thread::scope(|s| {
                let handles: Vec<_> = chunk
                    .into_iter()
                    .map(|pj| s.spawn(|| client.build_pull(&self.repo, &self.library, pj)))
                    .collect();
                handles.into_iter().map(|h| h.join().expect("fetch thread")).collect()
            });
            for r in results {
                built.push(r?);
            }
        }

        self.page += 1;
        self.total += built.len();
        let progress = Progress {
            repo: self.repo.clone(),
            page: self.page,
            pulls_on_page: built.len(),
            pulls_total: self.total,
        };
        if let Some(cb) = self.on_progress.as_mut() {
            cb(&progress);
        }
        self.buffer.extend(built);
        Ok(())
    }
}

impl<T: Transport> Iterator for PullStream<'_, T> {
    type Item = Result<PullRequest, FetchError>;

    fn next(&mut self) -> Option<Self::Item> {
        loop {
            if let Some(pr) = self.buffer.pop_front() {
                return Some(Ok(pr));
            }
            if self.failed {
                return None;
            }
            let url = self.next_url.take()?;
            if let Err(e) = self.fetch_page(&url) {
                self.failed = true;
                return Some(Err(e));
            }
        }
    }
}
