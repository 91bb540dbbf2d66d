//! Read-only client for the upstream JSON API.
//!
//! Maps logical requests (board index, board catalog, thread) onto URLs,
//! paces them through a single global [`RequestLimiter`], and classifies
//! responses into [`FetchOutcome`]s. Bodies are returned verbatim.

mod budget;
mod transport;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, OnceLock};
use std::time::Duration;

use chrono::{DateTime, Utc};
use log::{debug, warn};
use serde::Deserialize;
use thiserror::Error;

pub use budget::{BudgetError, Permit, RequestBudget, RequestLimiter, ShutdownSignal};
pub use transport::{
    split_url, HttpRequest, HttpResponse, Transport, TransportError, UreqTransport,
};

use crate::clock::{Clock, Shutdown};

pub const DEFAULT_USER_AGENT: &str = concat!("ftct/", env!("CARGO_PKG_VERSION"));

/// Short lowercase board code such as `pol` or `3`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BoardId(String);

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("invalid board code {0:?}: expected 1-10 characters of [a-z0-9]")]
pub struct InvalidBoardId(pub String);

impl BoardId {
    pub const MAX_LEN: usize = 10;

    pub fn new(code: &str) -> Result<Self, InvalidBoardId> {
        let valid = !code.is_empty()
            && code.len() <= Self::MAX_LEN
            && code
                .bytes()
                .all(|b| b.is_ascii_lowercase() || b.is_ascii_digit());
        if valid {
            Ok(Self(code.to_owned()))
        } else {
            Err(InvalidBoardId(code.to_owned()))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl FromStr for BoardId {
    type Err = InvalidBoardId;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::new(s)
    }
}

impl fmt::Display for BoardId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EndpointSet {
    pub scheme: String,
    pub api_host: String,
    /// Only ever used to derive links; never fetched.
    pub media_host: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EndpointError {
    #[error("invalid host {0:?}")]
    InvalidHost(String),
    #[error("unsupported scheme {0:?}")]
    InvalidScheme(String),
}

impl Default for EndpointSet {
    fn default() -> Self {
        Self {
            scheme: "https".into(),
            api_host: "a.4cdn.org".into(),
            media_host: "i.4cdn.org".into(),
        }
    }
}

fn valid_host(host: &str) -> bool {
    let (name, port) = match host.rsplit_once(':') {
        Some((n, p)) => (n, Some(p)),
        None => (host, None),
    };
    let name_ok = !name.is_empty()
        && name.len() <= 253
        && name.split('.').all(|label| {
            !label.is_empty()
                && label.len() <= 63
                && label
                    .bytes()
                    .all(|b| b.is_ascii_alphanumeric() || b == b'-')
                && !label.starts_with('-')
                && !label.ends_with('-')
        });
    let port_ok = port.is_none_or(|p| p.parse::<u16>().is_ok());
    name_ok && port_ok
}

impl EndpointSet {
    pub fn new(scheme: &str, api_host: &str, media_host: &str) -> Result<Self, EndpointError> {
        if scheme != "https" && scheme != "http" {
            return Err(EndpointError::InvalidScheme(scheme.into()));
        }
        for host in [api_host, media_host] {
            if !valid_host(host) {
                return Err(EndpointError::InvalidHost(host.into()));
            }
        }
        Ok(Self {
            scheme: scheme.into(),
            api_host: api_host.into(),
            media_host: media_host.into(),
        })
    }

    pub fn board_list_url(&self) -> String {
        format!("{}://{}/boards.json", self.scheme, self.api_host)
    }

    pub fn catalog_url(&self, board: &BoardId) -> String {
        format!("{}://{}/{}/threads.json", self.scheme, self.api_host, board)
    }

    pub fn thread_url(&self, board: &BoardId, thread_no: u64) -> String {
        debug_assert!(thread_no > 0);
        format!(
            "{}://{}/{}/thread/{}.json",
            self.scheme, self.api_host, board, thread_no
        )
    }

    pub fn media_url(&self, board: &BoardId, token: &str, ext: &str) -> String {
        format!(
            "{}://{}/{}/{}{}",
            self.scheme, self.media_host, board, token, ext
        )
    }
}

/// `<scheme>://<api_host>/<board>/threads.json`
pub fn build_catalog_url(endpoints: &EndpointSet, board: &BoardId) -> String {
    endpoints.catalog_url(board)
}

/// `<scheme>://<api_host>/<board>/thread/<thread_no>.json`
pub fn build_thread_url(endpoints: &EndpointSet, board: &BoardId, thread_no: u64) -> String {
    endpoints.thread_url(board, thread_no)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum FetchKind {
    Payload(Vec<u8>),
    NotModified,
    Gone,
    TransientError(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FetchOutcome {
    pub kind: FetchKind,
    pub last_modified: Option<String>,
    pub fetched_at: DateTime<Utc>,
    /// Wire requests spent on this outcome, retries included.
    pub attempts: u32,
}

impl FetchOutcome {
    pub fn body(&self) -> Option<&[u8]> {
        match &self.kind {
            FetchKind::Payload(b) => Some(b),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RetryPolicy {
    /// Delay before each retry; its length is the number of retries.
    pub delays: Vec<Duration>,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            delays: vec![
                Duration::from_secs(2),
                Duration::from_secs(8),
                Duration::from_secs(32),
            ],
        }
    }
}

impl RetryPolicy {
    pub fn none() -> Self {
        Self { delays: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardInfo {
    pub board: BoardId,
    pub title: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BoardList {
    pub boards: Vec<BoardInfo>,
    pub raw: Vec<u8>,
}

impl BoardList {
    pub fn parse(raw: Vec<u8>) -> Result<Self, ApiError> {
        #[derive(Deserialize)]
        struct Doc {
            boards: Vec<Entry>,
        }
        #[derive(Deserialize)]
        struct Entry {
            board: String,
            title: Option<String>,
        }
        let doc: Doc = serde_json::from_slice(&raw)
            .map_err(|e| ApiError::Malformed(format!("boards index: {e}")))?;
        let mut boards = Vec::with_capacity(doc.boards.len());
        for entry in doc.boards {
            match BoardId::new(&entry.board) {
                Ok(board) => boards.push(BoardInfo {
                    board,
                    title: entry.title,
                }),
                Err(e) => warn!("skipping advertised board: {e}"),
            }
        }
        Ok(Self { boards, raw })
    }

    pub fn ids(&self) -> impl Iterator<Item = &BoardId> {
        self.boards.iter().map(|b| &b.board)
    }
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ApiError {
    #[error("upstream temporarily unavailable: {0}")]
    Transient(String),
    #[error("resource not found upstream")]
    Gone,
    #[error("malformed upstream document: {0}")]
    Malformed(String),
    #[error(transparent)]
    Shutdown(#[from] ShutdownSignal),
}

pub struct ApiClient {
    endpoints: EndpointSet,
    transport: Arc<dyn Transport>,
    limiter: Arc<RequestLimiter>,
    retry: RetryPolicy,
    clock: Arc<dyn Clock>,
    shutdown: Shutdown,
    user_agent: String,
    board_list: OnceLock<Arc<BoardList>>,
    requests: AtomicU64,
}

impl ApiClient {
    pub fn new(
        endpoints: EndpointSet,
        transport: Arc<dyn Transport>,
        limiter: Arc<RequestLimiter>,
        clock: Arc<dyn Clock>,
        shutdown: Shutdown,
    ) -> Self {
        Self {
            endpoints,
            transport,
            limiter,
            retry: RetryPolicy::default(),
            clock,
            shutdown,
            user_agent: DEFAULT_USER_AGENT.into(),
            board_list: OnceLock::new(),
            requests: AtomicU64::new(0),
        }
    }

    pub fn with_retry(mut self, retry: RetryPolicy) -> Self {
        self.retry = retry;
        self
    }

    pub fn with_user_agent(mut self, ua: impl Into<String>) -> Self {
        self.user_agent = ua.into();
        self
    }

    pub fn endpoints(&self) -> &EndpointSet {
        &self.endpoints
    }

    pub fn limiter(&self) -> &RequestLimiter {
        &self.limiter
    }

    /// Total wire requests issued by this client so far.
    pub fn requests_issued(&self) -> u64 {
        self.requests.load(Ordering::SeqCst)
    }

    pub fn acquire_request_slot(&self) -> Result<Permit<'_>, ShutdownSignal> {
        self.limiter.acquire_request_slot()
    }

    /// Board index, fetched once and cached for the lifetime of the client.
    pub fn fetch_board_list(&self) -> Result<Arc<BoardList>, ApiError> {
        if let Some(list) = self.board_list.get() {
            return Ok(list.clone());
        }
        let outcome = self.fetch(&self.endpoints.board_list_url(), None)?;
        let list = match outcome.kind {
            FetchKind::Payload(body) => Arc::new(BoardList::parse(body)?),
            FetchKind::Gone => return Err(ApiError::Gone),
            FetchKind::NotModified => {
                return Err(ApiError::Malformed(
                    "unexpected 304 for boards index".into(),
                ))
            }
            FetchKind::TransientError(e) => return Err(ApiError::Transient(e)),
        };
        Ok(self.board_list.get_or_init(|| list).clone())
    }

    pub fn fetch_catalog(&self, board: &BoardId) -> Result<FetchOutcome, ShutdownSignal> {
        self.fetch(&self.endpoints.catalog_url(board), None)
    }

    pub fn fetch_thread(
        &self,
        board: &BoardId,
        thread_no: u64,
        validator: Option<&str>,
    ) -> Result<FetchOutcome, ShutdownSignal> {
        self.fetch(&self.endpoints.thread_url(board, thread_no), validator)
    }

    fn fetch(&self, url: &str, validator: Option<&str>) -> Result<FetchOutcome, ShutdownSignal> {
        let mut attempts = 0u32;
        let mut delays = self.retry.delays.iter();
        loop {
            let (fetched_at, result) = {
                let _permit = self.limiter.acquire_request_slot()?;
                let fetched_at = self.clock.utc_now();
                self.requests.fetch_add(1, Ordering::SeqCst);
                attempts += 1;
                let req = HttpRequest {
                    url,
                    user_agent: &self.user_agent,
                    if_modified_since: validator,
                };
                (fetched_at, self.transport.get(&req))
            };
            let (kind, last_modified) = classify(result);
            debug!("GET {url} -> {}", kind_label(&kind));
            if let FetchKind::TransientError(reason) = &kind {
                if let Some(delay) = delays.next() {
                    warn!("GET {url} failed ({reason}); retrying in {delay:?}");
                    if self.clock.sleep(*delay, &self.shutdown) {
                        return Err(ShutdownSignal);
                    }
                    continue;
                }
            }
            return Ok(FetchOutcome {
                kind,
                last_modified,
                fetched_at,
                attempts,
            });
        }
    }
}

fn kind_label(kind: &FetchKind) -> &'static str {
    match kind {
        FetchKind::Payload(_) => "payload",
        FetchKind::NotModified => "not-modified",
        FetchKind::Gone => "gone",
        FetchKind::TransientError(_) => "transient-error",
    }
}

fn classify(result: Result<HttpResponse, TransportError>) -> (FetchKind, Option<String>) {
    let resp = match result {
        Ok(r) => r,
        Err(e) => return (FetchKind::TransientError(e.0), None),
    };
    let kind = match resp.status {
        200 => {
            if resp.body.is_empty() {
                FetchKind::TransientError("empty body".into())
            } else if let Err(e) = serde_json::from_slice::<serde::de::IgnoredAny>(&resp.body) {
                FetchKind::TransientError(format!("body is not JSON: {e}"))
            } else {
                FetchKind::Payload(resp.body)
            }
        }
        304 => FetchKind::NotModified,
        404 | 410 => FetchKind::Gone,
        s => FetchKind::TransientError(format!("HTTP {s}")),
    };
    let last_modified = match kind {
        FetchKind::Gone | FetchKind::TransientError(_) => None,
        _ => resp.last_modified,
    };
    (kind, last_modified)
}
