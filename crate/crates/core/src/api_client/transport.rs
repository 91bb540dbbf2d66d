use std::io::Read;
use std::time::Duration;

use thiserror::Error;

/// Upstream documents are small; anything larger is treated as a broken response.
const MAX_BODY_BYTES: u64 = 64 * 1024 * 1024;

#[derive(Debug, Clone)]
pub struct HttpRequest<'a> {
    pub url: &'a str,
    pub user_agent: &'a str,
    pub if_modified_since: Option<&'a str>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub last_modified: Option<String>,
    pub body: Vec<u8>,
}

#[derive(Debug, Error)]
#[error("transport failure: {0}")]
pub struct TransportError(pub String);

/// A blocking GET-only HTTP transport.
pub trait Transport: Send + Sync {
    fn get(&self, req: &HttpRequest<'_>) -> Result<HttpResponse, TransportError>;
}

/// Real network transport.
pub struct UreqTransport {
    agent: ureq::Agent,
}

impl UreqTransport {
    pub fn new() -> Self {
        let agent = ureq::AgentBuilder::new()
            .timeout_connect(Duration::from_secs(10))
            .timeout_read(Duration::from_secs(60))
            .redirects(0)
            .build();
        Self { agent }
    }
}

impl Default for UreqTransport {
    fn default() -> Self {
        Self::new()
    }
}

impl Transport for UreqTransport {
    fn get(&self, req: &HttpRequest<'_>) -> Result<HttpResponse, TransportError> {
        let mut call = self.agent.get(req.url).set("User-Agent", req.user_agent);
        if let Some(v) = req.if_modified_since {
            call = call.set("If-Modified-Since", v);
        }
        let resp = match call.call() {
            Ok(resp) => resp,
            Err(ureq::Error::Status(_, resp)) => resp,
            Err(ureq::Error::Transport(t)) => return Err(TransportError(t.to_string())),
        };
        let status = resp.status();
        let last_modified = resp.header("Last-Modified").map(str::to_owned);
        let mut body = Vec::new();
        resp.into_reader()
            .take(MAX_BODY_BYTES)
            .read_to_end(&mut body)
            .map_err(|e| TransportError(e.to_string()))?;
        Ok(HttpResponse {
            status,
            last_modified,
            body,
        })
    }
}

/// Splits `scheme://host[:port]/path` into host and path.
pub fn split_url(url: &str) -> Option<(&str, &str)> {
    let rest = url.split_once("://")?.1;
    match rest.find('/') {
        Some(i) => Some((&rest[..i], &rest[i..])),
        None => Some((rest, "/")),
    }
}
