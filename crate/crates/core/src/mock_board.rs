//! Deterministic stand-in for the upstream API.
//!
//! A [`MockBoard`] replays a [`BoardScript`] against a shared
//! [`VirtualClock`]: every response is a pure function of the script, the
//! current virtual time and the request. It can be called in-process (it
//! implements [`Transport`]) or served over plain HTTP with [`MockServer`].
//! Every request is appended to [`MockBoard::request_log`].

use std::collections::{BTreeMap, HashMap};
use std::io;
use std::net::SocketAddr;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, NaiveDateTime, TimeZone, Utc};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::api_client::{split_url, BoardId, HttpRequest, HttpResponse, Transport, TransportError};
use crate::clock::VirtualClock;

const THREADS_PER_PAGE: usize = 15;
const HTTP_DATE: &str = "%a, %d %b %Y %H:%M:%S GMT";

pub fn http_date(epoch_secs: i64) -> String {
    Utc.timestamp_opt(epoch_secs, 0)
        .single()
        .map(|t| t.format(HTTP_DATE).to_string())
        .unwrap_or_default()
}

pub fn parse_http_date(s: &str) -> Option<i64> {
    NaiveDateTime::parse_from_str(s.trim(), HTTP_DATE)
        .ok()
        .map(|n| n.and_utc().timestamp())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EventKind {
    CreateThread,
    AddPost,
    Prune,
    Delete,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Attachment {
    pub filename: String,
    pub ext: String,
    pub tim: u64,
    pub width: u32,
    pub height: u32,
    pub md5: String,
    pub fsize: u64,
}

/// Content of a post introduced by `CreateThread` or `AddPost`.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct PostFragment {
    /// Explicit post number; replies default to `thread_no * 1000 + index`.
    pub no: Option<u64>,
    pub name: Option<String>,
    pub com: Option<String>,
    pub attachment: Option<Attachment>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScriptEvent {
    /// Virtual epoch seconds.
    pub at: i64,
    pub kind: EventKind,
    pub board: BoardId,
    pub thread_no: u64,
    pub post: Option<PostFragment>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ScriptError {
    #[error("events out of order at index {0}")]
    Unsorted(usize),
    #[error("event for /{board}/{thread_no} before the thread was created")]
    BeforeCreate { board: BoardId, thread_no: u64 },
    #[error("thread /{board}/{thread_no} created twice")]
    DuplicateThread { board: BoardId, thread_no: u64 },
    #[error("event for /{board}/{thread_no} after the thread was removed")]
    AfterRemoval { board: BoardId, thread_no: u64 },
    #[error("board {0} is not part of the script")]
    UnknownBoard(BoardId),
    #[error("thread number 0 is invalid")]
    ZeroThread,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoardScript {
    pub boards: Vec<BoardId>,
    pub events: Vec<ScriptEvent>,
}

impl BoardScript {
    pub fn new(boards: Vec<BoardId>) -> Self {
        Self {
            boards,
            events: Vec::new(),
        }
    }

    pub fn create(mut self, at: i64, board: &BoardId, thread_no: u64, op: PostFragment) -> Self {
        self.events.push(ScriptEvent {
            at,
            kind: EventKind::CreateThread,
            board: board.clone(),
            thread_no,
            post: Some(op),
        });
        self
    }

    pub fn reply(mut self, at: i64, board: &BoardId, thread_no: u64, post: PostFragment) -> Self {
        self.events.push(ScriptEvent {
            at,
            kind: EventKind::AddPost,
            board: board.clone(),
            thread_no,
            post: Some(post),
        });
        self
    }

    pub fn prune(mut self, at: i64, board: &BoardId, thread_no: u64) -> Self {
        self.events.push(ScriptEvent {
            at,
            kind: EventKind::Prune,
            board: board.clone(),
            thread_no,
            post: None,
        });
        self
    }

    pub fn delete(mut self, at: i64, board: &BoardId, thread_no: u64) -> Self {
        self.events.push(ScriptEvent {
            at,
            kind: EventKind::Delete,
            board: board.clone(),
            thread_no,
            post: None,
        });
        self
    }

    pub fn validate(&self) -> Result<(), ScriptError> {
        #[derive(PartialEq)]
        enum Seen {
            Open,
            Removed,
        }
        let mut threads: HashMap<(&BoardId, u64), Seen> = HashMap::new();
        for (i, ev) in self.events.iter().enumerate() {
            if i > 0 && self.events[i - 1].at > ev.at {
                return Err(ScriptError::Unsorted(i));
            }
            if !self.boards.contains(&ev.board) {
                return Err(ScriptError::UnknownBoard(ev.board.clone()));
            }
            if ev.thread_no == 0 {
                return Err(ScriptError::ZeroThread);
            }
            let key = (&ev.board, ev.thread_no);
            let ids = || (ev.board.clone(), ev.thread_no);
            match (ev.kind, threads.get(&key)) {
                (EventKind::CreateThread, None) => {
                    threads.insert(key, Seen::Open);
                }
                (EventKind::CreateThread, Some(_)) => {
                    let (board, thread_no) = ids();
                    return Err(ScriptError::DuplicateThread { board, thread_no });
                }
                (_, None) => {
                    let (board, thread_no) = ids();
                    return Err(ScriptError::BeforeCreate { board, thread_no });
                }
                (_, Some(Seen::Removed)) => {
                    let (board, thread_no) = ids();
                    return Err(ScriptError::AfterRemoval { board, thread_no });
                }
                (EventKind::AddPost, Some(Seen::Open)) => {}
                (EventKind::Prune | EventKind::Delete, Some(Seen::Open)) => {
                    threads.insert(key, Seen::Removed);
                }
            }
        }
        Ok(())
    }

    /// Latest event time in the script, if any.
    pub fn end_time(&self) -> Option<i64> {
        self.events.last().map(|e| e.at)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RequestRecord {
    /// Virtual time when served.
    pub at: i64,
    /// Real time since the mock was created.
    pub elapsed: Duration,
    pub method: String,
    pub host: String,
    pub path: String,
    pub status: u16,
}

struct ThreadModel {
    posts: Vec<Value>,
    version: i64,
    removed: bool,
}

pub struct MockBoard {
    script: BoardScript,
    clock: VirtualClock,
    media_host: String,
    origin: Instant,
    log: Mutex<Vec<RequestRecord>>,
    failures: Mutex<HashMap<String, u32>>,
}

impl MockBoard {
    pub fn new(script: BoardScript, clock: VirtualClock) -> Result<Self, ScriptError> {
        script.validate()?;
        Ok(Self {
            script,
            clock,
            media_host: "i.4cdn.org".into(),
            origin: Instant::now(),
            log: Mutex::new(Vec::new()),
            failures: Mutex::new(HashMap::new()),
        })
    }

    /// Requests addressed to this host are logged and answered 404.
    pub fn with_media_host(mut self, host: impl Into<String>) -> Self {
        self.media_host = host.into();
        self
    }

    pub fn clock(&self) -> &VirtualClock {
        &self.clock
    }

    pub fn script(&self) -> &BoardScript {
        &self.script
    }

    /// The next `count` requests for `path` are answered with HTTP 500.
    pub fn inject_failures(&self, path: &str, count: u32) {
        *self
            .failures
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .entry(path.to_owned())
            .or_default() += count;
    }

    pub fn request_log(&self) -> Vec<RequestRecord> {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    pub fn clear_log(&self) {
        self.log.lock().unwrap_or_else(|e| e.into_inner()).clear();
    }

    fn threads_at(&self, board: &BoardId, now: i64) -> BTreeMap<u64, ThreadModel> {
        let mut threads: BTreeMap<u64, ThreadModel> = BTreeMap::new();
        for ev in self
            .script
            .events
            .iter()
            .take_while(|e| e.at <= now)
            .filter(|e| &e.board == board)
        {
            match ev.kind {
                EventKind::CreateThread => {
                    let frag = ev.post.clone().unwrap_or_default();
                    threads.insert(
                        ev.thread_no,
                        ThreadModel {
                            posts: vec![render_post(ev.thread_no, 0, ev.at, &frag)],
                            version: ev.at,
                            removed: false,
                        },
                    );
                }
                EventKind::AddPost => {
                    if let Some(t) = threads.get_mut(&ev.thread_no) {
                        let frag = ev.post.clone().unwrap_or_default();
                        let no = frag
                            .no
                            .unwrap_or(ev.thread_no * 1000 + t.posts.len() as u64);
                        t.posts.push(render_post(no, ev.thread_no, ev.at, &frag));
                        t.version = ev.at;
                    }
                }
                EventKind::Prune | EventKind::Delete => {
                    if let Some(t) = threads.get_mut(&ev.thread_no) {
                        t.removed = true;
                        t.version = ev.at;
                    }
                }
            }
        }
        threads
    }

    /// `threads.json` for `board` at the current virtual time.
    pub fn serve_catalog(&self, board: &BoardId) -> HttpResponse {
        if !self.script.boards.contains(board) {
            return not_found();
        }
        let now = self.clock.now_secs();
        let mut live: Vec<(u64, i64, usize)> = self
            .threads_at(board, now)
            .into_iter()
            .filter(|(_, t)| !t.removed)
            .map(|(no, t)| (no, t.version, t.posts.len()))
            .collect();
        // bump order: most recently modified first
        live.sort_by(|a, b| b.1.cmp(&a.1).then(b.0.cmp(&a.0)));
        let pages: Vec<Value> = live
            .chunks(THREADS_PER_PAGE)
            .enumerate()
            .map(|(i, chunk)| {
                let threads: Vec<Value> = chunk
                    .iter()
                    .map(|(no, lm, posts)| json!({"no": no, "last_modified": lm, "replies": posts - 1}))
                    .collect();
                json!({"page": i + 1, "threads": threads})
            })
            .collect();
        let last_modified = live.iter().map(|t| t.1).max().unwrap_or(now);
        HttpResponse {
            status: 200,
            last_modified: Some(http_date(last_modified)),
            body: serde_json::to_vec(&pages).expect("serializable"),
        }
    }

    /// Full thread document, 304 when `validator` is at least the current
    /// version, 404 for unknown, pruned or deleted threads.
    pub fn serve_thread(
        &self,
        board: &BoardId,
        thread_no: u64,
        validator: Option<&str>,
    ) -> HttpResponse {
        if !self.script.boards.contains(board) {
            return not_found();
        }
        let now = self.clock.now_secs();
        let mut threads = self.threads_at(board, now);
        let Some(thread) = threads.remove(&thread_no).filter(|t| !t.removed) else {
            return not_found();
        };
        if validator
            .and_then(parse_http_date)
            .is_some_and(|v| v >= thread.version)
        {
            return HttpResponse {
                status: 304,
                last_modified: Some(http_date(thread.version)),
                body: Vec::new(),
            };
        }
        HttpResponse {
            status: 200,
            last_modified: Some(http_date(thread.version)),
            body: serde_json::to_vec(&json!({ "posts": thread.posts })).expect("serializable"),
        }
    }

    pub fn serve_board_list(&self) -> HttpResponse {
        let boards: Vec<Value> = self
            .script
            .boards
            .iter()
            .map(|b| json!({"board": b.as_str(), "title": format!("/{b}/")}))
            .collect();
        HttpResponse {
            status: 200,
            last_modified: None,
            body: serde_json::to_vec(&json!({ "boards": boards })).expect("serializable"),
        }
    }

    /// Routes one GET and records it.
    pub fn handle(&self, host: &str, path: &str, validator: Option<&str>) -> HttpResponse {
        let injected = {
            let mut failures = self.failures.lock().unwrap_or_else(|e| e.into_inner());
            match failures.get_mut(path) {
                Some(n) if *n > 0 => {
                    *n -= 1;
                    true
                }
                _ => false,
            }
        };
        let resp = if injected {
            HttpResponse {
                status: 500,
                last_modified: None,
                body: Vec::new(),
            }
        } else if host == self.media_host {
            not_found()
        } else {
            self.route(path, validator)
        };
        self.log
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(RequestRecord {
                at: self.clock.now_secs(),
                elapsed: self.origin.elapsed(),
                method: "GET".into(),
                host: host.to_owned(),
                path: path.to_owned(),
                status: resp.status,
            });
        resp
    }

    fn route(&self, path: &str, validator: Option<&str>) -> HttpResponse {
        let segments: Vec<&str> = path.trim_start_matches('/').split('/').collect();
        match segments.as_slice() {
            ["boards.json"] => self.serve_board_list(),
            [board, "threads.json"] => match BoardId::new(board) {
                Ok(b) => self.serve_catalog(&b),
                Err(_) => not_found(),
            },
            [board, "thread", file] => {
                let no = file
                    .strip_suffix(".json")
                    .and_then(|n| n.parse::<u64>().ok());
                match (BoardId::new(board), no) {
                    (Ok(b), Some(no)) => self.serve_thread(&b, no, validator),
                    _ => not_found(),
                }
            }
            _ => not_found(),
        }
    }
}

impl Transport for MockBoard {
    fn get(&self, req: &HttpRequest<'_>) -> Result<HttpResponse, TransportError> {
        let (host, path) =
            split_url(req.url).ok_or_else(|| TransportError(format!("bad url {}", req.url)))?;
        Ok(self.handle(host, path, req.if_modified_since))
    }
}

fn not_found() -> HttpResponse {
    HttpResponse {
        status: 404,
        last_modified: None,
        body: Vec::new(),
    }
}

fn render_post(no: u64, resto: u64, time: i64, frag: &PostFragment) -> Value {
    let mut post = Map::new();
    post.insert("no".into(), json!(no));
    post.insert("resto".into(), json!(resto));
    post.insert("time".into(), json!(time));
    post.insert(
        "name".into(),
        json!(frag.name.as_deref().unwrap_or("Anonymous")),
    );
    if let Some(com) = &frag.com {
        post.insert("com".into(), json!(com));
    }
    if let Some(a) = &frag.attachment {
        post.insert("filename".into(), json!(a.filename));
        post.insert("ext".into(), json!(a.ext));
        post.insert("tim".into(), json!(a.tim));
        post.insert("w".into(), json!(a.width));
        post.insert("h".into(), json!(a.height));
        post.insert("tn_w".into(), json!(a.width.min(250)));
        post.insert("tn_h".into(), json!(a.height.min(250)));
        post.insert("md5".into(), json!(a.md5));
        post.insert("fsize".into(), json!(a.fsize));
    }
    Value::Object(post)
}

/// Serves a [`MockBoard`] over HTTP on an ephemeral localhost port.
pub struct MockServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(board: Arc<MockBoard>) -> io::Result<Self> {
        let server =
            tiny_http::Server::http("127.0.0.1:0").map_err(|e| io::Error::other(e.to_string()))?;
        let addr = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| io::Error::other("not an IP listener"))?;
        let stop = Arc::new(AtomicBool::new(false));
        let stop_flag = stop.clone();
        let handle = std::thread::spawn(move || {
            while !stop_flag.load(Ordering::SeqCst) {
                let req = match server.recv_timeout(Duration::from_millis(20)) {
                    Ok(Some(r)) => r,
                    Ok(None) => continue,
                    Err(_) => break,
                };
                let header = |name: &str| {
                    req.headers()
                        .iter()
                        .find(|h| h.field.as_str().as_str().eq_ignore_ascii_case(name))
                        .map(|h| h.value.as_str().to_owned())
                };
                let host = header("Host").unwrap_or_default();
                let validator = header("If-Modified-Since");
                let resp = if req.method() == &tiny_http::Method::Get {
                    board.handle(&host, req.url(), validator.as_deref())
                } else {
                    HttpResponse {
                        status: 405,
                        last_modified: None,
                        body: Vec::new(),
                    }
                };
                let mut out =
                    tiny_http::Response::from_data(resp.body).with_status_code(resp.status);
                if let Some(lm) = resp.last_modified {
                    if let Ok(h) =
                        tiny_http::Header::from_bytes(&b"Last-Modified"[..], lm.as_bytes())
                    {
                        out.add_header(h);
                    }
                }
                let _ = req.respond(out);
            }
        });
        Ok(Self {
            addr,
            stop,
            handle: Some(handle),
        })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// `host:port`, usable as an API host.
    pub fn host(&self) -> String {
        self.addr.to_string()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

/// UTC instant for a virtual epoch second.
pub fn virtual_instant(epoch_secs: i64) -> DateTime<Utc> {
    Utc.timestamp_opt(epoch_secs, 0).single().expect("in range")
}
