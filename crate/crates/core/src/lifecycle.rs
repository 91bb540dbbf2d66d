//! Thread lifecycle tracking.
//!
//! Successive catalog snapshots of one board are diffed against the tracker
//! to sort threads into new, live and dead. States only move forward:
//! `New -> Live`, `New -> Dead`, `Live -> Dead`. `Dead` is terminal.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use chrono::{DateTime, Utc};
use serde::Deserialize;
use thiserror::Error;

use crate::api_client::BoardId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CatalogEntry {
    pub thread_no: u64,
    pub last_modified: i64,
    pub page: u32,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogSnapshot {
    pub board: BoardId,
    pub fetched_at: DateTime<Utc>,
    pub entries: Vec<CatalogEntry>,
    pub raw: Vec<u8>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum CatalogError {
    #[error("catalog is not a list of pages: {0}")]
    Malformed(String),
    #[error("thread {0} listed twice in one catalog")]
    DuplicateThread(u64),
    #[error("catalog lists invalid thread number 0")]
    ZeroThread,
    #[error("thread {0} has negative last_modified")]
    NegativeTime(u64),
}

impl CatalogSnapshot {
    /// Parses an upstream `threads.json` document: a list of pages, each
    /// holding `{no, last_modified}` thread stubs. Other fields are ignored
    /// here and remain untouched in `raw`.
    pub fn parse(
        board: BoardId,
        fetched_at: DateTime<Utc>,
        raw: Vec<u8>,
    ) -> Result<Self, CatalogError> {
        #[derive(Deserialize)]
        struct Page {
            #[serde(default)]
            page: u32,
            threads: Vec<Stub>,
        }
        #[derive(Deserialize)]
        struct Stub {
            no: u64,
            #[serde(default)]
            last_modified: i64,
        }
        let pages: Vec<Page> =
            serde_json::from_slice(&raw).map_err(|e| CatalogError::Malformed(e.to_string()))?;
        let mut seen = HashSet::new();
        let mut entries = Vec::new();
        for page in pages {
            for stub in page.threads {
                if stub.no == 0 {
                    return Err(CatalogError::ZeroThread);
                }
                if stub.last_modified < 0 {
                    return Err(CatalogError::NegativeTime(stub.no));
                }
                if !seen.insert(stub.no) {
                    return Err(CatalogError::DuplicateThread(stub.no));
                }
                entries.push(CatalogEntry {
                    thread_no: stub.no,
                    last_modified: stub.last_modified,
                    page: page.page,
                });
            }
        }
        Ok(Self {
            board,
            fetched_at,
            entries,
            raw,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ThreadState {
    New,
    Live,
    Dead,
}

impl ThreadState {
    pub fn can_become(self, next: ThreadState) -> bool {
        use ThreadState::*;
        matches!(
            (self, next),
            (New, New) | (New, Live) | (New, Dead) | (Live, Live) | (Live, Dead)
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadTrackerEntry {
    pub board: BoardId,
    pub thread_no: u64,
    pub state: ThreadState,
    pub known_last_modified: i64,
    pub validator: Option<String>,
    pub last_snapshot_at: Option<DateTime<Utc>>,
    pub last_seen_at: Option<DateTime<Utc>>,
    pub snapshot_count: u64,
    /// Catalog advertised a change that has not been fetched yet.
    pub pending_fetch: bool,
}

impl ThreadTrackerEntry {
    pub fn new(board: BoardId, thread_no: u64, known_last_modified: i64) -> Self {
        Self {
            board,
            thread_no,
            state: ThreadState::New,
            known_last_modified,
            validator: None,
            last_snapshot_at: None,
            last_seen_at: None,
            snapshot_count: 0,
            pending_fetch: true,
        }
    }

    pub fn is_dead(&self) -> bool {
        self.state == ThreadState::Dead
    }
}

/// Per-board tracker: thread number to lifecycle record.
pub type ThreadMap = BTreeMap<u64, ThreadTrackerEntry>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ThreadDelta {
    pub new: BTreeSet<u64>,
    pub live: BTreeSet<u64>,
    pub dead: BTreeSet<u64>,
    /// Live threads whose catalog `last_modified` advanced.
    pub changed: BTreeSet<u64>,
    /// Listed in the catalog but already tracked as dead; ignored.
    pub resurfaced: BTreeSet<u64>,
    /// Catalog `last_modified` for every thread in `new` and `live`.
    pub last_modified: BTreeMap<u64, i64>,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum LifecycleError {
    #[error("tracker holds board {tracked} but catalog is for {current}")]
    MixedBoard { tracked: BoardId, current: BoardId },
    #[error("thread {thread_no}: illegal transition {from:?} -> {to:?}")]
    IllegalTransition {
        thread_no: u64,
        from: ThreadState,
        to: ThreadState,
    },
    #[error("thread {0} referenced by delta but not tracked")]
    Untracked(u64),
    #[error("thread {0} reported new but already tracked")]
    AlreadyTracked(u64),
}

pub fn diff_catalog(
    tracked: &ThreadMap,
    current: &CatalogSnapshot,
) -> Result<ThreadDelta, LifecycleError> {
    if let Some(entry) = tracked.values().find(|e| e.board != current.board) {
        return Err(LifecycleError::MixedBoard {
            tracked: entry.board.clone(),
            current: current.board.clone(),
        });
    }
    let mut delta = ThreadDelta::default();
    let mut listed = HashSet::with_capacity(current.entries.len());
    for entry in &current.entries {
        listed.insert(entry.thread_no);
        match tracked.get(&entry.thread_no) {
            None => {
                delta.new.insert(entry.thread_no);
                delta
                    .last_modified
                    .insert(entry.thread_no, entry.last_modified);
            }
            Some(t) if t.is_dead() => {
                delta.resurfaced.insert(entry.thread_no);
            }
            Some(t) => {
                delta.live.insert(entry.thread_no);
                delta
                    .last_modified
                    .insert(entry.thread_no, entry.last_modified);
                if entry.last_modified > t.known_last_modified {
                    delta.changed.insert(entry.thread_no);
                }
            }
        }
    }
    delta.dead = tracked
        .values()
        .filter(|t| !t.is_dead() && !listed.contains(&t.thread_no))
        .map(|t| t.thread_no)
        .collect();
    Ok(delta)
}

/// Folds a delta into the tracker. Validates the whole delta before mutating.
pub fn apply_delta(
    board: &BoardId,
    tracked: &mut ThreadMap,
    delta: &ThreadDelta,
    now: DateTime<Utc>,
) -> Result<(), LifecycleError> {
    for no in &delta.new {
        if tracked.contains_key(no) {
            return Err(LifecycleError::AlreadyTracked(*no));
        }
    }
    for no in &delta.dead {
        tracked.get(no).ok_or(LifecycleError::Untracked(*no))?;
    }
    for no in &delta.live {
        let entry = tracked.get(no).ok_or(LifecycleError::Untracked(*no))?;
        if entry.is_dead() {
            return Err(LifecycleError::IllegalTransition {
                thread_no: *no,
                from: entry.state,
                to: ThreadState::Live,
            });
        }
    }

    for no in &delta.new {
        let lm = delta.last_modified.get(no).copied().unwrap_or(0);
        let mut entry = ThreadTrackerEntry::new(board.clone(), *no, lm);
        entry.last_seen_at = Some(now);
        tracked.insert(*no, entry);
    }
    for no in &delta.live {
        let entry = tracked.get_mut(no).expect("validated above");
        if let Some(lm) = delta.last_modified.get(no) {
            entry.known_last_modified = entry.known_last_modified.max(*lm);
        }
        if delta.changed.contains(no) {
            entry.pending_fetch = true;
        }
        entry.last_seen_at = Some(now);
    }
    for no in &delta.dead {
        tracked.get_mut(no).expect("validated above").state = ThreadState::Dead;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SnapshotMeta {
    pub fetched_at: DateTime<Utc>,
    pub validator: Option<String>,
}

pub fn record_snapshot(
    entry: &mut ThreadTrackerEntry,
    meta: SnapshotMeta,
) -> Result<(), LifecycleError> {
    if entry.is_dead() {
        return Err(LifecycleError::IllegalTransition {
            thread_no: entry.thread_no,
            from: ThreadState::Dead,
            to: ThreadState::Live,
        });
    }
    entry.snapshot_count += 1;
    entry.state = ThreadState::Live;
    entry.pending_fetch = false;
    if meta.validator.is_some() {
        entry.validator = meta.validator;
    }
    entry.last_snapshot_at = Some(meta.fetched_at);
    Ok(())
}

/// Upstream confirmed the thread is unchanged since the held validator.
pub fn record_not_modified(entry: &mut ThreadTrackerEntry) {
    entry.pending_fetch = false;
}

pub fn mark_dead(entry: &mut ThreadTrackerEntry) {
    entry.state = ThreadState::Dead;
    entry.pending_fetch = false;
}
