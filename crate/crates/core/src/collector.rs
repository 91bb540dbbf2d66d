//! The crawl loop.
//!
//! Startup: resolve boards, scan today's partition, seed the tracker.
//! Each cycle, per board: fetch the catalog, store it, diff it against the
//! tracker, give vanished threads one last fetch, then fetch every thread
//! that is new or whose catalog timestamp advanced. Everything runs on one
//! pipeline through one request budget.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use log::{debug, error, info, warn};
use thiserror::Error;

use crate::api_client::{
    ApiClient, ApiError, BoardId, EndpointSet, FetchKind, FetchOutcome, RequestBudget,
    RequestLimiter, RetryPolicy, ShutdownSignal, Transport, DEFAULT_USER_AGENT,
};
use crate::clock::{Clock, Shutdown};
use crate::lifecycle::{
    apply_delta, diff_catalog, mark_dead, record_not_modified, record_snapshot, CatalogSnapshot,
    SnapshotMeta, ThreadMap, ThreadState, ThreadTrackerEntry,
};
use crate::storage::{
    recover_state, ArchiveLayout, RecoveredState, SnapshotWriter, StorageError, ThreadSnapshot,
};

pub const DEFAULT_CYCLE_PAUSE: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SchedulingMode {
    /// Fetch every board's catalog first, then all threads.
    CatalogsUpfront,
    /// Fetch each board's catalog directly before that board's threads.
    #[default]
    CatalogJustInTime,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollectorConfig {
    pub include_boards: Vec<BoardId>,
    pub exclude_boards: Vec<BoardId>,
    pub scheduling_mode: SchedulingMode,
    pub cycle_pause: Duration,
    pub refetch_unchanged: bool,
    pub budget: RequestBudget,
    pub storage_root: PathBuf,
    /// Unknown include entries are an error instead of a warning.
    pub strict: bool,
    pub endpoints: EndpointSet,
    pub user_agent: String,
    pub retry: RetryPolicy,
}

impl Default for CollectorConfig {
    fn default() -> Self {
        Self {
            include_boards: Vec::new(),
            exclude_boards: Vec::new(),
            scheduling_mode: SchedulingMode::default(),
            cycle_pause: DEFAULT_CYCLE_PAUSE,
            refetch_unchanged: false,
            budget: RequestBudget::default(),
            storage_root: PathBuf::from("data"),
            strict: false,
            endpoints: EndpointSet::default(),
            user_agent: DEFAULT_USER_AGENT.into(),
            retry: RetryPolicy::default(),
        }
    }
}

impl CollectorConfig {
    pub fn validate(&self) -> Result<(), CollectorError> {
        if !self.include_boards.is_empty() && !self.exclude_boards.is_empty() {
            return Err(CollectorError::Config(
                "include and exclude board lists are mutually exclusive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Error)]
pub enum CollectorError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("no boards left to monitor")]
    EmptySelection,
    #[error("unknown boards: {}", join(.0))]
    UnknownBoards(Vec<BoardId>),
    #[error("board discovery failed: {0}")]
    Discovery(ApiError),
    #[error(transparent)]
    Storage(#[from] StorageError),
    #[error("shutdown requested")]
    Shutdown,
}

impl From<ShutdownSignal> for CollectorError {
    fn from(_: ShutdownSignal) -> Self {
        Self::Shutdown
    }
}

impl CollectorError {
    /// 0 ok, 2 configuration, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) | Self::EmptySelection | Self::UnknownBoards(_) => 2,
            Self::Discovery(_) | Self::Storage(_) => 3,
            Self::Shutdown => 0,
        }
    }
}

fn join(boards: &[BoardId]) -> String {
    boards
        .iter()
        .map(BoardId::as_str)
        .collect::<Vec<_>>()
        .join(",")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Selection {
    pub boards: Vec<BoardId>,
    /// Include entries that the upstream index does not advertise.
    pub unknown: Vec<BoardId>,
}

/// With an include list: the advertised subset, in include order.
/// Otherwise: everything advertised minus the excludes, sorted.
pub fn resolve_boards(
    available: &BTreeSet<BoardId>,
    include: &[BoardId],
    exclude: &[BoardId],
) -> Result<Selection, CollectorError> {
    if let Some(both) = include.iter().find(|b| exclude.contains(b)) {
        return Err(CollectorError::Config(format!(
            "board {both} is both included and excluded"
        )));
    }
    let selection = if include.is_empty() {
        Selection {
            boards: available
                .iter()
                .filter(|b| !exclude.contains(b))
                .cloned()
                .collect(),
            unknown: Vec::new(),
        }
    } else {
        let mut boards = Vec::new();
        let mut unknown = Vec::new();
        for b in include {
            if available.contains(b) {
                if !boards.contains(b) {
                    boards.push(b.clone());
                }
            } else {
                warn!("board {b} is not advertised upstream; dropping it");
                unknown.push(b.clone());
            }
        }
        Selection { boards, unknown }
    };
    if selection.boards.is_empty() {
        return Err(CollectorError::EmptySelection);
    }
    Ok(selection)
}

/// Every recovered thread becomes a Live entry whose known modification time
/// is its latest snapshot time.
pub fn seed_from_recovery(recovered: &RecoveredState) -> BTreeMap<BoardId, ThreadMap> {
    recovered
        .iter()
        .map(|(board, threads)| {
            let map = threads
                .iter()
                .map(|(no, snap)| {
                    let mut entry =
                        ThreadTrackerEntry::new(board.clone(), *no, snap.timestamp.timestamp());
                    entry.state = ThreadState::Live;
                    entry.last_snapshot_at = Some(snap.timestamp);
                    entry.snapshot_count = 1;
                    entry.pending_fetch = false;
                    (*no, entry)
                })
                .collect();
            (board.clone(), map)
        })
        .collect()
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct BoardCycleReport {
    pub board: Option<BoardId>,
    pub new: usize,
    pub live: usize,
    pub dead: usize,
    pub changed: usize,
    pub snapshots_written: usize,
    pub not_modified: usize,
    pub gone: usize,
    pub errors: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CycleReport {
    pub cycle: u64,
    pub boards: Vec<BoardCycleReport>,
    pub catalogs_written: usize,
    pub snapshots_written: usize,
    pub requests_issued: u64,
    pub thread_requests: u64,
    pub errors: usize,
    pub wall_time: Duration,
}

impl CycleReport {
    fn totals(&self) -> BoardCycleReport {
        self.boards
            .iter()
            .fold(BoardCycleReport::default(), |mut acc, b| {
                acc.new += b.new;
                acc.live += b.live;
                acc.dead += b.dead;
                acc.changed += b.changed;
                acc.not_modified += b.not_modified;
                acc.gone += b.gone;
                acc
            })
    }

    pub fn board(&self, board: &BoardId) -> Option<&BoardCycleReport> {
        self.boards.iter().find(|b| b.board.as_ref() == Some(board))
    }
}

/// One `key=value` line, as written to the info log.
impl fmt::Display for CycleReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let t = self.totals();
        write!(
            f,
            "cycle={} boards={} new={} live={} dead={} changed={} not_modified={} gone={} \
             catalogs_written={} snapshots_written={} requests={} thread_requests={} errors={} wall_ms={}",
            self.cycle,
            self.boards.len(),
            t.new,
            t.live,
            t.dead,
            t.changed,
            t.not_modified,
            t.gone,
            self.catalogs_written,
            self.snapshots_written,
            self.requests_issued,
            self.thread_requests,
            self.errors,
            self.wall_time.as_millis()
        )?;
        for b in &self.boards {
            if let Some(board) = &b.board {
                write!(
                    f,
                    " {board}.new={} {board}.live={} {board}.dead={} {board}.changed={} {board}.written={}",
                    b.new, b.live, b.dead, b.changed, b.snapshots_written
                )?;
            }
        }
        Ok(())
    }
}

pub struct Collector {
    config: CollectorConfig,
    client: ApiClient,
    layout: ArchiveLayout,
    writer: SnapshotWriter,
    clock: Arc<dyn Clock>,
    shutdown: Shutdown,
    boards: Vec<BoardId>,
    trackers: BTreeMap<BoardId, ThreadMap>,
    last_catalog_at: HashMap<BoardId, DateTime<Utc>>,
    started: bool,
    cycles: u64,
}

impl Collector {
    pub fn new(
        config: CollectorConfig,
        transport: Arc<dyn Transport>,
        clock: Arc<dyn Clock>,
        shutdown: Shutdown,
    ) -> Result<Self, CollectorError> {
        config.validate()?;
        let limiter = Arc::new(RequestLimiter::new(
            config.budget,
            clock.clone(),
            shutdown.clone(),
        ));
        let client = ApiClient::new(
            config.endpoints.clone(),
            transport,
            limiter,
            clock.clone(),
            shutdown.clone(),
        )
        .with_retry(config.retry.clone())
        .with_user_agent(config.user_agent.clone());
        Ok(Self {
            layout: ArchiveLayout::new(&config.storage_root),
            config,
            client,
            writer: SnapshotWriter::new(),
            clock,
            shutdown,
            boards: Vec::new(),
            trackers: BTreeMap::new(),
            last_catalog_at: HashMap::new(),
            started: false,
            cycles: 0,
        })
    }

    pub fn with_writer(mut self, writer: SnapshotWriter) -> Self {
        self.writer = writer;
        self
    }

    pub fn client(&self) -> &ApiClient {
        &self.client
    }

    pub fn layout(&self) -> &ArchiveLayout {
        &self.layout
    }

    pub fn boards(&self) -> &[BoardId] {
        &self.boards
    }

    pub fn tracker(&self, board: &BoardId) -> Option<&ThreadMap> {
        self.trackers.get(board)
    }

    /// Board selection, recovery and tracker seeding. Idempotent.
    pub fn start(&mut self) -> Result<(), CollectorError> {
        if self.started {
            return Ok(());
        }
        self.boards = self.select_boards()?;
        info!("monitoring boards: {}", join(&self.boards));

        let today = self.clock.utc_now().date_naive();
        let recovery = recover_state(&self.layout, today);
        if !recovery.skipped.is_empty() {
            warn!(
                "recovery skipped {} unreadable or malformed entries",
                recovery.skipped.len()
            );
        }
        let mut seeded = seed_from_recovery(&recovery.state);
        seeded.retain(|b, _| self.boards.contains(b));
        info!(
            "recovered {} thread snapshots across {} boards",
            seeded.values().map(BTreeMap::len).sum::<usize>(),
            seeded.len()
        );
        self.trackers = seeded;
        self.started = true;
        Ok(())
    }

    fn select_boards(&self) -> Result<Vec<BoardId>, CollectorError> {
        let include = &self.config.include_boards;
        let available: BTreeSet<BoardId> = match self.client.fetch_board_list() {
            Ok(list) => list.ids().cloned().collect(),
            Err(ApiError::Shutdown(_)) => return Err(CollectorError::Shutdown),
            Err(e) if !include.is_empty() => {
                warn!("board discovery failed ({e}); using the include list as given");
                include.iter().cloned().collect()
            }
            Err(e) => return Err(CollectorError::Discovery(e)),
        };
        let selection = resolve_boards(&available, include, &self.config.exclude_boards)?;
        if self.config.strict && !selection.unknown.is_empty() {
            return Err(CollectorError::UnknownBoards(selection.unknown));
        }
        Ok(selection.boards)
    }

    /// Runs cycles until shutdown. Storage failures are fatal.
    pub fn run(&mut self) -> Result<(), CollectorError> {
        match self.start() {
            Err(CollectorError::Shutdown) => return Ok(()),
            other => other?,
        }
        while !self.shutdown.is_triggered() {
            match self.run_cycle() {
                Ok(report) => info!("{report}"),
                Err(CollectorError::Shutdown) => break,
                Err(e) => {
                    error!("cycle aborted: {e}");
                    return Err(e);
                }
            }
            if self.clock.sleep(self.config.cycle_pause, &self.shutdown) {
                break;
            }
        }
        info!("shutting down after {} cycles", self.cycles);
        Ok(())
    }

    pub fn run_cycle(&mut self) -> Result<CycleReport, CollectorError> {
        self.start()?;
        let started = Instant::now();
        let requests_before = self.client.requests_issued();
        self.cycles += 1;
        let mut report = CycleReport {
            cycle: self.cycles,
            ..Default::default()
        };

        let boards = self.boards.clone();
        match self.config.scheduling_mode {
            SchedulingMode::CatalogJustInTime => {
                for board in &boards {
                    let mut br = BoardCycleReport {
                        board: Some(board.clone()),
                        ..Default::default()
                    };
                    if let Some(catalog) = self.catalog_stage(board, &mut br, &mut report)? {
                        self.thread_stage(&catalog, &mut br, &mut report)?;
                    }
                    report.boards.push(br);
                }
            }
            SchedulingMode::CatalogsUpfront => {
                let mut staged = Vec::with_capacity(boards.len());
                for board in &boards {
                    let mut br = BoardCycleReport {
                        board: Some(board.clone()),
                        ..Default::default()
                    };
                    let catalog = self.catalog_stage(board, &mut br, &mut report)?;
                    staged.push((br, catalog));
                }
                for (mut br, catalog) in staged {
                    if let Some(catalog) = catalog {
                        self.thread_stage(&catalog, &mut br, &mut report)?;
                    }
                    report.boards.push(br);
                }
            }
        }

        report.errors = report.boards.iter().map(|b| b.errors).sum();
        report.snapshots_written = report.boards.iter().map(|b| b.snapshots_written).sum();
        report.requests_issued = self.client.requests_issued() - requests_before;
        report.wall_time = started.elapsed();
        Ok(report)
    }

    fn catalog_stage(
        &mut self,
        board: &BoardId,
        br: &mut BoardCycleReport,
        report: &mut CycleReport,
    ) -> Result<Option<CatalogSnapshot>, CollectorError> {
        let outcome = self.client.fetch_catalog(board)?;
        match outcome.kind {
            FetchKind::Payload(body) => {
                let catalog = match CatalogSnapshot::parse(board.clone(), outcome.fetched_at, body)
                {
                    Ok(c) => c,
                    Err(e) => {
                        error!("/{board}/ catalog unusable: {e}");
                        br.errors += 1;
                        return Ok(None);
                    }
                };
                let ts = self.next_catalog_ts(board, outcome.fetched_at);
                let path = self.layout.catalog_path(board, ts);
                self.writer.write_snapshot(&path, &catalog.raw)?;
                self.last_catalog_at.insert(board.clone(), ts);
                report.catalogs_written += 1;
                debug!("/{board}/ catalog stored at {}", path.display());
                Ok(Some(catalog))
            }
            FetchKind::Gone => {
                error!("/{board}/ does not exist upstream; dropping it from rotation");
                self.boards.retain(|b| b != board);
                br.errors += 1;
                Ok(None)
            }
            FetchKind::NotModified => {
                warn!("/{board}/ catalog answered not-modified to an unconditional request");
                Ok(None)
            }
            FetchKind::TransientError(reason) => {
                warn!("/{board}/ catalog unavailable ({reason}); skipping board this cycle");
                br.errors += 1;
                Ok(None)
            }
        }
    }

    fn thread_stage(
        &mut self,
        catalog: &CatalogSnapshot,
        br: &mut BoardCycleReport,
        report: &mut CycleReport,
    ) -> Result<(), CollectorError> {
        let board = &catalog.board;
        let mut tracked = self.trackers.remove(board).unwrap_or_default();
        let result = self.process_board(catalog, &mut tracked, br, report);
        self.trackers.insert(board.clone(), tracked);
        result
    }

    fn process_board(
        &mut self,
        catalog: &CatalogSnapshot,
        tracked: &mut ThreadMap,
        br: &mut BoardCycleReport,
        report: &mut CycleReport,
    ) -> Result<(), CollectorError> {
        let board = &catalog.board;
        let delta = match diff_catalog(tracked, catalog) {
            Ok(d) => d,
            Err(e) => {
                error!("/{board}/ {e}");
                br.errors += 1;
                return Ok(());
            }
        };
        br.new = delta.new.len();
        br.live = delta.live.len();
        br.dead = delta.dead.len();
        br.changed = delta.changed.len();

        // one last look at threads that left the catalog
        for no in &delta.dead {
            let entry = tracked.get_mut(no).expect("dead threads are tracked");
            let validator = entry.validator.clone();
            let outcome = self.client.fetch_thread(board, *no, validator.as_deref())?;
            report.thread_requests += u64::from(outcome.attempts);
            self.handle_thread_outcome(board, entry, outcome, br)?;
        }

        if let Err(e) = apply_delta(board, tracked, &delta, catalog.fetched_at) {
            error!("/{board}/ {e}");
            br.errors += 1;
            return Ok(());
        }

        let refetch = self.config.refetch_unchanged;
        let due: Vec<u64> = tracked
            .values()
            .filter(|e| {
                !e.is_dead()
                    && (e.state == ThreadState::New
                        || e.pending_fetch
                        || (refetch && e.state == ThreadState::Live))
            })
            .map(|e| e.thread_no)
            .collect();
        for no in due {
            let entry = tracked.get_mut(&no).expect("listed above");
            // full refetch mode mirrors plain re-downloading: no validator
            let validator = if refetch {
                None
            } else {
                entry.validator.clone()
            };
            let outcome = self.client.fetch_thread(board, no, validator.as_deref())?;
            report.thread_requests += u64::from(outcome.attempts);
            self.handle_thread_outcome(board, entry, outcome, br)?;
        }
        Ok(())
    }

    fn handle_thread_outcome(
        &self,
        board: &BoardId,
        entry: &mut ThreadTrackerEntry,
        outcome: FetchOutcome,
        br: &mut BoardCycleReport,
    ) -> Result<(), CollectorError> {
        let no = entry.thread_no;
        match outcome.kind {
            FetchKind::Payload(body) => {
                let snapshot =
                    match ThreadSnapshot::parse(board.clone(), no, outcome.fetched_at, body) {
                        Ok(s) => s,
                        Err(e) => {
                            error!("/{board}/{no} unusable payload: {e}");
                            br.errors += 1;
                            return Ok(());
                        }
                    };
                let ts = self.next_thread_ts(board, entry, outcome.fetched_at);
                let path = self.layout.thread_path(board, no, ts);
                // on failure the tracker stays untouched so the fetch repeats
                self.writer.write_snapshot(&path, &snapshot.raw)?;
                record_snapshot(
                    entry,
                    SnapshotMeta {
                        fetched_at: ts,
                        validator: outcome.last_modified,
                    },
                )
                .expect("dead threads are never fetched");
                br.snapshots_written += 1;
                debug!(
                    "/{board}/{no} stored {} posts at {}",
                    snapshot.posts.len(),
                    path.display()
                );
            }
            FetchKind::NotModified => {
                record_not_modified(entry);
                br.not_modified += 1;
            }
            FetchKind::Gone => {
                debug!("/{board}/{no} is gone; marking dead");
                mark_dead(entry);
                br.gone += 1;
            }
            FetchKind::TransientError(reason) => {
                warn!("/{board}/{no} fetch failed ({reason}); will retry next cycle");
                br.errors += 1;
            }
        }
        Ok(())
    }

    /// Whole-second timestamp, strictly after the thread's previous snapshot
    /// and not colliding with an existing file.
    fn next_thread_ts(
        &self,
        board: &BoardId,
        entry: &ThreadTrackerEntry,
        fetched_at: DateTime<Utc>,
    ) -> DateTime<Utc> {
        let mut ts = truncate_to_second(fetched_at);
        if let Some(last) = entry.last_snapshot_at {
            if ts <= last {
                ts = last + chrono::Duration::seconds(1);
            }
        }
        while self.layout.thread_path(board, entry.thread_no, ts).exists() {
            ts += chrono::Duration::seconds(1);
        }
        ts
    }

    fn next_catalog_ts(&self, board: &BoardId, fetched_at: DateTime<Utc>) -> DateTime<Utc> {
        let mut ts = truncate_to_second(fetched_at);
        if let Some(last) = self.last_catalog_at.get(board) {
            if ts <= *last {
                ts = *last + chrono::Duration::seconds(1);
            }
        }
        while self.layout.catalog_path(board, ts).exists() {
            ts += chrono::Duration::seconds(1);
        }
        ts
    }
}

fn truncate_to_second(t: DateTime<Utc>) -> DateTime<Utc> {
    DateTime::from_timestamp(t.timestamp(), 0).expect("in range")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::mock_board::{BoardScript, MockBoard, PostFragment};
    use crate::storage::RecoveredSnapshot;
    use chrono::TimeZone;

    const T0: i64 = 1_709_280_000; // 2024-03-01T08:00:00Z

    fn b(s: &str) -> BoardId {
        BoardId::new(s).unwrap()
    }

    fn set(v: &[&str]) -> BTreeSet<BoardId> {
        v.iter().map(|s| b(s)).collect()
    }

    #[test]
    fn resolve_whole_site() {
        let s = resolve_boards(&set(&["pol", "a", "b"]), &[], &[]).unwrap();
        assert_eq!(s.boards, vec![b("a"), b("b"), b("pol")]);
    }

    #[test]
    fn resolve_include() {
        let s = resolve_boards(&set(&["a", "b", "pol"]), &[b("pol")], &[]).unwrap();
        assert_eq!(s.boards, vec![b("pol")]);
        let s =
            resolve_boards(&set(&["a", "b", "pol"]), &[b("pol"), b("zz"), b("a")], &[]).unwrap();
        assert_eq!(s.boards, vec![b("pol"), b("a")]);
        assert_eq!(s.unknown, vec![b("zz")]);
    }

    #[test]
    fn resolve_exclude() {
        let s = resolve_boards(&set(&["a", "b", "pol"]), &[], &[b("b")]).unwrap();
        assert_eq!(s.boards, vec![b("a"), b("pol")]);
    }

    #[test]
    fn resolve_errors() {
        assert!(matches!(
            resolve_boards(&set(&["a"]), &[b("zz")], &[]),
            Err(CollectorError::EmptySelection)
        ));
        assert!(matches!(
            resolve_boards(&set(&["a"]), &[], &[b("a")]),
            Err(CollectorError::EmptySelection)
        ));
        let err = resolve_boards(&set(&["a"]), &[b("a")], &[b("a")]).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }

    #[test]
    fn seeding_marks_recovered_threads_live() {
        let ts = Utc.timestamp_opt(T0, 0).unwrap();
        let mut rec = RecoveredState::new();
        rec.entry(b("b")).or_default().insert(
            7,
            RecoveredSnapshot {
                timestamp: ts,
                path: PathBuf::from("x"),
            },
        );
        let seeded = seed_from_recovery(&rec);
        let e = &seeded[&b("b")][&7];
        assert_eq!(e.state, ThreadState::Live);
        assert_eq!(e.known_last_modified, T0);
        assert_eq!(e.last_snapshot_at, Some(ts));
        assert!(!e.pending_fetch);
        assert!(seed_from_recovery(&RecoveredState::new()).is_empty());
    }

    fn op(text: &str) -> PostFragment {
        PostFragment {
            com: Some(text.into()),
            ..Default::default()
        }
    }

    fn setup(script: BoardScript, root: &std::path::Path) -> (Arc<MockBoard>, Collector) {
        let clock = VirtualClock::new(T0);
        let mock = Arc::new(MockBoard::new(script, clock.clone()).unwrap());
        let config = CollectorConfig {
            storage_root: root.to_path_buf(),
            budget: RequestBudget::new(Duration::from_millis(1), 1).unwrap(),
            retry: RetryPolicy::none(),
            cycle_pause: Duration::ZERO,
            ..Default::default()
        };
        let collector =
            Collector::new(config, mock.clone(), Arc::new(clock), Shutdown::new()).unwrap();
        (mock, collector)
    }

    #[test]
    fn cold_start_then_quiet_cycle() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()])
            .create(T0 - 100, &g, 1, op("one"))
            .create(T0 - 50, &g, 2, op("two"));
        let (mock, mut c) = setup(script, dir.path());
        let r1 = c.run_cycle().unwrap();
        assert_eq!(r1.board(&g).unwrap().new, 2);
        assert_eq!(r1.snapshots_written, 2);
        assert_eq!(r1.catalogs_written, 1);
        assert!(r1.snapshots_written as u64 <= r1.requests_issued);
        mock.clock().advance(60);
        let r2 = c.run_cycle().unwrap();
        assert_eq!(r2.snapshots_written, 0);
        assert_eq!(r2.thread_requests, 0);
        assert_eq!(r2.requests_issued, 1);
        assert!(c
            .tracker(&g)
            .unwrap()
            .values()
            .all(|e| e.state == ThreadState::Live));
        assert!(r2.to_string().starts_with("cycle=2 boards=1 new=0 live=2"));
    }

    #[test]
    fn pruned_thread_gets_final_fetch_and_dies() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()])
            .create(T0 - 100, &g, 1, op("one"))
            .create(T0 - 50, &g, 2, op("two"))
            .prune(T0 + 30, &g, 2);
        let (mock, mut c) = setup(script, dir.path());
        c.run_cycle().unwrap();
        mock.clock().advance(60);
        mock.clear_log();
        let r = c.run_cycle().unwrap();
        let br = r.board(&g).unwrap();
        assert_eq!((br.dead, br.gone, br.snapshots_written), (1, 1, 0));
        assert_eq!(c.tracker(&g).unwrap()[&2].state, ThreadState::Dead);
        let paths: Vec<String> = mock.request_log().into_iter().map(|r| r.path).collect();
        assert_eq!(paths, ["/g/threads.json", "/g/thread/2.json"]);
        // dead threads are never fetched again
        mock.clock().advance(60);
        mock.clear_log();
        c.run_cycle().unwrap();
        assert_eq!(mock.request_log().len(), 1);
    }

    #[test]
    fn gone_thread_does_not_block_new_ones() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()])
            .create(T0 - 100, &g, 1, op("one"))
            .create(T0 + 10, &g, 3, op("three"))
            .prune(T0 + 20, &g, 1);
        let (mock, mut c) = setup(script, dir.path());
        c.run_cycle().unwrap();
        mock.clock().advance(60);
        let r = c.run_cycle().unwrap();
        let br = r.board(&g).unwrap();
        assert_eq!((br.new, br.dead, br.gone, br.errors), (1, 1, 1, 0));
        assert_eq!(br.snapshots_written, 1);
        let t = c.tracker(&g).unwrap();
        assert_eq!(t[&1].state, ThreadState::Dead);
        assert_eq!(t[&3].state, ThreadState::Live);
    }

    #[test]
    fn bump_writes_exactly_one_snapshot() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()])
            .create(T0 - 100, &g, 1, op("one"))
            .create(T0 - 50, &g, 2, op("two"))
            .reply(T0 + 30, &g, 1, op("bump"));
        let (mock, mut c) = setup(script, dir.path());
        c.run_cycle().unwrap();
        mock.clock().advance(60);
        let r = c.run_cycle().unwrap();
        let br = r.board(&g).unwrap();
        assert_eq!(br.changed, 1);
        assert_eq!(br.snapshots_written, 1);
        assert_eq!(c.tracker(&g).unwrap()[&1].snapshot_count, 2);
    }

    #[test]
    fn transient_failures_keep_threads_pending() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()]).create(T0 - 100, &g, 1, op("one"));
        let (mock, mut c) = setup(script, dir.path());
        mock.inject_failures("/g/thread/1.json", 1);
        let r = c.run_cycle().unwrap();
        assert_eq!(r.errors, 1);
        assert_eq!(c.tracker(&g).unwrap()[&1].state, ThreadState::New);
        mock.clock().advance(60);
        let r = c.run_cycle().unwrap();
        assert_eq!(r.snapshots_written, 1);
        assert_eq!(c.tracker(&g).unwrap()[&1].state, ThreadState::Live);

        mock.inject_failures("/g/threads.json", 1);
        mock.clock().advance(60);
        let r = c.run_cycle().unwrap();
        assert_eq!(r.catalogs_written, 0);
        assert_eq!(r.errors, 1);
    }

    #[test]
    fn missing_board_is_dropped() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()]).create(T0 - 100, &g, 1, op("one"));
        let clock = VirtualClock::new(T0);
        let mock = Arc::new(MockBoard::new(script, clock.clone()).unwrap());
        // discovery fails over to the include list, which names a board the mock lacks
        mock.inject_failures("/boards.json", 1);
        let config = CollectorConfig {
            include_boards: vec![g.clone(), b("zz")],
            storage_root: dir.path().to_path_buf(),
            budget: RequestBudget::new(Duration::from_millis(1), 1).unwrap(),
            retry: RetryPolicy::none(),
            ..Default::default()
        };
        let mut c = Collector::new(config, mock, Arc::new(clock), Shutdown::new()).unwrap();
        let r = c.run_cycle().unwrap();
        assert_eq!(r.errors, 1);
        assert_eq!(c.boards(), &[g]);
    }

    #[test]
    fn discovery_failure_without_include_is_io_error() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let (mock, mut c) = setup(BoardScript::new(vec![g]), dir.path());
        mock.inject_failures("/boards.json", 1);
        let err = c.start().unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn storage_failure_aborts_cycle_without_tracker_update() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()]).create(T0 - 100, &g, 1, op("one"));
        let (_mock, c) = setup(script, dir.path());
        let mut c = c.with_writer(SnapshotWriter::with_fault_hook(Arc::new(|p| {
            p.to_string_lossy().contains("/threads/")
        })));
        let err = c.run_cycle().unwrap_err();
        assert_eq!(err.exit_code(), 3);
        let e = &c.tracker(&g).unwrap()[&1];
        assert_eq!((e.state, e.snapshot_count), (ThreadState::New, 0));
    }

    #[test]
    fn restart_does_not_duplicate() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()])
            .create(T0 - 100, &g, 1, op("one"))
            .create(T0 - 50, &g, 2, op("two"))
            .reply(T0 + 90, &g, 2, op("later"));
        let (mock, mut c) = setup(script.clone(), dir.path());
        c.run_cycle().unwrap();
        drop(c);

        let clock = mock.clock().clone();
        clock.advance(60);
        let config = CollectorConfig {
            storage_root: dir.path().to_path_buf(),
            budget: RequestBudget::new(Duration::from_millis(1), 1).unwrap(),
            ..Default::default()
        };
        let mut c = Collector::new(
            config,
            mock.clone(),
            Arc::new(clock.clone()),
            Shutdown::new(),
        )
        .unwrap();
        let r = c.run_cycle().unwrap();
        assert_eq!(r.snapshots_written, 0);
        assert_eq!(r.board(&g).unwrap().live, 2);
        clock.advance(60);
        let r = c.run_cycle().unwrap();
        assert_eq!(r.snapshots_written, 1);
    }

    #[test]
    fn shutdown_stops_the_loop() {
        let dir = tempfile::tempdir().unwrap();
        let g = b("g");
        let script = BoardScript::new(vec![g.clone()]).create(T0 - 100, &g, 1, op("one"));
        let clock = VirtualClock::new(T0);
        let mock = Arc::new(MockBoard::new(script, clock.clone()).unwrap());
        let sd = Shutdown::new();
        let config = CollectorConfig {
            storage_root: dir.path().to_path_buf(),
            budget: RequestBudget::new(Duration::from_millis(1), 1).unwrap(),
            cycle_pause: Duration::from_secs(3600),
            ..Default::default()
        };
        let mut c = Collector::new(config, mock, Arc::new(clock), sd.clone()).unwrap();
        let trigger = sd.clone();
        let h = std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(100));
            trigger.trigger();
        });
        let started = Instant::now();
        c.run().unwrap();
        h.join().unwrap();
        assert!(started.elapsed() < Duration::from_secs(10));
    }
}
