#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::Rng;
use sha2::{Digest, Sha256};

use ftct_core::api_client::{RetryPolicy, Transport};
use ftct_core::mock_board::{
    Attachment, BoardScript, EventKind, MockBoard, PostFragment, ScriptEvent,
};
use ftct_core::storage::SnapshotWriter;
use ftct_core::{BoardId, Collector, CollectorConfig, RequestBudget, Shutdown, VirtualClock};

/// 2024-03-01T08:00:00Z; every scenario stays inside that UTC day.
pub const T0: i64 = 1_709_280_000;
pub const CYCLE_SECS: i64 = 60;

pub fn b(s: &str) -> BoardId {
    BoardId::new(s).unwrap()
}

pub fn verdict(n: u32, name: &str, ok: bool, detail: impl std::fmt::Display) {
    println!(
        "criterion {n} {name}: {} ({detail})",
        if ok { "PASS" } else { "FAIL" }
    );
}

pub fn text(com: &str) -> PostFragment {
    PostFragment {
        com: Some(com.into()),
        ..Default::default()
    }
}

pub fn with_image(com: &str, tim: u64, ext: &str) -> PostFragment {
    PostFragment {
        com: Some(com.into()),
        attachment: Some(Attachment {
            filename: format!("img{tim}"),
            ext: ext.into(),
            tim,
            width: 640,
            height: 480,
            md5: "AAAAAAAAAAAAAAAAAAAAAA==".into(),
            fsize: 12345,
        }),
        ..Default::default()
    }
}

fn random_post(rng: &mut StdRng, label: String) -> PostFragment {
    if rng.gen_bool(0.3) {
        let ext = *[".jpg", ".png", ".gif", ".webm"].choose(rng).unwrap();
        with_image(
            &label,
            1_700_000_000_000 + rng.gen_range(0..1_000_000u64),
            ext,
        )
    } else {
        text(&label)
    }
}

/// Random valid script: at most 3 boards, 30 threads and 100 events, spread
/// over `cycles` cycle windows starting a little before `T0`.
pub fn random_script(rng: &mut StdRng, cycles: i64) -> BoardScript {
    let pool = ["a", "g", "pol", "tv", "x"];
    let n_boards = rng.gen_range(1..=3);
    let boards: Vec<BoardId> = pool.choose_multiple(rng, n_boards).map(|s| b(s)).collect();
    let n_threads = rng.gen_range(1..=30usize);
    let horizon = T0 + cycles * CYCLE_SECS;
    // each thread costs a create and possibly a removal
    let mut reply_budget = 100 - 2 * n_threads;

    // (at, rank, event) with rank keeping create < reply < removal at equal times
    let mut events: Vec<(i64, u8, ScriptEvent)> = Vec::new();
    let mut used: BTreeSet<(BoardId, u64)> = BTreeSet::new();
    for i in 0..n_threads {
        let board = boards.choose(rng).unwrap().clone();
        let no = loop {
            let no = rng.gen_range(1..5_000u64);
            if used.insert((board.clone(), no)) {
                break no;
            }
        };
        let created = rng.gen_range(T0 - 2 * CYCLE_SECS..horizon);
        events.push((
            created,
            0,
            ScriptEvent {
                at: created,
                kind: EventKind::CreateThread,
                board: board.clone(),
                thread_no: no,
                post: Some(random_post(rng, format!("op {i}"))),
            },
        ));
        let removed = if rng.gen_bool(0.4) {
            Some(rng.gen_range(created + 1..horizon + CYCLE_SECS))
        } else {
            None
        };
        let last = removed.unwrap_or(horizon + CYCLE_SECS);
        let share = if i + 1 == n_threads {
            reply_budget
        } else {
            rng.gen_range(0..=reply_budget.min(8))
        };
        reply_budget -= share;
        for r in 0..share {
            let at = rng.gen_range(created..last);
            events.push((
                at,
                1,
                ScriptEvent {
                    at,
                    kind: EventKind::AddPost,
                    board: board.clone(),
                    thread_no: no,
                    post: Some(random_post(rng, format!("reply {i}.{r}"))),
                },
            ));
        }
        if let Some(at) = removed {
            let kind = if rng.gen_bool(0.5) {
                EventKind::Prune
            } else {
                EventKind::Delete
            };
            events.push((
                at,
                2,
                ScriptEvent {
                    at,
                    kind,
                    board,
                    thread_no: no,
                    post: None,
                },
            ));
        }
    }
    events.sort_by_key(|(at, rank, _)| (*at, *rank));
    let script = BoardScript {
        boards,
        events: events.into_iter().map(|(_, _, e)| e).collect(),
    };
    script.validate().expect("generator produces valid scripts");
    script
}

pub fn test_config(root: &Path, interval: Duration) -> CollectorConfig {
    CollectorConfig {
        storage_root: root.to_path_buf(),
        budget: RequestBudget::new(interval, 1).unwrap(),
        retry: RetryPolicy::none(),
        cycle_pause: Duration::ZERO,
        ..Default::default()
    }
}

pub fn collector(
    config: CollectorConfig,
    transport: Arc<dyn Transport>,
    clock: &VirtualClock,
) -> Collector {
    Collector::new(config, transport, Arc::new(clock.clone()), Shutdown::new()).unwrap()
}

/// Virtual time of cycle `k` (0-based).
pub fn cycle_time(k: i64) -> i64 {
    T0 + k * CYCLE_SECS
}

/// How a crawl is interrupted.
#[derive(Debug, Clone, Copy)]
pub enum Crash {
    None,
    /// Process dies after this many complete cycles.
    AfterCycle(i64),
    /// The n-th snapshot write of the whole run fails and the process dies.
    AtWrite(usize),
}

/// Runs `cycles` cycles against a fresh mock of `script`, restarting the
/// collector once according to `crash`.
pub fn crawl(script: &BoardScript, root: &Path, cycles: i64, crash: Crash) -> Arc<MockBoard> {
    let clock = VirtualClock::new(T0);
    let mock = Arc::new(MockBoard::new(script.clone(), clock.clone()).unwrap());
    let config = test_config(root, Duration::from_millis(1));
    let fresh = || collector(config.clone(), mock.clone(), &clock);

    let mut c = match crash {
        Crash::AtWrite(n) => {
            let writes = Arc::new(std::sync::atomic::AtomicUsize::new(0));
            let hook =
                move |_: &Path| writes.fetch_add(1, std::sync::atomic::Ordering::SeqCst) + 1 == n;
            fresh().with_writer(SnapshotWriter::with_fault_hook(Arc::new(hook)))
        }
        _ => fresh(),
    };
    let mut k = 0;
    while k < cycles {
        clock.set(cycle_time(k));
        match c.run_cycle() {
            Ok(_) => {
                k += 1;
                if matches!(crash, Crash::AfterCycle(n) if n == k) {
                    c = fresh();
                }
            }
            // the same cycle is attempted again by the restarted process
            Err(_) => c = fresh(),
        }
    }
    mock
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// All regular files below `root`, relative, with `/` separators.
pub fn tree(root: &Path) -> BTreeSet<String> {
    fn walk(dir: &Path, root: &Path, out: &mut BTreeSet<String>) {
        for e in fs::read_dir(dir).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                walk(&p, root, out);
            } else {
                let rel = p.strip_prefix(root).unwrap();
                out.insert(
                    rel.components()
                        .map(|c| c.as_os_str().to_string_lossy().into_owned())
                        .collect::<Vec<_>>()
                        .join("/"),
                );
            }
        }
    }
    let mut out = BTreeSet::new();
    if root.exists() {
        walk(root, root, &mut out);
    }
    out
}

/// Thread snapshot files as (board, thread_no, path), found by walking
/// `saves/*/threads/*/` and splitting names on the first `_`.
pub fn thread_files(root: &Path) -> Vec<(String, u64, PathBuf)> {
    let mut out = Vec::new();
    for rel in tree(root) {
        let parts: Vec<&str> = rel.split('/').collect();
        if parts.len() == 5
            && parts[0] == "saves"
            && parts[2] == "threads"
            && !parts[4].starts_with('.')
        {
            let (no, _) = parts[4].split_once('_').unwrap();
            out.push((parts[3].to_string(), no.parse().unwrap(), root.join(&rel)));
        }
    }
    out
}

pub fn content_set(root: &Path) -> BTreeSet<(u64, String)> {
    thread_files(root)
        .into_iter()
        .map(|(_, no, p)| (no, sha256_hex(&fs::read(p).unwrap())))
        .collect()
}

pub fn board_content_set(root: &Path) -> BTreeSet<(String, u64, String)> {
    thread_files(root)
        .into_iter()
        .map(|(board, no, p)| (board, no, sha256_hex(&fs::read(p).unwrap())))
        .collect()
}

pub fn count_by_thread(root: &Path) -> BTreeMap<(String, u64), usize> {
    let mut m = BTreeMap::new();
    for (board, no, _) in thread_files(root) {
        *m.entry((board, no)).or_default() += 1;
    }
    m
}
