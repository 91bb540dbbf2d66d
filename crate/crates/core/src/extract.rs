//! Offline utilities over a stored archive. Nothing here touches the network.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use log::warn;

use crate::api_client::{BoardId, EndpointSet};
use crate::lifecycle::CatalogSnapshot;
use crate::storage::{
    is_temp_file, parse_date, ArchiveLayout, CatalogFileName, SnapshotFileName, ThreadSnapshot,
    CATALOGS_DIR, THREADS_DIR,
};

fn valid_token(token: &str) -> bool {
    !token.is_empty() && token.bytes().all(|b| b.is_ascii_digit())
}

fn valid_ext(ext: &str) -> bool {
    ext.len() >= 2
        && ext.len() <= 11
        && ext.starts_with('.')
        && ext[1..].bytes().all(|b| b.is_ascii_alphanumeric())
}

/// Media URLs for every post carrying both a rename token and an extension,
/// in post order.
pub fn extract_image_links(snapshot: &ThreadSnapshot, endpoints: &EndpointSet) -> Vec<String> {
    let mut links = Vec::new();
    for post in &snapshot.posts {
        match (&post.attachment_token, &post.attached_ext) {
            (None, None) => {}
            (Some(token), Some(ext)) if valid_token(token) && valid_ext(ext) => {
                links.push(endpoints.media_url(&snapshot.board, token, ext));
            }
            (token, ext) => warn!(
                "/{}/{} post {}: unusable attachment fields (tim={token:?}, ext={ext:?})",
                snapshot.board, snapshot.thread_no, post.post_no
            ),
        }
    }
    links
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub path: PathBuf,
    pub problem: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerifyReport {
    pub partitions: usize,
    pub catalog_files: usize,
    pub thread_files: usize,
    pub threads: usize,
    pub log_files: usize,
    /// Leftovers of interrupted writes; not violations.
    pub temp_files: usize,
    pub violations: Vec<Violation>,
}

impl VerifyReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }

    fn flag(&mut self, path: &Path, problem: impl Into<String>) {
        self.violations.push(Violation {
            path: path.to_path_buf(),
            problem: problem.into(),
        });
    }
}

impl fmt::Display for VerifyReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let rows = [
            ("partitions", self.partitions),
            ("catalog files", self.catalog_files),
            ("thread files", self.thread_files),
            ("threads", self.threads),
            ("log files", self.log_files),
            ("temp files", self.temp_files),
            ("violations", self.violations.len()),
        ];
        for (label, n) in rows {
            writeln!(f, "{label:<14} {n:>8}")?;
        }
        for v in &self.violations {
            writeln!(f, "VIOLATION {}: {}", v.path.display(), v.problem)?;
        }
        Ok(())
    }
}

fn sorted_entries(dir: &Path, report: &mut VerifyReport) -> Vec<(String, PathBuf)> {
    let rd = match fs::read_dir(dir) {
        Ok(rd) => rd,
        Err(e) => {
            report.flag(dir, format!("unreadable: {e}"));
            return Vec::new();
        }
    };
    let mut out: Vec<(String, PathBuf)> = rd
        .filter_map(Result::ok)
        .map(|e| (e.file_name().to_string_lossy().into_owned(), e.path()))
        .collect();
    out.sort();
    out
}

type SnapshotsByThread = BTreeMap<(BoardId, u64), Vec<(DateTime<Utc>, PathBuf)>>;

/// Checks names, parseability and per-thread timestamp order of every file
/// under `<root>/saves`.
pub fn verify_archive(root: &Path) -> VerifyReport {
    let layout = ArchiveLayout::new(root);
    let mut report = VerifyReport::default();
    let mut per_thread = SnapshotsByThread::new();

    if layout.logs_dir().is_dir() {
        for (name, path) in sorted_entries(&layout.logs_dir(), &mut report) {
            if name.starts_with("info_log") || name.starts_with("debug_log") {
                report.log_files += 1;
            } else {
                report.flag(&path, "unexpected file in logs directory");
            }
        }
    }

    let saves = layout.saves_dir();
    if !saves.is_dir() {
        report.flag(&saves, "missing saves directory");
        return report;
    }
    for (name, part_path) in sorted_entries(&saves, &mut report) {
        let Some(date) = parse_date(&name).filter(|_| part_path.is_dir()) else {
            report.flag(&part_path, "not a YYYY-MM-DD partition directory");
            continue;
        };
        report.partitions += 1;
        for (sub, sub_path) in sorted_entries(&part_path, &mut report) {
            match sub.as_str() {
                CATALOGS_DIR => verify_catalogs(&sub_path, date, &mut report),
                THREADS_DIR => verify_threads(&sub_path, date, &mut report, &mut per_thread),
                _ => report.flag(&sub_path, "unexpected entry in partition"),
            }
        }
    }

    report.threads = per_thread.len();
    for ((board, no), mut snaps) in per_thread {
        // partition order then name order; equal or decreasing stamps are violations
        snaps.sort_by(|a, b| a.1.cmp(&b.1));
        for w in snaps.windows(2) {
            if w[1].0 <= w[0].0 {
                report.flag(
                    &w[1].1,
                    format!("/{board}/{no}: timestamp not after {}", w[0].1.display()),
                );
            }
        }
    }
    report
}

fn verify_catalogs(dir: &Path, date: NaiveDate, report: &mut VerifyReport) {
    for (name, path) in sorted_entries(dir, report) {
        if is_temp_file(&name) {
            report.temp_files += 1;
            continue;
        }
        let parsed = match name.parse::<CatalogFileName>() {
            Ok(p) => p,
            Err(e) => {
                report.flag(&path, e.to_string());
                continue;
            }
        };
        report.catalog_files += 1;
        if parsed.timestamp.date_naive() != date {
            report.flag(&path, "timestamp outside its date partition");
        }
        match fs::read(&path) {
            Ok(raw) => {
                if let Err(e) = CatalogSnapshot::parse(parsed.board, parsed.timestamp, raw) {
                    report.flag(&path, format!("catalog does not parse: {e}"));
                }
            }
            Err(e) => report.flag(&path, format!("unreadable: {e}")),
        }
    }
}

fn verify_threads(
    dir: &Path,
    date: NaiveDate,
    report: &mut VerifyReport,
    per_thread: &mut SnapshotsByThread,
) {
    for (board_name, board_path) in sorted_entries(dir, report) {
        let board = match BoardId::new(&board_name) {
            Ok(b) if board_path.is_dir() => b,
            _ => {
                report.flag(&board_path, "not a board directory");
                continue;
            }
        };
        for (name, path) in sorted_entries(&board_path, report) {
            if is_temp_file(&name) {
                report.temp_files += 1;
                continue;
            }
            let parsed = match name.parse::<SnapshotFileName>() {
                Ok(p) => p,
                Err(e) => {
                    report.flag(&path, e.to_string());
                    continue;
                }
            };
            report.thread_files += 1;
            if parsed.timestamp.date_naive() != date {
                report.flag(&path, "timestamp outside its date partition");
            }
            match fs::read(&path) {
                Ok(raw) => {
                    if let Err(e) = ThreadSnapshot::parse(
                        board.clone(),
                        parsed.thread_no,
                        parsed.timestamp,
                        raw,
                    ) {
                        report.flag(&path, format!("snapshot does not parse: {e}"));
                    }
                }
                Err(e) => report.flag(&path, format!("unreadable: {e}")),
            }
            per_thread
                .entry((board.clone(), parsed.thread_no))
                .or_default()
                .push((parsed.timestamp, path));
        }
    }
}

/// Every thread snapshot file in the archive, ordered by partition, board,
/// then file name.
pub fn thread_snapshot_files(root: &Path) -> Vec<(BoardId, SnapshotFileName, PathBuf)> {
    let layout = ArchiveLayout::new(root);
    let mut scratch = VerifyReport::default();
    let mut out = Vec::new();
    if !layout.saves_dir().is_dir() {
        return out;
    }
    for (name, _) in sorted_entries(&layout.saves_dir(), &mut scratch) {
        let Some(date) = parse_date(&name) else {
            continue;
        };
        let threads = layout.threads_dir(date);
        if !threads.is_dir() {
            continue;
        }
        for (board_name, board_path) in sorted_entries(&threads, &mut scratch) {
            let Ok(board) = BoardId::new(&board_name) else {
                continue;
            };
            for (file, path) in sorted_entries(&board_path, &mut scratch) {
                if let Ok(parsed) = file.parse::<SnapshotFileName>() {
                    out.push((board.clone(), parsed, path));
                }
            }
        }
    }
    out
}

/// Links from every stored thread snapshot, first occurrence order, no duplicates.
pub fn extract_archive_links(root: &Path, endpoints: &EndpointSet) -> Vec<String> {
    let mut seen = HashSet::new();
    let mut links = Vec::new();
    for (board, name, path) in thread_snapshot_files(root) {
        let raw = match fs::read(&path) {
            Ok(r) => r,
            Err(e) => {
                warn!("cannot read {}: {e}", path.display());
                continue;
            }
        };
        match ThreadSnapshot::parse(board, name.thread_no, name.timestamp, raw) {
            Ok(snapshot) => {
                for link in extract_image_links(&snapshot, endpoints) {
                    if seen.insert(link.clone()) {
                        links.push(link);
                    }
                }
            }
            Err(e) => warn!("skipping {}: {e}", path.display()),
        }
    }
    links
}
