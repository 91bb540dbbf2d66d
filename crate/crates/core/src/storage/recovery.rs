use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use log::{debug, warn};

use super::layout::{ArchiveLayout, SnapshotFileName};
use super::writer::is_temp_file;
use crate::api_client::BoardId;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecoveredSnapshot {
    pub timestamp: DateTime<Utc>,
    pub path: PathBuf,
}

pub type RecoveredState = BTreeMap<BoardId, BTreeMap<u64, RecoveredSnapshot>>;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Recovery {
    pub state: RecoveredState,
    /// Entries that were ignored: malformed names, unreadable directories.
    pub skipped: Vec<PathBuf>,
}

impl Recovery {
    pub fn snapshot_count(&self) -> usize {
        self.state.values().map(BTreeMap::len).sum()
    }
}

fn entries(dir: &Path, skipped: &mut Vec<PathBuf>) -> Vec<fs::DirEntry> {
    match fs::read_dir(dir) {
        Ok(rd) => rd
            .filter_map(|e| match e {
                Ok(e) => Some(e),
                Err(err) => {
                    warn!("recovery: unreadable entry in {}: {err}", dir.display());
                    skipped.push(dir.to_path_buf());
                    None
                }
            })
            .collect(),
        Err(err) if err.kind() == std::io::ErrorKind::NotFound => Vec::new(),
        Err(err) => {
            warn!("recovery: cannot read {}: {err}", dir.display());
            skipped.push(dir.to_path_buf());
            Vec::new()
        }
    }
}

/// Rebuilds the latest snapshot per (board, thread) from file names in the
/// `today` partition. File bodies are never opened.
pub fn recover_state(layout: &ArchiveLayout, today: NaiveDate) -> Recovery {
    let mut rec = Recovery::default();
    let threads_dir = layout.threads_dir(today);
    for board_entry in entries(&threads_dir, &mut rec.skipped) {
        let board_path = board_entry.path();
        if !board_path.is_dir() {
            warn!("recovery: ignoring non-directory {}", board_path.display());
            rec.skipped.push(board_path);
            continue;
        }
        let name = board_entry.file_name();
        let Some(board) = name.to_str().and_then(|s| BoardId::new(s).ok()) else {
            warn!("recovery: ignoring directory {}", board_path.display());
            rec.skipped.push(board_path);
            continue;
        };
        for file in entries(&board_path, &mut rec.skipped) {
            let path = file.path();
            let fname = file.file_name();
            let fname = fname.to_string_lossy();
            if is_temp_file(&fname) {
                debug!("recovery: ignoring interrupted write {}", path.display());
                continue;
            }
            match fname.parse::<SnapshotFileName>() {
                Ok(parsed) => {
                    let slot = rec.state.entry(board.clone()).or_default();
                    let newer = slot
                        .get(&parsed.thread_no)
                        .is_none_or(|cur| parsed.timestamp > cur.timestamp);
                    if newer {
                        slot.insert(
                            parsed.thread_no,
                            RecoveredSnapshot {
                                timestamp: parsed.timestamp,
                                path,
                            },
                        );
                    }
                }
                Err(e) => {
                    warn!("recovery: skipping {}: {e}", path.display());
                    rec.skipped.push(path);
                }
            }
        }
    }
    rec
}
