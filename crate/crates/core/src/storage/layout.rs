//! Path algebra for the on-disk archive.
//!
//! ```text
//! <root>/logs/info_log<ts>.log
//! <root>/logs/debug_log<ts>.log
//! <root>/saves/<YYYY-MM-DD>/threads_on_boards/<board><ts>.json
//! <root>/saves/<YYYY-MM-DD>/threads/<board>/<thread_no>_<ts>.json
//! ```
//!
//! `<ts>` is the UTC instant rendered as `YYYY-MM-DD_hh-mm-ss`.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Utc};
use thiserror::Error;

use crate::api_client::BoardId;

pub const TIMESTAMP_FORMAT: &str = "%Y-%m-%d_%H-%M-%S";
pub const DATE_FORMAT: &str = "%Y-%m-%d";
const TIMESTAMP_LEN: usize = 19;

pub const SAVES_DIR: &str = "saves";
pub const LOGS_DIR: &str = "logs";
pub const CATALOGS_DIR: &str = "threads_on_boards";
pub const THREADS_DIR: &str = "threads";

pub fn render_timestamp(ts: DateTime<Utc>) -> String {
    ts.format(TIMESTAMP_FORMAT).to_string()
}

pub fn parse_timestamp(s: &str) -> Option<DateTime<Utc>> {
    if s.len() != TIMESTAMP_LEN {
        return None;
    }
    NaiveDateTime::parse_from_str(s, TIMESTAMP_FORMAT)
        .ok()
        .map(|n| n.and_utc())
}

pub fn render_date(date: NaiveDate) -> String {
    date.format(DATE_FORMAT).to_string()
}

pub fn parse_date(s: &str) -> Option<NaiveDate> {
    if s.len() != 10 {
        return None;
    }
    NaiveDate::parse_from_str(s, DATE_FORMAT).ok()
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("not a snapshot file name: {0:?}")]
pub struct BadFileName(pub String);

/// `<thread_no>_<ts>.json`
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct SnapshotFileName {
    pub thread_no: u64,
    pub timestamp: DateTime<Utc>,
}

impl fmt::Display for SnapshotFileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{}_{}.json",
            self.thread_no,
            render_timestamp(self.timestamp)
        )
    }
}

impl FromStr for SnapshotFileName {
    type Err = BadFileName;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        let bad = || BadFileName(name.to_owned());
        let stem = name.strip_suffix(".json").ok_or_else(bad)?;
        let (no, ts) = stem.split_once('_').ok_or_else(bad)?;
        if no.is_empty() || !no.bytes().all(|b| b.is_ascii_digit()) || no.starts_with('0') {
            return Err(bad());
        }
        let thread_no = no.parse::<u64>().map_err(|_| bad())?;
        let timestamp = parse_timestamp(ts).ok_or_else(bad)?;
        Ok(Self {
            thread_no,
            timestamp,
        })
    }
}

/// `<board><ts>.json`
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CatalogFileName {
    pub board: BoardId,
    pub timestamp: DateTime<Utc>,
}

impl fmt::Display for CatalogFileName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}.json", self.board, render_timestamp(self.timestamp))
    }
}

impl FromStr for CatalogFileName {
    type Err = BadFileName;

    fn from_str(name: &str) -> Result<Self, Self::Err> {
        let bad = || BadFileName(name.to_owned());
        let stem = name.strip_suffix(".json").ok_or_else(bad)?;
        if stem.len() <= TIMESTAMP_LEN || !stem.is_char_boundary(stem.len() - TIMESTAMP_LEN) {
            return Err(bad());
        }
        let (board, ts) = stem.split_at(stem.len() - TIMESTAMP_LEN);
        Ok(Self {
            board: BoardId::new(board).map_err(|_| bad())?,
            timestamp: parse_timestamp(ts).ok_or_else(bad)?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchiveLayout {
    root: PathBuf,
}

impl ArchiveLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn logs_dir(&self) -> PathBuf {
        self.root.join(LOGS_DIR)
    }

    pub fn saves_dir(&self) -> PathBuf {
        self.root.join(SAVES_DIR)
    }

    pub fn partition_dir(&self, date: NaiveDate) -> PathBuf {
        self.saves_dir().join(render_date(date))
    }

    pub fn catalogs_dir(&self, date: NaiveDate) -> PathBuf {
        self.partition_dir(date).join(CATALOGS_DIR)
    }

    pub fn threads_dir(&self, date: NaiveDate) -> PathBuf {
        self.partition_dir(date).join(THREADS_DIR)
    }

    pub fn board_threads_dir(&self, date: NaiveDate, board: &BoardId) -> PathBuf {
        self.threads_dir(date).join(board.as_str())
    }

    /// Partition is the UTC date of `ts`.
    pub fn catalog_path(&self, board: &BoardId, ts: DateTime<Utc>) -> PathBuf {
        let name = CatalogFileName {
            board: board.clone(),
            timestamp: ts,
        };
        self.catalogs_dir(ts.date_naive()).join(name.to_string())
    }

    pub fn thread_path(&self, board: &BoardId, thread_no: u64, ts: DateTime<Utc>) -> PathBuf {
        let name = SnapshotFileName {
            thread_no,
            timestamp: ts,
        };
        self.board_threads_dir(ts.date_naive(), board)
            .join(name.to_string())
    }

    pub fn info_log_path(&self, ts: DateTime<Utc>) -> PathBuf {
        self.logs_dir()
            .join(format!("info_log{}.log", render_timestamp(ts)))
    }

    pub fn debug_log_path(&self, ts: DateTime<Utc>) -> PathBuf {
        self.logs_dir()
            .join(format!("debug_log{}.log", render_timestamp(ts)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use chrono::{Duration, TimeZone};
    use proptest::prelude::*;

    fn ts() -> DateTime<Utc> {
        Utc.with_ymd_and_hms(2024, 3, 1, 14, 22, 7).unwrap()
    }

    fn b(s: &str) -> BoardId {
        BoardId::new(s).unwrap()
    }

    #[test]
    fn catalog_paths() {
        let l = ArchiveLayout::new("/data");
        assert_eq!(
            l.catalog_path(&b("pol"), ts()),
            PathBuf::from("/data/saves/2024-03-01/threads_on_boards/pol2024-03-01_14-22-07.json")
        );
        assert_eq!(
            l.catalog_path(&b("a"), ts()),
            PathBuf::from("/data/saves/2024-03-01/threads_on_boards/a2024-03-01_14-22-07.json")
        );
    }

    #[test]
    fn thread_paths() {
        let l = ArchiveLayout::new("/data");
        assert_eq!(
            l.thread_path(&b("b"), 570368, ts()),
            PathBuf::from("/data/saves/2024-03-01/threads/b/570368_2024-03-01_14-22-07.json")
        );
        let later = l.thread_path(&b("b"), 570368, ts() + Duration::seconds(90));
        assert_eq!(
            later.parent(),
            l.thread_path(&b("b"), 570368, ts()).parent()
        );
        assert_ne!(later, l.thread_path(&b("b"), 570368, ts()));
    }

    #[test]
    fn partition_rolls_over_at_utc_midnight() {
        let l = ArchiveLayout::new("/data");
        let before = Utc.with_ymd_and_hms(2024, 3, 1, 23, 59, 59).unwrap();
        let after = before + Duration::seconds(1);
        assert!(l
            .thread_path(&b("b"), 9, before)
            .starts_with("/data/saves/2024-03-01"));
        assert!(l
            .thread_path(&b("b"), 9, after)
            .starts_with("/data/saves/2024-03-02"));
        assert!(l
            .catalog_path(&b("b"), after)
            .starts_with("/data/saves/2024-03-02/threads_on_boards"));
    }

    #[test]
    fn log_paths() {
        let l = ArchiveLayout::new("/data");
        assert_eq!(
            l.info_log_path(ts()),
            PathBuf::from("/data/logs/info_log2024-03-01_14-22-07.log")
        );
        assert_eq!(
            l.debug_log_path(ts()),
            PathBuf::from("/data/logs/debug_log2024-03-01_14-22-07.log")
        );
    }

    #[test]
    fn file_name_grammar() {
        let n: SnapshotFileName = "570368_2024-03-01_14-22-07.json".parse().unwrap();
        assert_eq!(n.thread_no, 570368);
        assert_eq!(n.timestamp, ts());
        for bad in [
            "garbage.json",
            "570368_2024-03-01_14-22-07.json.tmp",
            "_2024-03-01_14-22-07.json",
            "0570368_2024-03-01_14-22-07.json",
            "570368_2024-13-01_14-22-07.json",
            "570368_2024-03-01T14:22:07.json",
            "abc_2024-03-01_14-22-07.json",
        ] {
            assert!(bad.parse::<SnapshotFileName>().is_err(), "{bad}");
        }
        let c: CatalogFileName = "pol2024-03-01_14-22-07.json".parse().unwrap();
        assert_eq!(c.board, b("pol"));
        let c: CatalogFileName = "b2024-03-01_14-22-07.json".parse().unwrap();
        assert_eq!(c.board, b("b"));
        assert!("2024-03-01_14-22-07.json"
            .parse::<CatalogFileName>()
            .is_err());
    }

    proptest! {
        #[test]
        fn snapshot_names_round_trip(no in 1u64..u64::MAX, secs in 0i64..4_102_444_800) {
            let name = SnapshotFileName { thread_no: no, timestamp: Utc.timestamp_opt(secs, 0).unwrap() };
            prop_assert_eq!(name.to_string().parse::<SnapshotFileName>().unwrap(), name);
        }

        #[test]
        fn paths_stay_under_root_and_are_injective(
            b1 in "[a-z0-9]{1,10}", b2 in "[a-z0-9]{1,10}",
            n1 in 1u64..1_000_000, n2 in 1u64..1_000_000,
            s1 in 0i64..4_102_444_800, s2 in 0i64..4_102_444_800,
        ) {
            let l = ArchiveLayout::new("/data");
            let (t1, t2) = (Utc.timestamp_opt(s1, 0).unwrap(), Utc.timestamp_opt(s2, 0).unwrap());
            let (b1, b2) = (b(&b1), b(&b2));
            let p1 = l.thread_path(&b1, n1, t1);
            let p2 = l.thread_path(&b2, n2, t2);
            prop_assert!(p1.starts_with("/data"));
            prop_assert_eq!(p1 == p2, (&b1, n1, t1) == (&b2, n2, t2));
            let c1 = l.catalog_path(&b1, t1);
            let c2 = l.catalog_path(&b2, t2);
            prop_assert!(c1.starts_with("/data"));
            prop_assert_eq!(c1 == c2, (&b1, t1) == (&b2, t2));
        }
    }
}
