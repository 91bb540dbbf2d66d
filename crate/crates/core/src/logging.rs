//! Paired info/debug log files under `<root>/logs/`.
//!
//! Each invocation gets `info_log<ts>.log` (info and above) and
//! `debug_log<ts>.log` (debug and above). Records are single lines of the form
//! `<ISO8601> <LEVEL> <message>`, appended one `write` per line so concurrent
//! readers see whole lines. A failed write is retried, then dropped; logging
//! never takes the crawler down.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, OnceLock, RwLock};
use std::time::Duration;

use chrono::{DateTime, SecondsFormat, Utc};
use log::{Level, LevelFilter, Log, Metadata, Record};
use thiserror::Error;

use crate::storage::ArchiveLayout;

const WRITE_ATTEMPTS: u32 = 3;

#[derive(Debug, Error)]
#[error("cannot open log file {path}: {source}")]
pub struct LoggingError {
    pub path: PathBuf,
    #[source]
    pub source: std::io::Error,
}

struct LogFile {
    path: PathBuf,
    file: Mutex<File>,
}

impl LogFile {
    fn open(path: PathBuf) -> Result<Self, LoggingError> {
        let file = open_append(&path).map_err(|source| LoggingError {
            path: path.clone(),
            source,
        })?;
        Ok(Self {
            path,
            file: Mutex::new(file),
        })
    }

    fn append(&self, line: &[u8]) -> bool {
        let mut file = self.file.lock().unwrap_or_else(|e| e.into_inner());
        for attempt in 0..WRITE_ATTEMPTS {
            if file.write_all(line).is_ok() {
                return true;
            }
            std::thread::sleep(Duration::from_millis(5 << attempt));
            // the handle may have been invalidated; reopen before retrying
            if let Ok(f) = open_append(&self.path) {
                *file = f;
            }
        }
        false
    }
}

fn open_append(path: &Path) -> std::io::Result<File> {
    OpenOptions::new().create(true).append(true).open(path)
}

struct Sink {
    info: LogFile,
    debug: LogFile,
    dropped: AtomicU64,
}

impl Sink {
    fn write(&self, level: Level, line: &str) {
        let bytes = line.as_bytes();
        if !self.debug.append(bytes) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
        if level <= Level::Info && !self.info.append(bytes) {
            self.dropped.fetch_add(1, Ordering::Relaxed);
        }
    }
}

#[derive(Default)]
struct Dispatcher {
    sinks: RwLock<Vec<Arc<Sink>>>,
}

impl Log for Dispatcher {
    fn enabled(&self, metadata: &Metadata<'_>) -> bool {
        metadata.level() <= Level::Debug
    }

    fn log(&self, record: &Record<'_>) {
        if !self.enabled(record.metadata()) {
            return;
        }
        let sinks = self.sinks.read().unwrap_or_else(|e| e.into_inner());
        if sinks.is_empty() {
            return;
        }
        let line = format_line(Utc::now(), record.level(), &record.args().to_string());
        for sink in sinks.iter() {
            sink.write(record.level(), &line);
        }
    }

    fn flush(&self) {
        for sink in self.sinks.read().unwrap_or_else(|e| e.into_inner()).iter() {
            for f in [&sink.info, &sink.debug] {
                let _ = f.file.lock().unwrap_or_else(|e| e.into_inner()).sync_data();
            }
        }
    }
}

static DISPATCHER: OnceLock<Dispatcher> = OnceLock::new();

fn dispatcher() -> &'static Dispatcher {
    DISPATCHER.get_or_init(Dispatcher::default)
}

pub fn format_line(at: DateTime<Utc>, level: Level, message: &str) -> String {
    // one record per line, even for multi-line messages
    let message = message.replace('\n', "\\n");
    format!(
        "{} {} {}\n",
        at.to_rfc3339_opts(SecondsFormat::Millis, true),
        level,
        message
    )
}

/// Keeps the invocation's log files registered until dropped.
pub struct LogHandle {
    sink: Arc<Sink>,
}

impl LogHandle {
    pub fn info_path(&self) -> &Path {
        &self.sink.info.path
    }

    pub fn debug_path(&self) -> &Path {
        &self.sink.debug.path
    }

    /// Records lost after exhausting write retries.
    pub fn dropped_records(&self) -> u64 {
        self.sink.dropped.load(Ordering::Relaxed)
    }

    pub fn flush(&self) {
        dispatcher().flush();
    }
}

impl Drop for LogHandle {
    fn drop(&mut self) {
        self.flush();
        let mut sinks = dispatcher()
            .sinks
            .write()
            .unwrap_or_else(|e| e.into_inner());
        sinks.retain(|s| !Arc::ptr_eq(s, &self.sink));
    }
}

/// Creates `<root>/logs/{info,debug}_log<ts>.log` and routes the `log`
/// facade into them.
pub fn init_logging(
    layout: &ArchiveLayout,
    invoked_at: DateTime<Utc>,
) -> Result<LogHandle, LoggingError> {
    let dir = layout.logs_dir();
    fs::create_dir_all(&dir).map_err(|source| LoggingError {
        path: dir.clone(),
        source,
    })?;
    let sink = Arc::new(Sink {
        info: LogFile::open(layout.info_log_path(invoked_at))?,
        debug: LogFile::open(layout.debug_log_path(invoked_at))?,
        dropped: AtomicU64::new(0),
    });
    let d = dispatcher();
    // Fails harmlessly if this process already installed a logger.
    if log::set_logger(d).is_ok() {
        log::set_max_level(LevelFilter::Debug);
    }
    d.sinks
        .write()
        .unwrap_or_else(|e| e.into_inner())
        .push(sink.clone());
    Ok(LogHandle { sink })
}
