//! Date-partitioned raw snapshot archive.

mod layout;
mod payload;
mod recovery;
mod writer;

use std::path::PathBuf;

use thiserror::Error;

pub use layout::{
    parse_date, parse_timestamp, render_date, render_timestamp, ArchiveLayout, BadFileName,
    CatalogFileName, SnapshotFileName, CATALOGS_DIR, LOGS_DIR, SAVES_DIR, THREADS_DIR,
};
pub use payload::{
    parse_thread_payload, FileProps, ImageProps, PayloadError, PostRecord, ThreadSnapshot,
};
pub use recovery::{recover_state, RecoveredSnapshot, RecoveredState, Recovery};
pub use writer::{is_temp_file, temp_path_for, write_snapshot, FaultHook, SnapshotWriter};

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("write to {0} interrupted by injected fault")]
    InjectedFault(PathBuf),
}
