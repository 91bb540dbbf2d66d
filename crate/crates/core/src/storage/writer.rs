//! Atomic snapshot writes: temp file in the target directory, fsync, rename.

use std::fs::{self, File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use super::StorageError;

pub const TEMP_SUFFIX: &str = ".tmp";

/// Called after the temp file is durable and before the rename.
/// Returning `true` simulates a crash at that point.
pub type FaultHook = Arc<dyn Fn(&Path) -> bool + Send + Sync>;

#[derive(Clone, Default)]
pub struct SnapshotWriter {
    fault: Option<FaultHook>,
}

impl std::fmt::Debug for SnapshotWriter {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SnapshotWriter")
            .field("fault", &self.fault.is_some())
            .finish()
    }
}

pub fn temp_path_for(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    path.with_file_name(format!(".{name}{TEMP_SUFFIX}"))
}

pub fn is_temp_file(name: &str) -> bool {
    name.starts_with('.') && name.ends_with(TEMP_SUFFIX)
}

impl SnapshotWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_fault_hook(hook: FaultHook) -> Self {
        Self { fault: Some(hook) }
    }

    /// Writes `bytes` verbatim to `path`. Readers never observe a partial file
    /// under the final name.
    pub fn write_snapshot(&self, path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
        let io = |e| StorageError::Io {
            path: path.to_path_buf(),
            source: e,
        };
        let dir = path.parent().ok_or_else(|| StorageError::Io {
            path: path.to_path_buf(),
            source: std::io::Error::new(std::io::ErrorKind::InvalidInput, "no parent directory"),
        })?;
        fs::create_dir_all(dir).map_err(io)?;

        let tmp = temp_path_for(path);
        {
            let mut f = OpenOptions::new()
                .write(true)
                .create(true)
                .truncate(true)
                .open(&tmp)
                .map_err(io)?;
            f.write_all(bytes).map_err(io)?;
            f.sync_all().map_err(io)?;
        }
        if let Some(hook) = &self.fault {
            if hook(path) {
                return Err(StorageError::InjectedFault(path.to_path_buf()));
            }
        }
        if let Err(e) = fs::rename(&tmp, path) {
            let _ = fs::remove_file(&tmp);
            return Err(io(e));
        }
        // Directory fsync makes the rename durable; not supported everywhere.
        if let Ok(d) = File::open(dir) {
            let _ = d.sync_all();
        }
        Ok(())
    }
}

pub fn write_snapshot(path: &Path, bytes: &[u8]) -> Result<(), StorageError> {
    SnapshotWriter::new().write_snapshot(path, bytes)
}
