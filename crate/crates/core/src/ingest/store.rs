use std::fs::{self, OpenOptions};
use std::io::{ErrorKind, Write};
use std::path::{Path, PathBuf};

use super::IngestError;
use crate::crypto::ColumnKey;
use crate::ope::{load_state, save_state, OpeError, OpeState};
use crate::schema::DataType;

/// Directory of order states, one `<table>.<column>.ope` file per
/// order-preserving column.
#[derive(Clone, Debug)]
pub struct StateStore {
    dir: PathBuf,
}

impl StateStore {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        StateStore { dir: dir.into() }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn path(&self, table: &str, column: &str) -> PathBuf {
        self.dir.join(format!("{table}.{column}.ope"))
    }

    /// Loads the state, or returns an empty one if none was saved yet.
    pub fn load(
        &self,
        table: &str,
        column: &str,
        data_type: DataType,
        key: &ColumnKey,
    ) -> Result<OpeState, crate::Error> {
        let bytes = match fs::read(self.path(table, column)) {
            Ok(b) => b,
            Err(e) if e.kind() == ErrorKind::NotFound => return Ok(OpeState::new(data_type)),
            Err(e) => return Err(e.into()),
        };
        let state = load_state(&bytes, key)?;
        if state.data_type() != data_type {
            return Err(OpeError::Corrupt(format!(
                "state type {} does not match column type {}",
                state.data_type().name(),
                data_type.name()
            ))
            .into());
        }
        Ok(state)
    }

    /// Writes the state through a temporary file and a rename.
    pub fn save(&self, table: &str, column: &str, state: &OpeState, key: &ColumnKey) -> Result<(), crate::Error> {
        fs::create_dir_all(&self.dir)?;
        let bytes = save_state(state, key)?;
        let mut tmp = tempfile::NamedTempFile::new_in(&self.dir)?;
        tmp.write_all(&bytes)?;
        tmp.as_file().sync_all()?;
        tmp.persist(self.path(table, column)).map_err(|e| e.error)?;
        Ok(())
    }

    /// Takes the single-writer lock for a column's state.
    pub fn lock(&self, table: &str, column: &str) -> Result<StateLock, crate::Error> {
        fs::create_dir_all(&self.dir)?;
        let path = self.dir.join(format!("{table}.{column}.ope.lock"));
        match OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                writeln!(f, "{}", std::process::id())?;
                Ok(StateLock { path })
            }
            Err(e) if e.kind() == ErrorKind::AlreadyExists => {
                Err(IngestError::Locked(path.display().to_string()).into())
            }
            Err(e) => Err(e.into()),
        }
    }
}

/// Held while a load or GC mutates an order state. Removes its lock file on drop.
#[derive(Debug)]
pub struct StateLock {
    path: PathBuf,
}

impl Drop for StateLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
