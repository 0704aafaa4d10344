//! The untrusted store.
//!
//! [`BackendSim`] keeps compressed chunks per table and evaluates
//! [`EncryptedPlan`]s using only byte equality, unsigned comparison of order
//! codes, token membership and multiplication of Paillier ciphertexts modulo
//! `n^2`. It has no access to any key and contains no decryption routine.
//! [`serve`] exposes it over length-prefixed JSON frames; [`RemoteBackend`] is
//! the matching client.

mod protocol;
mod sim;
mod wire;

pub use protocol::{
    ChunkData, ChunkInfo, ChunkListing, ChunkQueryResult, CmpOp, EncryptedPlan, Filter, NewChunk, Output, Request,
    Response, ResultRow, SortSpec, SortValue, StoredColumn, TableMeta, Test,
};
pub use sim::BackendSim;
pub use wire::{handle_request, read_frame, serve, write_frame, RemoteBackend, ServerHandle, MAX_FRAME};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum BackendError {
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown chunk: {0}")]
    UnknownChunk(String),
    #[error("duplicate chunk: {0}")]
    DuplicateChunk(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("epoch mismatch: {0}")]
    EpochMismatch(String),
    #[error("bad plan: {0}")]
    BadPlan(String),
    #[error("bad request: {0}")]
    BadRequest(String),
    #[error("corrupt chunk: {0}")]
    Corrupt(String),
    #[error("storage: {0}")]
    Storage(String),
    #[error("backend unreachable: {0}")]
    Unreachable(String),
}

impl BackendError {
    pub fn code(&self) -> &'static str {
        match self {
            BackendError::UnknownTable(_) => "unknown_table",
            BackendError::UnknownChunk(_) => "unknown_chunk",
            BackendError::DuplicateChunk(_) => "duplicate_chunk",
            BackendError::SchemaMismatch(_) => "schema_mismatch",
            BackendError::EpochMismatch(_) => "epoch_mismatch",
            BackendError::BadPlan(_) => "bad_plan",
            BackendError::BadRequest(_) => "bad_request",
            BackendError::Corrupt(_) => "corrupt_chunk",
            BackendError::Storage(_) => "storage",
            BackendError::Unreachable(_) => "unreachable",
        }
    }

    pub(crate) fn message(&self) -> String {
        match self {
            BackendError::UnknownTable(m)
            | BackendError::UnknownChunk(m)
            | BackendError::DuplicateChunk(m)
            | BackendError::SchemaMismatch(m)
            | BackendError::EpochMismatch(m)
            | BackendError::BadPlan(m)
            | BackendError::BadRequest(m)
            | BackendError::Corrupt(m)
            | BackendError::Storage(m)
            | BackendError::Unreachable(m) => m.clone(),
        }
    }

    pub fn from_code(code: &str, msg: String) -> Self {
        match code {
            "unknown_table" => BackendError::UnknownTable(msg),
            "unknown_chunk" => BackendError::UnknownChunk(msg),
            "duplicate_chunk" => BackendError::DuplicateChunk(msg),
            "schema_mismatch" => BackendError::SchemaMismatch(msg),
            "epoch_mismatch" => BackendError::EpochMismatch(msg),
            "bad_plan" => BackendError::BadPlan(msg),
            "bad_request" => BackendError::BadRequest(msg),
            "corrupt_chunk" => BackendError::Corrupt(msg),
            "unreachable" => BackendError::Unreachable(msg),
            _ => BackendError::Storage(format!("{code}: {msg}")),
        }
    }
}

/// Operations the proxy and the query client need from a store.
pub trait Backend: Send + Sync {
    /// Creates the table, or does nothing if it exists with identical metadata.
    fn create_table(&self, table: &str, meta: &TableMeta) -> Result<(), BackendError>;
    fn describe_table(&self, table: &str) -> Result<TableMeta, BackendError>;
    fn insert_chunk(&self, table: &str, chunk: NewChunk) -> Result<(), BackendError>;
    fn list_chunks(&self, table: &str) -> Result<ChunkListing, BackendError>;
    fn get_chunk(&self, table: &str, chunk: u64) -> Result<ChunkData, BackendError>;
    /// Atomically replaces `remove` with `add`.
    fn swap_chunks(&self, table: &str, remove: &[u64], add: NewChunk) -> Result<(), BackendError>;
    fn exec_chunk_query(&self, table: &str, chunk: u64, plan: &EncryptedPlan)
        -> Result<ChunkQueryResult, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn create_table(&self, table: &str, meta: &TableMeta) -> Result<(), BackendError> {
        (**self).create_table(table, meta)
    }
    fn describe_table(&self, table: &str) -> Result<TableMeta, BackendError> {
        (**self).describe_table(table)
    }
    fn insert_chunk(&self, table: &str, chunk: NewChunk) -> Result<(), BackendError> {
        (**self).insert_chunk(table, chunk)
    }
    fn list_chunks(&self, table: &str) -> Result<ChunkListing, BackendError> {
        (**self).list_chunks(table)
    }
    fn get_chunk(&self, table: &str, chunk: u64) -> Result<ChunkData, BackendError> {
        (**self).get_chunk(table, chunk)
    }
    fn swap_chunks(&self, table: &str, remove: &[u64], add: NewChunk) -> Result<(), BackendError> {
        (**self).swap_chunks(table, remove, add)
    }
    fn exec_chunk_query(
        &self,
        table: &str,
        chunk: u64,
        plan: &EncryptedPlan,
    ) -> Result<ChunkQueryResult, BackendError> {
        (**self).exec_chunk_query(table, chunk, plan)
    }
}
