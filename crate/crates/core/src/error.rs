use crate::backend::BackendError;
use crate::chunk::ChunkError;
use crate::crypto::CryptoError;
use crate::ingest::{IngestError, LoadReport};
use crate::ope::OpeError;
use crate::query::{ErrorClass, QueryError};
use crate::schema::SchemaError;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Ope(#[from] OpeError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Chunk(#[from] ChunkError),
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    /// A load stopped part way. `partial` lists what reached the backend.
    #[error("load aborted after {} chunk(s): {source}", partial.chunks.len())]
    LoadAborted {
        source: Box<Error>,
        partial: Box<LoadReport>,
    },
}

/// Process exit codes, one per error class.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const SYNTAX: i32 = 3;
    pub const SCHEME: i32 = 4;
    /// Chunks at mixed epochs or exhausted codes: run `gc`.
    pub const GC_REQUIRED: i32 = 5;
    pub const BACKEND: i32 = 6;
    pub const CORRUPT: i32 = 7;
}

impl Error {
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Query(e) => match e.class() {
                ErrorClass::Syntax => exit::SYNTAX,
                ErrorClass::Scheme => exit::SCHEME,
                ErrorClass::Epoch => exit::GC_REQUIRED,
                ErrorClass::Backend => exit::BACKEND,
                ErrorClass::Data => exit::CORRUPT,
            },
            Error::Backend(BackendError::EpochMismatch(_)) => exit::GC_REQUIRED,
            Error::Backend(_) => exit::BACKEND,
            Error::Ingest(IngestError::ReencodeRequired { .. }) => exit::GC_REQUIRED,
            Error::Schema(_) => exit::SCHEME,
            Error::LoadAborted { source, .. } => source.exit_code(),
            _ => exit::OTHER,
        }
    }
}
