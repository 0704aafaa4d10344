//! The encryption proxy.
//!
//! [`load`] runs the whole pipeline for one or more input files: read typed
//! rows, stable-sort them by the order-preserving column, encrypt every cell
//! under its column's scheme, serialize and gzip each chunk, stage it in a
//! temporary file and upload it. [`garbage_collect`] folds a fragmented table
//! back into one chunk and brings every order code up to the current epoch.

mod encrypt;
mod gc;
mod load;
mod read;
mod store;

pub use encrypt::{encrypt_rows, stable_sort, CipherRow};
pub use gc::{garbage_collect, GcReport};
pub use load::{
    load, upload, ChunkReport, CollisionPolicy, LoadOptions, LoadReport, Loader, PhaseTimes, DEFAULT_CHUNK_SIZE,
};
pub use read::{read_csv, read_input, read_ndjson, InputFormat, PlainRow, RowReader};
pub use store::{StateLock, StateStore};

use crate::schema::{SchemaError, ValueError};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("line {line}: {msg}")]
    Csv { line: u64, msg: String },
    #[error("line {line}: expected {expected} fields, found {found}")]
    Arity { line: u64, expected: usize, found: usize },
    #[error("line {line}, column `{column}`: {source}")]
    Value {
        line: u64,
        column: String,
        source: ValueError,
    },
    #[error("line {line}: missing key `{key}`")]
    MissingKey { line: u64, key: String },
    #[error("line {line}: unexpected key `{key}`")]
    ExtraKey { line: u64, key: String },
    #[error("line {line}: {msg}")]
    Json { line: u64, msg: String },
    #[error(transparent)]
    Header(#[from] SchemaError),
    #[error("line {line}, column `{column}`: homomorphic values must be non-negative and below the Paillier modulus")]
    PaillierRange { line: u64, column: String },
    #[error("no key for column `{0}`")]
    NoKey(String),
    #[error("order codes exhausted in column `{column}`: re-encode required (run gc)")]
    ReencodeRequired { column: String },
    #[error("order state `{0}` is locked by another writer")]
    Locked(String),
    #[error(transparent)]
    Crypto(#[from] crate::crypto::CryptoError),
    #[error(transparent)]
    Ope(#[from] crate::ope::OpeError),
    #[error("payload contains key material")]
    KeyLeak,
    #[error("chunk header does not match the schema")]
    ChunkLayout,
    #[error("stored cell in column `{column}` is malformed")]
    BadCell { column: String },
}
