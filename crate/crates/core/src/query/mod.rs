//! The query client.
//!
//! [`run_query`] parses a statement of the SQL subset, checks it against the
//! schema, rewrites its literals into ciphertexts, tokens and order codes,
//! runs the plan on every chunk in parallel, merges the per-chunk answers and
//! decrypts what the caller holds keys for.

mod bind;
mod decrypt;
mod merge;
mod parse;
mod rewrite;

pub use bind::{bind, op_allowed, BoundPredicate, BoundProjection, BoundQuery};
pub use decrypt::{decrypt_cell, decrypt_results, Cell};
pub use merge::{combine_sums, kway_merge, merge_rows};
pub use parse::{parse_query, Literal, OrderBy, PredOp, Predicate, Projection, QueryPlan};
pub use rewrite::{code_test, rewrite};

use std::io::Write;

use num_bigint::BigUint;
use rayon::prelude::*;
use serde::Serialize;

use crate::backend::{Backend, BackendError, ChunkListing, ChunkQueryResult, EncryptedPlan};
use crate::crypto::{CryptoError, Keyring};
use crate::ope::OpeState;
use crate::schema::{DataType, Schema};

#[derive(Debug, thiserror::Error)]
pub enum QueryError {
    #[error("syntax error at position {pos}: {msg}")]
    Syntax { pos: usize, msg: String },
    #[error("unknown table `{0}`")]
    UnknownTable(String),
    #[error("unknown column `{0}`")]
    UnknownColumn(String),
    #[error("bad literal for `{column}`: {msg}")]
    Literal { column: String, msg: String },
    #[error("{msg}")]
    Scheme { column: String, msg: String },
    #[error("no key for column `{0}`")]
    MissingKey(String),
    #[error("{0}; garbage collection required")]
    GcRequired(String),
    #[error("no order code left near the literal for `{0}`; re-encode required (run gc)")]
    ReencodeRequired(String),
    #[error("column `{column}` holds data that does not decrypt: {msg}")]
    Corrupt { column: String, msg: String },
    #[error(transparent)]
    Crypto(#[from] CryptoError),
    #[error(transparent)]
    Backend(#[from] BackendError),
}

/// Coarse error classes, one process exit code each.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ErrorClass {
    Syntax,
    Scheme,
    Epoch,
    Backend,
    Data,
}

impl QueryError {
    pub fn class(&self) -> ErrorClass {
        match self {
            QueryError::Syntax { .. } | QueryError::Literal { .. } => ErrorClass::Syntax,
            QueryError::UnknownTable(_)
            | QueryError::UnknownColumn(_)
            | QueryError::Scheme { .. }
            | QueryError::MissingKey(_) => ErrorClass::Scheme,
            QueryError::GcRequired(_) | QueryError::ReencodeRequired(_) => ErrorClass::Epoch,
            QueryError::Backend(BackendError::EpochMismatch(_)) => ErrorClass::Epoch,
            QueryError::Backend(_) => ErrorClass::Backend,
            QueryError::Corrupt { .. } | QueryError::Crypto(_) => ErrorClass::Data,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ChunkCount {
    pub chunk: u64,
    pub matched: u64,
    /// Rows of this chunk that survived the merge and LIMIT.
    pub returned: u64,
}

/// A decrypted answer.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ResultSet {
    pub columns: Vec<String>,
    pub types: Vec<DataType>,
    pub rows: Vec<Vec<Cell>>,
    /// Decrypted SUM.
    pub sum: Option<BigUint>,
    pub chunks: Vec<ChunkCount>,
}

impl ResultSet {
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(&self.columns)?;
        if let Some(sum) = &self.sum {
            w.write_record([sum.to_str_radix(10)])?;
        }
        for row in &self.rows {
            w.write_record(row.iter().zip(&self.types).map(|(cell, ty)| match cell {
                Cell::Value(v) => ty.format_value(v),
                Cell::Opaque(s) => s.clone(),
            }))?;
        }
        w.flush()
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv of utf-8 cells")
    }
}

/// The epoch a plan must carry, or `GcRequired` if the chunks disagree with
/// each other or with the client's order state.
pub fn plan_epoch(listing: &ChunkListing, ope: Option<&OpeState>) -> Result<u64, QueryError> {
    let expected = match ope {
        Some(s) => s.epoch(),
        None => listing.chunks.first().map_or(0, |c| c.epoch),
    };
    if let Some(stale) = listing.chunks.iter().find(|c| c.epoch != expected) {
        return Err(QueryError::GcRequired(format!(
            "chunk {} is at epoch {} but the table is at epoch {expected}",
            stale.chunk, stale.epoch
        )));
    }
    Ok(expected)
}

/// Runs `plan` on every listed chunk in parallel. Any chunk failure fails
/// the whole query. Results come back in chunk-id order.
pub fn execute(
    backend: &dyn Backend,
    table: &str,
    chunks: &[u64],
    plan: &EncryptedPlan,
) -> Result<Vec<ChunkQueryResult>, QueryError> {
    let mut results = chunks
        .par_iter()
        .map(|&c| backend.exec_chunk_query(table, c, plan))
        .collect::<Result<Vec<_>, _>>()?;
    results.sort_by_key(|r| r.chunk);
    Ok(results)
}

/// Parses, rewrites, executes, merges and decrypts `sql`. `ope` is the order
/// state of the table's order-preserving column, if the caller has it.
pub fn run_query(
    backend: &dyn Backend,
    schema: &Schema,
    keys: &Keyring,
    ope: Option<&OpeState>,
    sql: &str,
) -> Result<ResultSet, QueryError> {
    let bound = bind(&parse_query(sql)?, schema)?;
    let listing = backend.list_chunks(&schema.table)?;
    let epoch = plan_epoch(&listing, ope)?;
    let plan = rewrite(&bound, schema, keys, ope, epoch)?;
    let results = execute(backend, &schema.table, &listing.ids(), &plan)?;
    let mut chunks: Vec<ChunkCount> = results
        .iter()
        .map(|r| ChunkCount {
            chunk: r.chunk,
            matched: r.matched,
            returned: 0,
        })
        .collect();

    match &bound.projection {
        BoundProjection::Sum(i) => {
            let col = &schema.columns[*i];
            let sk = keys
                .paillier_private()
                .ok_or_else(|| QueryError::MissingKey(col.name.clone()))?;
            let total = combine_sums(&results, sk.public())?;
            let sum = sk.decrypt(&total).map_err(|e| QueryError::Corrupt {
                column: col.name.clone(),
                msg: e.to_string(),
            })?;
            Ok(ResultSet {
                columns: vec![format!("sum({})", col.name)],
                types: vec![col.data_type],
                rows: Vec::new(),
                sum: Some(sum),
                chunks,
            })
        }
        BoundProjection::Rows(cols) => {
            let specs: Vec<_> = cols.iter().map(|&i| &schema.columns[i]).collect();
            let merged = merge_rows(results, &plan);
            for (chunk, _) in &merged {
                if let Some(c) = chunks.iter_mut().find(|c| c.chunk == *chunk) {
                    c.returned += 1;
                }
            }
            let rows = merged
                .iter()
                .map(|(_, r)| decrypt_results(&specs, &r.cells, keys))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(ResultSet {
                columns: specs.iter().map(|c| c.name.clone()).collect(),
                types: specs.iter().map(|c| c.data_type).collect(),
                rows,
                sum: None,
                chunks,
            })
        }
    }
}
