use rayon::prelude::*;
use serde::Serialize;

use super::load::contains;
use super::{IngestError, StateStore};
use crate::backend::{Backend, NewChunk, TableMeta};
use crate::chunk::{
    combined_field, compress, decompress, enc_column, ope_column, parse_rows, serialize_rows, split_combined,
};
use crate::crypto::{det_decrypt, Ciphertext, Keyset, Scheme};
use crate::ope::{OpeError, OrderKey};
use crate::schema::Schema;
use crate::Error;

#[derive(Clone, Debug, Serialize)]
pub struct GcReport {
    pub table: String,
    /// Nothing to do: at most one chunk, already at the current epoch.
    pub noop: bool,
    pub removed: Vec<u64>,
    pub added: Option<u64>,
    pub rows: u64,
    pub epoch: u64,
    pub reencoded: bool,
}

/// Merges every chunk of the table into one, re-encoding the order column
/// first if a collision left it pending. Order cells are decrypted and given
/// their current codes; all other cells are carried over byte for byte. The
/// old chunks are replaced in one atomic swap, so any failure before that
/// point leaves the table as it was.
pub fn garbage_collect(
    backend: &dyn Backend,
    schema: &Schema,
    keyset: &Keyset,
    store: &StateStore,
) -> Result<GcReport, Error> {
    let table = schema.table.as_str();
    let order = schema.order_column().map(|(_, c)| c);
    let _lock = order.map(|c| store.lock(table, &c.name)).transpose()?;
    let key = order.map(|c| keyset.column_key(table, &c.name, Scheme::OrderPreserving));
    let mut state = match (order, &key) {
        (Some(c), Some(k)) => Some(store.load(table, &c.name, c.data_type, k)?),
        _ => None,
    };

    let listing = backend.list_chunks(table)?;
    let pending = state.as_ref().is_some_and(|s| s.pending_reencode());
    let current = state.as_ref().map_or(0, |s| s.epoch());
    let mut report = GcReport {
        table: table.to_string(),
        noop: false,
        removed: listing.ids(),
        added: None,
        rows: 0,
        epoch: current,
        reencoded: false,
    };
    if listing.chunks.len() <= 1 && listing.chunks.iter().all(|c| c.epoch == current) && !pending {
        report.noop = true;
        report.removed.clear();
        return Ok(report);
    }

    let meta = TableMeta::from_schema(schema, Some(keyset.paillier().public().n()));
    let header = meta.physical_header();
    let mut rows: Vec<Vec<String>> = Vec::new();
    for info in &listing.chunks {
        let data = backend.get_chunk(table, info.chunk)?;
        let (got, records) = parse_rows(&decompress(&data.payload)?)?;
        if got != header {
            return Err(IngestError::ChunkLayout.into());
        }
        rows.extend(records.iter().map(|r| r.iter().map(str::to_string).collect::<Vec<_>>()));
    }

    if let (Some(col), Some(key), Some(state)) = (order, &key, state.as_mut()) {
        let enc_idx = header
            .iter()
            .position(|h| *h == enc_column(&col.name))
            .expect("order column in header");
        let ope_idx = header
            .iter()
            .position(|h| *h == ope_column(&col.name))
            .expect("order column in header");
        let bad = || IngestError::BadCell {
            column: col.name.clone(),
        };
        let keys: Vec<OrderKey> = rows
            .par_iter()
            .map(|row| {
                let (ct, _) = split_combined(&row[enc_idx]).ok_or_else(bad)?;
                let plain = det_decrypt(key, &Ciphertext::from_base64(ct)?)?;
                let text = String::from_utf8(plain).map_err(|_| bad())?;
                let value = col.data_type.parse_value(&text).map_err(|_| bad())?;
                Ok(col.data_type.order_key(&value))
            })
            .collect::<Result<_, Error>>()?;

        if state.pending_reencode() {
            state.reencode()?;
            report.reencoded = true;
        }
        let mut missing: Vec<OrderKey> = keys.iter().filter(|k| state.get(k).is_none()).cloned().collect();
        if !missing.is_empty() {
            missing.sort();
            missing.dedup();
            if let Err(OpeError::Collision { .. }) = state.encode_sorted(&missing) {
                state.reencode()?;
                state.encode_sorted(&missing)?;
                report.reencoded = true;
            }
        }

        let mut coded: Vec<(u64, Vec<String>)> = rows
            .into_iter()
            .zip(&keys)
            .map(|(mut row, k)| {
                let code = state.get(k).expect("every key encoded above");
                let (ct, _) = split_combined(&row[enc_idx]).expect("checked above");
                row[enc_idx] = combined_field(ct, code);
                row[ope_idx] = code.to_string();
                (code.0, row)
            })
            .collect();
        coded.sort_by_key(|(code, _)| *code);
        rows = coded.into_iter().map(|(_, r)| r).collect();
        report.epoch = state.epoch();
        store.save(table, &col.name, state, key)?;
    }

    let payload = compress(&serialize_rows(&header, &rows));
    let mut needles = keyset.secret_needles();
    needles.extend(keyset.keyring(table, schema.column_schemes()).secret_needles());
    if needles.iter().any(|n| contains(&payload, n)) {
        return Err(IngestError::KeyLeak.into());
    }
    let chunk = NewChunk {
        chunk: listing.next_chunk,
        epoch: report.epoch,
        row_count: rows.len() as u64,
        payload,
    };
    backend.swap_chunks(table, &listing.ids(), chunk)?;
    report.added = Some(listing.next_chunk);
    report.rows = rows.len() as u64;
    Ok(report)
}
