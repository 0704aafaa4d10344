//! Chunk payload format shared by the proxy and the backend.
//!
//! A chunk is a gzip member holding a CSV document. Plain columns keep their
//! name; an encrypted column `c` becomes `c__enc`; an order-preserving column
//! additionally gets `c__ope`, and its `c__enc` cell is the combined field
//! `<base64 ciphertext>|<decimal code>`.

use std::io::{Read, Write};

use flate2::read::GzDecoder;
use flate2::write::GzEncoder;
use flate2::Compression;

use crate::crypto::Scheme;
use crate::ope::OrderCode;

/// Separates ciphertext and order code in a combined field. Absent from both
/// the base64 alphabet and decimal digits.
pub const SEPARATOR: char = '|';

/// Separates tokens in a searchwords cell.
pub const TOKEN_SEPARATOR: char = ' ';

pub fn enc_column(name: &str) -> String {
    format!("{name}__enc")
}

pub fn ope_column(name: &str) -> String {
    format!("{name}__ope")
}

/// Physical CSV header for a list of logical columns.
pub fn physical_header<'a>(columns: impl IntoIterator<Item = (&'a str, Scheme)>) -> Vec<String> {
    let mut out = Vec::new();
    for (name, scheme) in columns {
        match scheme {
            Scheme::None => out.push(name.to_string()),
            Scheme::OrderPreserving => {
                out.push(enc_column(name));
                out.push(ope_column(name));
            }
            _ => out.push(enc_column(name)),
        }
    }
    out
}

/// The physical column holding a logical column's value.
pub fn value_column(name: &str, scheme: Scheme) -> String {
    if scheme == Scheme::None {
        name.to_string()
    } else {
        enc_column(name)
    }
}

pub fn combined_field(ciphertext_b64: &str, code: OrderCode) -> String {
    format!("{ciphertext_b64}{SEPARATOR}{code}")
}

pub fn split_combined(field: &str) -> Option<(&str, OrderCode)> {
    let (ct, code) = field.split_once(SEPARATOR)?;
    if code.contains(SEPARATOR) {
        return None;
    }
    Some((ct, OrderCode(code.parse().ok()?)))
}

#[derive(Debug, thiserror::Error)]
pub enum ChunkError {
    #[error("chunk payload is not valid gzip: {0}")]
    Gzip(#[from] std::io::Error),
    #[error("chunk CSV: {0}")]
    Csv(#[from] csv::Error),
    #[error("chunk has no header row")]
    NoHeader,
}

pub fn serialize_rows(header: &[String], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().from_writer(Vec::with_capacity(rows.len() * 96));
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(row).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

pub fn compress(raw: &[u8]) -> Vec<u8> {
    let mut enc = GzEncoder::new(Vec::with_capacity(raw.len() / 3), Compression::default());
    enc.write_all(raw).expect("in-memory write");
    enc.finish().expect("in-memory flush")
}

pub fn decompress(payload: &[u8]) -> Result<Vec<u8>, ChunkError> {
    let mut out = Vec::with_capacity(payload.len() * 3);
    GzDecoder::new(payload).read_to_end(&mut out)?;
    Ok(out)
}

/// Header and records of a decompressed chunk.
pub fn parse_rows(raw: &[u8]) -> Result<(Vec<String>, Vec<csv::StringRecord>), ChunkError> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(raw);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header.is_empty() {
        return Err(ChunkError::NoHeader);
    }
    let rows = r.records().collect::<Result<Vec<_>, _>>()?;
    Ok((header, rows))
}
