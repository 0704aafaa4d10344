//! On-disk form of an [`OpeState`] (`<table>.<column>.ope`).
//!
//! Layout, little endian:
//!
//! ```text
//! magic "MOPE" | version u16 | type u8 | scale u8 | flags u8 | epoch u64 | count u64
//! count x (code u64 | key_len u32 | sealed key bytes)
//! ```
//!
//! Keys are sealed with the column's deterministic cipher; codes are stored in
//! the clear since the backend already holds them.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::{OpeError, OpeState, OrderCode, OrderKey};
use crate::crypto::{det_decrypt, det_encrypt, Ciphertext, ColumnKey};
use crate::schema::DataType;

const MAGIC: &[u8; 4] = b"MOPE";
pub const STATE_FORMAT_VERSION: u16 = 1;
const FLAG_PENDING: u8 = 1;

fn key_bytes(key: &OrderKey) -> Vec<u8> {
    match key {
        OrderKey::Int(v) => v.to_be_bytes().to_vec(),
        OrderKey::Text(b) => b.clone(),
    }
}

pub fn save_state(state: &OpeState, key: &ColumnKey) -> Result<Vec<u8>, OpeError> {
    let (tag, scale) = match state.data_type {
        DataType::Integer => (0u8, 0u8),
        DataType::Decimal { scale } => (1, scale as u8),
        DataType::Text => (2, 0),
    };
    let mut out = Vec::with_capacity(32 + state.len() * 48);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&STATE_FORMAT_VERSION.to_le_bytes());
    out.push(tag);
    out.push(scale);
    out.push(if state.pending_reencode { FLAG_PENDING } else { 0 });
    out.extend_from_slice(&state.epoch.to_le_bytes());
    out.extend_from_slice(&(state.len() as u64).to_le_bytes());

    let entries: Vec<(&OrderKey, OrderCode)> = state.iter().collect();
    let sealed: Vec<Ciphertext> = entries
        .par_iter()
        .map(|(k, _)| det_encrypt(key, &key_bytes(k)))
        .collect::<Result<_, _>>()?;
    for ((_, code), ct) in entries.iter().zip(sealed) {
        out.extend_from_slice(&code.0.to_le_bytes());
        out.extend_from_slice(&(ct.len() as u32).to_le_bytes());
        out.extend_from_slice(ct.as_bytes());
    }
    Ok(out)
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], OpeError> {
        if self.buf.len() < n {
            return Err(OpeError::Corrupt("unexpected end of payload".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u8(&mut self) -> Result<u8, OpeError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, OpeError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, OpeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64, OpeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn load_state(bytes: &[u8], key: &ColumnKey) -> Result<OpeState, OpeError> {
    let mut r = Reader { buf: bytes };
    if r.take(4).map_err(|_| OpeError::BadMagic)? != MAGIC {
        return Err(OpeError::BadMagic);
    }
    let version = r.u16()?;
    if version != STATE_FORMAT_VERSION {
        return Err(OpeError::Version(version));
    }
    let tag = r.u8()?;
    let scale = r.u8()?;
    let data_type = match tag {
        0 => DataType::Integer,
        1 => DataType::Decimal { scale: scale as u32 },
        2 => DataType::Text,
        t => return Err(OpeError::Corrupt(format!("unknown column type tag {t}"))),
    };
    let flags = r.u8()?;
    let epoch = r.u64()?;
    let count = r.u64()?;

    let mut raw = Vec::with_capacity(count.min(1 << 24) as usize);
    for _ in 0..count {
        let code = r.u64()?;
        let len = r.u32()? as usize;
        raw.push((code, r.take(len)?));
    }
    if !r.buf.is_empty() {
        return Err(OpeError::Corrupt("trailing bytes".into()));
    }
    let keys: Vec<OrderKey> = raw
        .par_iter()
        .map(|(_, sealed)| {
            let plain = det_decrypt(key, &Ciphertext::from_bytes(sealed.to_vec()))?;
            Ok(match data_type {
                DataType::Text => OrderKey::Text(plain),
                _ => OrderKey::Int(i64::from_be_bytes(
                    plain
                        .as_slice()
                        .try_into()
                        .map_err(|_| OpeError::Corrupt("integer key is not 8 bytes".into()))?,
                )),
            })
        })
        .collect::<Result<_, OpeError>>()?;

    let mut entries = BTreeMap::new();
    let mut prev: Option<(&OrderKey, u64)> = None;
    for (key, (code, _)) in keys.iter().zip(&raw) {
        if *code == OrderCode::FLOOR || *code == OrderCode::CEILING {
            return Err(OpeError::Corrupt(format!("code {code} outside code space")));
        }
        if let Some((pk, pc)) = prev {
            if pk >= key || pc >= *code {
                return Err(OpeError::Corrupt("entries out of order".into()));
            }
        }
        prev = Some((key, *code));
    }
    for (key, (code, _)) in keys.into_iter().zip(raw) {
        entries.insert(key, OrderCode(code));
    }
    Ok(OpeState {
        data_type,
        epoch,
        pending_reencode: flags & FLAG_PENDING != 0,
        entries,
    })
}
