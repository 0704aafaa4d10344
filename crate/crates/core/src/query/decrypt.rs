use super::QueryError;
use crate::chunk::split_combined;
use crate::crypto::{det_decrypt, prob_decrypt, Ciphertext, Keyring, PaillierCiphertext, Scheme};
use crate::schema::{ColumnSpec, Value};

/// A result cell: plaintext, or the stored text when the client cannot
/// invert it (missing key, or a one-way scheme).
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Cell {
    Value(Value),
    Opaque(String),
}

impl Cell {
    pub fn value(&self) -> Option<&Value> {
        match self {
            Cell::Value(v) => Some(v),
            Cell::Opaque(_) => None,
        }
    }
}

/// Decrypts one stored cell of `col`. Pseudonym and searchword cells are
/// one-way and always come back opaque.
pub fn decrypt_cell(col: &ColumnSpec, cell: &str, keys: &Keyring) -> Result<Cell, QueryError> {
    let corrupt = |msg: String| QueryError::Corrupt {
        column: col.name.clone(),
        msg,
    };
    let bytes = match col.scheme {
        Scheme::None => cell.as_bytes().to_vec(),
        Scheme::Pseudonym | Scheme::Searchwords => return Ok(Cell::Opaque(cell.to_string())),
        Scheme::Homomorphic => {
            let Some(sk) = keys.paillier_private() else {
                return Ok(Cell::Opaque(cell.to_string()));
            };
            let m = sk
                .decrypt(&PaillierCiphertext::from_decimal(cell)?)
                .map_err(|e| corrupt(e.to_string()))?;
            let v = i64::try_from(m).map_err(|_| corrupt("value exceeds 64 bits".into()))?;
            return Ok(Cell::Value(Value::Int(v)));
        }
        Scheme::Deterministic | Scheme::Probabilistic | Scheme::OrderPreserving => {
            let Some(key) = keys.key(&col.name) else {
                return Ok(Cell::Opaque(cell.to_string()));
            };
            let b64 = if col.scheme == Scheme::OrderPreserving {
                split_combined(cell)
                    .ok_or_else(|| corrupt("malformed combined field".into()))?
                    .0
            } else {
                cell
            };
            let ct = Ciphertext::from_base64(b64).map_err(|e| corrupt(e.to_string()))?;
            let plain = if col.scheme == Scheme::Probabilistic {
                prob_decrypt(key, &ct)
            } else {
                det_decrypt(key, &ct)
            };
            plain.map_err(|e| corrupt(e.to_string()))?
        }
    };
    let text = String::from_utf8(bytes).map_err(|_| corrupt("plaintext is not UTF-8".into()))?;
    col.data_type
        .parse_value(&text)
        .map(Cell::Value)
        .map_err(|e| corrupt(e.to_string()))
}

/// Decrypts a row whose cells belong to `columns`, in order.
pub fn decrypt_results(columns: &[&ColumnSpec], cells: &[String], keys: &Keyring) -> Result<Vec<Cell>, QueryError> {
    columns
        .iter()
        .zip(cells)
        .map(|(col, cell)| decrypt_cell(col, cell, keys))
        .collect()
}
