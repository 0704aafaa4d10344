use num_bigint::BigUint;
use rayon::prelude::*;

use super::{IngestError, PlainRow};
use crate::chunk::{combined_field, TOKEN_SEPARATOR};
use crate::crypto::{
    det_encrypt, prob_encrypt, pseudonym, searchwords, CryptoError, Keyring, PaillierPublicKey, Scheme,
};
use crate::ope::{OpeError, OpeState, OrderKey};
use crate::schema::{ColumnSpec, Schema, Value};

/// One encrypted row, cells in physical header order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CipherRow {
    pub cells: Vec<String>,
}

/// Stable sort by the table's order-preserving column; equal keys keep their
/// input order. Tables without such a column are left as they are.
pub fn stable_sort(rows: &mut [PlainRow], schema: &Schema) {
    if let Some((idx, _)) = schema.order_column() {
        // `Value`'s derived order is the column order: integers and scaled
        // decimals by value, text by UTF-8 bytes.
        rows.sort_by(|a, b| a.values[idx].cmp(&b.values[idx]));
    }
}

/// Encrypts `rows` under `keys`. New order keys are encoded into `ope` first;
/// a collision leaves `ope` untouched and fails with
/// [`IngestError::ReencodeRequired`]. The remaining cells are encrypted in
/// parallel.
pub fn encrypt_rows(
    schema: &Schema,
    keys: &Keyring,
    ope: Option<&mut OpeState>,
    rows: &[PlainRow],
) -> Result<Vec<CipherRow>, IngestError> {
    for col in &schema.columns {
        if !matches!(col.scheme, Scheme::None | Scheme::Homomorphic) && keys.key(&col.name).is_none() {
            return Err(IngestError::NoKey(col.name.clone()));
        }
    }
    let paillier = keys.paillier_public();
    if schema.columns.iter().any(|c| c.scheme == Scheme::Homomorphic) && paillier.is_none() {
        return Err(IngestError::NoKey("paillier".into()));
    }

    let ope: Option<&OpeState> = match (schema.order_column(), ope) {
        (Some((idx, col)), Some(state)) => {
            let mut sorted: Vec<OrderKey> = rows.iter().map(|r| col.data_type.order_key(&r.values[idx])).collect();
            sorted.sort();
            sorted.dedup();
            state.encode_sorted(&sorted).map_err(|e| match e {
                OpeError::Collision { .. } => IngestError::ReencodeRequired {
                    column: col.name.clone(),
                },
                other => IngestError::Ope(other),
            })?;
            Some(state)
        }
        (Some((_, col)), None) => return Err(IngestError::NoKey(format!("{} order state", col.name))),
        (None, _) => None,
    };

    rows.par_iter()
        .map(|row| {
            let mut cells = Vec::with_capacity(schema.columns.len() + 1);
            for (col, value) in schema.columns.iter().zip(&row.values) {
                encrypt_cell(col, value, keys, paillier, ope, row.line, &mut cells)?;
            }
            Ok(CipherRow { cells })
        })
        .collect()
}

fn encrypt_cell(
    col: &ColumnSpec,
    value: &Value,
    keys: &Keyring,
    paillier: Option<&PaillierPublicKey>,
    ope: Option<&OpeState>,
    line: u64,
    out: &mut Vec<String>,
) -> Result<(), IngestError> {
    let text = col.data_type.format_value(value);
    let key = || keys.key(&col.name).ok_or_else(|| IngestError::NoKey(col.name.clone()));
    match col.scheme {
        Scheme::None => out.push(text),
        Scheme::Deterministic => out.push(det_encrypt(key()?, text.as_bytes())?.to_base64()),
        Scheme::Probabilistic => out.push(prob_encrypt(key()?, text.as_bytes())?.to_base64()),
        Scheme::Pseudonym => out.push(pseudonym(key()?, text.as_bytes())?.to_base64()),
        Scheme::Searchwords => {
            let tokens: Vec<String> = searchwords(key()?, &text)?.iter().map(|t| t.to_base64()).collect();
            out.push(tokens.join(&TOKEN_SEPARATOR.to_string()));
        }
        Scheme::Homomorphic => {
            let range_err = || IngestError::PaillierRange {
                line,
                column: col.name.clone(),
            };
            let v = value.as_int().filter(|v| *v >= 0).ok_or_else(range_err)?;
            let pk = paillier.ok_or_else(|| IngestError::NoKey("paillier".into()))?;
            let ct = pk.encrypt(&BigUint::from(v as u64)).map_err(|e| match e {
                CryptoError::PlaintextOutOfRange => range_err(),
                other => IngestError::Crypto(other),
            })?;
            out.push(ct.to_decimal());
        }
        Scheme::OrderPreserving => {
            let code = ope
                .and_then(|s| s.get(&col.data_type.order_key(value)))
                .ok_or_else(|| IngestError::NoKey(format!("{} order state", col.name)))?;
            let ct = det_encrypt(key()?, text.as_bytes())?.to_base64();
            out.push(combined_field(&ct, code));
            out.push(code.to_string());
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunk::split_combined;
    use crate::crypto::{det_decrypt, Ciphertext, Keyset, PaillierKeypair};
    use crate::schema::parse_schema;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn schema() -> Schema {
        parse_schema(
            r#"{"table":"cc","columns":[
                {"name":"pan","type":"integer","encrypt":"order_preserving"},
                {"name":"name","type":"text","encrypt":"deterministic"},
                {"name":"city","type":"text","encrypt":"none"},
                {"name":"bal","type":"integer","encrypt":"homomorphic"}]}"#,
        )
        .unwrap()
    }

    fn keyset() -> Keyset {
        let pair =
            PaillierKeypair::from_primes(&BigUint::from(1_000_000_007u64), &BigUint::from(998_244_353u64)).unwrap();
        Keyset::from_parts([9u8; 32], pair)
    }

    fn row(line: u64, pan: i64, name: &str, city: &str, bal: i64) -> PlainRow {
        PlainRow {
            line,
            values: vec![
                Value::Int(pan),
                Value::Text(name.into()),
                Value::Text(city.into()),
                Value::Int(bal),
            ],
        }
    }

    #[test]
    fn sort_is_stable_and_matches_reference() {
        let s = schema();
        let mut rows = vec![
            row(1, 5, "a", "", 0),
            row(2, 3, "b", "", 0),
            row(3, 5, "c", "", 0),
            row(4, 3, "d", "", 0),
        ];
        stable_sort(&mut rows, &s);
        let lines: Vec<u64> = rows.iter().map(|r| r.line).collect();
        assert_eq!(lines, vec![2, 4, 1, 3]);

        let mut rng = StdRng::seed_from_u64(3);
        let mut rows: Vec<PlainRow> = (0..1000).map(|i| row(i, rng.gen_range(0..100), "", "", 0)).collect();
        let before = rows.clone();
        stable_sort(&mut rows, &s);
        // Reference: insertion sort, stable by construction.
        let mut reference: Vec<PlainRow> = Vec::new();
        for r in before {
            let pos = reference
                .iter()
                .rposition(|x| x.values[0] <= r.values[0])
                .map_or(0, |p| p + 1);
            reference.insert(pos, r);
        }
        assert_eq!(rows, reference);
    }

    #[test]
    fn sorted_input_is_unchanged() {
        let s = schema();
        let mut rows: Vec<PlainRow> = (0..50).map(|i| row(i, i as i64, "", "", 0)).collect();
        let before = rows.clone();
        stable_sort(&mut rows, &s);
        assert_eq!(rows, before);
    }

    #[test]
    fn cells_follow_their_schemes() {
        let s = schema();
        let ks = keyset();
        let ring = ks.keyring("cc", s.column_schemes());
        let mut state = OpeState::new(s.columns[0].data_type);
        let rows = vec![
            row(2, 10, "al", "Oslo", 4),
            row(3, 20, "al", "Rome", 5),
            row(4, 30, "bo", "Oslo", 6),
        ];
        let out = encrypt_rows(&s, &ring, Some(&mut state), &rows).unwrap();
        assert_eq!(out.len(), 3);
        for (r, c) in rows.iter().zip(&out) {
            assert_eq!(c.cells.len(), 5);
            let (ct, code) = split_combined(&c.cells[0]).unwrap();
            assert_eq!(code.to_string(), c.cells[1]);
            let key = ring.key("pan").unwrap();
            let plain = det_decrypt(key, &Ciphertext::from_base64(ct).unwrap()).unwrap();
            assert_eq!(plain, s.columns[0].data_type.format_value(&r.values[0]).into_bytes());
            assert_eq!(c.cells[3], s.columns[2].data_type.format_value(&r.values[2]));
        }
        let codes: Vec<u64> = out.iter().map(|c| c.cells[1].parse().unwrap()).collect();
        assert!(codes.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(out[0].cells[2], out[1].cells[2]);
        assert_ne!(out[0].cells[2], out[2].cells[2]);
        let total = ring.paillier_public().unwrap().add(
            &crate::crypto::PaillierCiphertext::from_decimal(&out[0].cells[4]).unwrap(),
            &crate::crypto::PaillierCiphertext::from_decimal(&out[1].cells[4]).unwrap(),
        );
        assert_eq!(
            ring.paillier_private().unwrap().decrypt(&total).unwrap(),
            BigUint::from(9u32)
        );
    }

    #[test]
    fn negative_homomorphic_value_is_rejected() {
        let s = schema();
        let ks = keyset();
        let ring = ks.keyring("cc", s.column_schemes());
        let mut state = OpeState::new(s.columns[0].data_type);
        let err = encrypt_rows(&s, &ring, Some(&mut state), &[row(7, 1, "a", "b", -1)]).unwrap_err();
        assert!(matches!(err, IngestError::PaillierRange { line: 7, .. }));
    }

    #[test]
    fn collision_leaves_state_untouched() {
        let s = parse_schema(r#"{"table":"t","columns":[{"name":"k","type":"integer","encrypt":"order_preserving"}]}"#)
            .unwrap();
        let ks = keyset();
        let ring = ks.keyring("t", s.column_schemes());
        let mut state = OpeState::new(s.columns[0].data_type);
        let mut err = None;
        for v in (0..100).rev() {
            let r = PlainRow {
                line: 1,
                values: vec![Value::Int(v)],
            };
            if let Err(e) = encrypt_rows(&s, &ring, Some(&mut state), &[r]) {
                err = Some((v, e));
                break;
            }
        }
        let (v, e) = err.expect("descending inserts must exhaust the gap");
        assert!(matches!(e, IngestError::ReencodeRequired { .. }));
        assert_eq!(state.len() as i64, 99 - v);
    }
}
