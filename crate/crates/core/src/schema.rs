//! The extended table schema: one encryption scheme per column.
//!
//! ```json
//! {"table": "cc", "columns": [
//!   {"name": "pan", "type": "integer", "encrypt": "order_preserving"},
//!   {"name": "amount", "type": "decimal", "scale": 2, "encrypt": "none"}
//! ]}
//! ```

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::crypto::Scheme;
use crate::ope::OrderKey;

/// Largest supported decimal scale; 10^18 still fits in an i64.
pub const MAX_SCALE: u32 = 18;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataType {
    Integer,
    /// Fixed-point number stored as an integer count of `10^-scale` units.
    Decimal {
        scale: u32,
    },
    Text,
}

impl DataType {
    pub fn name(self) -> &'static str {
        match self {
            DataType::Integer => "integer",
            DataType::Decimal { .. } => "decimal",
            DataType::Text => "text",
        }
    }

    pub fn parse_value(self, raw: &str) -> Result<Value, ValueError> {
        match self {
            DataType::Integer => raw
                .trim()
                .parse::<i64>()
                .map(Value::Int)
                .map_err(|_| ValueError::new(self, raw)),
            DataType::Decimal { scale } => parse_decimal(raw.trim(), scale)
                .map(Value::Int)
                .ok_or_else(|| ValueError::new(self, raw)),
            DataType::Text => Ok(Value::Text(raw.to_string())),
        }
    }

    /// Canonical text form. This is also the byte string that gets encrypted.
    pub fn format_value(self, value: &Value) -> String {
        match (self, value) {
            (DataType::Decimal { scale }, Value::Int(units)) if scale > 0 => {
                let div = 10i128.pow(scale);
                let units = *units as i128;
                let sign = if units < 0 { "-" } else { "" };
                let abs = units.abs();
                format!("{sign}{}.{:0width$}", abs / div, abs % div, width = scale as usize)
            }
            (_, Value::Int(v)) => v.to_string(),
            (_, Value::Text(s)) => s.clone(),
        }
    }

    pub fn order_key(self, value: &Value) -> OrderKey {
        match value {
            Value::Int(v) => OrderKey::Int(*v),
            Value::Text(s) => OrderKey::Text(s.as_bytes().to_vec()),
        }
    }
}

fn parse_decimal(raw: &str, scale: u32) -> Option<i64> {
    let (negative, body) = match raw.strip_prefix('-') {
        Some(rest) => (true, rest),
        None => (false, raw.strip_prefix('+').unwrap_or(raw)),
    };
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, f),
        None => (body, ""),
    };
    if int_part.is_empty() && frac_part.is_empty() {
        return None;
    }
    let digits_ok = |s: &str| s.bytes().all(|b| b.is_ascii_digit());
    if !digits_ok(int_part) || !digits_ok(frac_part) || frac_part.len() > scale as usize {
        return None;
    }
    let mut units: i128 = if int_part.is_empty() { 0 } else { int_part.parse().ok()? };
    units = units.checked_mul(10i128.pow(scale))?;
    if !frac_part.is_empty() {
        let frac: i128 = frac_part.parse().ok()?;
        units += frac * 10i128.pow(scale - frac_part.len() as u32);
    }
    if negative {
        units = -units;
    }
    i64::try_from(units).ok()
}

/// A typed plaintext cell. Decimals are held as scaled integers, so the
/// column's [`DataType`] is needed to print them.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Value {
    Int(i64),
    Text(String),
}

impl Value {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            Value::Int(v) => Some(*v),
            Value::Text(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("`{raw}` is not a valid {type_name}")]
pub struct ValueError {
    pub type_name: &'static str,
    pub raw: String,
}

impl ValueError {
    fn new(ty: DataType, raw: &str) -> Self {
        ValueError {
            type_name: ty.name(),
            raw: raw.to_string(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ColumnSpec {
    pub name: String,
    pub data_type: DataType,
    pub scheme: Scheme,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Schema {
    pub table: String,
    pub columns: Vec<ColumnSpec>,
}

#[derive(Debug, thiserror::Error)]
pub enum SchemaError {
    #[error("malformed schema JSON: {0}")]
    Json(#[from] serde_json::Error),
    #[error("invalid identifier `{0}` (letters, digits and single underscores; must not start with a digit)")]
    Identifier(String),
    #[error("schema for `{0}` has no columns")]
    NoColumns(String),
    #[error("duplicate column `{0}`")]
    DuplicateColumn(String),
    #[error("column `{column}`: unknown type `{ty}`")]
    UnknownType { column: String, ty: String },
    #[error("column `{column}`: unknown encryption scheme `{scheme}`")]
    UnknownScheme { column: String, scheme: String },
    #[error("column `{column}`: decimal needs a scale between 0 and {MAX_SCALE}")]
    BadScale { column: String },
    #[error("column `{column}`: scheme `{scheme}` cannot be used with type `{ty}`")]
    SchemeTypeMismatch {
        column: String,
        scheme: Scheme,
        ty: &'static str,
    },
    #[error("at most one order_preserving column per table (found `{0}` and `{1}`)")]
    MultipleOrderColumns(String, String),
    #[error("input is missing column `{0}`")]
    MissingColumn(String),
    #[error("input has column `{0}` which is not in the schema")]
    ExtraColumn(String),
    #[error("input repeats column `{0}`")]
    RepeatedInputColumn(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SchemaDoc {
    table: String,
    columns: Vec<ColumnDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ColumnDoc {
    name: String,
    #[serde(rename = "type")]
    ty: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    scale: Option<u32>,
    encrypt: String,
}

pub fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    let Some(first) = chars.next() else {
        return false;
    };
    (first.is_ascii_alphabetic() || first == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
        && !name.contains("__")
}

/// Checks that `scheme` can protect values of type `ty`.
pub fn check_scheme_type(column: &str, scheme: Scheme, ty: DataType) -> Result<(), SchemaError> {
    let ok = match scheme {
        Scheme::Homomorphic => ty == DataType::Integer,
        Scheme::Searchwords => ty == DataType::Text,
        Scheme::None | Scheme::Deterministic | Scheme::Probabilistic | Scheme::Pseudonym | Scheme::OrderPreserving => {
            true
        }
    };
    if ok {
        Ok(())
    } else {
        Err(SchemaError::SchemeTypeMismatch {
            column: column.to_string(),
            scheme,
            ty: ty.name(),
        })
    }
}

pub fn parse_schema(text: &str) -> Result<Schema, SchemaError> {
    let doc: SchemaDoc = serde_json::from_str(text)?;
    if !is_identifier(&doc.table) {
        return Err(SchemaError::Identifier(doc.table));
    }
    if doc.columns.is_empty() {
        return Err(SchemaError::NoColumns(doc.table));
    }
    let mut seen = HashSet::new();
    let mut columns = Vec::with_capacity(doc.columns.len());
    let mut order_column: Option<String> = None;
    for col in doc.columns {
        if !is_identifier(&col.name) {
            return Err(SchemaError::Identifier(col.name));
        }
        if !seen.insert(col.name.clone()) {
            return Err(SchemaError::DuplicateColumn(col.name));
        }
        let data_type = match (col.ty.as_str(), col.scale) {
            ("integer", None) => DataType::Integer,
            ("text", None) => DataType::Text,
            ("decimal", Some(scale)) if scale <= MAX_SCALE => DataType::Decimal { scale },
            ("decimal", _) | ("integer", Some(_)) | ("text", Some(_)) => {
                return Err(SchemaError::BadScale { column: col.name })
            }
            (other, _) => {
                return Err(SchemaError::UnknownType {
                    ty: other.to_string(),
                    column: col.name,
                })
            }
        };
        let scheme = Scheme::parse(&col.encrypt).ok_or_else(|| SchemaError::UnknownScheme {
            column: col.name.clone(),
            scheme: col.encrypt.clone(),
        })?;
        check_scheme_type(&col.name, scheme, data_type)?;
        if scheme == Scheme::OrderPreserving {
            if let Some(first) = &order_column {
                return Err(SchemaError::MultipleOrderColumns(first.clone(), col.name));
            }
            order_column = Some(col.name.clone());
        }
        columns.push(ColumnSpec {
            name: col.name,
            data_type,
            scheme,
        });
    }
    Ok(Schema {
        table: doc.table,
        columns,
    })
}

impl Schema {
    pub fn from_json(text: &str) -> Result<Self, SchemaError> {
        parse_schema(text)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, crate::Error> {
        let text = std::fs::read_to_string(path)?;
        Ok(parse_schema(&text)?)
    }

    /// Canonical serialization: field order table, columns; name, type,
    /// scale (decimals only), encrypt.
    pub fn to_json(&self) -> String {
        let doc = SchemaDoc {
            table: self.table.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| ColumnDoc {
                    name: c.name.clone(),
                    ty: c.data_type.name().to_string(),
                    scale: match c.data_type {
                        DataType::Decimal { scale } => Some(scale),
                        _ => None,
                    },
                    encrypt: c.scheme.as_str().to_string(),
                })
                .collect(),
        };
        serde_json::to_string_pretty(&doc).expect("schema serializes")
    }

    pub fn column(&self, name: &str) -> Option<(usize, &ColumnSpec)> {
        self.columns.iter().enumerate().find(|(_, c)| c.name == name)
    }

    pub fn order_column(&self) -> Option<(usize, &ColumnSpec)> {
        self.columns
            .iter()
            .enumerate()
            .find(|(_, c)| c.scheme == Scheme::OrderPreserving)
    }

    pub fn column_schemes(&self) -> impl Iterator<Item = (&str, Scheme)> {
        self.columns.iter().map(|c| (c.name.as_str(), c.scheme))
    }

    /// For every schema column, the position of that column in `header`.
    pub fn validate_header<S: AsRef<str>>(&self, header: &[S]) -> Result<Vec<usize>, SchemaError> {
        let mut seen = HashSet::new();
        for name in header {
            let name = name.as_ref();
            if !seen.insert(name) {
                return Err(SchemaError::RepeatedInputColumn(name.to_string()));
            }
            if self.column(name).is_none() {
                return Err(SchemaError::ExtraColumn(name.to_string()));
            }
        }
        self.columns
            .iter()
            .map(|c| {
                header
                    .iter()
                    .position(|h| h.as_ref() == c.name)
                    .ok_or_else(|| SchemaError::MissingColumn(c.name.clone()))
            })
            .collect()
    }
}

impl fmt::Display for Schema {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_json())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    const TYPES: [DataType; 3] = [DataType::Integer, DataType::Decimal { scale: 2 }, DataType::Text];

    #[test]
    fn minimal_document() {
        let s =
            parse_schema(r#"{"table":"cc","columns":[{"name":"pan","type":"integer","encrypt":"order_preserving"}]}"#)
                .unwrap();
        assert_eq!(s.table, "cc");
        assert_eq!(s.columns.len(), 1);
        assert_eq!(s.columns[0].scheme, Scheme::OrderPreserving);
    }

    #[test]
    fn homomorphic_text_is_rejected_with_column_name() {
        let err = parse_schema(r#"{"table":"t","columns":[{"name":"memo","type":"text","encrypt":"homomorphic"}]}"#)
            .unwrap_err();
        assert!(matches!(err, SchemaError::SchemeTypeMismatch { .. }));
        assert!(err.to_string().contains("memo"));
    }

    #[test]
    fn mixed_plain_and_encrypted_columns() {
        let s = parse_schema(
            r#"{"table":"t","columns":[
                {"name":"pan","type":"integer","encrypt":"order_preserving"},
                {"name":"city","type":"text","encrypt":"none"}]}"#,
        )
        .unwrap();
        assert_eq!(s.columns[1].scheme, Scheme::None);
    }

    #[test]
    fn structural_errors() {
        let dup = r#"{"table":"t","columns":[{"name":"a","type":"text","encrypt":"none"},{"name":"a","type":"text","encrypt":"none"}]}"#;
        assert!(matches!(parse_schema(dup), Err(SchemaError::DuplicateColumn(c)) if c == "a"));
        let alias = r#"{"table":"t","columns":[{"name":"a","type":"text","encrypt":"det"}]}"#;
        assert!(matches!(parse_schema(alias), Err(SchemaError::UnknownScheme { .. })));
        let empty = r#"{"table":"t","columns":[]}"#;
        assert!(matches!(parse_schema(empty), Err(SchemaError::NoColumns(_))));
        assert!(matches!(parse_schema("{"), Err(SchemaError::Json(_))));
        let two_ope = r#"{"table":"t","columns":[{"name":"a","type":"integer","encrypt":"order_preserving"},{"name":"b","type":"text","encrypt":"order_preserving"}]}"#;
        assert!(matches!(
            parse_schema(two_ope),
            Err(SchemaError::MultipleOrderColumns(..))
        ));
        let bad_name = r#"{"table":"t","columns":[{"name":"a__enc","type":"text","encrypt":"none"}]}"#;
        assert!(matches!(parse_schema(bad_name), Err(SchemaError::Identifier(_))));
        let no_scale = r#"{"table":"t","columns":[{"name":"a","type":"decimal","encrypt":"none"}]}"#;
        assert!(matches!(parse_schema(no_scale), Err(SchemaError::BadScale { .. })));
    }

    #[test]
    fn every_scheme_type_pair_is_decided() {
        for scheme in Scheme::ALL {
            for ty in TYPES {
                let expected = match scheme {
                    Scheme::Homomorphic => ty == DataType::Integer,
                    Scheme::Searchwords => ty == DataType::Text,
                    _ => true,
                };
                let doc = format!(
                    r#"{{"table":"t","columns":[{{"name":"c","type":"{}",{}"encrypt":"{}"}}]}}"#,
                    ty.name(),
                    if let DataType::Decimal { scale } = ty {
                        format!(r#""scale":{scale},"#)
                    } else {
                        String::new()
                    },
                    scheme
                );
                match parse_schema(&doc) {
                    Ok(_) => assert!(expected, "{scheme}/{}", ty.name()),
                    Err(SchemaError::SchemeTypeMismatch { column, .. }) => {
                        assert!(!expected);
                        assert_eq!(column, "c");
                    }
                    Err(e) => panic!("unexpected {e}"),
                }
            }
        }
    }

    #[test]
    fn header_mapping() {
        let s = parse_schema(
            r#"{"table":"t","columns":[{"name":"pan","type":"integer","encrypt":"none"},{"name":"name","type":"text","encrypt":"none"}]}"#,
        )
        .unwrap();
        assert_eq!(s.validate_header(&["pan", "name"]).unwrap(), vec![0, 1]);
        assert_eq!(s.validate_header(&["name", "pan"]).unwrap(), vec![1, 0]);
        let err = s.validate_header(&["name"]).unwrap_err();
        assert!(err.to_string().contains("pan"));
        assert!(matches!(
            s.validate_header(&["pan", "name", "x"]),
            Err(SchemaError::ExtraColumn(_))
        ));
        assert!(matches!(
            s.validate_header(&["pan", "pan", "name"]),
            Err(SchemaError::RepeatedInputColumn(_))
        ));
    }

    #[test]
    fn decimal_parsing_and_formatting() {
        let d = DataType::Decimal { scale: 2 };
        assert_eq!(d.parse_value("12.34").unwrap(), Value::Int(1234));
        assert_eq!(d.parse_value("12.3").unwrap(), Value::Int(1230));
        assert_eq!(d.parse_value("-0.05").unwrap(), Value::Int(-5));
        assert_eq!(d.parse_value("7").unwrap(), Value::Int(700));
        assert!(d.parse_value("1.234").is_err());
        assert!(d.parse_value("1e3").is_err());
        assert!(d.parse_value(".").is_err());
        assert_eq!(d.format_value(&Value::Int(-5)), "-0.05");
        assert_eq!(d.format_value(&Value::Int(1230)), "12.30");
        assert_eq!(DataType::Decimal { scale: 0 }.format_value(&Value::Int(3)), "3");
    }

    fn arb_column() -> impl Strategy<Value = ColumnSpec> {
        let ty = prop_oneof![
            Just(DataType::Integer),
            Just(DataType::Text),
            (0u32..=MAX_SCALE).prop_map(|scale| DataType::Decimal { scale }),
        ];
        let scheme = prop_oneof![
            Just(Scheme::None),
            Just(Scheme::Deterministic),
            Just(Scheme::Probabilistic),
            Just(Scheme::Pseudonym),
        ];
        ("[a-z][a-z0-9]{0,6}", ty, scheme).prop_map(|(name, data_type, scheme)| ColumnSpec {
            name,
            data_type,
            scheme,
        })
    }

    proptest! {
        #[test]
        fn canonical_round_trip(cols in proptest::collection::vec(arb_column(), 1..6)) {
            let mut seen = HashSet::new();
            let columns: Vec<_> = cols.into_iter().filter(|c| seen.insert(c.name.clone())).collect();
            let schema = Schema { table: "t".into(), columns };
            let text = schema.to_json();
            let back = parse_schema(&text).unwrap();
            prop_assert_eq!(&back, &schema);
            prop_assert_eq!(back.to_json(), text);
        }

        #[test]
        fn decimal_value_round_trip(units in any::<i64>(), scale in 0u32..=MAX_SCALE) {
            let ty = DataType::Decimal { scale };
            let v = Value::Int(units);
            prop_assert_eq!(ty.parse_value(&ty.format_value(&v)).unwrap(), v);
        }
    }
}
