use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::Path;

use super::IngestError;
use crate::schema::{Schema, Value};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum InputFormat {
    /// RFC 4180 with a header row.
    Csv,
    /// One JSON object per line.
    Ndjson,
}

impl InputFormat {
    /// Guesses from the file extension; anything but `.json`/`.ndjson`/`.jsonl` is CSV.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("json" | "ndjson" | "jsonl") => InputFormat::Ndjson,
            _ => InputFormat::Csv,
        }
    }
}

/// One typed input record, cells in schema order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PlainRow {
    /// 1-based line of the record in its input file.
    pub line: u64,
    pub values: Vec<Value>,
}

pub type RowReader<'a> = Box<dyn Iterator<Item = Result<PlainRow, IngestError>> + Send + 'a>;

pub fn read_input<'a>(path: &Path, format: InputFormat, schema: &'a Schema) -> Result<RowReader<'a>, crate::Error> {
    let file = BufReader::new(File::open(path)?);
    Ok(match format {
        InputFormat::Csv => read_csv(file, schema)?,
        InputFormat::Ndjson => read_ndjson(file, schema),
    })
}

pub fn read_csv<'a, R: Read + Send + 'a>(reader: R, schema: &'a Schema) -> Result<RowReader<'a>, IngestError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| IngestError::Csv {
            line: 1,
            msg: e.to_string(),
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mapping = schema.validate_header(&header)?;
    let expected = header.len();
    let rows = rdr.into_records().map(move |rec| {
        let rec = rec.map_err(|e| match e.kind() {
            csv::ErrorKind::UnequalLengths { pos, expected_len, len } => IngestError::Arity {
                line: pos.as_ref().map_or(0, |p| p.line()),
                expected: *expected_len as usize,
                found: *len as usize,
            },
            _ => IngestError::Csv {
                line: e.position().map_or(0, |p| p.line()),
                msg: e.to_string(),
            },
        })?;
        let line = rec.position().map_or(0, |p| p.line());
        if rec.len() != expected {
            return Err(IngestError::Arity {
                line,
                expected,
                found: rec.len(),
            });
        }
        let values = schema
            .columns
            .iter()
            .zip(&mapping)
            .map(|(col, &pos)| {
                col.data_type
                    .parse_value(&rec[pos])
                    .map_err(|source| IngestError::Value {
                        line,
                        column: col.name.clone(),
                        source,
                    })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Ok(PlainRow { line, values })
    });
    Ok(Box::new(rows))
}

fn json_cell(v: &serde_json::Value) -> Option<String> {
    match v {
        serde_json::Value::String(s) => Some(s.clone()),
        serde_json::Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

pub fn read_ndjson<'a, R: BufRead + Send + 'a>(reader: R, schema: &'a Schema) -> RowReader<'a> {
    let rows = reader.lines().enumerate().filter_map(move |(i, line)| {
        let line_no = i as u64 + 1;
        let text = match line {
            Ok(t) => t,
            Err(e) => {
                return Some(Err(IngestError::Json {
                    line: line_no,
                    msg: e.to_string(),
                }))
            }
        };
        if text.trim().is_empty() {
            return None;
        }
        Some(parse_json_row(&text, line_no, schema))
    });
    Box::new(rows)
}

fn parse_json_row(text: &str, line: u64, schema: &Schema) -> Result<PlainRow, IngestError> {
    let obj: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(text).map_err(|e| IngestError::Json {
            line,
            msg: e.to_string(),
        })?;
    if let Some(extra) = obj.keys().find(|k| schema.column(k).is_none()) {
        return Err(IngestError::ExtraKey {
            line,
            key: extra.clone(),
        });
    }
    let values = schema
        .columns
        .iter()
        .map(|col| {
            let v = obj.get(&col.name).ok_or_else(|| IngestError::MissingKey {
                line,
                key: col.name.clone(),
            })?;
            let raw = json_cell(v).ok_or_else(|| IngestError::Json {
                line,
                msg: format!("`{}` must be a string or number", col.name),
            })?;
            col.data_type.parse_value(&raw).map_err(|source| IngestError::Value {
                line,
                column: col.name.clone(),
                source,
            })
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(PlainRow { line, values })
}
