//! Types exchanged with the backend, in-process and on the wire.

use serde::{Deserialize, Serialize};

use crate::crypto::Scheme;
use crate::schema::{DataType, Schema};

/// Public description of one logical column. Carries no key material.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoredColumn {
    pub name: String,
    pub scheme: Scheme,
    pub data_type: DataType,
}

/// Column metadata of a stored table. The Paillier modulus `n` is public and
/// lets the backend multiply ciphertexts mod n^2.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableMeta {
    pub columns: Vec<StoredColumn>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub paillier_n: Option<String>,
}

impl TableMeta {
    pub fn from_schema(schema: &Schema, paillier_n: Option<&num_bigint::BigUint>) -> Self {
        let has_sum = schema.columns.iter().any(|c| c.scheme == Scheme::Homomorphic);
        TableMeta {
            columns: schema
                .columns
                .iter()
                .map(|c| StoredColumn {
                    name: c.name.clone(),
                    scheme: c.scheme,
                    data_type: c.data_type,
                })
                .collect(),
            paillier_n: if has_sum {
                paillier_n.map(|n| n.to_str_radix(10))
            } else {
                None
            },
        }
    }

    pub fn physical_header(&self) -> Vec<String> {
        crate::chunk::physical_header(self.columns.iter().map(|c| (c.name.as_str(), c.scheme)))
    }
}

mod base64_bytes {
    use base64::engine::general_purpose::STANDARD as B64;
    use base64::Engine as _;
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(bytes: &[u8], s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&B64.encode(bytes))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let text = String::deserialize(d)?;
        B64.decode(text.as_bytes()).map_err(serde::de::Error::custom)
    }
}

/// A compressed chunk on its way to the backend.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NewChunk {
    pub chunk: u64,
    pub epoch: u64,
    pub row_count: u64,
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkInfo {
    pub chunk: u64,
    pub epoch: u64,
    pub row_count: u64,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkListing {
    pub chunks: Vec<ChunkInfo>,
    /// Smallest id never used by this table.
    pub next_chunk: u64,
}

impl ChunkListing {
    pub fn ids(&self) -> Vec<u64> {
        self.chunks.iter().map(|c| c.chunk).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Eq,
    Lt,
    Le,
    Gt,
    Ge,
}

impl CmpOp {
    pub fn holds(self, ord: std::cmp::Ordering) -> bool {
        use std::cmp::Ordering::*;
        match self {
            CmpOp::Eq => ord == Equal,
            CmpOp::Lt => ord == Less,
            CmpOp::Le => ord != Greater,
            CmpOp::Gt => ord == Greater,
            CmpOp::Ge => ord != Less,
        }
    }
}

/// A predicate the backend can evaluate without keys.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "test", rename_all = "snake_case")]
pub enum Test {
    /// Exact match of the cell text (deterministic ciphertext or token).
    Equals { value: String },
    /// Unsigned comparison of an `__ope` code cell.
    Code { op: CmpOp, code: u64 },
    /// The token occurs in a searchwords cell.
    Contains { token: String },
    /// Typed comparison of a plaintext column.
    Plain { op: CmpOp, value: String },
    /// Selects nothing (e.g. equality with a value absent from the column).
    Never,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Filter {
    /// Physical column name.
    pub column: String,
    #[serde(flatten)]
    pub test: Test,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Output {
    /// Return these physical columns for every selected row.
    Rows { columns: Vec<String> },
    /// Multiply the Paillier cells of this physical column.
    Sum { column: String },
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SortSpec {
    /// Physical column: an `__ope` code column or a plaintext column.
    pub column: String,
    pub desc: bool,
}

/// A query with every literal already in ciphertext form.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncryptedPlan {
    pub epoch: u64,
    pub output: Output,
    #[serde(default)]
    pub filters: Vec<Filter>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub order_by: Option<SortSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub limit: Option<u64>,
}

/// Sort value of a returned row, used by the client-side merge.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SortValue {
    Code(u64),
    Int(i64),
    Text(String),
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResultRow {
    /// Position of the row inside its chunk.
    pub index: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sort: Option<SortValue>,
    pub cells: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkQueryResult {
    pub chunk: u64,
    /// Rows selected by the filters, before LIMIT.
    pub matched: u64,
    #[serde(default)]
    pub rows: Vec<ResultRow>,
    /// Decimal Paillier ciphertext for SUM plans.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sum: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkData {
    pub info: ChunkInfo,
    #[serde(with = "base64_bytes")]
    pub payload: Vec<u8>,
}

/// Wire request. `{"op": "...", ...}`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Request {
    CreateTable {
        table: String,
        meta: TableMeta,
    },
    DescribeTable {
        table: String,
    },
    InsertChunk {
        table: String,
        chunk: NewChunk,
    },
    ListChunks {
        table: String,
    },
    GetChunk {
        table: String,
        chunk: u64,
    },
    SwapChunks {
        table: String,
        remove: Vec<u64>,
        add: NewChunk,
    },
    ExecChunkQuery {
        table: String,
        chunk: u64,
        plan: EncryptedPlan,
    },
}

/// Wire response: `{"ok": value}` or `{"err": code, "msg": text}`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Response {
    Ok { ok: serde_json::Value },
    Err { err: String, msg: String },
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn request_shape() {
        let req = Request::ExecChunkQuery {
            table: "cc".into(),
            chunk: 3,
            plan: EncryptedPlan {
                epoch: 0,
                output: Output::Rows {
                    columns: vec!["pan__enc".into()],
                },
                filters: vec![Filter {
                    column: "pan__ope".into(),
                    test: Test::Code {
                        op: CmpOp::Ge,
                        code: 1 << 63,
                    },
                }],
                order_by: Some(SortSpec {
                    column: "pan__ope".into(),
                    desc: false,
                }),
                limit: Some(10),
            },
        };
        let v = serde_json::to_value(&req).unwrap();
        assert_eq!(v["op"], "exec_chunk_query");
        assert_eq!(v["table"], "cc");
        assert_eq!(v["plan"]["filters"][0]["test"], "code");
        assert_eq!(v["plan"]["filters"][0]["op"], "ge");
        let back: Request = serde_json::from_value(v).unwrap();
        assert_eq!(back, req);
    }

    #[test]
    fn response_shapes() {
        let ok: Response = serde_json::from_str(r#"{"ok": null}"#).unwrap();
        assert!(matches!(ok, Response::Ok { .. }));
        let err: Response = serde_json::from_str(r#"{"err": "bad_request", "msg": "x"}"#).unwrap();
        assert!(matches!(err, Response::Err { .. }));
    }

    #[test]
    fn payload_is_base64_on_the_wire() {
        let c = NewChunk {
            chunk: 0,
            epoch: 0,
            row_count: 1,
            payload: vec![0, 1, 2],
        };
        let v = serde_json::to_value(&c).unwrap();
        assert_eq!(v["payload"], "AAEC");
    }
}
