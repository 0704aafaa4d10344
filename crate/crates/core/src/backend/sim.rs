use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock, RwLock};

use num_bigint::BigUint;
use num_traits::One;
use serde::{Deserialize, Serialize};

use super::protocol::*;
use super::{Backend, BackendError};
use crate::chunk::{self, TOKEN_SEPARATOR};
use crate::crypto::Scheme;
use crate::schema::{is_identifier, DataType, Value};

const MANIFEST_VERSION: u32 = 1;
const MANIFEST: &str = "manifest.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    table: String,
    meta: TableMeta,
    next_chunk: u64,
    chunks: Vec<ChunkInfo>,
}

struct Parsed {
    columns: HashMap<String, usize>,
    rows: Vec<csv::StringRecord>,
}

struct StoredChunk {
    info: ChunkInfo,
    payload: Vec<u8>,
    parsed: OnceLock<Result<Arc<Parsed>, String>>,
}

impl StoredChunk {
    fn new(info: ChunkInfo, payload: Vec<u8>) -> Self {
        StoredChunk {
            info,
            payload,
            parsed: OnceLock::new(),
        }
    }

    /// Decompressed rows, decoded once and cached.
    fn rows(&self) -> Result<Arc<Parsed>, BackendError> {
        self.parsed
            .get_or_init(|| {
                let raw = chunk::decompress(&self.payload).map_err(|e| e.to_string())?;
                let (header, rows) = chunk::parse_rows(&raw).map_err(|e| e.to_string())?;
                let columns = header.into_iter().enumerate().map(|(i, h)| (h, i)).collect();
                Ok(Arc::new(Parsed { columns, rows }))
            })
            .clone()
            .map_err(|e| BackendError::Corrupt(format!("chunk {}: {e}", self.info.chunk)))
    }
}

#[derive(Clone, Default)]
struct ChunkSet {
    chunks: BTreeMap<u64, Arc<StoredChunk>>,
    next: u64,
}

struct Table {
    name: String,
    meta: TableMeta,
    /// Serializes insert and swap on this table.
    writer: Mutex<()>,
    snapshot: RwLock<Arc<ChunkSet>>,
}

impl Table {
    fn snapshot(&self) -> Arc<ChunkSet> {
        self.snapshot.read().expect("lock").clone()
    }
}

/// Role of a physical column.
#[derive(Clone, Copy, PartialEq, Eq)]
enum Role {
    Plain,
    Enc,
    Ope,
}

/// In-process untrusted store. Optionally persisted to a directory: one
/// sub-directory per table holding `manifest.json` and `chunk-<id>.gz` files.
pub struct BackendSim {
    root: Option<PathBuf>,
    tables: RwLock<HashMap<String, Arc<Table>>>,
}

impl Default for BackendSim {
    fn default() -> Self {
        BackendSim::in_memory()
    }
}

impl BackendSim {
    pub fn in_memory() -> Self {
        BackendSim {
            root: None,
            tables: RwLock::new(HashMap::new()),
        }
    }

    /// Opens (or creates) a persistent store and re-reads every manifest.
    pub fn open(root: &Path) -> Result<Self, BackendError> {
        fs::create_dir_all(root).map_err(storage)?;
        let mut tables = HashMap::new();
        for entry in fs::read_dir(root).map_err(storage)? {
            let dir = entry.map_err(storage)?.path();
            let manifest_path = dir.join(MANIFEST);
            if !manifest_path.is_file() {
                continue;
            }
            let manifest: Manifest = serde_json::from_slice(&fs::read(&manifest_path).map_err(storage)?)
                .map_err(|e| BackendError::Storage(format!("{}: {e}", manifest_path.display())))?;
            if manifest.version != MANIFEST_VERSION {
                return Err(BackendError::Storage(format!(
                    "{}: unsupported manifest version {}",
                    manifest_path.display(),
                    manifest.version
                )));
            }
            let mut set = ChunkSet {
                chunks: BTreeMap::new(),
                next: manifest.next_chunk,
            };
            for info in manifest.chunks {
                let payload = fs::read(dir.join(chunk_file(info.chunk))).map_err(storage)?;
                set.chunks.insert(info.chunk, Arc::new(StoredChunk::new(info, payload)));
            }
            tables.insert(
                manifest.table.clone(),
                Arc::new(Table {
                    name: manifest.table,
                    meta: manifest.meta,
                    writer: Mutex::new(()),
                    snapshot: RwLock::new(Arc::new(set)),
                }),
            );
        }
        Ok(BackendSim {
            root: Some(root.to_path_buf()),
            tables: RwLock::new(tables),
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn table(&self, name: &str) -> Result<Arc<Table>, BackendError> {
        self.tables
            .read()
            .expect("lock")
            .get(name)
            .cloned()
            .ok_or_else(|| BackendError::UnknownTable(name.to_string()))
    }

    fn table_dir(&self, name: &str) -> Option<PathBuf> {
        self.root.as_ref().map(|r| r.join(name))
    }

    fn persist(&self, table: &Table, set: &ChunkSet, new_chunk: Option<&StoredChunk>) -> Result<(), BackendError> {
        let Some(dir) = self.table_dir(&table.name) else {
            return Ok(());
        };
        fs::create_dir_all(&dir).map_err(storage)?;
        if let Some(c) = new_chunk {
            write_atomic(&dir.join(chunk_file(c.info.chunk)), &c.payload)?;
        }
        let manifest = Manifest {
            version: MANIFEST_VERSION,
            table: table.name.clone(),
            meta: table.meta.clone(),
            next_chunk: set.next,
            chunks: set.chunks.values().map(|c| c.info.clone()).collect(),
        };
        write_atomic(
            &dir.join(MANIFEST),
            &serde_json::to_vec_pretty(&manifest).expect("manifest serializes"),
        )
    }

    fn stored(chunk: NewChunk) -> StoredChunk {
        let info = ChunkInfo {
            chunk: chunk.chunk,
            epoch: chunk.epoch,
            row_count: chunk.row_count,
            bytes: chunk.payload.len() as u64,
        };
        StoredChunk::new(info, chunk.payload)
    }
}

fn storage(e: std::io::Error) -> BackendError {
    BackendError::Storage(e.to_string())
}

fn chunk_file(id: u64) -> String {
    format!("chunk-{id}.gz")
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), BackendError> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(storage)?;
    fs::rename(&tmp, path).map_err(storage)
}

fn resolve(meta: &TableMeta, physical: &str) -> Result<(Role, StoredColumn), BackendError> {
    let (base, role) = if let Some(b) = physical.strip_suffix("__enc") {
        (b, Role::Enc)
    } else if let Some(b) = physical.strip_suffix("__ope") {
        (b, Role::Ope)
    } else {
        (physical, Role::Plain)
    };
    let col = meta
        .columns
        .iter()
        .find(|c| c.name == base)
        .ok_or_else(|| BackendError::BadPlan(format!("unknown column `{physical}`")))?;
    let valid = match role {
        Role::Plain => col.scheme == Scheme::None,
        Role::Enc => col.scheme != Scheme::None,
        Role::Ope => col.scheme == Scheme::OrderPreserving,
    };
    if !valid {
        return Err(BackendError::BadPlan(format!("unknown column `{physical}`")));
    }
    Ok((role, col.clone()))
}

/// A filter bound to a column position, ready to run over rows.
enum Compiled {
    Equals(usize, String),
    Code(usize, CmpOp, u64),
    Contains(usize, String),
    Plain(usize, DataType, CmpOp, Value),
    Never,
}

fn position(parsed: &Parsed, column: &str) -> Result<usize, BackendError> {
    parsed
        .columns
        .get(column)
        .copied()
        .ok_or_else(|| BackendError::Corrupt(format!("chunk lacks column `{column}`")))
}

fn compile(meta: &TableMeta, parsed: &Parsed, f: &Filter) -> Result<Compiled, BackendError> {
    let (role, col) = resolve(meta, &f.column)?;
    let illegal = || {
        BackendError::BadPlan(format!(
            "test `{}` is not supported on `{}` ({})",
            test_name(&f.test),
            f.column,
            col.scheme
        ))
    };
    let pos = position(parsed, &f.column)?;
    Ok(match &f.test {
        Test::Equals { value } => {
            if role != Role::Enc || !matches!(col.scheme, Scheme::Deterministic | Scheme::Pseudonym) {
                return Err(illegal());
            }
            Compiled::Equals(pos, value.clone())
        }
        Test::Code { op, code } => {
            if role != Role::Ope {
                return Err(illegal());
            }
            Compiled::Code(pos, *op, *code)
        }
        Test::Contains { token } => {
            if role != Role::Enc || col.scheme != Scheme::Searchwords {
                return Err(illegal());
            }
            Compiled::Contains(pos, token.clone())
        }
        Test::Plain { op, value } => {
            if role != Role::Plain {
                return Err(illegal());
            }
            let literal = col
                .data_type
                .parse_value(value)
                .map_err(|e| BackendError::BadPlan(e.to_string()))?;
            Compiled::Plain(pos, col.data_type, *op, literal)
        }
        Test::Never => Compiled::Never,
    })
}

fn test_name(t: &Test) -> &'static str {
    match t {
        Test::Equals { .. } => "equals",
        Test::Code { .. } => "code",
        Test::Contains { .. } => "contains",
        Test::Plain { .. } => "plain",
        Test::Never => "never",
    }
}

fn parse_code(cell: &str) -> Result<u64, BackendError> {
    cell.parse()
        .map_err(|_| BackendError::Corrupt(format!("`{cell}` is not an order code")))
}

impl Compiled {
    fn matches(&self, row: &csv::StringRecord) -> Result<bool, BackendError> {
        let cell = |i: usize| row.get(i).unwrap_or("");
        Ok(match self {
            Compiled::Equals(i, v) => cell(*i) == v,
            Compiled::Code(i, op, code) => op.holds(parse_code(cell(*i))?.cmp(code)),
            Compiled::Contains(i, t) => cell(*i).split(TOKEN_SEPARATOR).any(|tok| tok == t),
            Compiled::Plain(i, ty, op, lit) => {
                let v = ty
                    .parse_value(cell(*i))
                    .map_err(|e| BackendError::Corrupt(e.to_string()))?;
                op.holds(v.cmp(lit))
            }
            Compiled::Never => false,
        })
    }
}

fn sort_value(role: Role, col: &StoredColumn, cell: &str) -> Result<SortValue, BackendError> {
    if role == Role::Ope {
        return Ok(SortValue::Code(parse_code(cell)?));
    }
    match col.data_type.parse_value(cell) {
        Ok(Value::Int(v)) => Ok(SortValue::Int(v)),
        Ok(Value::Text(s)) => Ok(SortValue::Text(s)),
        Err(e) => Err(BackendError::Corrupt(e.to_string())),
    }
}

fn run_plan(meta: &TableMeta, chunk: &StoredChunk, plan: &EncryptedPlan) -> Result<ChunkQueryResult, BackendError> {
    if plan.epoch != chunk.info.epoch {
        return Err(BackendError::EpochMismatch(format!(
            "chunk {} is at epoch {}, plan expects {}; garbage collection required",
            chunk.info.chunk, chunk.info.epoch, plan.epoch
        )));
    }
    let parsed = chunk.rows()?;
    let filters = plan
        .filters
        .iter()
        .map(|f| compile(meta, &parsed, f))
        .collect::<Result<Vec<_>, _>>()?;
    let mut selected = Vec::new();
    'rows: for (i, row) in parsed.rows.iter().enumerate() {
        for f in &filters {
            if !f.matches(row)? {
                continue 'rows;
            }
        }
        selected.push(i);
    }
    let matched = selected.len() as u64;

    match &plan.output {
        Output::Sum { column } => {
            let (role, col) = resolve(meta, column)?;
            if role != Role::Enc || col.scheme != Scheme::Homomorphic {
                return Err(BackendError::BadPlan(format!("SUM is not supported on `{column}`")));
            }
            let n = meta
                .paillier_n
                .as_deref()
                .and_then(|n| BigUint::parse_bytes(n.as_bytes(), 10))
                .ok_or_else(|| BackendError::BadPlan("table has no Paillier modulus".into()))?;
            let n2 = &n * &n;
            let pos = position(&parsed, column)?;
            let mut acc = BigUint::one();
            for i in selected {
                let cell = parsed.rows[i].get(pos).unwrap_or("");
                let c = BigUint::parse_bytes(cell.as_bytes(), 10)
                    .ok_or_else(|| BackendError::Corrupt(format!("`{cell}` is not a Paillier ciphertext")))?;
                acc = acc * c % &n2;
            }
            Ok(ChunkQueryResult {
                chunk: chunk.info.chunk,
                matched,
                rows: Vec::new(),
                sum: Some(acc.to_str_radix(10)),
            })
        }
        Output::Rows { columns } => {
            let positions = columns
                .iter()
                .map(|c| resolve(meta, c).and_then(|_| position(&parsed, c)))
                .collect::<Result<Vec<_>, _>>()?;
            let mut keyed: Vec<(Option<SortValue>, usize)> = match &plan.order_by {
                Some(spec) => {
                    let (role, col) = resolve(meta, &spec.column)?;
                    if role == Role::Enc {
                        return Err(BackendError::BadPlan(format!("cannot order by `{}`", spec.column)));
                    }
                    let pos = position(&parsed, &spec.column)?;
                    let mut keyed = selected
                        .into_iter()
                        .map(|i| Ok((Some(sort_value(role, &col, parsed.rows[i].get(pos).unwrap_or(""))?), i)))
                        .collect::<Result<Vec<_>, BackendError>>()?;
                    // Ties keep row order in both directions.
                    if spec.desc {
                        keyed.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
                    } else {
                        keyed.sort();
                    }
                    keyed
                }
                None => selected.into_iter().map(|i| (None, i)).collect(),
            };
            if let Some(limit) = plan.limit {
                keyed.truncate(limit.min(usize::MAX as u64) as usize);
            }
            let rows = keyed
                .into_iter()
                .map(|(sort, i)| {
                    let row = &parsed.rows[i];
                    ResultRow {
                        index: i as u64,
                        sort,
                        cells: positions
                            .iter()
                            .map(|&p| row.get(p).unwrap_or("").to_string())
                            .collect(),
                    }
                })
                .collect();
            Ok(ChunkQueryResult {
                chunk: chunk.info.chunk,
                matched,
                rows,
                sum: None,
            })
        }
    }
}

fn check_payload(meta: &TableMeta, c: &NewChunk) -> Result<(), BackendError> {
    let raw = chunk::decompress(&c.payload).map_err(|e| BackendError::BadRequest(e.to_string()))?;
    let (header, rows) = chunk::parse_rows(&raw).map_err(|e| BackendError::BadRequest(e.to_string()))?;
    if header != meta.physical_header() {
        return Err(BackendError::SchemaMismatch(format!(
            "chunk header {header:?} does not match table columns {:?}",
            meta.physical_header()
        )));
    }
    if rows.len() as u64 != c.row_count {
        return Err(BackendError::BadRequest(format!(
            "chunk declares {} rows but holds {}",
            c.row_count,
            rows.len()
        )));
    }
    Ok(())
}

impl Backend for BackendSim {
    fn create_table(&self, table: &str, meta: &TableMeta) -> Result<(), BackendError> {
        if !is_identifier(table) {
            return Err(BackendError::BadRequest(format!("invalid table name `{table}`")));
        }
        let mut tables = self.tables.write().expect("lock");
        if let Some(existing) = tables.get(table) {
            return if &existing.meta == meta {
                Ok(())
            } else {
                Err(BackendError::SchemaMismatch(format!(
                    "table `{table}` exists with different columns"
                )))
            };
        }
        let t = Table {
            name: table.to_string(),
            meta: meta.clone(),
            writer: Mutex::new(()),
            snapshot: RwLock::new(Arc::new(ChunkSet::default())),
        };
        self.persist(&t, &ChunkSet::default(), None)?;
        tables.insert(table.to_string(), Arc::new(t));
        Ok(())
    }

    fn describe_table(&self, table: &str) -> Result<TableMeta, BackendError> {
        Ok(self.table(table)?.meta.clone())
    }

    fn insert_chunk(&self, table: &str, chunk: NewChunk) -> Result<(), BackendError> {
        let t = self.table(table)?;
        check_payload(&t.meta, &chunk)?;
        let _guard = t.writer.lock().expect("lock");
        let mut set = (*t.snapshot()).clone();
        if chunk.chunk < set.next || set.chunks.contains_key(&chunk.chunk) {
            return Err(BackendError::DuplicateChunk(format!("{table}/{}", chunk.chunk)));
        }
        let stored = Arc::new(BackendSim::stored(chunk));
        set.next = stored.info.chunk + 1;
        set.chunks.insert(stored.info.chunk, stored.clone());
        self.persist(&t, &set, Some(&stored))?;
        *t.snapshot.write().expect("lock") = Arc::new(set);
        Ok(())
    }

    fn list_chunks(&self, table: &str) -> Result<ChunkListing, BackendError> {
        let set = self.table(table)?.snapshot();
        Ok(ChunkListing {
            chunks: set.chunks.values().map(|c| c.info.clone()).collect(),
            next_chunk: set.next,
        })
    }

    fn get_chunk(&self, table: &str, chunk: u64) -> Result<ChunkData, BackendError> {
        let set = self.table(table)?.snapshot();
        let c = set
            .chunks
            .get(&chunk)
            .ok_or_else(|| BackendError::UnknownChunk(format!("{table}/{chunk}")))?;
        Ok(ChunkData {
            info: c.info.clone(),
            payload: c.payload.clone(),
        })
    }

    fn swap_chunks(&self, table: &str, remove: &[u64], add: NewChunk) -> Result<(), BackendError> {
        let t = self.table(table)?;
        check_payload(&t.meta, &add)?;
        let _guard = t.writer.lock().expect("lock");
        let mut set = (*t.snapshot()).clone();
        for id in remove {
            if !set.chunks.contains_key(id) {
                return Err(BackendError::UnknownChunk(format!("{table}/{id}")));
            }
        }
        if add.chunk < set.next || set.chunks.contains_key(&add.chunk) {
            return Err(BackendError::DuplicateChunk(format!("{table}/{}", add.chunk)));
        }
        for id in remove {
            set.chunks.remove(id);
        }
        let stored = Arc::new(BackendSim::stored(add));
        set.next = stored.info.chunk + 1;
        set.chunks.insert(stored.info.chunk, stored.clone());
        self.persist(&t, &set, Some(&stored))?;
        *t.snapshot.write().expect("lock") = Arc::new(set);
        if let Some(dir) = self.table_dir(table) {
            for id in remove {
                let _ = fs::remove_file(dir.join(chunk_file(*id)));
            }
        }
        Ok(())
    }

    fn exec_chunk_query(
        &self,
        table: &str,
        chunk: u64,
        plan: &EncryptedPlan,
    ) -> Result<ChunkQueryResult, BackendError> {
        let t = self.table(table)?;
        let set = t.snapshot();
        let c = set
            .chunks
            .get(&chunk)
            .ok_or_else(|| BackendError::UnknownChunk(format!("{table}/{chunk}")))?;
        run_plan(&t.meta, c, plan)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::schema::parse_schema;

    fn meta() -> TableMeta {
        let schema = parse_schema(
            r#"{"table":"t","columns":[
                {"name":"pan","type":"integer","encrypt":"order_preserving"},
                {"name":"city","type":"text","encrypt":"none"},
                {"name":"name","type":"text","encrypt":"deterministic"},
                {"name":"notes","type":"text","encrypt":"searchwords"},
                {"name":"bal","type":"integer","encrypt":"homomorphic"}]}"#,
        )
        .unwrap();
        TableMeta::from_schema(&schema, Some(&BigUint::from(35u32)))
    }

    fn chunk(id: u64, epoch: u64, rows: &[[&str; 6]]) -> NewChunk {
        let header = meta().physical_header();
        let rows: Vec<Vec<String>> = rows.iter().map(|r| r.iter().map(|c| c.to_string()).collect()).collect();
        NewChunk {
            chunk: id,
            epoch,
            row_count: rows.len() as u64,
            payload: chunk::compress(&chunk::serialize_rows(&header, &rows)),
        }
    }

    const TWO_62: u64 = 1 << 62;

    fn sample() -> BackendSim {
        let b = BackendSim::in_memory();
        b.create_table("t", &meta()).unwrap();
        let a = format!("x|{TWO_62}");
        let c1 = (1u64 << 63).to_string();
        let c2 = (TWO_62 * 3).to_string();
        b.insert_chunk(
            "t",
            chunk(
                0,
                0,
                &[
                    [&a, &TWO_62.to_string(), "rome", "QQ==", "t1 t2", "1"],
                    ["y|0", &c1, "oslo", "Qg==", "t2", "1"],
                    ["z|0", &c2, "rome", "QQ==", "", "1"],
                ],
            ),
        )
        .unwrap();
        b
    }

    fn rows_plan(filters: Vec<Filter>) -> EncryptedPlan {
        EncryptedPlan {
            epoch: 0,
            output: Output::Rows {
                columns: vec!["city".into()],
            },
            filters,
            order_by: None,
            limit: None,
        }
    }

    #[test]
    fn create_then_list_is_empty() {
        let b = BackendSim::in_memory();
        b.create_table("t", &meta()).unwrap();
        let l = b.list_chunks("t").unwrap();
        assert!(l.chunks.is_empty());
        assert_eq!(l.next_chunk, 0);
        // Idempotent for identical metadata, refused otherwise.
        b.create_table("t", &meta()).unwrap();
        let mut other = meta();
        other.columns.pop();
        assert!(matches!(
            b.create_table("t", &other),
            Err(BackendError::SchemaMismatch(_))
        ));
        assert!(matches!(b.list_chunks("nope"), Err(BackendError::UnknownTable(_))));
    }

    #[test]
    fn range_on_codes() {
        let b = sample();
        let plan = rows_plan(vec![Filter {
            column: "pan__ope".into(),
            test: Test::Code {
                op: CmpOp::Ge,
                code: 1 << 63,
            },
        }]);
        let r = b.exec_chunk_query("t", 0, &plan).unwrap();
        assert_eq!(r.matched, 2);
        assert_eq!(r.rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 2]);
    }

    #[test]
    fn equality_returns_all_duplicates() {
        let b = sample();
        let plan = rows_plan(vec![Filter {
            column: "name__enc".into(),
            test: Test::Equals { value: "QQ==".into() },
        }]);
        assert_eq!(b.exec_chunk_query("t", 0, &plan).unwrap().matched, 2);
    }

    #[test]
    fn contains_and_plain_and_never() {
        let b = sample();
        let contains = rows_plan(vec![Filter {
            column: "notes__enc".into(),
            test: Test::Contains { token: "t2".into() },
        }]);
        assert_eq!(b.exec_chunk_query("t", 0, &contains).unwrap().matched, 2);
        let plain = rows_plan(vec![Filter {
            column: "city".into(),
            test: Test::Plain {
                op: CmpOp::Eq,
                value: "rome".into(),
            },
        }]);
        assert_eq!(b.exec_chunk_query("t", 0, &plain).unwrap().matched, 2);
        let never = rows_plan(vec![Filter {
            column: "city".into(),
            test: Test::Never,
        }]);
        assert_eq!(b.exec_chunk_query("t", 0, &never).unwrap().matched, 0);
    }

    #[test]
    fn order_and_limit() {
        let b = sample();
        let mut plan = rows_plan(vec![]);
        plan.order_by = Some(SortSpec {
            column: "pan__ope".into(),
            desc: true,
        });
        plan.limit = Some(2);
        let r = b.exec_chunk_query("t", 0, &plan).unwrap();
        assert_eq!(r.matched, 3);
        let cities: Vec<_> = r.rows.iter().map(|r| r.cells[0].as_str()).collect();
        assert_eq!(cities, vec!["rome", "oslo"]);
        assert_eq!(r.rows[0].sort, Some(SortValue::Code(TWO_62 * 3)));
        plan.order_by = Some(SortSpec {
            column: "city".into(),
            desc: false,
        });
        plan.limit = None;
        let r = b.exec_chunk_query("t", 0, &plan).unwrap();
        assert_eq!(r.rows.iter().map(|r| r.index).collect::<Vec<_>>(), vec![1, 0, 2]);
    }

    #[test]
    fn illegal_tests_are_rejected() {
        let b = sample();
        for (column, test) in [
            ("pan__enc", Test::Equals { value: "x".into() }),
            ("name__enc", Test::Code { op: CmpOp::Lt, code: 3 }),
            ("city", Test::Contains { token: "x".into() }),
            ("missing", Test::Never),
            ("city__ope", Test::Never),
        ] {
            let plan = rows_plan(vec![Filter {
                column: column.into(),
                test,
            }]);
            assert!(
                matches!(b.exec_chunk_query("t", 0, &plan), Err(BackendError::BadPlan(_))),
                "{column}"
            );
        }
        let mut plan = rows_plan(vec![]);
        plan.output = Output::Sum {
            column: "name__enc".into(),
        };
        assert!(matches!(
            b.exec_chunk_query("t", 0, &plan),
            Err(BackendError::BadPlan(_))
        ));
    }

    #[test]
    fn epoch_mismatch_is_typed() {
        let b = sample();
        let mut plan = rows_plan(vec![]);
        plan.epoch = 1;
        assert!(matches!(
            b.exec_chunk_query("t", 0, &plan),
            Err(BackendError::EpochMismatch(_))
        ));
    }

    #[test]
    fn toy_paillier_sum() {
        use crate::crypto::PaillierKeypair;
        let kp = PaillierKeypair::from_primes(&BigUint::from(5u32), &BigUint::from(7u32)).unwrap();
        let pk = kp.public();
        let b = BackendSim::in_memory();
        b.create_table("t", &meta()).unwrap();
        let c2 = pk.encrypt_u64(2).unwrap().to_decimal();
        let c3 = pk.encrypt_u64(3).unwrap().to_decimal();
        b.insert_chunk(
            "t",
            chunk(
                0,
                0,
                &[["a|1", "1", "x", "QQ==", "", &c2], ["b|2", "2", "y", "QQ==", "", &c3]],
            ),
        )
        .unwrap();
        let mut plan = rows_plan(vec![]);
        plan.output = Output::Sum {
            column: "bal__enc".into(),
        };
        let r = b.exec_chunk_query("t", 0, &plan).unwrap();
        let sum = crate::crypto::PaillierCiphertext::from_decimal(r.sum.as_deref().unwrap()).unwrap();
        assert_eq!(kp.private().decrypt(&sum).unwrap(), BigUint::from(5u32));
    }

    #[test]
    fn swap_is_atomic_and_ids_monotone() {
        let b = sample();
        b.insert_chunk("t", chunk(1, 0, &[["q|5", "5", "x", "QQ==", "", "1"]]))
            .unwrap();
        assert!(matches!(
            b.insert_chunk("t", chunk(1, 0, &[["q|5", "5", "x", "QQ==", "", "1"]])),
            Err(BackendError::DuplicateChunk(_))
        ));
        b.swap_chunks("t", &[0, 1], chunk(2, 0, &[["q|5", "5", "x", "QQ==", "", "1"]]))
            .unwrap();
        assert_eq!(b.list_chunks("t").unwrap().ids(), vec![2]);
        assert!(matches!(
            b.swap_chunks("t", &[0], chunk(3, 0, &[])),
            Err(BackendError::UnknownChunk(_))
        ));
        assert_eq!(b.list_chunks("t").unwrap().ids(), vec![2]);
        // Removed ids are never reused.
        assert!(b.insert_chunk("t", chunk(0, 0, &[])).is_err());
    }

    #[test]
    fn concurrent_readers_see_old_or_new_set() {
        let b = Arc::new(sample());
        b.insert_chunk("t", chunk(1, 0, &[["q|5", "5", "x", "QQ==", "", "1"]]))
            .unwrap();
        let stop = Arc::new(std::sync::atomic::AtomicBool::new(false));
        let reader = {
            let b = b.clone();
            let stop = stop.clone();
            std::thread::spawn(move || {
                let mut seen = Vec::new();
                while !stop.load(std::sync::atomic::Ordering::Relaxed) {
                    seen.push(b.list_chunks("t").unwrap().ids());
                }
                seen
            })
        };
        b.swap_chunks("t", &[0, 1], chunk(2, 0, &[])).unwrap();
        std::thread::sleep(std::time::Duration::from_millis(5));
        stop.store(true, std::sync::atomic::Ordering::Relaxed);
        for ids in reader.join().unwrap() {
            assert!(ids == vec![0, 1] || ids == vec![2], "{ids:?}");
        }
    }

    #[test]
    fn payload_must_match_table() {
        let b = BackendSim::in_memory();
        b.create_table("t", &meta()).unwrap();
        let bad = NewChunk {
            chunk: 0,
            epoch: 0,
            row_count: 0,
            payload: chunk::compress(&chunk::serialize_rows(&["x".to_string()], &[])),
        };
        assert!(matches!(b.insert_chunk("t", bad), Err(BackendError::SchemaMismatch(_))));
        let mut lying = chunk(0, 0, &[]);
        lying.row_count = 4;
        assert!(matches!(b.insert_chunk("t", lying), Err(BackendError::BadRequest(_))));
    }

    #[test]
    fn persistence_survives_reopen() {
        let dir = tempfile::tempdir().unwrap();
        {
            let b = BackendSim::open(dir.path()).unwrap();
            b.create_table("t", &meta()).unwrap();
            b.insert_chunk("t", chunk(0, 0, &[["q|5", "5", "x", "QQ==", "", "1"]]))
                .unwrap();
            b.insert_chunk("t", chunk(1, 0, &[["q|5", "5", "x", "QQ==", "", "1"]]))
                .unwrap();
            b.swap_chunks("t", &[0, 1], chunk(2, 3, &[["q|5", "5", "x", "QQ==", "", "1"]]))
                .unwrap();
        }
        let b = BackendSim::open(dir.path()).unwrap();
        let l = b.list_chunks("t").unwrap();
        assert_eq!(l.ids(), vec![2]);
        assert_eq!(l.next_chunk, 3);
        assert_eq!(l.chunks[0].epoch, 3);
        assert_eq!(b.describe_table("t").unwrap(), meta());
        assert!(!dir.path().join("t").join("chunk-0.gz").exists());
    }
}
