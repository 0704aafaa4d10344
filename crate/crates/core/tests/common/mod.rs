//! Fixtures and a plaintext reference engine shared by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use mope::backend::{Backend, BackendSim};
use mope::crypto::{pseudonym, searchwords, Keyring, Keyset, Scheme};
use mope::ingest::{LoadOptions, LoadReport, Loader, PlainRow, StateStore};
use mope::ope::OpeState;
use mope::query::{bind, parse_query, BoundProjection, BoundQuery, Cell, PredOp, ResultSet};
use mope::schema::{Schema, Value};
use rand::rngs::StdRng;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};

pub fn keyset(bits: u64, seed: u64) -> Keyset {
    Keyset::generate(bits, &mut StdRng::seed_from_u64(seed)).unwrap()
}

pub fn card_rows(n: usize, seed: u64, schema: &Schema) -> Vec<PlainRow> {
    let mut buf = Vec::new();
    mope::datagen::write_cards(&mut buf, n, seed).unwrap();
    mope::ingest::read_csv(buf.as_slice(), schema)
        .unwrap()
        .collect::<Result<_, _>>()
        .unwrap()
}

/// A table on an in-memory backend plus the plaintext it should hold, kept
/// chunk by chunk in stored row order.
pub struct Fixture<B: Backend = BackendSim> {
    pub schema: Schema,
    pub keyset: Keyset,
    pub backend: B,
    pub state_dir: tempfile::TempDir,
    pub chunks: Vec<Vec<Vec<Value>>>,
}

impl Fixture<BackendSim> {
    pub fn new(schema: Schema, keyset: Keyset) -> Self {
        Fixture::with_backend(schema, keyset, BackendSim::in_memory())
    }
}

impl<B: Backend> Fixture<B> {
    pub fn with_backend(schema: Schema, keyset: Keyset, backend: B) -> Self {
        Fixture {
            schema,
            keyset,
            backend,
            state_dir: tempfile::tempdir().unwrap(),
            chunks: Vec::new(),
        }
    }

    pub fn store(&self) -> StateStore {
        StateStore::new(self.state_dir.path())
    }

    pub fn keys(&self) -> Keyring {
        self.keyset.keyring(&self.schema.table, self.schema.column_schemes())
    }

    pub fn ope(&self) -> Option<OpeState> {
        let (_, col) = self.schema.order_column()?;
        let key = self
            .keyset
            .column_key(&self.schema.table, &col.name, Scheme::OrderPreserving);
        Some(
            self.store()
                .load(&self.schema.table, &col.name, col.data_type, &key)
                .unwrap(),
        )
    }

    pub fn try_load(&mut self, rows: Vec<PlainRow>, opts: LoadOptions) -> Result<LoadReport, mope::Error> {
        let chunk_size = opts.chunk_size;
        let store = self.store();
        let mut loader = Loader::new(&self.schema, &self.keyset, &self.backend, &store, opts)?;
        let pushed = loader.push(rows.clone().into_iter().map(Ok));
        let result = match pushed {
            Ok(()) => loader.finish(),
            Err(e) => Err(loader.abort(e)),
        };
        let uploaded = match &result {
            Ok(r) => r.chunks.len(),
            Err(mope::Error::LoadAborted { partial, .. }) => partial.chunks.len(),
            Err(_) => 0,
        };
        for block in rows.chunks(chunk_size).take(uploaded) {
            self.chunks.push(stored_order(
                &self.schema,
                block.iter().map(|r| r.values.clone()).collect(),
            ));
        }
        result
    }

    pub fn load(&mut self, rows: Vec<PlainRow>, chunk_size: usize) -> LoadReport {
        self.try_load(
            rows,
            LoadOptions {
                chunk_size,
                ..LoadOptions::default()
            },
        )
        .unwrap()
    }

    pub fn gc(&mut self) -> mope::ingest::GcReport {
        let report = mope::ingest::garbage_collect(&self.backend, &self.schema, &self.keyset, &self.store()).unwrap();
        if !report.noop {
            let all: Vec<Vec<Value>> = self.chunks.drain(..).flatten().collect();
            self.chunks.push(stored_order(&self.schema, all));
        }
        report
    }

    pub fn query(&self, sql: &str) -> Result<ResultSet, mope::query::QueryError> {
        mope::query::run_query(&self.backend, &self.schema, &self.keys(), self.ope().as_ref(), sql)
    }

    pub fn expected(&self, sql: &str) -> Expected {
        reference(&self.schema, &self.keys(), &self.chunks, sql)
    }

    pub fn all_rows(&self) -> Vec<Vec<Value>> {
        self.chunks.iter().flatten().cloned().collect()
    }
}

/// Rows of one chunk in the order the proxy stores them: stably sorted by
/// the order-preserving column, if any.
pub fn stored_order(schema: &Schema, mut rows: Vec<Vec<Value>>) -> Vec<Vec<Value>> {
    if let Some((i, _)) = schema.order_column() {
        rows.sort_by(|a, b| a[i].cmp(&b[i]));
    }
    rows
}

#[derive(Debug, PartialEq, Eq)]
pub struct Expected {
    pub rows: Vec<Vec<Cell>>,
    pub sum: Option<u128>,
}

fn words(text: &str) -> HashSet<String> {
    text.to_lowercase().split_whitespace().map(str::to_string).collect()
}

fn holds(op: PredOp, cell: &Value, lit: &Value) -> bool {
    match op {
        PredOp::Eq => cell == lit,
        PredOp::Lt => cell < lit,
        PredOp::Le => cell <= lit,
        PredOp::Gt => cell > lit,
        PredOp::Ge => cell >= lit,
        PredOp::Contains => match (cell, lit) {
            (Value::Text(c), Value::Text(l)) => {
                let have = words(c);
                words(l).iter().all(|w| have.contains(w))
            }
            _ => false,
        },
    }
}

/// Evaluates `sql` over plaintext with no cryptography beyond recomputing
/// the one-way cells the client is expected to return as opaque.
pub fn reference(schema: &Schema, keys: &Keyring, chunks: &[Vec<Vec<Value>>], sql: &str) -> Expected {
    let q: BoundQuery = bind(&parse_query(sql).unwrap(), schema).unwrap();
    let mut rows: Vec<&Vec<Value>> = chunks
        .iter()
        .flatten()
        .filter(|r| q.predicates.iter().all(|p| holds(p.op, &r[p.column], &p.value)))
        .collect();
    match q.projection {
        BoundProjection::Sum(i) => Expected {
            rows: Vec::new(),
            sum: Some(rows.iter().map(|r| r[i].as_int().unwrap() as u128).sum()),
        },
        BoundProjection::Rows(cols) => {
            if let Some((i, desc)) = q.order_by {
                if desc {
                    rows.sort_by(|a, b| b[i].cmp(&a[i]));
                } else {
                    rows.sort_by(|a, b| a[i].cmp(&b[i]));
                }
            }
            if let Some(l) = q.limit {
                rows.truncate(l as usize);
            }
            let cells = rows
                .iter()
                .map(|r| cols.iter().map(|&c| expected_cell(schema, keys, c, &r[c])).collect())
                .collect();
            Expected { rows: cells, sum: None }
        }
    }
}

fn expected_cell(schema: &Schema, keys: &Keyring, col: usize, v: &Value) -> Cell {
    let spec = &schema.columns[col];
    let text = spec.data_type.format_value(v);
    let key = keys.key(&spec.name);
    match spec.scheme {
        Scheme::Pseudonym => Cell::Opaque(pseudonym(key.unwrap(), text.as_bytes()).unwrap().to_base64()),
        Scheme::Searchwords => Cell::Opaque(
            searchwords(key.unwrap(), &text)
                .unwrap()
                .iter()
                .map(|t| t.to_base64())
                .collect::<Vec<_>>()
                .join(" "),
        ),
        _ => Cell::Value(v.clone()),
    }
}

pub fn actual(result: &ResultSet) -> Expected {
    Expected {
        rows: result.rows.clone(),
        sum: result.sum.as_ref().map(|s| u128::try_from(s.clone()).unwrap()),
    }
}

fn literal(v: &Value, schema: &Schema, col: usize) -> String {
    match v {
        Value::Int(_) => schema.columns[col].data_type.format_value(v),
        Value::Text(s) => format!("'{}'", s.replace('\'', "''")),
    }
}

/// A random statement of the grammar over the columns of `schema`, with
/// literals drawn from `rows`, their neighbours, and values absent from it.
pub fn random_query(rng: &mut StdRng, schema: &Schema, rows: &[Vec<Value>]) -> String {
    let table = &schema.table;
    let mut preds = Vec::new();
    for _ in 0..rng.gen_range(0..=3) {
        let legal: Vec<(usize, PredOp)> = schema
            .columns
            .iter()
            .enumerate()
            .flat_map(|(i, c)| {
                [
                    PredOp::Eq,
                    PredOp::Lt,
                    PredOp::Le,
                    PredOp::Gt,
                    PredOp::Ge,
                    PredOp::Contains,
                ]
                .into_iter()
                .filter(move |op| mope::query::op_allowed(*op, c.scheme))
                .map(move |op| (i, op))
            })
            .collect();
        let &(col, op) = legal.choose(rng).unwrap();
        let sample = &rows.choose(rng).unwrap()[col];
        let lit = match (op, sample) {
            (PredOp::Contains, Value::Text(t)) => {
                let ws: Vec<&str> = t.split_whitespace().collect();
                match rng.gen_range(0..4) {
                    0 => "'absentword'".to_string(),
                    1 if ws.len() > 1 => format!("'{} {}'", ws[0], ws[ws.len() - 1]),
                    _ => format!("'{}'", ws.choose(rng).copied().unwrap_or("x")),
                }
            }
            (_, Value::Int(v)) => {
                let v = match rng.gen_range(0..5) {
                    0 => v - 1,
                    1 => v + 1,
                    2 => rng.gen_range(v.saturating_sub(1_000_000_000)..=v.saturating_add(1_000_000_000)),
                    _ => *v,
                };
                literal(&Value::Int(v), schema, col)
            }
            (_, Value::Text(t)) => {
                let t = match rng.gen_range(0..4) {
                    0 => format!("{t}x"),
                    _ => t.clone(),
                };
                literal(&Value::Text(t), schema, col)
            }
        };
        preds.push(format!("{} {} {}", schema.columns[col].name, op.as_str(), lit));
    }
    let where_ = if preds.is_empty() {
        String::new()
    } else {
        format!(" WHERE {}", preds.join(" AND "))
    };

    let summable: Vec<&str> = schema
        .columns
        .iter()
        .filter(|c| c.scheme == Scheme::Homomorphic)
        .map(|c| c.name.as_str())
        .collect();
    if !summable.is_empty() && rng.gen_bool(0.2) {
        return format!("SELECT SUM({}) FROM {table}{where_}", summable.choose(rng).unwrap());
    }

    let projection = if rng.gen_bool(0.3) {
        "*".to_string()
    } else {
        let k = rng.gen_range(1..=schema.columns.len());
        let mut cols: Vec<&str> = schema.columns.iter().map(|c| c.name.as_str()).collect();
        cols.shuffle(rng);
        cols[..k].join(", ")
    };
    let orderable: Vec<&str> = schema
        .columns
        .iter()
        .filter(|c| matches!(c.scheme, Scheme::None | Scheme::OrderPreserving))
        .map(|c| c.name.as_str())
        .collect();
    let order = if !orderable.is_empty() && rng.gen_bool(0.7) {
        format!(
            " ORDER BY {}{}",
            orderable.choose(rng).unwrap(),
            if rng.gen_bool(0.5) { " DESC" } else { "" }
        )
    } else {
        String::new()
    };
    let limit = if rng.gen_bool(0.5) {
        format!(" LIMIT {}", rng.gen_range(0..60))
    } else {
        String::new()
    };
    format!("SELECT {projection} FROM {table}{where_}{order}{limit}")
}

/// Checks 200 random queries against the reference; returns the mismatches.
pub fn oracle_mismatches<B: Backend>(fx: &Fixture<B>, seed: u64, count: usize) -> Vec<String> {
    let mut rng = StdRng::seed_from_u64(seed);
    let rows = fx.all_rows();
    let mut bad = Vec::new();
    for _ in 0..count {
        let sql = random_query(&mut rng, &fx.schema, &rows);
        let want = fx.expected(&sql);
        match fx.query(&sql) {
            Ok(got) if actual(&got) == want => {}
            Ok(got) => bad.push(format!("{sql}: got {} rows, want {}", got.rows.len(), want.rows.len())),
            Err(e) => bad.push(format!("{sql}: {e}")),
        }
    }
    bad
}
