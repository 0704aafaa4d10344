use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use super::{encrypt_rows, read_input, stable_sort, IngestError, InputFormat, PlainRow};
use crate::backend::{Backend, NewChunk, TableMeta};
use crate::chunk::{compress, serialize_rows};
use crate::crypto::{ColumnKey, Keyring, Keyset, Scheme};
use crate::ope::OpeState;
use crate::schema::Schema;
use crate::Error;

pub const DEFAULT_CHUNK_SIZE: usize = 100_000;

/// What a load does when the order encoder runs out of codes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum CollisionPolicy {
    /// Mark the state for re-encoding and stop; `gc` re-encodes.
    #[default]
    Abort,
    /// Re-encode on the spot and continue at the new epoch. Chunks uploaded
    /// earlier become stale until `gc` runs.
    Reencode,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub chunk_size: usize,
    pub on_collision: CollisionPolicy,
    /// Forces the input format instead of guessing from the extension.
    pub format: Option<InputFormat>,
    /// Where chunk files are staged before upload. Defaults to the system temp dir.
    pub temp_dir: Option<PathBuf>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            chunk_size: DEFAULT_CHUNK_SIZE,
            on_collision: CollisionPolicy::Abort,
            format: None,
            temp_dir: None,
        }
    }
}

/// Wall-clock seconds spent per phase, summed over chunks.
#[derive(Clone, Debug, Default, Serialize)]
pub struct PhaseTimes {
    pub read: f64,
    pub sort: f64,
    pub encrypt: f64,
    pub serialize: f64,
    pub compress: f64,
    pub stage: f64,
    pub upload: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ChunkReport {
    pub chunk: u64,
    pub epoch: u64,
    pub rows: u64,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
}

/// Also the load manifest: every chunk that reached the backend.
#[derive(Clone, Debug, Default, Serialize)]
pub struct LoadReport {
    pub table: String,
    pub rows: u64,
    pub input_bytes: u64,
    pub raw_bytes: u64,
    pub compressed_bytes: u64,
    pub chunks: Vec<ChunkReport>,
    pub phases: PhaseTimes,
    pub epoch: u64,
    pub reencoded: bool,
    /// Some chunks carry an older epoch; queries refuse until `gc` runs.
    pub gc_required: bool,
    /// Staged chunk file left behind by a failed upload.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kept_temp_file: Option<PathBuf>,
}

impl LoadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn secs(start: Instant) -> f64 {
    start.elapsed().as_secs_f64()
}

/// Creates the table if needed and inserts one chunk, after checking that the
/// payload carries none of `needles`.
pub fn upload(
    backend: &dyn Backend,
    table: &str,
    meta: &TableMeta,
    chunk: NewChunk,
    needles: &[Vec<u8>],
) -> Result<u64, Error> {
    if needles.iter().any(|n| contains(&chunk.payload, n)) {
        return Err(IngestError::KeyLeak.into());
    }
    backend.create_table(table, meta)?;
    let id = chunk.chunk;
    backend.insert_chunk(table, chunk)?;
    Ok(id)
}

pub(crate) fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    !needle.is_empty() && haystack.windows(needle.len()).any(|w| w == needle)
}

struct OrderColumn {
    name: String,
    key: ColumnKey,
    state: OpeState,
}

/// Incremental form of [`load`]: rows are pushed in, a chunk goes out every
/// `chunk_size` rows, and [`Loader::finish`] flushes the rest.
pub struct Loader<'a> {
    schema: &'a Schema,
    backend: &'a dyn Backend,
    store: &'a super::StateStore,
    opts: LoadOptions,
    keys: Keyring,
    meta: TableMeta,
    header: Vec<String>,
    needles: Vec<Vec<u8>>,
    order: Option<OrderColumn>,
    next_chunk: u64,
    pending: Vec<PlainRow>,
    report: LoadReport,
    _lock: Option<super::StateLock>,
}

impl<'a> Loader<'a> {
    pub fn new(
        schema: &'a Schema,
        keyset: &Keyset,
        backend: &'a dyn Backend,
        store: &'a super::StateStore,
        opts: LoadOptions,
    ) -> Result<Self, Error> {
        assert!(opts.chunk_size > 0, "chunk_size must be positive");
        let table = schema.table.as_str();
        let keys = keyset.keyring(table, schema.column_schemes());
        let mut needles = keyset.secret_needles();
        needles.extend(keys.secret_needles());
        let meta = TableMeta::from_schema(schema, Some(keyset.paillier().public().n()));

        let mut lock = None;
        let mut order = None;
        let mut report = LoadReport {
            table: table.to_string(),
            ..LoadReport::default()
        };
        if let Some((_, col)) = schema.order_column() {
            lock = Some(store.lock(table, &col.name)?);
            let key = keyset.column_key(table, &col.name, Scheme::OrderPreserving);
            let mut state = store.load(table, &col.name, col.data_type, &key)?;
            if state.pending_reencode() {
                match opts.on_collision {
                    CollisionPolicy::Abort => {
                        return Err(IngestError::ReencodeRequired {
                            column: col.name.clone(),
                        }
                        .into())
                    }
                    CollisionPolicy::Reencode => {
                        state.reencode()?;
                        store.save(table, &col.name, &state, &key)?;
                        report.reencoded = true;
                    }
                }
            }
            report.epoch = state.epoch();
            order = Some(OrderColumn {
                name: col.name.clone(),
                key,
                state,
            });
        }

        backend.create_table(table, &meta)?;
        let next_chunk = backend.list_chunks(table)?.next_chunk;
        Ok(Loader {
            schema,
            backend,
            store,
            header: meta.physical_header(),
            meta,
            keys,
            needles,
            order,
            next_chunk,
            pending: Vec::with_capacity(opts.chunk_size.min(DEFAULT_CHUNK_SIZE)),
            opts,
            report,
            _lock: lock,
        })
    }

    pub fn report(&self) -> &LoadReport {
        &self.report
    }

    /// Adds to the plaintext byte count reported for the load.
    pub fn count_input_bytes(&mut self, n: u64) {
        self.report.input_bytes += n;
    }

    pub fn push(&mut self, rows: impl Iterator<Item = Result<PlainRow, IngestError>>) -> Result<(), Error> {
        let mut rows = rows;
        loop {
            let t = Instant::now();
            let next = rows.next();
            self.report.phases.read += secs(t);
            match next {
                None => return Ok(()),
                Some(row) => {
                    self.pending.push(row?);
                    if self.pending.len() >= self.opts.chunk_size {
                        self.flush()?;
                    }
                }
            }
        }
    }

    /// Uploads the last partial chunk. Failures come back as [`Error::LoadAborted`].
    pub fn finish(mut self) -> Result<LoadReport, Error> {
        match self.finish_inner() {
            Ok(()) => Ok(self.report),
            Err(e) => Err(self.abort(e)),
        }
    }

    fn finish_inner(&mut self) -> Result<(), Error> {
        if !self.pending.is_empty() {
            self.flush()?;
        }
        let epoch = self.report.epoch;
        self.report.gc_required = self
            .backend
            .list_chunks(&self.schema.table)?
            .chunks
            .iter()
            .any(|c| c.epoch != epoch);
        Ok(())
    }

    /// Consumes the loader after a failure, wrapping `err` with what was uploaded.
    pub fn abort(self, err: Error) -> Error {
        Error::LoadAborted {
            source: Box::new(err),
            partial: Box::new(self.report),
        }
    }

    fn flush(&mut self) -> Result<(), Error> {
        let mut rows = std::mem::take(&mut self.pending);
        let table = self.schema.table.clone();

        let t = Instant::now();
        stable_sort(&mut rows, self.schema);
        self.report.phases.sort += secs(t);

        let t = Instant::now();
        let state = self.order.as_mut().map(|o| &mut o.state);
        let cipher = match encrypt_rows(self.schema, &self.keys, state, &rows) {
            Err(IngestError::ReencodeRequired { column }) => {
                let o = self.order.as_mut().expect("collision implies an order column");
                match self.opts.on_collision {
                    CollisionPolicy::Abort => {
                        o.state.mark_pending_reencode();
                        self.store.save(&table, &o.name, &o.state, &o.key)?;
                        return Err(IngestError::ReencodeRequired { column }.into());
                    }
                    CollisionPolicy::Reencode => {
                        o.state.reencode()?;
                        self.report.reencoded = true;
                        self.report.epoch = o.state.epoch();
                        encrypt_rows(self.schema, &self.keys, Some(&mut o.state), &rows)?
                    }
                }
            }
            other => other?,
        };
        self.report.phases.encrypt += secs(t);
        // Persist new codes before they can reach the backend.
        if let Some(o) = &self.order {
            self.store.save(&table, &o.name, &o.state, &o.key)?;
        }

        let t = Instant::now();
        let row_count = cipher.len() as u64;
        let cells: Vec<Vec<String>> = cipher.into_iter().map(|r| r.cells).collect();
        let raw = serialize_rows(&self.header, &cells);
        drop(cells);
        self.report.phases.serialize += secs(t);

        let t = Instant::now();
        let compressed = compress(&raw);
        self.report.phases.compress += secs(t);

        let t = Instant::now();
        let dir = self.opts.temp_dir.clone().unwrap_or_else(std::env::temp_dir);
        let mut staged = tempfile::Builder::new()
            .prefix("chunk-")
            .suffix(".csv.gz")
            .tempfile_in(&dir)?;
        staged.write_all(&compressed)?;
        staged.flush()?;
        let payload = fs::read(staged.path())?;
        self.report.phases.stage += secs(t);

        let t = Instant::now();
        let chunk = NewChunk {
            chunk: self.next_chunk,
            epoch: self.report.epoch,
            row_count,
            payload,
        };
        if let Err(e) = upload(self.backend, &table, &self.meta, chunk, &self.needles) {
            self.report.kept_temp_file = staged.keep().ok().map(|(_, p)| p);
            return Err(e);
        }
        self.report.phases.upload += secs(t);

        self.report.chunks.push(ChunkReport {
            chunk: self.next_chunk,
            epoch: self.report.epoch,
            rows: row_count,
            raw_bytes: raw.len() as u64,
            compressed_bytes: compressed.len() as u64,
        });
        self.next_chunk += 1;
        self.report.rows += row_count;
        self.report.raw_bytes += raw.len() as u64;
        self.report.compressed_bytes += compressed.len() as u64;
        Ok(())
    }
}

/// Encrypts and uploads every row of `paths`, one chunk per `chunk_size`
/// rows. On failure the error is [`Error::LoadAborted`] carrying the chunks
/// that were uploaded before it.
pub fn load(
    paths: &[impl AsRef<Path>],
    schema: &Schema,
    keyset: &Keyset,
    backend: &dyn Backend,
    store: &super::StateStore,
    opts: LoadOptions,
) -> Result<LoadReport, Error> {
    let format = opts.format;
    let mut loader = Loader::new(schema, keyset, backend, store, opts)?;
    for path in paths {
        let path = path.as_ref();
        let step = fs::metadata(path).map_err(Error::from).and_then(|m| {
            loader.count_input_bytes(m.len());
            let rows = read_input(path, format.unwrap_or_else(|| InputFormat::from_path(path)), schema)?;
            loader.push(rows)
        });
        if let Err(e) = step {
            return Err(loader.abort(e));
        }
    }
    loader.finish()
}
