use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mope::backend::{serve, Backend, BackendSim, RemoteBackend};
use mope::bench::{bench_encrypt, steps};
use mope::crypto::{Keyring, Keyset, Scheme, DEFAULT_PAILLIER_BITS};
use mope::ingest::{garbage_collect, load, CollisionPolicy, InputFormat, LoadOptions, StateStore, DEFAULT_CHUNK_SIZE};
use mope::query::{run_query, Cell};
use mope::schema::Schema;
use mope::{datagen, Error};
use serde_json::json;

/// Encrypted tables on an untrusted store.
#[derive(Parser)]
#[command(name = "mope", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Address of a running `mope serve`.
    #[arg(long, global = true, conflicts_with = "embedded_backend")]
    backend: Option<String>,
    /// Run the store in-process, persisted under `<state-dir>/backend` (the default).
    #[arg(long, global = true)]
    embedded_backend: bool,
    #[arg(long, global = true, default_value = "keys.json")]
    keys: PathBuf,
    #[arg(long, global = true)]
    schema: Option<PathBuf>,
    #[arg(long, global = true, default_value = ".mope")]
    state_dir: PathBuf,
    #[arg(long, global = true, default_value_t = DEFAULT_CHUNK_SIZE)]
    chunk_size: usize,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    /// Print reports as JSON.
    #[arg(long, global = true)]
    json: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a key file.
    Keygen {
        /// Defaults to --keys.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = DEFAULT_PAILLIER_BITS)]
        paillier_bits: u64,
        #[arg(long)]
        force: bool,
    },
    /// Write N simulated credit-card rows as CSV.
    Genload {
        rows: usize,
        /// Defaults to standard output.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the matching schema here.
        #[arg(long)]
        schema_out: Option<PathBuf>,
        #[arg(long, default_value = "cards")]
        table: String,
    },
    /// Encrypt and upload CSV or NDJSON files.
    Load {
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
        #[arg(long, value_enum)]
        format: Option<Format>,
        #[arg(long, value_enum, default_value = "abort")]
        on_collision: OnCollision,
    },
    /// Run a query and print the decrypted result as CSV.
    Query {
        sql: String,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Act as a client without the key of this column (repeatable).
        #[arg(long)]
        without_key: Vec<String>,
    },
    /// Merge all chunks into one and apply any pending re-encode.
    Gc,
    /// Benchmarks.
    #[command(subcommand)]
    Bench(Bench),
    /// Serve the store over TCP until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1:7878")]
        listen: String,
        /// Persist tables here; in memory if omitted.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum Bench {
    /// Time the encryption step on 16-digit samples.
    Encrypt {
        #[arg(long, value_delimiter = ',', default_values_t = [10_000usize, 100_000, 1_000_000])]
        sizes: Vec<usize>,
        /// Interleaved rounds; the median per size is reported.
        #[arg(long, default_value_t = 5)]
        rounds: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Ndjson,
}

#[derive(Clone, Copy, ValueEnum)]
enum OnCollision {
    Abort,
    Reencode,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if let Error::LoadAborted { partial, .. } = &e {
                eprintln!("uploaded before the failure:\n{}", partial.to_json());
            }
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn usage(msg: String) -> Error {
    Error::Io(io::Error::new(io::ErrorKind::InvalidInput, msg))
}

fn require_file(path: &Path, what: &str) -> Result<(), Error> {
    if path.is_file() {
        Ok(())
    } else {
        Err(usage(format!("{what} `{}` not found", path.display())))
    }
}

impl Global {
    fn schema(&self) -> Result<Schema, Error> {
        let path = self
            .schema
            .as_deref()
            .ok_or_else(|| usage("--schema is required".into()))?;
        require_file(path, "schema file")?;
        Schema::load(path)
    }

    fn keyset(&self) -> Result<Keyset, Error> {
        require_file(&self.keys, "key file")?;
        Ok(Keyset::load(&self.keys)?)
    }

    fn backend(&self) -> Result<Box<dyn Backend>, Error> {
        Ok(match &self.backend {
            Some(addr) => Box::new(RemoteBackend::connect(addr.as_str())?),
            None => Box::new(BackendSim::open(&self.state_dir.join("backend"))?),
        })
    }

    fn store(&self) -> StateStore {
        StateStore::new(&self.state_dir)
    }

    fn print(&self, value: serde_json::Value, text: impl FnOnce() -> String) {
        if self.json {
            println!("{}", serde_json::to_string_pretty(&value).expect("json value"));
        } else {
            println!("{}", text());
        }
    }
}

fn run(cli: Cli) -> Result<(), Error> {
    let g = &cli.global;
    if g.chunk_size == 0 {
        return Err(usage("--chunk-size must be at least 1".into()));
    }
    match cli.command {
        Command::Keygen {
            out,
            paillier_bits,
            force,
        } => {
            let path = out.unwrap_or_else(|| g.keys.clone());
            let keyset = Keyset::generate(paillier_bits, &mut rand::rngs::OsRng)?;
            keyset.save(&path, force)?;
            let bits = keyset.paillier().public().bits();
            g.print(json!({"path": path, "paillier_bits": bits}), || {
                format!("wrote {} (Paillier modulus {bits} bits)", path.display())
            });
        }
        Command::Genload {
            rows,
            out,
            schema_out,
            table,
        } => {
            if rows == 0 {
                return Err(usage("row count must be at least 1".into()));
            }
            match &out {
                Some(path) => {
                    let mut w = BufWriter::new(File::create(path)?);
                    datagen::write_cards(&mut w, rows, g.seed)?;
                    w.flush()?;
                }
                None => datagen::write_cards(io::stdout().lock(), rows, g.seed)?,
            }
            if let Some(path) = &schema_out {
                fs::write(path, datagen::card_schema(&table).to_json())?;
            }
            if let Some(path) = &out {
                g.print(json!({"rows": rows, "path": path, "seed": g.seed}), || {
                    format!("wrote {rows} rows to {}", path.display())
                });
            }
        }
        Command::Load {
            inputs,
            format,
            on_collision,
        } => {
            let schema = g.schema()?;
            let keyset = g.keyset()?;
            for input in &inputs {
                require_file(input, "input")?;
            }
            let backend = g.backend()?;
            let opts = LoadOptions {
                chunk_size: g.chunk_size,
                on_collision: match on_collision {
                    OnCollision::Abort => CollisionPolicy::Abort,
                    OnCollision::Reencode => CollisionPolicy::Reencode,
                },
                format: format.map(|f| match f {
                    Format::Csv => InputFormat::Csv,
                    Format::Ndjson => InputFormat::Ndjson,
                }),
                temp_dir: None,
            };
            let report = load(&inputs, &schema, &keyset, backend.as_ref(), &g.store(), opts)?;
            let manifest = g.state_dir.join(format!(
                "{}.load-{}.json",
                schema.table,
                report.chunks.first().map_or(0, |c| c.chunk)
            ));
            fs::create_dir_all(&g.state_dir)?;
            fs::write(&manifest, report.to_json())?;
            if g.json {
                println!("{}", report.to_json());
            } else {
                let p = &report.phases;
                println!(
                    "loaded {} rows into `{}` as {} chunk(s), {} -> {} bytes (gzip), epoch {}",
                    report.rows,
                    report.table,
                    report.chunks.len(),
                    report.raw_bytes,
                    report.compressed_bytes,
                    report.epoch
                );
                println!(
                    "read {:.3}s sort {:.3}s encrypt {:.3}s serialize {:.3}s compress {:.3}s stage {:.3}s upload {:.3}s",
                    p.read, p.sort, p.encrypt, p.serialize, p.compress, p.stage, p.upload
                );
                if report.gc_required {
                    println!("table holds chunks from an older epoch: run `mope gc` before querying");
                }
            }
        }
        Command::Query { sql, out, without_key } => {
            let schema = g.schema()?;
            let backend = g.backend()?;
            let (keys, ope) = client_keys(g, &schema, &without_key)?;
            let result = run_query(backend.as_ref(), &schema, &keys, ope.as_ref(), &sql)?;
            if g.json {
                let rows: Vec<Vec<serde_json::Value>> = result
                    .rows
                    .iter()
                    .map(|r| {
                        r.iter()
                            .zip(&result.types)
                            .map(|(c, ty)| match c {
                                Cell::Value(v) => json!(ty.format_value(v)),
                                Cell::Opaque(s) => json!({ "opaque": s }),
                            })
                            .collect()
                    })
                    .collect();
                let value = json!({
                    "columns": result.columns,
                    "rows": rows,
                    "sum": result.sum.as_ref().map(|s| s.to_str_radix(10)),
                    "chunks": result.chunks,
                });
                let text = serde_json::to_string_pretty(&value).expect("json value");
                match &out {
                    Some(path) => fs::write(path, text)?,
                    None => println!("{text}"),
                }
            } else {
                match &out {
                    Some(path) => result.write_csv(BufWriter::new(File::create(path)?))?,
                    None => result.write_csv(io::stdout().lock())?,
                }
            }
        }
        Command::Gc => {
            let schema = g.schema()?;
            let keyset = g.keyset()?;
            let backend = g.backend()?;
            let report = garbage_collect(backend.as_ref(), &schema, &keyset, &g.store())?;
            g.print(serde_json::to_value(&report).expect("report"), || {
                if report.noop {
                    format!("`{}` is already a single chunk at epoch {}", report.table, report.epoch)
                } else {
                    format!(
                        "merged chunks {:?} into chunk {} ({} rows, epoch {}{})",
                        report.removed,
                        report.added.unwrap_or_default(),
                        report.rows,
                        report.epoch,
                        if report.reencoded { ", re-encoded" } else { "" }
                    )
                }
            });
        }
        Command::Bench(Bench::Encrypt { sizes, rounds }) => {
            if sizes.contains(&0) {
                return Err(usage("sizes must be at least 1".into()));
            }
            let mut master = [0u8; 32];
            rand::RngCore::fill_bytes(&mut rand::rngs::OsRng, &mut master);
            let key = mope::crypto::derive_column_key(&master, "bench", "pan", Scheme::OrderPreserving);
            let rows = bench_encrypt(&sizes, g.seed, rounds, &key);
            let steps = steps(&rows);
            let linear = steps.iter().all(|s| s.linear);
            g.print(json!({"rows": rows, "steps": steps, "linear": linear}), || {
                let mut s = format!(
                    "{:>10} {:>6} {:>14} {:>12}\n",
                    "samples", "digits", "plaintext", "seconds"
                );
                for r in &rows {
                    s += &format!(
                        "{:>10} {:>6} {:>14} {:>12.4}\n",
                        r.n,
                        r.digits,
                        human_bytes(r.plaintext_bytes),
                        r.seconds
                    );
                }
                for st in &steps {
                    s += &format!(
                        "{} -> {}: time x{:.2}, size x{:.2}{}\n",
                        st.from,
                        st.to,
                        st.time_ratio,
                        st.size_ratio,
                        if st.linear { "" } else { "  (outside bounds)" }
                    );
                }
                s += if linear { "linear: yes" } else { "linear: no" };
                s
            });
        }
        Command::Serve { listen, data } => {
            let sim = match &data {
                Some(dir) => BackendSim::open(dir)?,
                None => BackendSim::in_memory(),
            };
            let handle = serve(Arc::new(sim), listen.as_str())?;
            println!("listening on {}", handle.local_addr());
            io::stdout().flush()?;
            handle.join();
        }
    }
    Ok(())
}

/// Keys for a query client. A missing key file gives a keyless client that
/// can still read plaintext columns.
fn client_keys(
    g: &Global,
    schema: &Schema,
    without: &[String],
) -> Result<(Keyring, Option<mope::ope::OpeState>), Error> {
    if !g.keys.is_file() {
        return Ok((Keyring::empty(&schema.table), None));
    }
    let keyset = Keyset::load(&g.keys)?;
    let mut keys = keyset.keyring(&schema.table, schema.column_schemes());
    for col in without {
        if schema.column(col).is_none() {
            return Err(mope::query::QueryError::UnknownColumn(col.clone()).into());
        }
        keys = keys.without_column(col);
        if schema.column(col).is_some_and(|(_, c)| c.scheme == Scheme::Homomorphic) {
            keys = keys.without_paillier();
        }
    }
    let ope = match schema.order_column() {
        Some((_, col)) => match keys.key(&col.name) {
            Some(key) => Some(g.store().load(&schema.table, &col.name, col.data_type, key)?),
            None => None,
        },
        None => None,
    };
    Ok((keys, ope))
}

fn human_bytes(n: u64) -> String {
    match n {
        n if n >= 1_000_000 => format!("{:.1} MB", n as f64 / 1e6),
        n if n >= 1_000 => format!("{:.1} kB", n as f64 / 1e3),
        n => format!("{n} B"),
    }
}
