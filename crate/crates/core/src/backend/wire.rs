//! Length-prefixed JSON framing: a 4-byte big-endian length, then that many
//! bytes of UTF-8 JSON. One request frame is answered by one response frame;
//! a connection carries any number of exchanges.

use std::io::{self, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::protocol::*;
use super::{Backend, BackendError, BackendSim};

/// Frames above this size are refused.
pub const MAX_FRAME: usize = 1 << 30;

pub fn write_frame<W: Write>(w: &mut W, body: &[u8]) -> io::Result<()> {
    if body.len() > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidInput, "frame too large"));
    }
    w.write_all(&(body.len() as u32).to_be_bytes())?;
    w.write_all(body)?;
    w.flush()
}

/// Reads one frame; `Ok(None)` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> io::Result<Option<Vec<u8>>> {
    let mut len = [0u8; 4];
    match r.read_exact(&mut len) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e),
    }
    let len = u32::from_be_bytes(len) as usize;
    if len > MAX_FRAME {
        return Err(io::Error::new(io::ErrorKind::InvalidData, "frame too large"));
    }
    let mut body = vec![0u8; len];
    r.read_exact(&mut body)?;
    Ok(Some(body))
}

fn ok<T: Serialize>(value: T) -> Response {
    Response::Ok {
        ok: serde_json::to_value(value).expect("response serializes"),
    }
}

fn err(e: BackendError) -> Response {
    Response::Err {
        err: e.code().to_string(),
        msg: e.message(),
    }
}

/// Dispatches one request against an in-process store.
pub fn handle_request(sim: &BackendSim, req: Request) -> Response {
    let result = match req {
        Request::CreateTable { table, meta } => sim.create_table(&table, &meta).map(ok),
        Request::DescribeTable { table } => sim.describe_table(&table).map(ok),
        Request::InsertChunk { table, chunk } => sim.insert_chunk(&table, chunk).map(ok),
        Request::ListChunks { table } => sim.list_chunks(&table).map(ok),
        Request::GetChunk { table, chunk } => sim.get_chunk(&table, chunk).map(ok),
        Request::SwapChunks { table, remove, add } => sim.swap_chunks(&table, &remove, add).map(ok),
        Request::ExecChunkQuery { table, chunk, plan } => sim.exec_chunk_query(&table, chunk, &plan).map(ok),
    };
    result.unwrap_or_else(err)
}

/// Parses and answers one frame body. Malformed input gets a `bad_request`
/// response rather than closing the connection.
fn answer(sim: &BackendSim, body: &[u8]) -> Response {
    match serde_json::from_slice::<Request>(body) {
        Ok(req) => handle_request(sim, req),
        Err(e) => err(BackendError::BadRequest(e.to_string())),
    }
}

fn serve_connection(sim: &BackendSim, mut stream: TcpStream) -> io::Result<()> {
    stream.set_nodelay(true)?;
    while let Some(body) = read_frame(&mut stream)? {
        let resp = answer(sim, &body);
        write_frame(&mut stream, &serde_json::to_vec(&resp).expect("response serializes"))?;
    }
    Ok(())
}

/// A running backend service. Dropping the handle stops accepting connections.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    accept: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn join(mut self) {
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_accepting();
    }

    fn stop_accepting(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        if let Some(h) = self.accept.take() {
            let _ = h.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.accept.is_some() {
            self.stop_accepting();
        }
    }
}

/// Binds `addr` and serves requests, one thread per connection.
pub fn serve(sim: Arc<BackendSim>, addr: impl ToSocketAddrs) -> io::Result<ServerHandle> {
    let listener = TcpListener::bind(addr)?;
    let local = listener.local_addr()?;
    let stop = Arc::new(AtomicBool::new(false));
    let accept = {
        let stop = stop.clone();
        std::thread::spawn(move || {
            for conn in listener.incoming() {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                let Ok(stream) = conn else { continue };
                let sim = sim.clone();
                std::thread::spawn(move || {
                    let _ = serve_connection(&sim, stream);
                });
            }
        })
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        accept: Some(accept),
    })
}

/// Client side of the wire protocol. Connections are pooled so concurrent
/// callers each get their own stream.
pub struct RemoteBackend {
    addr: SocketAddr,
    pool: Mutex<Vec<TcpStream>>,
    transcript: Option<Mutex<Vec<u8>>>,
}

impl RemoteBackend {
    pub fn connect(addr: impl ToSocketAddrs) -> Result<Self, BackendError> {
        let addr = addr
            .to_socket_addrs()
            .map_err(|e| BackendError::Unreachable(e.to_string()))?
            .next()
            .ok_or_else(|| BackendError::Unreachable("address resolves to nothing".into()))?;
        let first = TcpStream::connect(addr).map_err(|e| BackendError::Unreachable(format!("{addr}: {e}")))?;
        let _ = first.set_nodelay(true);
        Ok(RemoteBackend {
            addr,
            pool: Mutex::new(vec![first]),
            transcript: None,
        })
    }

    /// Records every frame sent and received.
    pub fn with_transcript(mut self) -> Self {
        self.transcript = Some(Mutex::new(Vec::new()));
        self
    }

    pub fn transcript(&self) -> Vec<u8> {
        self.transcript
            .as_ref()
            .map(|t| t.lock().expect("lock").clone())
            .unwrap_or_default()
    }

    fn stream(&self) -> Result<TcpStream, BackendError> {
        if let Some(s) = self.pool.lock().expect("lock").pop() {
            return Ok(s);
        }
        let s = TcpStream::connect(self.addr).map_err(|e| BackendError::Unreachable(format!("{}: {e}", self.addr)))?;
        let _ = s.set_nodelay(true);
        Ok(s)
    }

    /// Sends raw frame bytes and returns the raw response body.
    pub fn exchange_raw(&self, body: &[u8]) -> Result<Vec<u8>, BackendError> {
        let mut stream = self.stream()?;
        let io_err = |e: io::Error| BackendError::Unreachable(e.to_string());
        write_frame(&mut stream, body).map_err(io_err)?;
        let resp = read_frame(&mut stream)
            .map_err(io_err)?
            .ok_or_else(|| BackendError::Unreachable("connection closed".into()))?;
        if let Some(t) = &self.transcript {
            let mut t = t.lock().expect("lock");
            t.extend_from_slice(body);
            t.extend_from_slice(&resp);
        }
        self.pool.lock().expect("lock").push(stream);
        Ok(resp)
    }

    fn call<T: DeserializeOwned>(&self, req: &Request) -> Result<T, BackendError> {
        let body = serde_json::to_vec(req).expect("request serializes");
        let resp = self.exchange_raw(&body)?;
        match serde_json::from_slice::<Response>(&resp) {
            Ok(Response::Ok { ok }) => {
                serde_json::from_value(ok).map_err(|e| BackendError::BadRequest(format!("malformed response: {e}")))
            }
            Ok(Response::Err { err, msg }) => Err(BackendError::from_code(&err, msg)),
            Err(e) => Err(BackendError::BadRequest(format!("malformed response: {e}"))),
        }
    }
}

impl Drop for RemoteBackend {
    fn drop(&mut self) {
        for s in self.pool.lock().expect("lock").drain(..) {
            let _ = s.shutdown(Shutdown::Both);
        }
    }
}

impl Backend for RemoteBackend {
    fn create_table(&self, table: &str, meta: &TableMeta) -> Result<(), BackendError> {
        self.call(&Request::CreateTable {
            table: table.to_string(),
            meta: meta.clone(),
        })
    }

    fn describe_table(&self, table: &str) -> Result<TableMeta, BackendError> {
        self.call(&Request::DescribeTable {
            table: table.to_string(),
        })
    }

    fn insert_chunk(&self, table: &str, chunk: NewChunk) -> Result<(), BackendError> {
        self.call(&Request::InsertChunk {
            table: table.to_string(),
            chunk,
        })
    }

    fn list_chunks(&self, table: &str) -> Result<ChunkListing, BackendError> {
        self.call(&Request::ListChunks {
            table: table.to_string(),
        })
    }

    fn get_chunk(&self, table: &str, chunk: u64) -> Result<ChunkData, BackendError> {
        self.call(&Request::GetChunk {
            table: table.to_string(),
            chunk,
        })
    }

    fn swap_chunks(&self, table: &str, remove: &[u64], add: NewChunk) -> Result<(), BackendError> {
        self.call(&Request::SwapChunks {
            table: table.to_string(),
            remove: remove.to_vec(),
            add,
        })
    }

    fn exec_chunk_query(
        &self,
        table: &str,
        chunk: u64,
        plan: &EncryptedPlan,
    ) -> Result<ChunkQueryResult, BackendError> {
        self.call(&Request::ExecChunkQuery {
            table: table.to_string(),
            chunk,
            plan: plan.clone(),
        })
    }
}
