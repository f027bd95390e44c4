//! Store server, web-tier client and an in-process source with a synthetic link.

use std::io::{self, BufWriter, Read, Write};
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream, ToSocketAddrs};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::row::Row;
use crate::sortspill::{budgeted_sort, SortConfig, SpillStats};
use crate::strategy::{CostReport, PageRequest, PageResult, Strategy};
use crate::table::Table;
use crate::wire::{
    encode_row_batch, read_message, write_message, Message, ServerStats, WireMessage,
    MAX_BATCH_ROWS,
};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinkMode {
    /// Cost comes from the real socket; nothing is added.
    #[default]
    RealSocket,
    /// `latency + bytes / bandwidth` is charged per request.
    Simulated,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LinkModel {
    pub latency_ns: u64,
    pub bandwidth_bytes_per_sec: u64,
    pub mode: LinkMode,
    /// Sleep for the simulated transfer time instead of only adding it to the measurement.
    #[serde(default)]
    pub real_sleep: bool,
}

impl LinkModel {
    pub fn simulated(latency: Duration, bandwidth_bytes_per_sec: u64) -> Result<Self> {
        let link = LinkModel {
            latency_ns: latency.as_nanos() as u64,
            bandwidth_bytes_per_sec,
            mode: LinkMode::Simulated,
            real_sleep: false,
        };
        link.validate()?;
        Ok(link)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bandwidth_bytes_per_sec == 0 {
            return Err(Error::Config("link bandwidth must be positive".into()));
        }
        Ok(())
    }

    /// Time charged for one round trip carrying `bytes`; zero for a real socket.
    pub fn transfer_time(&self, bytes: u64) -> Duration {
        match self.mode {
            LinkMode::RealSocket => Duration::ZERO,
            LinkMode::Simulated => {
                let ns = (bytes as u128 * 1_000_000_000) / self.bandwidth_bytes_per_sec as u128;
                Duration::from_nanos(
                    self.latency_ns
                        .saturating_add(ns.min(u64::MAX as u128) as u64),
                )
            }
        }
    }

    /// Charges the transfer of `cost.bytes_crossing_tiers` to `cost.elapsed_ns`.
    pub fn apply(&self, cost: &mut CostReport) {
        let extra = self.transfer_time(cost.bytes_crossing_tiers);
        if extra.is_zero() {
            return;
        }
        if self.real_sleep {
            let start = Instant::now();
            thread::sleep(extra);
            cost.elapsed_ns += start.elapsed().as_nanos() as u64;
        } else {
            cost.elapsed_ns += extra.as_nanos() as u64;
        }
    }
}

/// Anything that can answer a page request; the bench drives this.
pub trait PageSource {
    fn page(&mut self, strategy: Strategy, req: &PageRequest) -> Result<PageResult>;
}

/// Runs strategies in process, optionally behind a simulated link.
pub struct LocalSource {
    table: Arc<Table>,
    sort: SortConfig,
    link: Option<LinkModel>,
}

impl LocalSource {
    pub fn new(table: Arc<Table>, sort: SortConfig) -> Self {
        LocalSource {
            table,
            sort,
            link: None,
        }
    }

    pub fn with_link(mut self, link: LinkModel) -> Result<Self> {
        link.validate()?;
        self.link = Some(link);
        Ok(self)
    }

    pub fn table(&self) -> &Table {
        &self.table
    }
}

impl PageSource for LocalSource {
    fn page(&mut self, strategy: Strategy, req: &PageRequest) -> Result<PageResult> {
        let mut result = strategy.execute(&self.table, req, &self.sort)?;
        if let Some(link) = &self.link {
            link.apply(&mut result.cost);
        }
        Ok(result)
    }
}

/// A running store server.
pub struct ServerHandle {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
    acceptor: Option<JoinHandle<()>>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    /// Blocks until the accept loop ends.
    pub fn wait(mut self) {
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }

    /// Stops accepting and closes live connections.
    pub fn shutdown(mut self) {
        self.stop_now();
    }

    fn stop_now(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        // Wake the blocking accept.
        let _ = TcpStream::connect(self.addr);
        for conn in self.connections.lock().unwrap().drain(..) {
            let _ = conn.shutdown(Shutdown::Both);
        }
        if let Some(t) = self.acceptor.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.acceptor.is_some() {
            self.stop_now();
        }
    }
}

/// Binds `addr` and serves `table` until the handle is shut down.
pub fn serve(
    table: Arc<Table>,
    addr: impl ToSocketAddrs,
    sort: SortConfig,
) -> Result<ServerHandle> {
    let listener = TcpListener::bind(addr).map_err(Error::Transport)?;
    let local = listener.local_addr().map_err(Error::Transport)?;
    let stop = Arc::new(AtomicBool::new(false));
    let connections = Arc::new(Mutex::new(Vec::new()));
    let acceptor = {
        let stop = stop.clone();
        let connections = connections.clone();
        thread::Builder::new()
            .name("pgb-accept".into())
            .spawn(move || accept_loop(listener, table, sort, stop, connections))
            .map_err(Error::Transport)?
    };
    Ok(ServerHandle {
        addr: local,
        stop,
        connections,
        acceptor: Some(acceptor),
    })
}

fn accept_loop(
    listener: TcpListener,
    table: Arc<Table>,
    sort: SortConfig,
    stop: Arc<AtomicBool>,
    connections: Arc<Mutex<Vec<TcpStream>>>,
) {
    for conn in listener.incoming() {
        if stop.load(Ordering::SeqCst) {
            break;
        }
        let Ok(stream) = conn else { continue };
        let _ = stream.set_nodelay(true);
        if let Ok(clone) = stream.try_clone() {
            let mut live = connections.lock().unwrap();
            live.retain(|s| s.peer_addr().is_ok());
            live.push(clone);
        }
        if stop.load(Ordering::SeqCst) {
            let _ = stream.shutdown(Shutdown::Both);
            break;
        }
        let table = table.clone();
        let sort = sort.clone();
        let _ = thread::Builder::new()
            .name("pgb-conn".into())
            .spawn(move || {
                let _ = handle_connection(stream, &table, &sort);
            });
    }
}

fn handle_connection(stream: TcpStream, table: &Table, sort: &SortConfig) -> Result<()> {
    let mut reader = stream.try_clone().map_err(Error::Transport)?;
    let mut writer = BufWriter::with_capacity(1 << 16, stream);
    loop {
        let request = match read_message(&mut reader).and_then(|m| match m {
            Some(frame) => Message::from_wire(&frame).map(Some),
            None => Ok(None),
        }) {
            Ok(Some(req)) => req,
            Ok(None) => return Ok(()),
            Err(Error::Transport(e)) => return Err(Error::Transport(e)),
            Err(e) => {
                let _ = write_message(&mut writer, &Message::Error(e.to_string()).to_wire());
                let _ = writer.flush();
                let _ = writer.get_ref().shutdown(Shutdown::Both);
                return Err(e);
            }
        };
        respond(&mut writer, table, sort, request)?;
        writer.flush().map_err(Error::Transport)?;
    }
}

fn write_rows<W: Write>(w: &mut W, rows: &[Row], at_least_one: bool) -> Result<()> {
    if rows.is_empty() && at_least_one {
        write_message(w, &encode_row_batch(&[]))?;
    }
    for chunk in rows.chunks(MAX_BATCH_ROWS) {
        write_message(w, &encode_row_batch(chunk))?;
    }
    Ok(())
}

fn respond<W: Write>(w: &mut W, table: &Table, sort: &SortConfig, request: Message) -> Result<()> {
    let start = Instant::now();
    let (strategy, req) = match request {
        Message::ScanAll => {
            write_rows(w, table.scan(), false)?;
            let stats = ServerStats {
                rows_fetched: table.row_count() as u64,
                spill: SpillStats::default(),
                elapsed_ns: start.elapsed().as_nanos() as u64,
            };
            write_message(w, &Message::Stats(stats).to_wire())?;
            return Ok(());
        }
        Message::SeekPage(req) => (Strategy::Seek, req),
        Message::TwoPhasePage(req) => (Strategy::TwoPhase, req),
        other => {
            let msg = format!("unexpected {:?} frame from client", other.to_wire().opcode);
            write_message(w, &Message::Error(msg).to_wire())?;
            return Ok(());
        }
    };
    match strategy.execute(table, &req, sort) {
        Ok(result) => {
            write_rows(w, &result.rows, true)?;
            let stats = ServerStats {
                rows_fetched: result.cost.rows_fetched_from_store,
                spill: result.cost.spill,
                elapsed_ns: start.elapsed().as_nanos() as u64,
            };
            write_message(w, &Message::Stats(stats).to_wire())?;
        }
        Err(e) => {
            write_message(w, &Message::Error(e.to_string()).to_wire())?;
        }
    }
    Ok(())
}

/// Byte-counting wrapper around a stream.
#[derive(Debug)]
pub struct CountingStream<S> {
    inner: S,
    read: u64,
    written: u64,
}

impl<S> CountingStream<S> {
    pub fn new(inner: S) -> Self {
        CountingStream {
            inner,
            read: 0,
            written: 0,
        }
    }

    pub fn bytes_read(&self) -> u64 {
        self.read
    }

    pub fn bytes_written(&self) -> u64 {
        self.written
    }

    pub fn get_ref(&self) -> &S {
        &self.inner
    }
}

impl<S: Read> Read for CountingStream<S> {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.read += n as u64;
        Ok(n)
    }
}

impl<S: Write> Write for CountingStream<S> {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        let n = self.inner.write(buf)?;
        self.written += n as u64;
        Ok(n)
    }

    fn flush(&mut self) -> io::Result<()> {
        self.inner.flush()
    }
}

/// Web-tier connection to a store server. One per virtual user.
pub struct Client {
    stream: CountingStream<TcpStream>,
    sort: SortConfig,
    link: Option<LinkModel>,
}

impl Client {
    /// `sort` governs the web-tier sort performed for remote ADB.
    pub fn connect(addr: impl ToSocketAddrs, sort: SortConfig) -> Result<Client> {
        let stream = TcpStream::connect(addr).map_err(Error::Transport)?;
        let _ = stream.set_nodelay(true);
        Ok(Client {
            stream: CountingStream::new(stream),
            sort,
            link: None,
        })
    }

    /// Adds a simulated link on top of the real socket.
    pub fn with_link(mut self, link: LinkModel) -> Result<Self> {
        link.validate()?;
        self.link = Some(link);
        Ok(self)
    }

    /// Total bytes (read, written) on the socket so far.
    pub fn socket_bytes(&self) -> (u64, u64) {
        (self.stream.bytes_read(), self.stream.bytes_written())
    }

    fn send(&mut self, msg: &Message) -> Result<u64> {
        let n = write_message(&mut self.stream, &msg.to_wire())?;
        self.stream.flush().map_err(Error::Transport)?;
        Ok(n as u64)
    }

    fn receive(&mut self) -> Result<(WireMessage, u64)> {
        match read_message(&mut self.stream)? {
            Some(frame) => {
                let n = frame.encoded_len() as u64;
                Ok((frame, n))
            }
            None => Err(Error::Transport(io::Error::new(
                io::ErrorKind::UnexpectedEof,
                "server closed the connection",
            ))),
        }
    }

    /// Sends one request and collects rows until the terminating `Stats` frame.
    fn exchange(&mut self, request: &Message) -> Result<(Vec<Row>, ServerStats, u64)> {
        let mut bytes = self.send(request)?;
        let mut rows = Vec::new();
        loop {
            let (frame, n) = self.receive()?;
            bytes += n;
            match Message::from_wire(&frame)? {
                Message::RowBatch(batch) => rows.extend(batch),
                Message::Stats(stats) => return Ok((rows, stats, bytes)),
                Message::Error(msg) => return Err(Error::Remote(msg)),
                other => {
                    return Err(Error::protocol(format!(
                        "unexpected {:?} frame from server",
                        other.to_wire().opcode
                    )))
                }
            }
        }
    }

    pub fn remote_page(&mut self, strategy: Strategy, req: &PageRequest) -> Result<PageResult> {
        req.validate()?;
        let start = Instant::now();
        let (rows, cost) = match strategy {
            Strategy::Adb => {
                let (all, stats, bytes) = self.exchange(&Message::ScanAll)?;
                let (sorted, spill) = budgeted_sort(all, req.sort_field, &self.sort)?;
                let skip = req.rows_to_skip().min(sorted.len() as u64) as usize;
                let rows: Vec<Row> = sorted
                    .into_iter()
                    .skip(skip)
                    .take(req.page_size as usize)
                    .collect();
                let cost = CostReport {
                    rows_fetched_from_store: stats.rows_fetched,
                    bytes_crossing_tiers: bytes,
                    spill: stats.spill.merge(spill),
                    elapsed_ns: 0,
                };
                (rows, cost)
            }
            Strategy::Seek | Strategy::TwoPhase => {
                let msg = if strategy == Strategy::Seek {
                    Message::SeekPage(*req)
                } else {
                    Message::TwoPhasePage(*req)
                };
                let (rows, stats, bytes) = self.exchange(&msg)?;
                let cost = CostReport {
                    rows_fetched_from_store: stats.rows_fetched,
                    bytes_crossing_tiers: bytes,
                    spill: stats.spill,
                    elapsed_ns: 0,
                };
                (rows, cost)
            }
        };
        let mut cost = cost;
        cost.elapsed_ns = (start.elapsed().as_nanos() as u64).max(1);
        if let Some(link) = &self.link {
            link.apply(&mut cost);
        }
        Ok(PageResult { rows, cost })
    }
}

impl PageSource for Client {
    fn page(&mut self, strategy: Strategy, req: &PageRequest) -> Result<PageResult> {
        self.remote_page(strategy, req)
    }
}
