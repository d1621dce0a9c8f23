use std::collections::{BTreeMap, HashMap};
use std::io::BufReader;
use std::net::{Shutdown, SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_channel::{bounded, unbounded, Receiver, Sender};
use log::{debug, error, info, warn};
use serde::{Deserialize, Serialize};

use super::sink::{DirectorySink, Sink, SinkItem, SinkPayload};
use super::wire::{read_package, FrameError, MeasurementPackage, PayloadKind};
use super::{PipelineSetup, Placement};
use crate::error::{param, Error, Result};
use crate::fingerprint::Fingerprint;
use crate::imaging::decode_image;
use crate::pdm::Measurement;

pub const MAX_WORKERS: usize = 64;
pub const MAX_QUEUE_CAPACITY: usize = 4096;
pub const SERVER_SCHEMA: &str = "ertis.server/1";
/// Consecutive undecodable packages after which a connection is dropped.
pub const MAX_CONSECUTIVE_DECODE_ERRORS: u32 = 3;
/// Packages allowed in flight beyond queue and workers: one held by a reader
/// between admission and enqueue, one in the ordering stage.
const IN_FLIGHT_SLACK: usize = 2;
const ACCEPT_POLL: Duration = Duration::from_millis(5);
/// On stop, connections idle this long are closed rather than awaited.
const DRAIN_GRACE: Duration = Duration::from_millis(500);

fn server_schema() -> String {
    SERVER_SCHEMA.into()
}

fn default_bind() -> String {
    "127.0.0.1".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ServerConfig {
    #[serde(default = "server_schema")]
    pub schema: String,
    #[serde(default = "default_bind")]
    pub bind_address: String,
    /// 0 picks a free port.
    pub listen_port: u16,
    pub worker_count: usize,
    pub queue_capacity: usize,
    pub processing_placement: Placement,
    pub pipeline: PipelineSetup,
    /// Output directory for [`DirectorySink`]; unused when a sink is passed
    /// to [`ServerHandle::start_with_sink`].
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sink_dir: Option<PathBuf>,
}

impl ServerConfig {
    pub fn new(pipeline: PipelineSetup, placement: Placement) -> Self {
        Self {
            schema: server_schema(),
            bind_address: default_bind(),
            listen_port: 0,
            worker_count: 4,
            queue_capacity: 8,
            processing_placement: placement,
            pipeline,
            sink_dir: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != SERVER_SCHEMA {
            return Err(param(format!(
                "server config schema {:?}, expected {SERVER_SCHEMA:?}",
                self.schema
            )));
        }
        if self.worker_count == 0 || self.worker_count > MAX_WORKERS {
            return Err(Error::Capacity {
                what: "worker_count (must be 1..=64)",
                got: self.worker_count,
                max: MAX_WORKERS,
            });
        }
        if self.queue_capacity == 0 || self.queue_capacity > MAX_QUEUE_CAPACITY {
            return Err(Error::Capacity {
                what: "queue_capacity (must be 1..=4096)",
                got: self.queue_capacity,
                max: MAX_QUEUE_CAPACITY,
            });
        }
        self.pipeline.processing.validate()
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
        Self::from_json(&text)
    }

    /// Bound on packages in flight that the server enforces.
    pub fn in_flight_limit(&self) -> usize {
        self.queue_capacity + self.worker_count + IN_FLIGHT_SLACK
    }
}

#[derive(Default)]
struct Stats {
    connections: AtomicU64,
    connections_dropped: AtomicU64,
    received: AtomicU64,
    decode_errors: AtomicU64,
    rejected_fingerprint: AtomicU64,
    rejected_sequence: AtomicU64,
    rejected_payload: AtomicU64,
    enqueued: AtomicU64,
    processed: AtomicU64,
    delivered: AtomicU64,
    sink_errors: AtomicU64,
    in_flight: AtomicU64,
    high_water_mark: AtomicU64,
}

fn bump(a: &AtomicU64) {
    a.fetch_add(1, Ordering::SeqCst);
}

/// Point-in-time copy of the server counters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StatsSnapshot {
    pub connections: u64,
    pub connections_dropped: u64,
    pub received: u64,
    pub decode_errors: u64,
    /// Sum of all `rejected_*` counters.
    pub rejected: u64,
    pub rejected_fingerprint: u64,
    pub rejected_sequence: u64,
    pub rejected_payload: u64,
    pub enqueued: u64,
    pub processed: u64,
    pub delivered: u64,
    pub sink_errors: u64,
    pub in_flight: u64,
    pub high_water_mark: u64,
}

impl StatsSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("stats serialize")
    }
}

impl Stats {
    fn snapshot(&self) -> StatsSnapshot {
        let g = |a: &AtomicU64| a.load(Ordering::SeqCst);
        let (rf, rs, rp) = (
            g(&self.rejected_fingerprint),
            g(&self.rejected_sequence),
            g(&self.rejected_payload),
        );
        StatsSnapshot {
            connections: g(&self.connections),
            connections_dropped: g(&self.connections_dropped),
            received: g(&self.received),
            decode_errors: g(&self.decode_errors),
            rejected: rf + rs + rp,
            rejected_fingerprint: rf,
            rejected_sequence: rs,
            rejected_payload: rp,
            enqueued: g(&self.enqueued),
            processed: g(&self.processed),
            delivered: g(&self.delivered),
            sink_errors: g(&self.sink_errors),
            in_flight: g(&self.in_flight),
            high_water_mark: g(&self.high_water_mark),
        }
    }
}

/// Counting gate on packages between admission and sink hand-off.
struct InFlight {
    count: Mutex<usize>,
    freed: Condvar,
    limit: usize,
}

impl InFlight {
    fn acquire(&self, stats: &Stats) {
        let mut c = self.count.lock().unwrap();
        while *c >= self.limit {
            c = self.freed.wait(c).unwrap();
        }
        *c += 1;
        stats.in_flight.store(*c as u64, Ordering::SeqCst);
        stats.high_water_mark.fetch_max(*c as u64, Ordering::SeqCst);
    }

    fn release(&self, stats: &Stats) {
        let mut c = self.count.lock().unwrap();
        *c -= 1;
        stats.in_flight.store(*c as u64, Ordering::SeqCst);
        self.freed.notify_one();
    }
}

#[derive(Default)]
struct DeviceState {
    last_sequence: Option<u32>,
    next_admission: u64,
}

struct Job {
    package: MeasurementPackage,
    admission: u64,
}

struct Completed {
    device_serial: u32,
    sequence: u32,
    timestamp_us: u64,
    admission: u64,
    outcome: std::result::Result<SinkPayload, String>,
}

struct Shared {
    stats: Stats,
    in_flight: InFlight,
    devices: Mutex<HashMap<u32, DeviceState>>,
    fingerprint: Fingerprint,
    shutdown: AtomicBool,
    started: Instant,
}

impl Shared {
    fn now_ms(&self) -> u64 {
        self.started.elapsed().as_millis() as u64
    }
}

const BUSY: u64 = u64::MAX;

struct Connection {
    handle: JoinHandle<()>,
    control: TcpStream,
    /// Server time (ms) since which the reader has been waiting for a new
    /// package header, or `BUSY`.
    waiting_since: Arc<AtomicU64>,
}

type ConnList = Arc<Mutex<Vec<Connection>>>;

/// Running server. Dropping the handle stops it.
pub struct ServerHandle {
    addr: SocketAddr,
    shared: Arc<Shared>,
    acceptor: Option<JoinHandle<()>>,
    connections: ConnList,
    queue_tx: Option<Sender<Job>>,
    workers: Vec<JoinHandle<()>>,
    orderer: Option<JoinHandle<Box<dyn Sink>>>,
}

/// Binds and starts a server writing to `cfg.sink_dir`.
pub fn run_server(cfg: ServerConfig) -> Result<ServerHandle> {
    let dir = cfg
        .sink_dir
        .clone()
        .ok_or_else(|| param("server config has no sink_dir"))?;
    ServerHandle::start_with_sink(cfg, Box::new(DirectorySink::new(dir)?))
}

impl ServerHandle {
    pub fn start_with_sink(cfg: ServerConfig, sink: Box<dyn Sink>) -> Result<Self> {
        cfg.validate()?;
        let listener = TcpListener::bind((cfg.bind_address.as_str(), cfg.listen_port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        info!(
            "listening on {addr} (workers {}, queue {}, placement {:?}, fingerprint {})",
            cfg.worker_count,
            cfg.queue_capacity,
            cfg.processing_placement,
            cfg.pipeline.fingerprint()
        );

        let shared = Arc::new(Shared {
            stats: Stats::default(),
            in_flight: InFlight {
                count: Mutex::new(0),
                freed: Condvar::new(),
                limit: cfg.in_flight_limit(),
            },
            devices: Mutex::new(HashMap::new()),
            fingerprint: cfg.pipeline.fingerprint(),
            shutdown: AtomicBool::new(false),
            started: Instant::now(),
        });
        let (queue_tx, queue_rx) = bounded::<Job>(cfg.queue_capacity);
        let (done_tx, done_rx) = unbounded::<Completed>();

        let cfg = Arc::new(cfg);
        let workers = (0..cfg.worker_count)
            .map(|i| {
                let (rx, tx, cfg, shared) = (
                    queue_rx.clone(),
                    done_tx.clone(),
                    cfg.clone(),
                    shared.clone(),
                );
                thread::Builder::new()
                    .name(format!("ertis-worker-{i}"))
                    .spawn(move || worker_loop(rx, tx, &cfg, &shared))
                    .expect("spawn worker")
            })
            .collect();
        drop(done_tx);

        let orderer = {
            let shared = shared.clone();
            thread::Builder::new()
                .name("ertis-order".into())
                .spawn(move || order_loop(done_rx, sink, &shared))
                .expect("spawn orderer")
        };

        let connections: ConnList = Arc::new(Mutex::new(Vec::new()));
        let acceptor = {
            let (shared, conns, tx) = (shared.clone(), connections.clone(), queue_tx.clone());
            thread::Builder::new()
                .name("ertis-accept".into())
                .spawn(move || accept_loop(listener, tx, shared, conns))
                .expect("spawn acceptor")
        };

        Ok(Self {
            addr,
            shared,
            acceptor: Some(acceptor),
            connections,
            queue_tx: Some(queue_tx),
            workers,
            orderer: Some(orderer),
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn stats(&self) -> StatsSnapshot {
        self.shared.stats.snapshot()
    }

    /// Stops accepting, lets connected clients finish, drains the queue and
    /// the ordering stage, and returns the final counters with the sink.
    pub fn stop(mut self) -> (StatsSnapshot, Option<Box<dyn Sink>>) {
        let sink = self.shutdown();
        (self.stats(), sink)
    }

    fn shutdown(&mut self) -> Option<Box<dyn Sink>> {
        self.shared.shutdown.store(true, Ordering::SeqCst);
        if let Some(a) = self.acceptor.take() {
            let _ = a.join();
        }
        loop {
            let mut conns = self.connections.lock().unwrap();
            if conns.iter().all(|c| c.handle.is_finished()) {
                for c in conns.drain(..) {
                    let _ = c.handle.join();
                }
                break;
            }
            let now = self.shared.now_ms();
            let grace = DRAIN_GRACE.as_millis() as u64;
            for c in conns.iter() {
                let since = c.waiting_since.load(Ordering::SeqCst);
                if since != BUSY && now.saturating_sub(since) > grace {
                    debug!("closing idle connection");
                    let _ = c.control.shutdown(Shutdown::Both);
                }
            }
            drop(conns);
            thread::sleep(Duration::from_millis(10));
        }
        self.queue_tx = None;
        for w in self.workers.drain(..) {
            let _ = w.join();
        }
        let sink = self.orderer.take().and_then(|o| o.join().ok());
        info!("stopped: {}", self.shared.stats.snapshot().to_json());
        sink
    }
}

impl Drop for ServerHandle {
    fn drop(&mut self) {
        if self.orderer.is_some() {
            self.shutdown();
        }
    }
}

/// Accepts until shutdown, then drains connections already queued in the
/// listen backlog so clients that connected before the stop are served.
fn accept_loop(listener: TcpListener, tx: Sender<Job>, shared: Arc<Shared>, conns: ConnList) {
    loop {
        let stopping = shared.shutdown.load(Ordering::SeqCst);
        match listener.accept() {
            Ok((stream, peer)) => {
                bump(&shared.stats.connections);
                debug!("connection from {peer}");
                if let Err(e) = stream.set_nonblocking(false) {
                    warn!("{peer}: {e}");
                    continue;
                }
                let Ok(control) = stream.try_clone() else {
                    continue;
                };
                let waiting_since = Arc::new(AtomicU64::new(BUSY));
                let (tx, shared2, w) = (tx.clone(), shared.clone(), waiting_since.clone());
                let handle = thread::Builder::new()
                    .name(format!("ertis-conn-{peer}"))
                    .spawn(move || connection_loop(stream, peer, tx, &shared2, &w))
                    .expect("spawn connection");
                conns.lock().unwrap().push(Connection {
                    handle,
                    control,
                    waiting_since,
                });
            }
            Err(e) if e.kind() == std::io::ErrorKind::WouldBlock => {
                if stopping {
                    break;
                }
                thread::sleep(ACCEPT_POLL);
            }
            Err(e) => {
                warn!("accept failed: {e}");
                if stopping {
                    break;
                }
                thread::sleep(ACCEPT_POLL);
            }
        }
    }
}

fn connection_loop(
    stream: TcpStream,
    peer: SocketAddr,
    tx: Sender<Job>,
    shared: &Shared,
    waiting_since: &AtomicU64,
) {
    let stats = &shared.stats;
    let mut reader = BufReader::with_capacity(1 << 16, stream);
    let mut consecutive = 0u32;
    loop {
        if reader.buffer().is_empty() {
            waiting_since.store(shared.now_ms(), Ordering::SeqCst);
        }
        let read = read_package(&mut reader);
        waiting_since.store(BUSY, Ordering::SeqCst);
        let package = match read {
            Ok(Some(p)) => p,
            Ok(None) => break,
            Err(FrameError::Wire(e)) => {
                bump(&stats.decode_errors);
                consecutive += 1;
                warn!("{peer}: undecodable package ({e})");
                if consecutive >= MAX_CONSECUTIVE_DECODE_ERRORS {
                    warn!(
                        "{peer}: dropping connection after {consecutive} consecutive decode errors"
                    );
                    bump(&stats.connections_dropped);
                    break;
                }
                continue;
            }
            Err(FrameError::Io(e)) => {
                debug!("{peer}: {e}");
                break;
            }
        };
        consecutive = 0;
        bump(&stats.received);

        if package.config_fingerprint != shared.fingerprint {
            bump(&stats.rejected_fingerprint);
            warn!(
                "{peer}: protocol error: device {} sequence {} has config fingerprint {}, server expects {}",
                package.device_serial, package.sequence, package.config_fingerprint, shared.fingerprint
            );
            continue;
        }

        shared.in_flight.acquire(stats);
        let admission = {
            let mut devices = shared.devices.lock().unwrap();
            let dev = devices.entry(package.device_serial).or_default();
            match dev.last_sequence {
                Some(last) if package.sequence <= last => None,
                _ => {
                    dev.last_sequence = Some(package.sequence);
                    dev.next_admission += 1;
                    Some(dev.next_admission - 1)
                }
            }
        };
        let Some(admission) = admission else {
            shared.in_flight.release(stats);
            bump(&stats.rejected_sequence);
            warn!(
                "{peer}: device {} sequence {} is not after the last accepted one",
                package.device_serial, package.sequence
            );
            continue;
        };
        if tx.send(Job { package, admission }).is_err() {
            shared.in_flight.release(stats);
            break;
        }
        bump(&stats.enqueued);
    }
}

fn worker_loop(rx: Receiver<Job>, tx: Sender<Completed>, cfg: &ServerConfig, shared: &Shared) {
    for Job { package, admission } in rx.iter() {
        let outcome = run_job(&package, cfg).map_err(|e| e.to_string());
        if outcome.is_ok() {
            bump(&shared.stats.processed);
        }
        let done = Completed {
            device_serial: package.device_serial,
            sequence: package.sequence,
            timestamp_us: package.timestamp_us,
            admission,
            outcome,
        };
        if tx.send(done).is_err() {
            break;
        }
    }
}

fn run_job(p: &MeasurementPackage, cfg: &ServerConfig) -> Result<SinkPayload> {
    match (p.payload_kind, cfg.processing_placement) {
        (PayloadKind::AcousticImage, _) => Ok(SinkPayload::Image(decode_image(&p.payload)?)),
        (PayloadKind::RawPdm, Placement::Server) => {
            let m = Measurement::from_bytes(&p.payload)?;
            Ok(SinkPayload::Image(cfg.pipeline.process(&m)?))
        }
        (PayloadKind::RawPdm, Placement::Client) => {
            Ok(SinkPayload::Raw(Measurement::from_bytes(&p.payload)?))
        }
    }
}

/// Releases completions to the sink in admission order per device.
fn order_loop(rx: Receiver<Completed>, mut sink: Box<dyn Sink>, shared: &Shared) -> Box<dyn Sink> {
    let stats = &shared.stats;
    let mut pending: HashMap<u32, (u64, BTreeMap<u64, Completed>)> = HashMap::new();
    for done in rx.iter() {
        let (next, buffer) = pending.entry(done.device_serial).or_default();
        buffer.insert(done.admission, done);
        while let Some(c) = buffer.remove(next) {
            *next += 1;
            match c.outcome {
                Ok(payload) => {
                    let item = SinkItem {
                        device_serial: c.device_serial,
                        sequence: c.sequence,
                        timestamp_us: c.timestamp_us,
                        payload,
                    };
                    match sink.accept(item) {
                        Ok(()) => bump(&stats.delivered),
                        Err(e) => {
                            bump(&stats.sink_errors);
                            error!("sink failed on {}/{}: {e}", c.device_serial, c.sequence);
                        }
                    }
                }
                Err(e) => {
                    bump(&stats.rejected_payload);
                    warn!(
                        "device {} sequence {}: payload rejected: {e}",
                        c.device_serial, c.sequence
                    );
                }
            }
            shared.in_flight.release(stats);
        }
    }
    sink
}
