use std::io::{BufWriter, Write};
use std::net::TcpStream;
use std::thread::{self, JoinHandle};
use std::time::Duration;

use log::{debug, info, warn};
use serde::{Deserialize, Serialize};

use super::wire::{encode_package, MeasurementPackage, PayloadKind};
use super::{PipelineSetup, Placement};
use crate::error::{Error, Result};
use crate::fingerprint::Fingerprint;
use crate::imaging::encode_image;
use crate::pdm::Measurement;

#[derive(Debug, Clone, PartialEq)]
pub struct ClientConfig {
    /// `host:port` of the server.
    pub server: String,
    pub device_serial: u32,
    pub placement: Placement,
    pub pipeline: PipelineSetup,
    /// Reconnect attempts after a connection failure before giving up.
    pub reconnect_attempts: u32,
    /// Wait before the first reconnect; doubles on every further attempt.
    pub initial_backoff: Duration,
}

impl ClientConfig {
    pub fn new(
        server: impl Into<String>,
        device_serial: u32,
        placement: Placement,
        pipeline: PipelineSetup,
    ) -> Self {
        Self {
            server: server.into(),
            device_serial,
            placement,
            pipeline,
            reconnect_attempts: 3,
            initial_backoff: Duration::from_millis(100),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClientReport {
    pub device_serial: u32,
    pub sequences: Vec<u32>,
    pub reconnects: u32,
}

impl ClientReport {
    pub fn sent(&self) -> usize {
        self.sequences.len()
    }
}

/// Single-threaded send loop over one TCP connection.
pub struct Client {
    cfg: ClientConfig,
    fingerprint: Fingerprint,
    conn: Option<BufWriter<TcpStream>>,
    next_sequence: u32,
    report: ClientReport,
}

impl Client {
    pub fn connect(cfg: ClientConfig) -> Result<Self> {
        let mut c = Self {
            fingerprint: cfg.pipeline.fingerprint(),
            report: ClientReport {
                device_serial: cfg.device_serial,
                sequences: Vec::new(),
                reconnects: 0,
            },
            cfg,
            conn: None,
            next_sequence: 0,
        };
        c.reconnect()?;
        Ok(c)
    }

    pub fn fingerprint(&self) -> Fingerprint {
        self.fingerprint
    }

    fn open(&self) -> std::io::Result<BufWriter<TcpStream>> {
        let s = TcpStream::connect(&self.cfg.server)?;
        s.set_nodelay(true)?;
        Ok(BufWriter::with_capacity(1 << 16, s))
    }

    /// Connects, retrying with exponential backoff.
    fn reconnect(&mut self) -> Result<()> {
        let mut wait = self.cfg.initial_backoff;
        let mut last = match self.open() {
            Ok(w) => {
                self.conn = Some(w);
                return Ok(());
            }
            Err(e) => e,
        };
        for attempt in 1..=self.cfg.reconnect_attempts {
            warn!(
                "device {}: connection to {} failed ({last}); retry {attempt}/{} in {wait:?}",
                self.cfg.device_serial, self.cfg.server, self.cfg.reconnect_attempts
            );
            thread::sleep(wait);
            wait *= 2;
            match self.open() {
                Ok(w) => {
                    self.report.reconnects += 1;
                    self.conn = Some(w);
                    return Ok(());
                }
                Err(e) => last = e,
            }
        }
        Err(Error::State(format!(
            "device {}: server {} unreachable after {} attempts: {last}",
            self.cfg.device_serial, self.cfg.server, self.cfg.reconnect_attempts
        )))
    }

    /// Packages `m` for the configured placement without sending it.
    pub fn package(&self, m: &Measurement, sequence: u32) -> Result<MeasurementPackage> {
        let (payload_kind, payload) = match self.cfg.placement {
            Placement::Client => (
                PayloadKind::AcousticImage,
                encode_image(&self.cfg.pipeline.process(m)?),
            ),
            Placement::Server => (PayloadKind::RawPdm, m.to_bytes()),
        };
        Ok(MeasurementPackage {
            device_serial: self.cfg.device_serial,
            sequence,
            timestamp_us: m.timestamp_us,
            payload_kind,
            config_fingerprint: self.fingerprint,
            payload,
        })
    }

    /// Processes (placement=client) and sends one measurement, blocking
    /// under backpressure. Returns its sequence number.
    pub fn send(&mut self, m: &Measurement) -> Result<u32> {
        let sequence = self.next_sequence;
        let bytes = encode_package(&self.package(m, sequence)?);
        self.send_bytes(&bytes)?;
        self.next_sequence += 1;
        self.report.sequences.push(sequence);
        debug!("device {} sent sequence {sequence}", self.cfg.device_serial);
        Ok(sequence)
    }

    fn send_bytes(&mut self, bytes: &[u8]) -> Result<()> {
        let mut failures = 0;
        loop {
            let conn = self.conn.as_mut().expect("connected");
            match conn.write_all(bytes).and_then(|_| conn.flush()) {
                Ok(()) => return Ok(()),
                Err(e) => {
                    warn!("device {}: send failed: {e}", self.cfg.device_serial);
                    self.conn = None;
                    failures += 1;
                    if failures > self.cfg.reconnect_attempts {
                        return Err(Error::State(format!(
                            "device {}: giving up after {failures} failed sends: {e}",
                            self.cfg.device_serial
                        )));
                    }
                    self.reconnect()?;
                }
            }
        }
    }

    /// Flushes and closes the connection.
    pub fn finish(mut self) -> Result<ClientReport> {
        if let Some(mut conn) = self.conn.take() {
            conn.flush()?;
            let _ = conn.get_ref().shutdown(std::net::Shutdown::Write);
        }
        info!(
            "device {}: sent {} packages",
            self.cfg.device_serial,
            self.report.sent()
        );
        Ok(self.report)
    }
}

pub struct ClientHandle {
    thread: JoinHandle<Result<ClientReport>>,
}

impl ClientHandle {
    pub fn join(self) -> Result<ClientReport> {
        self.thread
            .join()
            .map_err(|_| Error::State("client thread panicked".into()))?
    }
}

/// Streams every measurement from `source` to the server on a background
/// thread.
pub fn run_client<I>(cfg: ClientConfig, source: I) -> ClientHandle
where
    I: IntoIterator<Item = Measurement> + Send + 'static,
{
    let thread = thread::Builder::new()
        .name(format!("ertis-client-{}", cfg.device_serial))
        .spawn(move || {
            let mut client = Client::connect(cfg)?;
            for m in source {
                client.send(&m)?;
            }
            client.finish()
        })
        .expect("spawn client");
    ClientHandle { thread }
}
