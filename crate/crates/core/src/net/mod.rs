//! Client/server processing network.
//!
//! Clients frame measurements (or locally processed images) as
//! [`MeasurementPackage`]s and stream them over TCP. The server identifies
//! each package, pushes it through a bounded queue to a worker pool, restores
//! per-device sequence order and hands results to a [`Sink`].
//!
//! ```text
//! client ─┐                                  ┌─ worker ─┐
//! client ─┼─► reader/conn ─► bounded queue ──┼─ worker ─┼─► reorder ─► sink
//! client ─┘                                  └─ worker ─┘
//! ```

mod client;
mod server;
mod sink;
pub mod wire;

use serde::{Deserialize, Serialize};

pub use client::{run_client, Client, ClientConfig, ClientHandle, ClientReport};
pub use server::{
    run_server, ServerConfig, ServerHandle, StatsSnapshot, MAX_QUEUE_CAPACITY, MAX_WORKERS,
};
pub use sink::{DirectorySink, Sink, SinkItem, SinkPayload};
pub use wire::{decode_package, encode_package, MeasurementPackage, PayloadKind, WireError};

use crate::array::MicArray;
use crate::dsp::{process_measurement, AcousticImage, ProcessingConfig};
use crate::error::Result;
use crate::fingerprint::Fingerprint;
use crate::pdm::Measurement;
use crate::waveform::WaveformSpec;

/// Where acoustic images are computed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Placement {
    Client,
    Server,
}

impl std::str::FromStr for Placement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "client" => Ok(Placement::Client),
            "server" => Ok(Placement::Server),
            other => Err(format!("placement must be client or server, got {other:?}")),
        }
    }
}

/// Everything both ends must agree on to produce identical images.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineSetup {
    pub processing: ProcessingConfig,
    pub array: MicArray,
    pub excitation: WaveformSpec,
}

impl PipelineSetup {
    pub fn new(processing: ProcessingConfig, array: MicArray, excitation: WaveformSpec) -> Self {
        Self {
            processing,
            array,
            excitation,
        }
    }

    pub fn fingerprint(&self) -> Fingerprint {
        Fingerprint::of(self)
    }

    pub fn process(&self, m: &Measurement) -> Result<AcousticImage> {
        let fs = m.stream.fs_pdm() / self.processing.decimation as f64;
        let excitation = self.excitation.synthesize(fs)?;
        process_measurement(m, &self.processing, &self.array, &excitation)
    }
}
