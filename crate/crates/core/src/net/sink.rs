use std::fs;
use std::path::PathBuf;

use crate::dsp::AcousticImage;
use crate::error::{Error, Result};
use crate::imaging::write_image_files;
use crate::pdm::Measurement;

#[derive(Debug, Clone, PartialEq)]
pub enum SinkPayload {
    Image(AcousticImage),
    /// Raw capture passed through unprocessed (client placement that sent
    /// PDM anyway).
    Raw(Measurement),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SinkItem {
    pub device_serial: u32,
    pub sequence: u32,
    pub timestamp_us: u64,
    pub payload: SinkPayload,
}

/// Final consumer of server results. Called from a single thread in
/// per-device sequence order.
pub trait Sink: Send {
    fn accept(&mut self, item: SinkItem) -> Result<()>;
}

impl<F> Sink for F
where
    F: FnMut(SinkItem) -> Result<()> + Send,
{
    fn accept(&mut self, item: SinkItem) -> Result<()> {
        self(item)
    }
}

/// Writes `{serial}_{sequence}.pgm/.csv/.json` (raw pass-through as `.ertm`).
#[derive(Debug, Clone)]
pub struct DirectorySink {
    dir: PathBuf,
}

impl DirectorySink {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir).map_err(|e| Error::file(&dir, e))?;
        Ok(Self { dir })
    }
}

impl Sink for DirectorySink {
    fn accept(&mut self, item: SinkItem) -> Result<()> {
        let base = self
            .dir
            .join(format!("{}_{}", item.device_serial, item.sequence));
        match &item.payload {
            SinkPayload::Image(img) => write_image_files(img, base).map(|_| ()),
            SinkPayload::Raw(m) => m.write(base.with_extension("ertm")),
        }
    }
}
