//! Sigma-delta PDM coding of the microphone channels and the capture file
//! format.
//!
//! Each MEMS microphone is modeled as a second-order single-bit sigma-delta
//! modulator clocked at the PDM rate. Decoding maps bits to ±1, low-pass
//! filters with a 128-tap Hamming-windowed sinc (cutoff 100 kHz) and keeps
//! every `decimation`-th sample. The filter group delay of 63.5 PDM samples is
//! not compensated here; it is identical on every channel.
//!
//! # Measurement file
//!
//! Little-endian binary, `.ertm`:
//!
//! ```text
//! "ERTM" | version u8 = 1 | n_channels u8 | reserved u16 = 0
//!        | fs_pdm_hz u32 | n_bits_per_channel u32 | device_serial u32
//!        | timestamp_us u64 | payload
//! ```
//!
//! The payload holds channels 0..n-1 back to back, each packed LSB-first
//! into u32 words. A JSON sidecar with the same basename carries the array,
//! excitation and sound speed the capture was made with.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::dsp::conv::{ConvMode, Convolver};
use crate::dsp::ChannelSignals;
use crate::error::{param, Error, Result};
use crate::fingerprint::Fingerprint;
use crate::waveform::WaveformSpec;

pub const DECODE_TAPS: usize = 128;
pub const DECODE_CUTOFF_HZ: f64 = 100_000.0;
const INTEGRATOR_LIMIT: f64 = 2.0;

pub const FILE_MAGIC: &[u8; 4] = b"ERTM";
pub const FILE_VERSION: u8 = 1;
pub const FILE_HEADER_LEN: usize = 28;
pub const SIDECAR_SCHEMA: &str = "ertis.measurement/1";

/// Decode filter group delay expressed in decoded samples.
pub fn decode_group_delay(decimation: usize) -> f64 {
    (DECODE_TAPS - 1) as f64 / 2.0 / decimation as f64
}

/// Second-order single-bit sigma-delta modulator with clipped integrators.
///
/// Loop: `y = sign(i2)`, `i1 += x - y`, `i2 += i1 - y`, giving a one-sample
/// signal delay and noise transfer `(1 - z^-1)^2`.
#[derive(Debug, Clone, Copy, Default)]
pub struct SigmaDelta {
    i1: f64,
    i2: f64,
}

impl SigmaDelta {
    #[inline]
    pub fn step(&mut self, x: f64) -> bool {
        let bit = self.i2 >= 0.0;
        let y = if bit { 1.0 } else { -1.0 };
        self.i1 = (self.i1 + x - y).clamp(-INTEGRATOR_LIMIT, INTEGRATOR_LIMIT);
        self.i2 = (self.i2 + self.i1 - y).clamp(-INTEGRATOR_LIMIT, INTEGRATOR_LIMIT);
        bit
    }
}

/// One PDM bit per input sample, modulator state starting at zero.
pub fn pdm_encode(signal: &[f64]) -> Result<Vec<bool>> {
    if let Some((i, v)) = signal.iter().enumerate().find(|(_, v)| !(v.abs() <= 1.0)) {
        return Err(param(format!("PDM input sample {i} = {v} outside [-1, 1]")));
    }
    let mut m = SigmaDelta::default();
    Ok(signal.iter().map(|&x| m.step(x)).collect())
}

/// Hamming-windowed sinc low-pass with unit DC gain.
pub fn decode_taps(fs_pdm: f64) -> Vec<f64> {
    let n = DECODE_TAPS;
    let fc = DECODE_CUTOFF_HZ / fs_pdm;
    let mid = (n - 1) as f64 / 2.0;
    let mut taps: Vec<f64> = (0..n)
        .map(|k| {
            let t = k as f64 - mid;
            let sinc = if t == 0.0 {
                2.0 * fc
            } else {
                (2.0 * PI * fc * t).sin() / (PI * t)
            };
            let w = 0.54 - 0.46 * (2.0 * PI * k as f64 / (n - 1) as f64).cos();
            sinc * w
        })
        .collect();
    let sum: f64 = taps.iter().sum();
    for t in &mut taps {
        *t /= sum;
    }
    taps
}

/// Low-pass decimating decoder for one PDM rate, signal length and factor.
#[derive(Debug)]
pub struct PdmDecoder {
    fs_pdm: f64,
    decimation: usize,
    conv: Convolver,
}

impl PdmDecoder {
    pub fn new(fs_pdm: f64, decimation: usize, n_bits: usize) -> Result<Self> {
        if decimation == 0 {
            return Err(param("decimation must be at least 1"));
        }
        if !(fs_pdm > 2.0 * DECODE_CUTOFF_HZ) {
            return Err(param(format!(
                "PDM rate {fs_pdm} Hz is below the decode band"
            )));
        }
        let conv = Convolver::new(&decode_taps(fs_pdm), n_bits)?;
        Ok(Self {
            fs_pdm,
            decimation,
            conv,
        })
    }

    pub fn fs_out(&self) -> f64 {
        self.fs_pdm / self.decimation as f64
    }

    pub fn decimation(&self) -> usize {
        self.decimation
    }

    /// Causal FIR at the PDM rate, then every `decimation`-th sample.
    /// Linear in `x`.
    pub fn filter_decimate(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() < DECODE_TAPS {
            return Err(param(format!(
                "PDM input of {} samples is shorter than the {DECODE_TAPS}-tap decode filter",
                x.len()
            )));
        }
        let full = self.conv.apply(x, ConvMode::Full)?;
        let n_out = x.len() / self.decimation;
        Ok((0..n_out).map(|i| full[i * self.decimation]).collect())
    }

    /// Low-passed signal at the PDM rate, aligned with the input (group delay
    /// removed to the nearest sample).
    pub fn lowpass_aligned(&self, x: &[f64]) -> Result<Vec<f64>> {
        let full = self.conv.apply(x, ConvMode::Full)?;
        let lead = DECODE_TAPS / 2;
        Ok(full[lead..lead + x.len()].to_vec())
    }

    pub fn decode(&self, bits: &[bool]) -> Result<Vec<f64>> {
        let x: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
        self.filter_decimate(&x)
    }
}

/// Decodes one PDM channel to `fs_pdm / decimation`.
pub fn pdm_decode(bits: &[bool], fs_pdm: f64, decimation: usize) -> Result<Vec<f64>> {
    PdmDecoder::new(fs_pdm, decimation, bits.len())?.decode(bits)
}

/// Bit-packed PDM capture of all channels.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PdmStream {
    n_channels: usize,
    n_bits_per_channel: usize,
    fs_pdm_hz: u32,
    words: Vec<u32>,
}

impl PdmStream {
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    pub fn n_bits_per_channel(&self) -> usize {
        self.n_bits_per_channel
    }

    pub fn fs_pdm(&self) -> f64 {
        self.fs_pdm_hz as f64
    }

    pub fn fs_pdm_hz(&self) -> u32 {
        self.fs_pdm_hz
    }

    pub fn words(&self) -> &[u32] {
        &self.words
    }

    fn words_per_channel(&self) -> usize {
        self.n_bits_per_channel / 32
    }

    pub fn channel_words(&self, channel: usize) -> &[u32] {
        let w = self.words_per_channel();
        &self.words[channel * w..(channel + 1) * w]
    }

    pub fn payload_len(&self) -> usize {
        self.words.len() * 4
    }

    pub fn from_words(
        n_channels: usize,
        n_bits_per_channel: usize,
        fs_pdm_hz: u32,
        words: Vec<u32>,
    ) -> Result<Self> {
        if n_bits_per_channel % 32 != 0 {
            return Err(param(format!(
                "bits per channel ({n_bits_per_channel}) must be a multiple of 32"
            )));
        }
        if words.len() != n_channels * n_bits_per_channel / 32 {
            return Err(param("word count does not match channel layout"));
        }
        Ok(Self {
            n_channels,
            n_bits_per_channel,
            fs_pdm_hz,
            words,
        })
    }

    pub fn unpack_channel(&self, channel: usize) -> Result<Vec<bool>> {
        if channel >= self.n_channels {
            return Err(param(format!(
                "channel {channel} out of range for {} channels",
                self.n_channels
            )));
        }
        Ok(unpack_words(
            self.channel_words(channel),
            self.n_bits_per_channel,
        ))
    }

    /// Replaces one channel's bits.
    pub fn replace_channel(&mut self, channel: usize, bits: &[bool]) -> Result<()> {
        if channel >= self.n_channels || bits.len() != self.n_bits_per_channel {
            return Err(param("replacement channel does not fit the stream"));
        }
        let w = self.words_per_channel();
        let packed = pack_words(bits);
        self.words[channel * w..(channel + 1) * w].copy_from_slice(&packed);
        Ok(())
    }
}

fn pack_words(bits: &[bool]) -> Vec<u32> {
    bits.chunks(32)
        .map(|chunk| {
            chunk
                .iter()
                .enumerate()
                .fold(0u32, |w, (i, &b)| w | ((b as u32) << i))
        })
        .collect()
}

fn unpack_words(words: &[u32], n_bits: usize) -> Vec<bool> {
    (0..n_bits)
        .map(|i| (words[i / 32] >> (i % 32)) & 1 == 1)
        .collect()
}

/// Packs equal-length channels, each a multiple of 32 bits.
pub fn pack_channels(per_channel_bits: &[Vec<bool>], fs_pdm_hz: u32) -> Result<PdmStream> {
    let Some(first) = per_channel_bits.first() else {
        return Err(param("no channels to pack"));
    };
    let n_bits = first.len();
    if per_channel_bits.iter().any(|c| c.len() != n_bits) {
        return Err(param("ragged channel lengths"));
    }
    if n_bits % 32 != 0 {
        return Err(param(format!(
            "channel length {n_bits} is not a multiple of 32"
        )));
    }
    if per_channel_bits.len() > u8::MAX as usize {
        return Err(param("too many channels"));
    }
    let words = per_channel_bits
        .iter()
        .flat_map(|c| pack_words(c))
        .collect();
    Ok(PdmStream {
        n_channels: per_channel_bits.len(),
        n_bits_per_channel: n_bits,
        fs_pdm_hz,
        words,
    })
}

pub fn unpack_channel(stream: &PdmStream, channel: usize) -> Result<Vec<bool>> {
    stream.unpack_channel(channel)
}

/// Capture context stored in the JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementMeta {
    #[serde(default = "sidecar_schema")]
    pub schema: String,
    pub array_fingerprint: Fingerprint,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub array: Option<MicArray>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub excitation: Option<WaveformSpec>,
    pub sound_speed: f64,
    #[serde(default)]
    pub sync_marker: Option<u8>,
}

fn sidecar_schema() -> String {
    SIDECAR_SCHEMA.to_string()
}

impl MeasurementMeta {
    pub fn new(array: &MicArray, excitation: WaveformSpec, sound_speed: f64) -> Self {
        Self {
            schema: sidecar_schema(),
            array_fingerprint: Fingerprint::of(array),
            array: Some(array.clone()),
            excitation: Some(excitation),
            sound_speed,
            sync_marker: None,
        }
    }
}

impl Default for MeasurementMeta {
    fn default() -> Self {
        Self {
            schema: sidecar_schema(),
            array_fingerprint: Fingerprint::default(),
            array: None,
            excitation: None,
            sound_speed: crate::DEFAULT_SOUND_SPEED,
            sync_marker: None,
        }
    }
}

/// One capture of all microphone channels.
#[derive(Debug, Clone, PartialEq)]
pub struct Measurement {
    pub stream: PdmStream,
    pub device_serial: u32,
    pub timestamp_us: u64,
    pub meta: MeasurementMeta,
}

impl Measurement {
    /// Encodes analog channels (clipped to full scale) into a measurement.
    pub fn from_signals(
        channels: &[Vec<f64>],
        fs_pdm_hz: u32,
        device_serial: u32,
        timestamp_us: u64,
        meta: MeasurementMeta,
    ) -> Result<Self> {
        let bits = channels
            .par_iter()
            .map(|c| {
                let clipped: Vec<f64> = c.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
                pdm_encode(&clipped)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            stream: pack_channels(&bits, fs_pdm_hz)?,
            device_serial,
            timestamp_us,
            meta,
        })
    }

    pub fn sync_marker(&self) -> Option<u8> {
        self.meta.sync_marker
    }

    /// Decodes every channel (in parallel) to `fs_pdm / decimation`.
    pub fn decode(&self, decimation: usize) -> Result<ChannelSignals> {
        let decoder = PdmDecoder::new(
            self.stream.fs_pdm(),
            decimation,
            self.stream.n_bits_per_channel(),
        )?;
        let rows = (0..self.stream.n_channels())
            .into_par_iter()
            .map(|c| decoder.decode(&self.stream.unpack_channel(c)?))
            .collect::<Result<Vec<_>>>()?;
        ChannelSignals::from_rows(rows, decoder.fs_out())
    }

    /// Binary `.ertm` image of the header and payload.
    pub fn to_bytes(&self) -> Vec<u8> {
        let s = &self.stream;
        let mut out = Vec::with_capacity(FILE_HEADER_LEN + s.payload_len());
        out.extend_from_slice(FILE_MAGIC);
        out.push(FILE_VERSION);
        out.push(s.n_channels as u8);
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&s.fs_pdm_hz.to_le_bytes());
        out.extend_from_slice(&(s.n_bits_per_channel as u32).to_le_bytes());
        out.extend_from_slice(&self.device_serial.to_le_bytes());
        out.extend_from_slice(&self.timestamp_us.to_le_bytes());
        for w in &s.words {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    /// Parses a `.ertm` image; sidecar metadata is left at its defaults.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < FILE_HEADER_LEN {
            return Err(Error::Format(format!(
                "measurement of {} bytes is shorter than its header",
                bytes.len()
            )));
        }
        if &bytes[..4] != FILE_MAGIC {
            return Err(Error::Format("bad measurement magic".into()));
        }
        if bytes[4] != FILE_VERSION {
            return Err(Error::Format(format!(
                "unsupported measurement version {}",
                bytes[4]
            )));
        }
        let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
        let n_channels = bytes[5] as usize;
        let fs_pdm_hz = u32_at(8);
        let n_bits = u32_at(12) as usize;
        let device_serial = u32_at(16);
        let timestamp_us = u64::from_le_bytes(bytes[20..28].try_into().unwrap());
        if n_bits % 32 != 0 {
            return Err(Error::Format(format!(
                "bits per channel {n_bits} not word aligned"
            )));
        }
        let expected = FILE_HEADER_LEN + n_channels * n_bits / 8;
        if bytes.len() != expected {
            return Err(Error::Format(format!(
                "measurement is {} bytes, header implies {expected}",
                bytes.len()
            )));
        }
        let words = bytes[FILE_HEADER_LEN..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            stream: PdmStream::from_words(n_channels, n_bits, fs_pdm_hz, words)?,
            device_serial,
            timestamp_us,
            meta: MeasurementMeta::default(),
        })
    }

    /// Writes `path` and its `.json` sidecar.
    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::file(path, e))?;
        let side = sidecar_path(path);
        let text = serde_json::to_string_pretty(&self.meta)?;
        fs::write(&side, text).map_err(|e| Error::file(&side, e))?;
        Ok(())
    }

    /// Reads `path`; the sidecar is optional.
    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
        let mut m = Self::from_bytes(&bytes)?;
        let side = sidecar_path(path);
        if side.exists() {
            let text = fs::read_to_string(&side).map_err(|e| Error::file(&side, e))?;
            m.meta = serde_json::from_str(&text)?;
        }
        Ok(m)
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("json")
}
