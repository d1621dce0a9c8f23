//! Measurement package framing.
//!
//! ```text
//! offset  size  field
//!      0     4  magic "RTIP"
//!      4     1  version = 1
//!      5     1  payload kind (0 raw PDM, 1 acoustic image)
//!      6     2  reserved
//!      8     4  device serial
//!     12     4  sequence
//!     16     8  timestamp, µs
//!     24     8  config fingerprint
//!     32     4  payload length
//!     36     n  payload
//!   36+n     4  CRC-32 (IEEE) of bytes 0..36+n
//! ```
//!
//! All integers little-endian.

use std::io::{self, Read};

use thiserror::Error;

use crate::fingerprint::Fingerprint;

pub const MAGIC: &[u8; 4] = b"RTIP";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 36;
pub const CRC_LEN: usize = 4;
pub const MIN_PACKAGE_LEN: usize = HEADER_LEN + CRC_LEN;
/// Largest payload a reader will accept.
pub const MAX_PAYLOAD_LEN: usize = 256 << 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKind {
    RawPdm,
    AcousticImage,
}

impl PayloadKind {
    pub fn code(self) -> u8 {
        match self {
            PayloadKind::RawPdm => 0,
            PayloadKind::AcousticImage => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PayloadKind::RawPdm),
            1 => Some(PayloadKind::AcousticImage),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MeasurementPackage {
    pub device_serial: u32,
    pub sequence: u32,
    pub timestamp_us: u64,
    pub payload_kind: PayloadKind,
    pub config_fingerprint: Fingerprint,
    pub payload: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WireError {
    #[error("bad package magic {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported package version {0}")]
    BadVersion(u8),
    #[error("unknown payload kind {0}")]
    UnknownKind(u8),
    #[error("package truncated: need {needed} bytes, have {got}")]
    Truncated { needed: usize, got: usize },
    #[error("payload length {declared} does not match package size {actual}")]
    LengthMismatch { declared: usize, actual: usize },
    #[error("payload length {0} exceeds the limit")]
    PayloadTooLarge(usize),
    #[error("CRC mismatch: stored {stored:08x}, computed {computed:08x}")]
    Crc { stored: u32, computed: u32 },
}

pub fn encode_package(p: &MeasurementPackage) -> Vec<u8> {
    let mut out = Vec::with_capacity(MIN_PACKAGE_LEN + p.payload.len());
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(p.payload_kind.code());
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&p.device_serial.to_le_bytes());
    out.extend_from_slice(&p.sequence.to_le_bytes());
    out.extend_from_slice(&p.timestamp_us.to_le_bytes());
    out.extend_from_slice(&p.config_fingerprint.0.to_le_bytes());
    out.extend_from_slice(&(p.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&p.payload);
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

struct Header {
    kind: PayloadKind,
    payload_len: usize,
}

fn parse_header(h: &[u8]) -> Result<Header, WireError> {
    if h.len() < HEADER_LEN {
        return Err(WireError::Truncated {
            needed: HEADER_LEN,
            got: h.len(),
        });
    }
    let magic: [u8; 4] = h[..4].try_into().unwrap();
    if &magic != MAGIC {
        return Err(WireError::BadMagic(magic));
    }
    if h[4] != VERSION {
        return Err(WireError::BadVersion(h[4]));
    }
    let kind = PayloadKind::from_code(h[5]).ok_or(WireError::UnknownKind(h[5]))?;
    let payload_len = u32::from_le_bytes(h[32..36].try_into().unwrap()) as usize;
    if payload_len > MAX_PAYLOAD_LEN {
        return Err(WireError::PayloadTooLarge(payload_len));
    }
    Ok(Header { kind, payload_len })
}

/// Decodes exactly one package occupying all of `bytes`.
pub fn decode_package(bytes: &[u8]) -> Result<MeasurementPackage, WireError> {
    let header = parse_header(bytes)?;
    let total = MIN_PACKAGE_LEN + header.payload_len;
    if bytes.len() != total {
        return Err(WireError::LengthMismatch {
            declared: header.payload_len,
            actual: bytes.len(),
        });
    }
    let body = &bytes[..total - CRC_LEN];
    let stored = u32::from_le_bytes(bytes[total - CRC_LEN..].try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(WireError::Crc { stored, computed });
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
    Ok(MeasurementPackage {
        device_serial: u32_at(8),
        sequence: u32_at(12),
        timestamp_us: u64_at(16),
        payload_kind: header.kind,
        config_fingerprint: Fingerprint(u64_at(24)),
        payload: bytes[HEADER_LEN..total - CRC_LEN].to_vec(),
    })
}

#[derive(Debug, Error)]
pub enum FrameError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    Wire(#[from] WireError),
}

/// Reads one framed package from a stream. `Ok(None)` on a clean end of
/// stream between packages. The header is validated before the payload is
/// read, so a corrupt header never triggers a giant allocation.
pub fn read_package<R: Read>(r: &mut R) -> Result<Option<MeasurementPackage>, FrameError> {
    let mut header = [0u8; HEADER_LEN];
    let mut filled = 0;
    while filled < HEADER_LEN {
        match r.read(&mut header[filled..]) {
            Ok(0) if filled == 0 => return Ok(None),
            Ok(0) => {
                return Err(
                    io::Error::new(io::ErrorKind::UnexpectedEof, "partial package header").into(),
                )
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    let parsed = parse_header(&header)?;
    let mut bytes = Vec::with_capacity(MIN_PACKAGE_LEN + parsed.payload_len);
    bytes.extend_from_slice(&header);
    bytes.resize(MIN_PACKAGE_LEN + parsed.payload_len, 0);
    r.read_exact(&mut bytes[HEADER_LEN..])?;
    Ok(Some(decode_package(&bytes)?))
}
