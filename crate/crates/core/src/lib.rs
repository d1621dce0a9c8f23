//! Software model of an embedded broadband in-air 3D sonar.
//!
//! The crate follows one capture from a synthetic scene to acoustic images:
//!
//! ```text
//! scene ──► per-mic echoes ──► sigma-delta PDM ──► Measurement
//!                                                     │
//!      ┌──────────────────────────────────────────────┘
//!      ▼
//!  low-pass decode ─► matched filter ─► delay-and-sum ─► envelope ─► AcousticImage
//!                                                                        │
//!                                                   pointcloud / PGM / CSV
//! ```
//!
//! Around that chain sit the microphone array designs ([`array`]), the
//! excitation waveforms ([`waveform`]), multi-device triggering and in-band
//! markers ([`sync`]), a TCP client/server processing network ([`net`]) and a
//! scaling benchmark ([`bench`]).
//!
//! See the `examples/` directory of this crate for one runnable program per
//! capability.

pub mod array;
pub mod bench;
pub mod config;
pub mod dsp;
pub mod error;
pub mod fingerprint;
pub mod imaging;
pub mod net;
pub mod pdm;
pub mod scene;
pub mod sync;
pub mod waveform;

pub use array::{DelayTable, DirectionGrid, GridKind, LayoutKind, MicArray};
pub use dsp::{AcousticImage, ChannelSignals, ProcessingConfig};
pub use error::{Error, Result};
pub use pdm::{Measurement, PdmStream};
pub use scene::{Reflector, Scene};
pub use waveform::{Waveform, WaveformSpec};

/// Speed of sound in air at 20 °C, m/s.
pub const DEFAULT_SOUND_SPEED: f64 = 343.0;

/// PDM clock of the microphone array, Hz.
pub const FS_PDM: f64 = 4_500_000.0;

/// Decimation from the PDM clock to the decoded signal rate.
pub const DEFAULT_DECIMATION: usize = 10;

/// PDM bits captured per channel in one default measurement (36.4 ms).
pub const DEFAULT_CAPTURE_BITS: usize = 163_840;

/// Maximum number of microphones on the front-end.
pub const MAX_MICS: usize = 32;

pub type Vec3 = [f64; 3];

#[inline]
pub(crate) fn dot(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub(crate) fn sub(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub(crate) fn norm(a: Vec3) -> f64 {
    dot(a, a).sqrt()
}

/// Formats a value with 9 significant digits, the precision used by every
/// CSV export.
pub(crate) fn sig9(x: f64) -> String {
    format!("{x:.8e}")
}
