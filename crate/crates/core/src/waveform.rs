//! Excitation signals and matched-filter kernels.

use std::f64::consts::PI;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{param, Result};

pub const DEFAULT_CHIRP_START: f64 = 20_000.0;
pub const DEFAULT_CHIRP_END: f64 = 80_000.0;
pub const DEFAULT_CHIRP_DURATION: f64 = 0.002;
pub const DEFAULT_TAPER: f64 = 0.1;

/// Parameters from which a waveform can be rendered at any sample rate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum WaveformSpec {
    LogChirp {
        f_start: f64,
        f_end: f64,
        duration: f64,
        taper: f64,
    },
    Sine {
        frequency: f64,
        duration: f64,
    },
}

impl Default for WaveformSpec {
    fn default() -> Self {
        WaveformSpec::LogChirp {
            f_start: DEFAULT_CHIRP_START,
            f_end: DEFAULT_CHIRP_END,
            duration: DEFAULT_CHIRP_DURATION,
            taper: DEFAULT_TAPER,
        }
    }
}

impl WaveformSpec {
    pub fn synthesize(&self, fs: f64) -> Result<Waveform> {
        match *self {
            WaveformSpec::LogChirp {
                f_start,
                f_end,
                duration,
                taper,
            } => log_fm_chirp(f_start, f_end, duration, fs, taper),
            WaveformSpec::Sine {
                frequency,
                duration,
            } => sine(frequency, duration, fs),
        }
    }

    pub fn duration(&self) -> f64 {
        match *self {
            WaveformSpec::LogChirp { duration, .. } | WaveformSpec::Sine { duration, .. } => {
                duration
            }
        }
    }
}

/// A sampled excitation signal with amplitude in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    spec: WaveformSpec,
    samples: Vec<f64>,
    fs: f64,
}

impl Waveform {
    pub fn spec(&self) -> &WaveformSpec {
        &self.spec
    }

    pub fn samples(&self) -> &[f64] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn duration(&self) -> f64 {
        self.spec.duration()
    }

    pub fn f_start(&self) -> f64 {
        match self.spec {
            WaveformSpec::LogChirp { f_start, .. } => f_start,
            WaveformSpec::Sine { frequency, .. } => frequency,
        }
    }

    pub fn f_end(&self) -> f64 {
        match self.spec {
            WaveformSpec::LogChirp { f_end, .. } => f_end,
            WaveformSpec::Sine { frequency, .. } => frequency,
        }
    }

    /// Same waveform rendered at another sample rate.
    pub fn resampled(&self, fs: f64) -> Result<Waveform> {
        if fs == self.fs {
            return Ok(self.clone());
        }
        self.spec.synthesize(fs)
    }

    /// Linear interpolation at fractional sample position `pos`; zero outside
    /// the waveform support.
    pub fn interpolate(&self, pos: f64) -> f64 {
        if pos < 0.0 {
            return 0.0;
        }
        let i = pos.floor() as usize;
        let frac = pos - i as f64;
        let a = self.samples.get(i).copied().unwrap_or(0.0);
        let b = self.samples.get(i + 1).copied().unwrap_or(0.0);
        a + (b - a) * frac
    }

    /// One sample per line, 9 significant digits.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.samples.len() * 16);
        for s in &self.samples {
            let _ = writeln!(out, "{}", crate::sig9(*s));
        }
        out
    }
}

fn sample_count(duration: f64, fs: f64) -> Result<usize> {
    if !(duration > 0.0 && duration.is_finite()) {
        return Err(param(format!("duration must be positive, got {duration}")));
    }
    if !(fs > 0.0 && fs.is_finite()) {
        return Err(param(format!("sample rate must be positive, got {fs}")));
    }
    let n = (duration * fs).round() as usize;
    if n == 0 {
        return Err(param("waveform would contain no samples"));
    }
    Ok(n)
}

/// Tukey window whose cosine ramps each cover `edge_fraction` of the length.
fn tukey(n: usize, edge_fraction: f64) -> Vec<f64> {
    let ramp = edge_fraction * n as f64;
    (0..n)
        .map(|i| {
            let from_edge = (i as f64).min((n - 1 - i) as f64);
            if ramp <= 0.0 || from_edge >= ramp {
                1.0
            } else {
                0.5 * (1.0 - (PI * from_edge / ramp).cos())
            }
        })
        .collect()
}

/// Exponential ("logarithmic") frequency sweep from `f_start` to `f_end`.
///
/// Phase law `φ(t) = 2π f0 T / ln(f1/f0) · (exp(t ln(f1/f0) / T) − 1)`, so the
/// instantaneous frequency is `f0 · (f1/f0)^(t/T)`.
pub fn log_fm_chirp(
    f_start: f64,
    f_end: f64,
    duration: f64,
    fs: f64,
    taper_fraction: f64,
) -> Result<Waveform> {
    if !(0.0 < f_start && f_start < f_end) {
        return Err(param(format!(
            "chirp needs 0 < f_start < f_end, got {f_start}..{f_end}"
        )));
    }
    if !(f_end < fs / 2.0) {
        return Err(param(format!(
            "chirp end frequency {f_end} Hz violates Nyquist at fs={fs} Hz"
        )));
    }
    if !(0.0..=0.5).contains(&taper_fraction) {
        return Err(param(format!(
            "taper fraction must be in [0, 0.5], got {taper_fraction}"
        )));
    }
    let n = sample_count(duration, fs)?;
    let k = (f_end / f_start).ln();
    let window = tukey(n, taper_fraction);
    let samples = window
        .iter()
        .enumerate()
        .map(|(i, w)| {
            let t = i as f64 / fs;
            let phase = 2.0 * PI * f_start * duration / k * ((t * k / duration).exp() - 1.0);
            w * phase.sin()
        })
        .collect();
    Ok(Waveform {
        spec: WaveformSpec::LogChirp {
            f_start,
            f_end,
            duration,
            taper: taper_fraction,
        },
        samples,
        fs,
    })
}

/// Default 2 ms 20–80 kHz chirp at sample rate `fs`.
pub fn default_chirp(fs: f64) -> Result<Waveform> {
    WaveformSpec::default().synthesize(fs)
}

/// Constant-amplitude tone.
pub fn sine(frequency: f64, duration: f64, fs: f64) -> Result<Waveform> {
    if !(frequency > 0.0 && frequency < fs / 2.0) {
        return Err(param(format!(
            "tone frequency {frequency} Hz must lie in (0, fs/2) for fs={fs} Hz"
        )));
    }
    let n = sample_count(duration, fs)?;
    let w = 2.0 * PI * frequency / fs;
    let samples = (0..n).map(|i| (w * i as f64).sin()).collect();
    Ok(Waveform {
        spec: WaveformSpec::Sine {
            frequency,
            duration,
        },
        samples,
        fs,
    })
}

/// Time-reversed, unit-energy copy of the waveform.
pub fn matched_kernel(w: &Waveform) -> Result<Vec<f64>> {
    reversed_unit_energy(w.samples())
}

pub(crate) fn reversed_unit_energy(samples: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(param("matched kernel of an empty waveform"));
    }
    let energy = samples.iter().map(|s| s * s).sum::<f64>().sqrt();
    if !(energy > 0.0) {
        return Err(param("matched kernel of a zero-energy waveform"));
    }
    Ok(samples.iter().rev().map(|s| s / energy).collect())
}
