//! Processing chain from PDM captures to acoustic images:
//!
//! 1. PDM low-pass decode and decimation per channel,
//! 2. optional matched filter per channel,
//! 3. delay-and-sum beamforming for every direction of interest,
//! 4. optional envelope detection per direction.
//!
//! Channel and direction loops are data-parallel maps whose results are
//! assembled by index, so output is bit-identical however the work is
//! scheduled.

pub mod beamform;
pub mod conv;
pub mod envelope;

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::{direction_grid_2d, steering_delays, DirectionGrid, MicArray};
use crate::error::{param, Result};
use crate::pdm::{decode_group_delay, Measurement};
use crate::waveform::{matched_kernel, Waveform};
use crate::Vec3;

pub use beamform::delay_and_sum;
pub use conv::{fft_convolve, ConvMode, Convolver};
pub use envelope::{envelope, EnvelopeDetector};

/// Dense row-major matrix of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(param(format!(
                "matrix data of {} values does not fit {rows}x{cols}",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(param("rows have different lengths"));
        }
        let n = rows.len();
        Ok(Self {
            rows: n,
            cols,
            data: rows.into_iter().flatten().collect(),
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(0.0, f64::max)
    }

    /// `(row, col)` of the largest entry, lowest index on ties.
    pub fn argmax(&self) -> (usize, usize) {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, v) in self.data.iter().enumerate() {
            if *v > best.1 {
                best = (i, *v);
            }
        }
        (best.0 / self.cols.max(1), best.0 % self.cols.max(1))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            data: self.data.iter().map(|v| v * s).collect(),
            ..self.clone()
        }
    }
}

/// Decoded multi-channel microphone signals.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSignals {
    samples: Matrix,
    fs: f64,
}

impl ChannelSignals {
    pub fn from_rows(rows: Vec<Vec<f64>>, fs: f64) -> Result<Self> {
        if rows.is_empty() || rows[0].is_empty() {
            return Err(param("channel signals need at least one non-empty channel"));
        }
        Ok(Self {
            samples: Matrix::from_rows(rows)?,
            fs,
        })
    }

    pub fn n_channels(&self) -> usize {
        self.samples.rows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.cols()
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channel(&self, m: usize) -> &[f64] {
        self.samples.row(m)
    }

    pub fn channel_mut(&mut self, m: usize) -> &mut [f64] {
        self.samples.row_mut(m)
    }

    pub fn matrix(&self) -> &Matrix {
        &self.samples
    }

    pub fn into_rows(self) -> Vec<Vec<f64>> {
        let n = self.samples.cols;
        self.samples.data.chunks(n).map(<[f64]>::to_vec).collect()
    }
}

/// Pipeline switches and the look directions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessingConfig {
    pub matched_filter_enabled: bool,
    pub envelope_enabled: bool,
    pub grid: DirectionGrid,
    pub sound_speed: f64,
    pub decimation: usize,
}

impl Default for ProcessingConfig {
    fn default() -> Self {
        Self {
            matched_filter_enabled: true,
            envelope_enabled: true,
            grid: direction_grid_2d(90, -PI / 2.0, PI / 2.0).expect("static grid"),
            sound_speed: crate::DEFAULT_SOUND_SPEED,
            decimation: crate::DEFAULT_DECIMATION,
        }
    }
}

impl ProcessingConfig {
    pub fn with_grid(mut self, grid: DirectionGrid) -> Self {
        self.grid = grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.decimation == 0 {
            return Err(param("decimation must be at least 1"));
        }
        if self.grid.is_empty() {
            return Err(param("processing grid is empty"));
        }
        if !(self.sound_speed > 0.0) {
            return Err(param("sound speed must be positive"));
        }
        Ok(())
    }
}

/// Intensity over (direction × range sample).
#[derive(Debug, Clone, PartialEq)]
pub struct AcousticImage {
    pub intensity: Matrix,
    pub grid: DirectionGrid,
    pub fs_decoded: f64,
    pub sound_speed: f64,
    /// Samples of pipeline latency (decode filter plus matched-filter
    /// centering) subtracted when converting sample index to range.
    pub group_delay_samples: f64,
    /// Per-direction timeline lead removed by delay normalization.
    pub direction_shift: Vec<f64>,
}

impl AcousticImage {
    pub fn n_directions(&self) -> usize {
        self.intensity.rows()
    }

    pub fn n_range_samples(&self) -> usize {
        self.intensity.cols()
    }

    pub fn range_per_sample(&self) -> f64 {
        self.sound_speed / (2.0 * self.fs_decoded)
    }

    /// Range in meters of `sample` along `direction`.
    pub fn range_of(&self, direction: usize, sample: usize) -> f64 {
        (sample as f64 + self.direction_shift[direction] - self.group_delay_samples)
            * self.range_per_sample()
    }

    /// Sample index closest to `range` along `direction`.
    pub fn sample_of(&self, direction: usize, range: f64) -> f64 {
        range / self.range_per_sample() + self.group_delay_samples - self.direction_shift[direction]
    }

    pub fn position_of(&self, direction: usize, sample: usize) -> Vec3 {
        let r = self.range_of(direction, sample);
        let u = self.grid.directions()[direction];
        [r * u[0], r * u[1], r * u[2]]
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            intensity: self.intensity.scaled(s),
            ..self.clone()
        }
    }
}

/// Filters every channel with `kernel` in `same` mode.
pub fn matched_filter(signals: &ChannelSignals, kernel: &[f64]) -> Result<ChannelSignals> {
    if kernel.is_empty() {
        return Err(param("matched filter kernel is empty"));
    }
    if kernel.len() > signals.n_samples() {
        return Err(param(format!(
            "matched filter kernel ({}) longer than the signal ({})",
            kernel.len(),
            signals.n_samples()
        )));
    }
    let conv = Convolver::new(kernel, signals.n_samples())?;
    let rows = (0..signals.n_channels())
        .into_par_iter()
        .map(|m| conv.apply(signals.channel(m), ConvMode::Same))
        .collect::<Result<Vec<_>>>()?;
    ChannelSignals::from_rows(rows, signals.fs())
}

/// Index shift of the correlation peak introduced by a `same`-mode matched
/// filter of length `kernel_len`.
pub fn matched_filter_offset(kernel_len: usize) -> usize {
    (kernel_len - 1) - (kernel_len - 1) / 2
}

/// Beamforms decoded channels into an image. Shared by
/// [`process_measurement`] and callers that already hold decoded signals.
pub fn image_from_signals(
    signals: &ChannelSignals,
    cfg: &ProcessingConfig,
    array: &MicArray,
    excitation: &Waveform,
) -> Result<AcousticImage> {
    cfg.validate()?;
    if signals.n_channels() != array.n_mics() {
        return Err(param(format!(
            "{} channels but the array has {} microphones",
            signals.n_channels(),
            array.n_mics()
        )));
    }
    let fs = signals.fs();
    let mut group_delay = decode_group_delay(cfg.decimation).round();

    let filtered;
    let signals = if cfg.matched_filter_enabled {
        let kernel = matched_kernel(&excitation.resampled(fs)?)?;
        filtered = matched_filter(signals, &kernel)?;
        group_delay += matched_filter_offset(kernel.len()) as f64;
        &filtered
    } else {
        signals
    };

    let table = steering_delays(array, &cfg.grid, cfg.sound_speed, fs)?;
    beamform::check_table(signals, &table)?;
    let n = signals.n_samples();
    let detector = if cfg.envelope_enabled {
        Some(EnvelopeDetector::new(n)?)
    } else {
        None
    };
    let mut intensity = Matrix::zeros(table.n_directions(), n);
    intensity
        .data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(d, row)| {
            beamform::beamform_row(signals, table.row(d), row);
            if let Some(det) = &detector {
                det.apply_in_place(row);
            }
        });

    Ok(AcousticImage {
        intensity,
        grid: cfg.grid.clone(),
        fs_decoded: fs,
        sound_speed: cfg.sound_speed,
        group_delay_samples: group_delay,
        direction_shift: table.reference_shift().to_vec(),
    })
}

/// Full chain: decode → [matched filter] → delay-and-sum → [envelope].
pub fn process_measurement(
    m: &Measurement,
    cfg: &ProcessingConfig,
    array: &MicArray,
    excitation: &Waveform,
) -> Result<AcousticImage> {
    cfg.validate()?;
    if m.stream.n_channels() != array.n_mics() {
        return Err(param(format!(
            "measurement has {} channels but the array has {} microphones",
            m.stream.n_channels(),
            array.n_mics()
        )));
    }
    let signals = m.decode(cfg.decimation)?;
    image_from_signals(&signals, cfg, array, excitation)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{grid_array, GridKind};

    #[test]
    fn das_single_mic_identity() {
        let x: Vec<f64> = (0..100).map(|i| (i as f64).sin()).collect();
        let s = ChannelSignals::from_rows(vec![x.clone()], 450e3).unwrap();
        let arr = grid_array(1, 1, 0.01).unwrap();
        let g = direction_grid_2d(5, -1.0, 1.0).unwrap();
        let t = steering_delays(&arr, &g, 343.0, 450e3).unwrap();
        let out = delay_and_sum(&s, &t).unwrap();
        for d in 0..5 {
            assert_eq!(out.row(d), &x[..]);
        }
    }

    #[test]
    fn das_coherent_identical_channels() {
        let x: Vec<f64> = (0..64).map(|i| (i as f64 * 0.3).cos()).collect();
        let s = ChannelSignals::from_rows(vec![x.clone(); 4], 450e3).unwrap();
        let arr = grid_array(2, 2, 0.01).unwrap();
        let g = DirectionGrid::from_directions(GridKind::Arc2d, vec![[0.0, 0.0, 1.0]]).unwrap();
        let t = steering_delays(&arr, &g, 343.0, 450e3).unwrap();
        let out = delay_and_sum(&s, &t).unwrap();
        for (a, b) in out.row(0).iter().zip(&x) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn das_dimension_mismatch() {
        let s = ChannelSignals::from_rows(vec![vec![0.0; 10]; 3], 450e3).unwrap();
        let arr = grid_array(2, 2, 0.01).unwrap();
        let g = direction_grid_2d(3, -1.0, 1.0).unwrap();
        let t = steering_delays(&arr, &g, 343.0, 450e3).unwrap();
        assert!(delay_and_sum(&s, &t).is_err());
    }

    #[test]
    fn matched_filter_unit_kernel_is_identity() {
        let x: Vec<f64> = (0..200).map(|i| ((i * 37) % 11) as f64).collect();
        let s = ChannelSignals::from_rows(vec![x.clone(), x.clone()], 1.0).unwrap();
        let y = matched_filter(&s, &[1.0]).unwrap();
        for m in 0..2 {
            for (a, b) in y.channel(m).iter().zip(&x) {
                assert!((a - b).abs() < 1e-12);
            }
        }
        assert!(matched_filter(&s, &vec![1.0; 201]).is_err());
    }

    #[test]
    fn offset_of_same_mode() {
        assert_eq!(matched_filter_offset(900), 450);
        assert_eq!(matched_filter_offset(1), 0);
        assert_eq!(matched_filter_offset(4), 2);
    }

    #[test]
    fn matrix_argmax_ties_lowest() {
        let m = Matrix::from_rows(vec![vec![0.0, 2.0], vec![2.0, 1.0]]).unwrap();
        assert_eq!(m.argmax(), (0, 1));
        assert!(Matrix::from_rows(vec![vec![0.0], vec![1.0, 2.0]]).is_err());
    }
}
