//! Processing time versus number of look directions.
//!
//! Every run times [`process_measurement`] alone (PDM decode through
//! envelope) on one fixed, seeded capture. Simulation and I/O happen before
//! the clock starts.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::array::{default_poisson_array, direction_grid_2d, direction_grid_3d, GridKind};
use crate::dsp::{process_measurement, ProcessingConfig};
use crate::error::{param, Result};
use crate::pdm::Measurement;
use crate::scene::{simulate_measurement, CaptureSettings, Reflector, Scene};
use crate::waveform::{Waveform, WaveformSpec};

pub const BENCH_SCHEMA: &str = "ertis.bench/1";
pub const DEFAULT_COUNTS: [usize; 4] = [90, 1000, 3000, 4000];

#[derive(Debug, Clone, PartialEq)]
pub struct BenchOptions {
    pub direction_counts: Vec<usize>,
    pub runs: usize,
    pub warmup_runs: usize,
    pub grid_kind: GridKind,
    pub n_bits: usize,
    pub seed: u64,
}

impl Default for BenchOptions {
    fn default() -> Self {
        Self {
            direction_counts: DEFAULT_COUNTS.to_vec(),
            runs: 50,
            warmup_runs: 1,
            grid_kind: GridKind::Hemisphere3d,
            n_bits: crate::DEFAULT_CAPTURE_BITS,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Ordinary least squares `y ≈ slope·x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(param("linear fit needs at least two (x, y) pairs"));
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let syy: f64 = y.iter().map(|v| (v - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(param("linear fit needs distinct x values"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - (slope * a + intercept)).powi(2))
        .sum();
    let r_squared = if syy == 0.0 { 1.0 } else { 1.0 - ss_res / syy };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
    })
}

pub fn is_monotone_non_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] <= w[1])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: String,
    pub direction_counts: Vec<usize>,
    pub runs: usize,
    pub warmup_runs: usize,
    pub mean_ms: Vec<f64>,
    pub std_ms: Vec<f64>,
    pub median_ms: Vec<f64>,
    pub grid_kind: GridKind,
    pub n_channels: usize,
    pub n_bits_per_channel: usize,
    pub fs_pdm_hz: u32,
    pub decimation: usize,
    pub matched_filter_enabled: bool,
    pub envelope_enabled: bool,
    pub host: String,
    pub fit: LinearFit,
    pub monotone: bool,
}

impl BenchReport {
    pub fn to_table(&self) -> String {
        let mut s = format!(
            "{:>10}  {:>10}  {:>10}  {:>10}\n",
            "directions", "mean ms", "std ms", "median ms"
        );
        for i in 0..self.direction_counts.len() {
            s.push_str(&format!(
                "{:>10}  {:>10.2}  {:>10.2}  {:>10.2}\n",
                self.direction_counts[i], self.mean_ms[i], self.std_ms[i], self.median_ms[i]
            ));
        }
        s.push_str(&format!(
            "fit: {:.4} ms/direction + {:.2} ms, R² = {:.4}; monotone: {}\n",
            self.fit.slope, self.fit.intercept, self.fit.r_squared, self.monotone
        ));
        s
    }
}

pub fn host_descriptor() -> String {
    let cpus = std::thread::available_parallelism().map_or(1, |n| n.get());
    format!(
        "{}-{} cpus={cpus} rayon_threads={}",
        std::env::consts::OS,
        std::env::consts::ARCH,
        rayon::current_num_threads()
    )
}

/// The fixed capture every bench run processes: 32-mic Poisson array
/// (seed 1), one reflector at 20° and 2 m (closer if the capture is too
/// short), light noise.
pub fn bench_measurement(
    n_bits: usize,
    seed: u64,
) -> Result<(Measurement, crate::MicArray, Waveform)> {
    let array = default_poisson_array(1)?;
    let spec = WaveformSpec::default();
    let excitation = spec.synthesize(crate::FS_PDM)?;
    let window = n_bits as f64 / crate::FS_PDM - spec.duration();
    let range = (0.4 * window * crate::DEFAULT_SOUND_SPEED).min(2.0);
    let scene = Scene::new(vec![Reflector::at_azimuth(20f64.to_radians(), range, 1.0)])
        .with_noise(1e-3, seed);
    let capture = CaptureSettings {
        n_bits,
        ..CaptureSettings::default()
    };
    let m = simulate_measurement(
        &scene,
        &array,
        &excitation,
        crate::DEFAULT_SOUND_SPEED,
        &capture,
    )?;
    Ok((m, array, excitation))
}

fn stats(samples: &mut [f64]) -> (f64, f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    samples.sort_by(f64::total_cmp);
    let mid = samples.len() / 2;
    let median = if samples.len() % 2 == 0 {
        0.5 * (samples[mid - 1] + samples[mid])
    } else {
        samples[mid]
    };
    (mean, var.sqrt(), median)
}

/// Times the pipeline once per run for every direction count. `base`
/// supplies everything but the grid; its filter switches are honored.
pub fn bench_pipeline(opts: &BenchOptions, base: &ProcessingConfig) -> Result<BenchReport> {
    if opts.direction_counts.is_empty() {
        return Err(param("bench needs at least one direction count"));
    }
    if opts.runs < 2 {
        return Err(param("bench needs at least two runs per count"));
    }
    let (m, array, pulse) = bench_measurement(opts.n_bits, opts.seed)?;
    let fs_decoded = m.stream.fs_pdm() / base.decimation as f64;
    let excitation = pulse.resampled(fs_decoded)?;

    let mut mean_ms = Vec::new();
    let mut std_ms = Vec::new();
    let mut median_ms = Vec::new();
    for &count in &opts.direction_counts {
        let grid = match opts.grid_kind {
            GridKind::Arc2d => direction_grid_2d(
                count,
                -std::f64::consts::FRAC_PI_2,
                std::f64::consts::FRAC_PI_2,
            )?,
            GridKind::Hemisphere3d => direction_grid_3d(count, std::f64::consts::FRAC_PI_2)?,
        };
        let cfg = base.clone().with_grid(grid);
        for _ in 0..opts.warmup_runs {
            drop(process_measurement(&m, &cfg, &array, &excitation)?);
        }
        let mut times = Vec::with_capacity(opts.runs);
        for _ in 0..opts.runs {
            let t0 = Instant::now();
            let img = process_measurement(&m, &cfg, &array, &excitation)?;
            times.push(t0.elapsed().as_secs_f64() * 1e3);
            drop(img);
        }
        let (mean, std, median) = stats(&mut times);
        log::info!("{count} directions: mean {mean:.2} ms, std {std:.2} ms");
        mean_ms.push(mean);
        std_ms.push(std);
        median_ms.push(median);
    }

    let xs: Vec<f64> = opts.direction_counts.iter().map(|&c| c as f64).collect();
    let fit = if xs.len() >= 2 {
        linear_fit(&xs, &mean_ms)?
    } else {
        LinearFit {
            slope: 0.0,
            intercept: mean_ms[0],
            r_squared: 1.0,
        }
    };
    Ok(BenchReport {
        schema: BENCH_SCHEMA.into(),
        direction_counts: opts.direction_counts.clone(),
        runs: opts.runs,
        warmup_runs: opts.warmup_runs,
        monotone: is_monotone_non_decreasing(&mean_ms),
        mean_ms,
        std_ms,
        median_ms,
        grid_kind: opts.grid_kind,
        n_channels: m.stream.n_channels(),
        n_bits_per_channel: m.stream.n_bits_per_channel(),
        fs_pdm_hz: m.stream.fs_pdm_hz(),
        decimation: base.decimation,
        matched_filter_enabled: base.matched_filter_enabled,
        envelope_enabled: base.envelope_enabled,
        host: host_descriptor(),
        fit,
    })
}
