//! Independent oracles and fixtures shared by the integration tests.
#![allow(dead_code)]

use ertis::array::{default_poisson_array, direction_grid_2d};
use ertis::dsp::ProcessingConfig;
use ertis::pdm::{Measurement, MeasurementMeta, PdmDecoder};
use ertis::scene::{simulate_measurement, CaptureSettings};
use ertis::waveform::{Waveform, WaveformSpec};
use ertis::{MicArray, Reflector, Scene};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// Textbook O(n·m) linear convolution.
pub fn direct_convolve(x: &[f64], h: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; x.len() + h.len() - 1];
    for (i, &a) in x.iter().enumerate() {
        for (j, &b) in h.iter().enumerate() {
            out[i + j] += a * b;
        }
    }
    out
}

pub fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}

pub fn rms(v: &[f64]) -> f64 {
    (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
}

pub fn gaussian(n: usize, sigma: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            sigma * z
        })
        .collect::<Vec<f64>>()
}

/// Magnitude-squared DFT by definition; only used on short vectors.
pub fn dft_power(x: &[f64]) -> Vec<f64> {
    let n = x.len();
    (0..n)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (t, v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * t % n) as f64 / n as f64;
                re += v * a.cos();
                im += v * a.sin();
            }
            re * re + im * im
        })
        .collect()
}

pub fn arc90() -> ProcessingConfig {
    ProcessingConfig::default().with_grid(
        direction_grid_2d(
            90,
            -std::f64::consts::FRAC_PI_2,
            std::f64::consts::FRAC_PI_2,
        )
        .unwrap(),
    )
}

pub fn poisson1() -> MicArray {
    default_poisson_array(1).unwrap()
}

pub fn chirp_pdm() -> Waveform {
    WaveformSpec::default().synthesize(ertis::FS_PDM).unwrap()
}

pub fn measure(scene: &Scene, array: &MicArray, n_bits: usize) -> Measurement {
    let capture = CaptureSettings {
        n_bits,
        ..CaptureSettings::default()
    };
    simulate_measurement(
        scene,
        array,
        &chirp_pdm(),
        ertis::DEFAULT_SOUND_SPEED,
        &capture,
    )
    .unwrap()
}

pub fn one_reflector(az_deg: f64, range: f64) -> Scene {
    Scene::new(vec![Reflector::at_azimuth(az_deg.to_radians(), range, 1.0)])
}

/// Channel-0 capture of noise band-limited to the decode band, scaled so
/// its decoded RMS equals `decoded_rms`. Other channels are silent.
pub fn noisy_capture(n_bits: usize, n_channels: usize, decoded_rms: f64, seed: u64) -> Measurement {
    let dec = PdmDecoder::new(ertis::FS_PDM, ertis::DEFAULT_DECIMATION, n_bits).unwrap();
    let white = gaussian(n_bits, 1.0, seed);
    let band = dec.lowpass_aligned(&white).unwrap();
    let r = rms(&band[200..n_bits - 200]);
    let ch0: Vec<f64> = band.iter().map(|v| v * decoded_rms / r).collect();
    let mut rows = vec![ch0];
    rows.extend((1..n_channels).map(|_| vec![0.0; n_bits]));
    Measurement::from_signals(
        &rows,
        ertis::FS_PDM as u32,
        1,
        0,
        MeasurementMeta::default(),
    )
    .unwrap()
}

/// Least-squares projection of `y` onto the span of `basis`; returns the
/// fitted part. Normal equations solved by Gaussian elimination.
pub fn project(y: &[f64], basis: &[Vec<f64>]) -> Vec<f64> {
    let k = basis.len();
    let mut a = vec![vec![0.0; k + 1]; k];
    for i in 0..k {
        for j in 0..k {
            a[i][j] = basis[i].iter().zip(&basis[j]).map(|(p, q)| p * q).sum();
        }
        a[i][k] = basis[i].iter().zip(y).map(|(p, q)| p * q).sum();
    }
    for c in 0..k {
        let p = (c..k)
            .max_by(|&r, &s| a[r][c].abs().total_cmp(&a[s][c].abs()))
            .unwrap();
        a.swap(c, p);
        for r in 0..k {
            if r != c {
                let f = a[r][c] / a[c][c];
                for j in c..=k {
                    a[r][j] -= f * a[c][j];
                }
            }
        }
    }
    let coef: Vec<f64> = (0..k).map(|i| a[i][k] / a[i][i]).collect();
    (0..y.len())
        .map(|t| (0..k).map(|i| coef[i] * basis[i][t]).sum())
        .collect()
}

/// Power within [lo, hi] Hz of a Hann-windowed signal (arbitrary scale).
pub fn band_power(x: &[f64], fs: f64, lo: f64, hi: f64) -> f64 {
    let n = x.len();
    let mut buf: Vec<rustfft::num_complex::Complex<f64>> = x
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let w = 0.5 - 0.5 * (2.0 * std::f64::consts::PI * i as f64 / n as f64).cos();
            rustfft::num_complex::Complex::new(v * w, 0.0)
        })
        .collect();
    rustfft::FftPlanner::new()
        .plan_fft_forward(n)
        .process(&mut buf);
    (0..=n / 2)
        .filter(|&k| {
            let f = k as f64 * fs / n as f64;
            f >= lo && f <= hi
        })
        .map(|k| buf[k].norm_sqr())
        .sum()
}

/// In-band SNR of `y` against the best least-squares fit of the reference
/// `basis`; everything left over in 20–80 kHz counts as noise.
pub fn fitted_snr_db(y: &[f64], basis: &[Vec<f64>], fs: f64) -> f64 {
    let fit = project(y, basis);
    let e: Vec<f64> = y.iter().zip(&fit).map(|(a, b)| a - b).collect();
    10.0 * (band_power(&fit, fs, 20e3, 80e3) / band_power(&e, fs, 20e3, 80e3)).log10()
}

/// Decoded PDM round trip of `x`, leading filter transient dropped.
pub fn pdm_round_trip(x: &[f64]) -> Vec<f64> {
    let dec = PdmDecoder::new(ertis::FS_PDM, ertis::DEFAULT_DECIMATION, x.len()).unwrap();
    let bits = ertis::pdm::pdm_encode(x).unwrap();
    dec.decode(&bits).unwrap()[PDM_SKIP..].to_vec()
}

/// Decoded samples dropped at the start of a round trip (filter fill).
pub const PDM_SKIP: usize = 64;

/// Sine-fit SNR (amplitude, phase and offset free) of a round-tripped
/// tone at `freq` Hz.
pub fn tone_snr_db(freq: f64, amplitude: f64, n_bits: usize) -> f64 {
    let fs = ertis::FS_PDM;
    let x: Vec<f64> = (0..n_bits)
        .map(|i| amplitude * (2.0 * std::f64::consts::PI * freq * i as f64 / fs).sin())
        .collect();
    let y = pdm_round_trip(&x);
    let fsd = fs / ertis::DEFAULT_DECIMATION as f64;
    let w = 2.0 * std::f64::consts::PI * freq / fsd;
    let basis = vec![
        (0..y.len()).map(|t| (w * t as f64).sin()).collect(),
        (0..y.len()).map(|t| (w * t as f64).cos()).collect(),
        vec![1.0; y.len()],
    ];
    fitted_snr_db(&y, &basis, fsd)
}
