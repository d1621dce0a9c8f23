//! Synthetic point-reflector scenes and their per-microphone echoes.
//!
//! Propagation is spherical spreading only: an echo from reflector `k` at
//! microphone `m` is the excitation delayed by `(d_tx + d_rx)/c` and scaled by
//! `reflectivity / (d_tx · d_rx)`. Geometry is exact (near field included),
//! fractional delays use linear interpolation at the output rate.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::array::MicArray;
use crate::dsp::ChannelSignals;
use crate::error::{param, Result};
use crate::pdm::{Measurement, MeasurementMeta};
use crate::waveform::Waveform;
use crate::{norm, sub, Vec3};

/// Reflectors must sit at least this far from the array center, m.
pub const MIN_REFLECTOR_RANGE: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Reflector {
    #[serde(rename = "pos")]
    pub position: Vec3,
    pub reflectivity: f64,
}

impl Reflector {
    pub fn new(position: Vec3, reflectivity: f64) -> Self {
        Self {
            position,
            reflectivity,
        }
    }

    /// Reflector in the horizontal scan plane at `azimuth` (radians from
    /// boresight toward `+x`) and `range` meters.
    pub fn at_azimuth(azimuth: f64, range: f64, reflectivity: f64) -> Self {
        Self::new(
            [range * azimuth.sin(), 0.0, range * azimuth.cos()],
            reflectivity,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scene {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schema: Option<String>,
    pub reflectors: Vec<Reflector>,
    #[serde(default)]
    pub noise_rms: f64,
    #[serde(default)]
    pub seed: u64,
}

impl Scene {
    pub fn new(reflectors: Vec<Reflector>) -> Self {
        Self {
            schema: None,
            reflectors,
            noise_rms: 0.0,
            seed: 0,
        }
    }

    pub fn empty() -> Self {
        Self::new(Vec::new())
    }

    pub fn with_noise(mut self, noise_rms: f64, seed: u64) -> Self {
        self.noise_rms = noise_rms;
        self.seed = seed;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.noise_rms >= 0.0) {
            return Err(param(format!(
                "noise_rms must be non-negative, got {}",
                self.noise_rms
            )));
        }
        for (i, r) in self.reflectors.iter().enumerate() {
            if !(r.reflectivity > 0.0) {
                return Err(param(format!("reflector {i} needs positive reflectivity")));
            }
            if !(norm(r.position) > MIN_REFLECTOR_RANGE) {
                return Err(param(format!(
                    "reflector {i} is within {MIN_REFLECTOR_RANGE} m of the array"
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let s: Scene = serde_json::from_str(text)?;
        s.validate()?;
        Ok(s)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Per-channel noise stream seed; independent of scheduling order.
fn channel_seed(seed: u64, channel: usize) -> u64 {
    seed ^ channel as u64
}

/// Echo signals at every microphone, sampled at `fs_out`.
pub fn simulate_channels(
    scene: &Scene,
    array: &MicArray,
    excitation: &Waveform,
    fs_out: f64,
    capture_duration: f64,
    sound_speed: f64,
) -> Result<ChannelSignals> {
    scene.validate()?;
    if !(sound_speed > 0.0) || !(fs_out > 0.0) {
        return Err(param("sound speed and sample rate must be positive"));
    }
    let n = (capture_duration * fs_out).round() as usize;
    if n == 0 {
        return Err(param("capture window contains no samples"));
    }
    let pulse = excitation.resampled(fs_out)?;
    let pulse_len = pulse.len() as f64;
    let emitter = array.emitter();

    // (delay in output samples, amplitude) for every mic × reflector
    let mut paths = Vec::with_capacity(array.n_mics());
    for (m, mic) in array.mics().iter().enumerate() {
        let mut per_mic = Vec::with_capacity(scene.reflectors.len());
        for (k, r) in scene.reflectors.iter().enumerate() {
            let d_tx = norm(sub(r.position, emitter));
            let d_rx = norm(sub(r.position, *mic));
            let delay = (d_tx + d_rx) / sound_speed * fs_out;
            if delay + pulse_len > n as f64 {
                return Err(param(format!(
                    "echo of reflector {k} at mic {m} ends at sample {:.0}, beyond the {n}-sample capture",
                    delay + pulse_len
                )));
            }
            per_mic.push((delay, r.reflectivity / (d_tx * d_rx)));
        }
        paths.push(per_mic);
    }

    let rows = paths
        .par_iter()
        .enumerate()
        .map(|(m, per_mic)| {
            let mut x = vec![0.0; n];
            for &(delay, amp) in per_mic {
                let first = delay.ceil() as usize;
                let last = ((delay + pulse_len).ceil() as usize).min(n);
                for (i, v) in x.iter_mut().enumerate().take(last).skip(first) {
                    *v += amp * pulse.interpolate(i as f64 - delay);
                }
            }
            if scene.noise_rms > 0.0 {
                let mut rng = ChaCha8Rng::seed_from_u64(channel_seed(scene.seed, m));
                for v in &mut x {
                    let g: f64 = StandardNormal.sample(&mut rng);
                    *v += scene.noise_rms * g;
                }
            }
            x
        })
        .collect();
    ChannelSignals::from_rows(rows, fs_out)
}

/// How a simulated capture is sized, scaled and labeled.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CaptureSettings {
    pub n_bits: usize,
    pub fs_pdm_hz: u32,
    /// Largest absolute analog sample after normalization (full scale = 1).
    pub peak_level: f64,
    pub device_serial: u32,
    pub timestamp_us: u64,
}

impl Default for CaptureSettings {
    fn default() -> Self {
        Self {
            n_bits: crate::DEFAULT_CAPTURE_BITS,
            fs_pdm_hz: crate::FS_PDM as u32,
            peak_level: 0.5,
            device_serial: 0,
            timestamp_us: 0,
        }
    }
}

/// Simulates the analog channels at the PDM rate, scales them by one common
/// gain so the loudest sample sits at `peak_level`, then PDM-encodes every
/// channel.
pub fn simulate_measurement(
    scene: &Scene,
    array: &MicArray,
    excitation: &Waveform,
    sound_speed: f64,
    capture: &CaptureSettings,
) -> Result<Measurement> {
    if capture.n_bits % 32 != 0 {
        return Err(param("capture length must be a multiple of 32 bits"));
    }
    let fs = capture.fs_pdm_hz as f64;
    let signals = simulate_channels(
        scene,
        array,
        excitation,
        fs,
        capture.n_bits as f64 / fs,
        sound_speed,
    )?;
    let mut rows = signals.into_rows();
    let peak = rows.iter().flatten().fold(0.0_f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        let gain = capture.peak_level / peak;
        rows.par_iter_mut()
            .for_each(|r| r.iter_mut().for_each(|v| *v *= gain));
    }
    Measurement::from_signals(
        &rows,
        capture.fs_pdm_hz,
        capture.device_serial,
        capture.timestamp_us,
        MeasurementMeta::new(array, *excitation.spec(), sound_speed),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::default_poisson_array;
    use crate::waveform::default_chirp;

    #[test]
    fn boresight_first_energy_at_two_way_delay() {
        let arr = crate::array::grid_array(1, 1, 0.01).unwrap();
        let arr = arr.with_emitter([0.0, 0.0, 0.0]);
        let fs = 450_000.0;
        let chirp = default_chirp(fs).unwrap();
        let scene = Scene::new(vec![Reflector::new([0.0, 0.0, 1.0], 1.0)]);
        let s = simulate_channels(&scene, &arr, &chirp, fs, 0.02, 343.0).unwrap();
        let first = s.channel(0).iter().position(|v| *v != 0.0).unwrap();
        let expected = (2.0 / 343.0 * fs).round() as isize;
        assert!(
            (first as isize - expected).abs() <= 2,
            "{first} vs {expected}"
        );
    }

    #[test]
    fn reflectivity_scales_linearly() {
        let arr = default_poisson_array(1).unwrap();
        let chirp = default_chirp(450_000.0).unwrap();
        let one = Scene::new(vec![Reflector::at_azimuth(0.3, 1.2, 1.0)]);
        let two = Scene::new(vec![Reflector::at_azimuth(0.3, 1.2, 2.0)]);
        let a = simulate_channels(&one, &arr, &chirp, 450_000.0, 0.012, 343.0).unwrap();
        let b = simulate_channels(&two, &arr, &chirp, 450_000.0, 0.012, 343.0).unwrap();
        for m in 0..arr.n_mics() {
            for (x, y) in a.channel(m).iter().zip(b.channel(m)) {
                assert_eq!(2.0 * x, *y);
            }
        }
    }

    #[test]
    fn empty_scene_is_silent() {
        let arr = default_poisson_array(1).unwrap();
        let chirp = default_chirp(450_000.0).unwrap();
        let s = simulate_channels(&Scene::empty(), &arr, &chirp, 450_000.0, 0.01, 343.0).unwrap();
        assert!(s.matrix().data().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn echo_outside_window_rejected() {
        let arr = default_poisson_array(1).unwrap();
        let chirp = default_chirp(450_000.0).unwrap();
        let far = Scene::new(vec![Reflector::at_azimuth(0.0, 10.0, 1.0)]);
        assert!(simulate_channels(&far, &arr, &chirp, 450_000.0, 0.0364, 343.0).is_err());
        let near = Scene::new(vec![Reflector::new([0.0, 0.0, 0.05], 1.0)]);
        assert!(simulate_channels(&near, &arr, &chirp, 450_000.0, 0.0364, 343.0).is_err());
    }

    #[test]
    fn scene_json_shape() {
        let text =
            r#"{"reflectors":[{"pos":[0,0,2],"reflectivity":1.5}],"noise_rms":0.01,"seed":4}"#;
        let s = Scene::from_json(text).unwrap();
        assert_eq!(s.reflectors[0].position, [0.0, 0.0, 2.0]);
        assert_eq!(s.seed, 4);
        let back = Scene::from_json(&s.to_json().unwrap()).unwrap();
        assert_eq!(back, s);
    }
}
