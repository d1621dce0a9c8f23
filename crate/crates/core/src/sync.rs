//! Multi-device trigger schedules and in-band acoustic sync markers.
//!
//! A marker is a train of Barker-13 bursts on a 50 kHz carrier, one carrier
//! cycle per chip, mixed into channel 0 before PDM encoding. The marker id
//! `k` is carried by the number of bursts (`k + 1`). Detection correlates the
//! decoded channel with one burst and counts the evenly spaced peaks.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::dsp::{fft_convolve, ConvMode};
use crate::error::{param, Error, Result};
use crate::pdm::{decode_group_delay, pdm_encode, Measurement, PdmDecoder};

/// Devices served by one trigger unit.
pub const MAX_DEVICES: usize = 6;
pub const MAX_MARKER_ID: u8 = 15;
pub const BARKER_13: [f64; 13] = [
    1.0, 1.0, 1.0, 1.0, 1.0, -1.0, -1.0, 1.0, 1.0, -1.0, 1.0, -1.0, 1.0,
];
pub const MARKER_CARRIER_HZ: f64 = 50_000.0;
/// Marker amplitude relative to full scale (−6 dBFS).
pub const MARKER_AMPLITUDE: f64 = 0.5;
/// Leading decoded samples reserved for the marker train.
pub const MARKER_REGION: usize = 2048;
/// Silence between bursts, decoded samples.
pub const BURST_GAP: usize = 8;

const DECIMATION: usize = crate::DEFAULT_DECIMATION;
const DETECT_MEDIAN_RATIO: f64 = 6.0;
const DETECT_MIN_NCC: f64 = 0.6;
const TRAIN_PEAK_FRACTION: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TriggerMode {
    Simultaneous,
    Sequenced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TriggerSchedule {
    pub mode: TriggerMode,
    pub device_ids: Vec<u32>,
    pub offsets_us: Vec<u64>,
}

/// Trigger offsets for up to six devices: all zero when simultaneous,
/// `i · interval_us` for list position `i` when sequenced.
pub fn make_schedule(
    mode: TriggerMode,
    device_ids: &[u32],
    interval_us: u64,
) -> Result<TriggerSchedule> {
    if device_ids.is_empty() {
        return Err(param("schedule needs at least one device"));
    }
    if device_ids.len() > MAX_DEVICES {
        return Err(Error::Capacity {
            what: "trigger devices",
            got: device_ids.len(),
            max: MAX_DEVICES,
        });
    }
    let offsets_us = match mode {
        TriggerMode::Simultaneous => vec![0; device_ids.len()],
        TriggerMode::Sequenced => {
            if interval_us == 0 && device_ids.len() > 1 {
                return Err(param("sequenced triggering needs a positive interval"));
            }
            (0..device_ids.len() as u64)
                .map(|i| i * interval_us)
                .collect()
        }
    };
    Ok(TriggerSchedule {
        mode,
        device_ids: device_ids.to_vec(),
        offsets_us,
    })
}

fn fs_decoded(m: &Measurement) -> f64 {
    m.stream.fs_pdm() / DECIMATION as f64
}

/// Samples per chip at the decoded rate.
fn chip_len_decoded() -> usize {
    (crate::FS_PDM / DECIMATION as f64 / MARKER_CARRIER_HZ).round() as usize
}

fn burst_len_decoded() -> usize {
    13 * chip_len_decoded()
}

/// Burst-to-burst spacing in decoded samples.
pub fn burst_period() -> usize {
    burst_len_decoded() + BURST_GAP
}

/// Decoded-sample length of the train for marker `id`.
pub fn train_len(id: u8) -> usize {
    (id as usize + 1) * burst_period() - BURST_GAP
}

/// One Barker burst rendered at `fs`, unit amplitude.
pub fn burst(fs: f64) -> Vec<f64> {
    let n = (13.0 / MARKER_CARRIER_HZ * fs).round() as usize;
    (0..n)
        .map(|i| {
            let t = i as f64 / fs;
            let chip = ((t * MARKER_CARRIER_HZ) as usize).min(12);
            BARKER_13[chip] * (2.0 * PI * MARKER_CARRIER_HZ * t).sin()
        })
        .collect()
}

/// Marker train for `id` at the PDM rate, starting at sample 0.
fn train_pdm(id: u8, fs_pdm: f64) -> Vec<f64> {
    let one = burst(fs_pdm);
    let period = burst_period() * DECIMATION;
    let mut out = vec![0.0; id as usize * period + one.len()];
    for rep in 0..=id as usize {
        for (o, v) in out[rep * period..].iter_mut().zip(&one) {
            *o += MARKER_AMPLITUDE * v;
        }
    }
    out
}

/// Marks a measurement with `marker_id` at the start of the capture.
pub fn inject_marker(m: &Measurement, marker_id: u8) -> Result<Measurement> {
    inject_marker_at(m, marker_id, 0)
}

/// Marks a measurement with `marker_id` starting `offset` decoded samples
/// into the capture. Only channel 0 changes.
pub fn inject_marker_at(m: &Measurement, marker_id: u8, offset: usize) -> Result<Measurement> {
    if marker_id > MAX_MARKER_ID {
        return Err(param(format!(
            "marker id {marker_id} exceeds {MAX_MARKER_ID}"
        )));
    }
    if let Some(existing) = m.sync_marker() {
        return Err(Error::State(format!(
            "measurement already carries marker {existing}"
        )));
    }
    let n_bits = m.stream.n_bits_per_channel();
    let n_decoded = n_bits / DECIMATION;
    if n_decoded < MARKER_REGION {
        return Err(param(format!(
            "capture of {n_decoded} decoded samples has no room for the {MARKER_REGION}-sample marker region"
        )));
    }
    if offset + train_len(marker_id) > n_decoded {
        return Err(param(format!(
            "marker {marker_id} at offset {offset} runs past the end of the capture"
        )));
    }

    let fs_pdm = m.stream.fs_pdm();
    let bits = m.stream.unpack_channel(0)?;
    let levels: Vec<f64> = bits.iter().map(|&b| if b { 1.0 } else { -1.0 }).collect();
    let decoder = PdmDecoder::new(fs_pdm, DECIMATION, n_bits)?;
    let mut analog = decoder.lowpass_aligned(&levels)?;
    let start = offset * DECIMATION;
    for (a, v) in analog[start..].iter_mut().zip(train_pdm(marker_id, fs_pdm)) {
        *a += v;
    }
    for a in &mut analog {
        *a = a.clamp(-1.0, 1.0);
    }

    let mut out = m.clone();
    out.stream.replace_channel(0, &pdm_encode(&analog)?)?;
    out.meta.sync_marker = Some(marker_id);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MarkerDetection {
    pub marker_id: u8,
    /// Start of the first burst, decoded samples.
    pub offset_samples: i64,
}

/// Finds a marker train in channel 0, if present.
pub fn detect_marker(m: &Measurement) -> Result<Option<MarkerDetection>> {
    let decoder = PdmDecoder::new(m.stream.fs_pdm(), DECIMATION, m.stream.n_bits_per_channel())?;
    let y = decoder.decode(&m.stream.unpack_channel(0)?)?;
    let template = burst(fs_decoded(m));
    let l = template.len();
    if y.len() < l {
        return Ok(None);
    }
    let reversed: Vec<f64> = template.iter().rev().copied().collect();
    let full = fft_convolve(&y, &reversed, ConvMode::Full)?;
    // corr[lag] = Σ_k y[lag + k] · template[k]
    let corr = &full[l - 1..y.len()];

    let (peak_lag, peak) =
        corr.iter()
            .copied()
            .enumerate()
            .fold(
                (0, f64::NEG_INFINITY),
                |b, (i, v)| if v > b.1 { (i, v) } else { b },
            );
    let mut mags: Vec<f64> = corr.iter().map(|v| v.abs()).collect();
    let mid = mags.len() / 2;
    let (_, median, _) = mags.select_nth_unstable_by(mid, f64::total_cmp);
    let median = *median;
    if !(peak > 0.0) || peak < DETECT_MEDIAN_RATIO * median {
        return Ok(None);
    }
    let t_energy = template.iter().map(|v| v * v).sum::<f64>().sqrt();
    let seg_energy = y[peak_lag..peak_lag + l]
        .iter()
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if peak / (t_energy * seg_energy) < DETECT_MIN_NCC {
        return Ok(None);
    }

    let floor = TRAIN_PEAK_FRACTION * peak;
    let period = burst_period() as isize;
    // strongest correlation within ±1 sample of `lag`, if above the floor
    let burst_near = |lag: isize| -> Option<isize> {
        (lag - 1..=lag + 1)
            .filter(|&k| k >= 0 && (k as usize) < corr.len())
            .map(|k| (k, corr[k as usize]))
            .filter(|&(_, v)| v >= floor)
            .max_by(|a, b| a.1.total_cmp(&b.1))
            .map(|(k, _)| k)
    };

    // next burst one period away, bridging a single burst lost in noise
    let step = |lag: isize, dir: isize| -> Option<(isize, usize)> {
        burst_near(lag + dir * period)
            .map(|k| (k, 1))
            .or_else(|| burst_near(lag + 2 * dir * period).map(|k| (k, 2)))
    };
    let mut first = peak_lag as isize;
    while let Some((prev, _)) = step(first, -1) {
        first = prev;
    }
    let mut count = 1usize;
    let mut cur = first;
    while let Some((next, bursts)) = step(cur, 1) {
        count += bursts;
        cur = next;
    }
    if count > MAX_MARKER_ID as usize + 1 {
        return Ok(None);
    }
    let delay = decode_group_delay(DECIMATION).round() as i64;
    Ok(Some(MarkerDetection {
        marker_id: (count - 1) as u8,
        offset_samples: first as i64 - delay,
    }))
}
