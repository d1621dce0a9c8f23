//! Time-domain delay-and-sum beamforming.

use rayon::prelude::*;

use super::{ChannelSignals, Matrix};
use crate::array::DelayTable;
use crate::error::{param, Result};

/// Sums each channel advanced by its steering delay into `out`, scaled by
/// `1/n_mics`. Samples read past the end of a channel count as zero.
pub(crate) fn beamform_row(signals: &ChannelSignals, delays: &[u32], out: &mut [f64]) {
    let n = signals.n_samples();
    out.fill(0.0);
    for (m, &d) in delays.iter().enumerate() {
        let d = d as usize;
        let x = signals.channel(m);
        for (o, v) in out[..n - d].iter_mut().zip(&x[d..]) {
            *o += v;
        }
    }
    let scale = 1.0 / delays.len() as f64;
    for o in out.iter_mut() {
        *o *= scale;
    }
}

pub(crate) fn check_table(signals: &ChannelSignals, table: &DelayTable) -> Result<()> {
    if table.n_mics() != signals.n_channels() {
        return Err(param(format!(
            "delay table has {} microphones but signals have {} channels",
            table.n_mics(),
            signals.n_channels()
        )));
    }
    if table.max_delay() as usize >= signals.n_samples() {
        return Err(param(format!(
            "steering delay {} exceeds signal length {}",
            table.max_delay(),
            signals.n_samples()
        )));
    }
    Ok(())
}

/// `out[d][t] = (1/M) Σ_m signals[m][t + delays[d][m]]`, one row per
/// direction. Directions are computed in parallel and assembled by index.
pub fn delay_and_sum(signals: &ChannelSignals, table: &DelayTable) -> Result<Matrix> {
    check_table(signals, table)?;
    let n = signals.n_samples();
    let mut out = Matrix::zeros(table.n_directions(), n);
    out.data_mut()
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(d, row)| beamform_row(signals, table.row(d), row));
    Ok(out)
}
