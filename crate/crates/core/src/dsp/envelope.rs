//! Envelope detection as the magnitude of the analytic signal.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Result};

/// Planned analytic-signal transform for a fixed input length.
pub struct EnvelopeDetector {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    gains: Vec<f64>,
}

impl EnvelopeDetector {
    pub fn new(len: usize) -> Result<Self> {
        if len == 0 {
            return Err(param("envelope of an empty signal"));
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        // DC (and Nyquist for even lengths) kept once, positive bins doubled,
        // negative bins removed; 1/len folds in the inverse scaling.
        let scale = 1.0 / len as f64;
        let gains = (0..len)
            .map(|k| {
                let g = if k == 0 || (len % 2 == 0 && k == len / 2) {
                    1.0
                } else if k < len.div_ceil(2) {
                    2.0
                } else {
                    0.0
                };
                g * scale
            })
            .collect();
        Ok(Self {
            len,
            forward,
            inverse,
            gains,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Replaces `x` with its envelope.
    pub fn apply_in_place(&self, x: &mut [f64]) {
        assert_eq!(
            x.len(),
            self.len,
            "envelope detector planned for another length"
        );
        let mut buf: Vec<Complex64> = x.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        for (b, g) in buf.iter_mut().zip(&self.gains) {
            *b *= g;
        }
        self.inverse.process(&mut buf);
        for (o, b) in x.iter_mut().zip(&buf) {
            *o = b.norm();
        }
    }
}

/// Envelope of `x`: `|x + j·H{x}|`, same length as the input.
pub fn envelope(x: &[f64]) -> Result<Vec<f64>> {
    let det = EnvelopeDetector::new(x.len())?;
    let mut out = x.to_vec();
    det.apply_in_place(&mut out);
    Ok(out)
}
