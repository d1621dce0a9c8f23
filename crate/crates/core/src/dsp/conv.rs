//! FFT convolution by overlap-save.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{param, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConvMode {
    /// All `len(x) + len(h) - 1` outputs.
    Full,
    /// The `len(x)` outputs centered on the full result, starting at
    /// `(len(h) - 1) / 2`.
    Same,
}

/// Precomputed kernel spectrum and FFT plans for repeated filtering with the
/// same kernel.
pub struct Convolver {
    kernel_len: usize,
    block: usize,
    spectrum: Vec<Complex64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Convolver {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Convolver")
            .field("kernel_len", &self.kernel_len)
            .field("block", &self.block)
            .finish()
    }
}

impl Convolver {
    /// `signal_len` sizes the FFT block: short signals run as one block,
    /// long ones in blocks of about four kernel lengths.
    pub fn new(kernel: &[f64], signal_len: usize) -> Result<Self> {
        if kernel.is_empty() {
            return Err(param("convolution kernel is empty"));
        }
        let full = signal_len.max(1) + kernel.len() - 1;
        let block = (4 * kernel.len())
            .next_power_of_two()
            .max(256)
            .min(full.next_power_of_two());

        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(block);
        let inverse = planner.plan_fft_inverse(block);

        let scale = 1.0 / block as f64;
        let mut spectrum = vec![Complex64::new(0.0, 0.0); block];
        for (s, k) in spectrum.iter_mut().zip(kernel) {
            *s = Complex64::new(k * scale, 0.0);
        }
        forward.process(&mut spectrum);

        Ok(Self {
            kernel_len: kernel.len(),
            block,
            spectrum,
            forward,
            inverse,
        })
    }

    pub fn kernel_len(&self) -> usize {
        self.kernel_len
    }

    pub fn apply(&self, x: &[f64], mode: ConvMode) -> Result<Vec<f64>> {
        if x.is_empty() {
            return Err(param("convolution input is empty"));
        }
        let full = self.full(x);
        Ok(match mode {
            ConvMode::Full => full,
            ConvMode::Same => {
                let start = (self.kernel_len - 1) / 2;
                full[start..start + x.len()].to_vec()
            }
        })
    }

    fn full(&self, x: &[f64]) -> Vec<f64> {
        let lh = self.kernel_len;
        let n = self.block;
        let step = n - lh + 1;
        let out_len = x.len() + lh - 1;
        let mut out = vec![0.0; out_len];
        let mut buf = vec![Complex64::new(0.0, 0.0); n];
        let mut scratch = vec![
            Complex64::new(0.0, 0.0);
            self.forward
                .get_inplace_scratch_len()
                .max(self.inverse.get_inplace_scratch_len(),)
        ];

        // Block b covers padded input [b*step, b*step + n) where the padded
        // signal carries lh-1 leading zeros.
        let mut start = 0;
        while start < out_len {
            for (j, slot) in buf.iter_mut().enumerate() {
                let idx = (start + j) as isize - (lh as isize - 1);
                let v = if idx >= 0 && (idx as usize) < x.len() {
                    x[idx as usize]
                } else {
                    0.0
                };
                *slot = Complex64::new(v, 0.0);
            }
            self.forward.process_with_scratch(&mut buf, &mut scratch);
            for (b, h) in buf.iter_mut().zip(&self.spectrum) {
                *b *= h;
            }
            self.inverse.process_with_scratch(&mut buf, &mut scratch);
            let take = step.min(out_len - start);
            for (o, b) in out[start..start + take].iter_mut().zip(&buf[lh - 1..]) {
                *o = b.re;
            }
            start += step;
        }
        out
    }
}

/// Linear convolution of `x` with `h` computed in the frequency domain.
pub fn fft_convolve(x: &[f64], h: &[f64], mode: ConvMode) -> Result<Vec<f64>> {
    if x.is_empty() || h.is_empty() {
        return Err(param("fft_convolve needs non-empty inputs"));
    }
    Convolver::new(h, x.len())?.apply(x, mode)
}
