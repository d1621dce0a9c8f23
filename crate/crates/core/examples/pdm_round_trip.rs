//! Second-order sigma-delta encoding of a tone and low-pass decimating decode.
//!
//! cargo run --example pdm_round_trip [frequency_hz] [amplitude]

use std::f64::consts::PI;

use ertis::pdm::{pdm_encode, PdmDecoder};
use ertis::{DEFAULT_DECIMATION, FS_PDM};

fn main() -> ertis::Result<()> {
    let mut args = std::env::args().skip(1);
    let f: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(40e3);
    let a: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0.5);
    let n = ertis::DEFAULT_CAPTURE_BITS;

    let x: Vec<f64> = (0..n)
        .map(|i| a * (2.0 * PI * f * i as f64 / FS_PDM).sin())
        .collect();
    let bits = pdm_encode(&x)?;
    let ones = bits.iter().filter(|b| **b).count();
    println!(
        "{n} bits at {:.1} MHz, density {:.4}",
        FS_PDM / 1e6,
        ones as f64 / n as f64
    );
    println!(
        "first 64 bits: {}",
        bits[..64]
            .iter()
            .map(|&b| if b { '1' } else { '0' })
            .collect::<String>()
    );

    let dec = PdmDecoder::new(FS_PDM, DEFAULT_DECIMATION, n)?;
    let y = dec.decode(&bits)?;
    println!(
        "decoded {} samples at {:.0} kHz (group delay {:.2} samples)",
        y.len(),
        dec.fs_out() / 1e3,
        ertis::pdm::decode_group_delay(DEFAULT_DECIMATION)
    );

    // least-squares sine fit; what remains is quantization noise
    let w = 2.0 * PI * f / dec.fs_out();
    let body = &y[64..];
    let (mut ss, mut sc, mut cc, mut ys, mut yc) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (t, v) in body.iter().enumerate() {
        let (s, c) = (w * (t + 64) as f64).sin_cos();
        ss += s * s;
        sc += s * c;
        cc += c * c;
        ys += v * s;
        yc += v * c;
    }
    let det = ss * cc - sc * sc;
    let (ka, kb) = ((ys * cc - yc * sc) / det, (yc * ss - ys * sc) / det);
    let mut p_sig = 0.0;
    let mut p_err = 0.0;
    for (t, v) in body.iter().enumerate() {
        let (s, c) = (w * (t + 64) as f64).sin_cos();
        let fit = ka * s + kb * c;
        p_sig += fit * fit;
        p_err += (v - fit).powi(2);
    }
    println!(
        "fitted amplitude {:.4} (filter gain at {:.0} kHz {:.3}); broadband SINAD {:.1} dB",
        ka.hypot(kb),
        f / 1e3,
        ka.hypot(kb) / a,
        10.0 * (p_sig / p_err).log10()
    );
    Ok(())
}
