//! Log-FM chirp buried in white noise, recovered by the matched filter.
//!
//! cargo run --example pulse_compression [snr_db] [seed]

use ertis::dsp::{envelope, matched_filter, matched_filter_offset, ChannelSignals};
use ertis::waveform::{default_chirp, matched_kernel};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn main() -> ertis::Result<()> {
    let mut args = std::env::args().skip(1);
    let snr_db: f64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(-10.0);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(0);

    let fs = 450e3;
    let chirp = default_chirp(fs)?;
    println!(
        "chirp: {} samples, {:.0}–{:.0} kHz",
        chirp.len(),
        chirp.f_start() / 1e3,
        chirp.f_end() / 1e3
    );
    let power = chirp.samples().iter().map(|v| v * v).sum::<f64>() / chirp.len() as f64;
    let sigma = (power / 10f64.powf(snr_db / 10.0)).sqrt();

    let echo_at = 1500;
    let mut x = vec![0.0; 4096];
    x[echo_at..echo_at + chirp.len()].copy_from_slice(chirp.samples());
    let noise = Normal::new(0.0, sigma).expect("valid sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for v in &mut x {
        *v += noise.sample(&mut rng);
    }

    let kernel = matched_kernel(&chirp)?;
    let y = matched_filter(&ChannelSignals::from_rows(vec![x.clone()], fs)?, &kernel)?;
    let env = envelope(y.channel(0))?;
    let best = (0..env.len())
        .max_by(|&a, &b| env[a].total_cmp(&env[b]))
        .unwrap();
    let expected = echo_at + chirp.len() - 1 - matched_filter_offset(kernel.len());
    println!("input SNR {snr_db} dB over the pulse; noise sigma {sigma:.3}");
    println!("envelope peak at sample {best}, expected {expected}");

    let rms = |v: &[f64]| (v.iter().map(|a| a * a).sum::<f64>() / v.len() as f64).sqrt();
    let peak_to_rms = |v: &[f64], at: usize| 20.0 * (v[at].abs() / rms(v)).log10();
    println!(
        "peak-to-RMS: {:.1} dB before, {:.1} dB after",
        peak_to_rms(&x, echo_at + chirp.len() / 2),
        peak_to_rms(y.channel(0), expected)
    );
    Ok(())
}
