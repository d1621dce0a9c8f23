//! Processing time against the number of look directions, with a linear fit.
//!
//! cargo run --release --example bench_scaling [runs]

use ertis::bench::{bench_pipeline, BenchOptions};
use ertis::ProcessingConfig;

fn main() -> ertis::Result<()> {
    let runs: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(3);
    let opts = BenchOptions {
        direction_counts: vec![90, 250, 500, 1000],
        runs,
        n_bits: 65_536,
        ..BenchOptions::default()
    };
    let report = bench_pipeline(&opts, &ProcessingConfig::default())?;
    println!(
        "{} channels × {} bits, {} runs on {}",
        report.n_channels, report.n_bits_per_channel, report.runs, report.host
    );
    print!("{}", report.to_table());
    Ok(())
}
