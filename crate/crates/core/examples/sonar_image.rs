//! Two reflectors in front of the Poisson array: simulate the PDM capture,
//! beamform it over a 90-direction arc and extract the pointcloud.
//!
//! cargo run --release --example sonar_image [out_dir]

use std::path::PathBuf;

use ertis::array::default_poisson_array;
use ertis::config::PipelineConfig;
use ertis::imaging::{extract_pointcloud, write_image_files};
use ertis::net::PipelineSetup;
use ertis::scene::{simulate_measurement, CaptureSettings};
use ertis::{Reflector, Scene, WaveformSpec, DEFAULT_SOUND_SPEED};

fn main() -> ertis::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(std::env::temp_dir);
    let array = default_poisson_array(1)?;
    let scene = Scene::new(vec![
        Reflector::at_azimuth((-30f64).to_radians(), 1.5, 1.0),
        Reflector::at_azimuth(40f64.to_radians(), 3.0, 1.0),
    ])
    .with_noise(0.01, 7);

    let spec = WaveformSpec::default();
    let chirp = spec.synthesize(ertis::FS_PDM)?;
    let m = simulate_measurement(
        &scene,
        &array,
        &chirp,
        DEFAULT_SOUND_SPEED,
        &CaptureSettings::default(),
    )?;
    println!(
        "capture: {} channels × {} bits ({:.1} ms)",
        m.stream.n_channels(),
        m.stream.n_bits_per_channel(),
        1e3 * m.stream.n_bits_per_channel() as f64 / m.stream.fs_pdm()
    );

    let cfg = PipelineConfig::default();
    let setup = PipelineSetup::new(cfg.processing()?, array, spec);
    let img = setup.process(&m)?;
    println!(
        "image: {} directions × {} range samples, {:.2} mm per sample",
        img.n_directions(),
        img.n_range_samples(),
        1e3 * img.range_per_sample()
    );

    let cloud = extract_pointcloud(&img, cfg.threshold_db, cfg.min_separation_samples)?;
    println!(
        "{} points within {} dB of the strongest echo:",
        cloud.len(),
        cfg.threshold_db
    );
    let az = img.grid.azimuths();
    for p in &cloud.points {
        println!(
            "  azimuth {:>6.1}°  range {:.3} m  intensity {:.3e}",
            az[p.direction].to_degrees(),
            img.range_of(p.direction, p.sample),
            p.intensity
        );
    }

    for f in write_image_files(&img, out.join("sonar_image"))? {
        println!("wrote {}", f.display());
    }
    Ok(())
}
