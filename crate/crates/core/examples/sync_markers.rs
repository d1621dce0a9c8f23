//! Two devices share one trigger; each capture carries an in-band marker
//! train whose burst count names the sender and whose start gives the
//! relative timing.
//!
//! cargo run --release --example sync_markers

use ertis::array::default_poisson_array;
use ertis::scene::{simulate_measurement, CaptureSettings};
use ertis::sync::{
    burst_period, detect_marker, inject_marker_at, make_schedule, train_len, TriggerMode,
};
use ertis::{Reflector, Scene, WaveformSpec, DEFAULT_SOUND_SPEED};

fn main() -> ertis::Result<()> {
    let ids = [3u32, 9];
    let schedule = make_schedule(TriggerMode::Sequenced, &ids, 40_000)?;
    println!(
        "sequenced schedule: {:?} at {:?} µs",
        schedule.device_ids, schedule.offsets_us
    );
    let schedule = make_schedule(TriggerMode::Simultaneous, &ids, 0)?;
    println!(
        "simultaneous schedule: {:?} at {:?} µs",
        schedule.device_ids, schedule.offsets_us
    );

    let array = default_poisson_array(1)?;
    let chirp = WaveformSpec::default().synthesize(ertis::FS_PDM)?;
    let scene = Scene::new(vec![Reflector::at_azimuth(0.2, 0.8, 1.0)]).with_noise(0.02, 1);
    let capture = CaptureSettings {
        n_bits: 32_768,
        ..CaptureSettings::default()
    };
    let m = simulate_measurement(&scene, &array, &chirp, DEFAULT_SOUND_SPEED, &capture)?;

    // device 9 sees the shared trigger 120 decoded samples later than device 3
    let mut found = Vec::new();
    for (id, offset) in [(3u8, 40usize), (9, 160)] {
        let marked = inject_marker_at(&m, id, offset)?;
        let det = detect_marker(&marked)?.expect("marker present");
        println!(
            "device {id}: train of {} samples ({}-sample bursts), detected id {} at sample {}",
            train_len(id),
            burst_period(),
            det.marker_id,
            det.offset_samples
        );
        found.push(det.offset_samples);
    }
    let lag = found[1] - found[0];
    println!(
        "relative lag {lag} samples = {:.1} µs",
        1e6 * lag as f64 / 450e3
    );
    println!("unmarked capture: {:?}", detect_marker(&m)?);
    Ok(())
}
