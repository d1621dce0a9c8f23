//! Three simulated devices stream captures to a local processing server
//! whose sink collects the finished images.
//!
//! cargo run --release --example network [packages_per_client]

use std::sync::{Arc, Mutex};

use ertis::array::default_poisson_array;
use ertis::config::PipelineConfig;
use ertis::net::{
    run_client, ClientConfig, PipelineSetup, Placement, ServerConfig, ServerHandle, SinkItem,
    SinkPayload,
};
use ertis::scene::{simulate_measurement, CaptureSettings};
use ertis::{Reflector, Scene, WaveformSpec, DEFAULT_SOUND_SPEED};

fn main() -> ertis::Result<()> {
    let per_client: usize = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(5);
    let array = default_poisson_array(1)?;
    let spec = WaveformSpec::default();
    let setup = PipelineSetup::new(
        PipelineConfig::default().processing()?,
        array.clone(),
        spec,
    );

    let received: Arc<Mutex<Vec<(u32, u32, usize)>>> = Arc::default();
    let r = received.clone();
    let sink = move |item: SinkItem| {
        if let SinkPayload::Image(img) = &item.payload {
            let (d, _) = img.intensity.argmax();
            r.lock()
                .unwrap()
                .push((item.device_serial, item.sequence, d));
        }
        Ok(())
    };
    let mut cfg = ServerConfig::new(setup.clone(), Placement::Server);
    cfg.worker_count = 2;
    cfg.queue_capacity = 4;
    let server = ServerHandle::start_with_sink(cfg, Box::new(sink))?;
    println!("server on {}", server.local_addr());

    let chirp = spec.synthesize(ertis::FS_PDM)?;
    let capture = CaptureSettings {
        n_bits: 32_768,
        ..CaptureSettings::default()
    };
    let clients: Vec<_> = [(1u32, -40.0f64), (2, 0.0), (3, 35.0)]
        .into_iter()
        .map(|(serial, az)| {
            let scene = Scene::new(vec![Reflector::at_azimuth(az.to_radians(), 0.8, 1.0)])
                .with_noise(0.01, serial as u64);
            let mut m =
                simulate_measurement(&scene, &array, &chirp, DEFAULT_SOUND_SPEED, &capture)?;
            m.device_serial = serial;
            let cc = ClientConfig::new(
                server.local_addr().to_string(),
                serial,
                Placement::Server,
                setup.clone(),
            );
            Ok(run_client(cc, (0..per_client).map(move |_| m.clone())))
        })
        .collect::<ertis::Result<_>>()?;
    for c in clients {
        let report = c.join()?;
        println!(
            "device {} sent sequences {:?}",
            report.device_serial, report.sequences
        );
    }

    let (stats, _) = server.stop();
    println!(
        "server: received {} delivered {} rejected {} high water {}",
        stats.received, stats.delivered, stats.rejected, stats.high_water_mark
    );
    let az: Vec<f64> = PipelineConfig::default().processing()?.grid.azimuths();
    for (serial, seq, d) in received.lock().unwrap().iter().filter(|(_, s, _)| *s == 0) {
        println!(
            "device {serial} image {seq}: strongest echo at {:.1}°",
            az[*d].to_degrees()
        );
    }
    Ok(())
}
