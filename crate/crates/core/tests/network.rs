mod common;

use std::io::Write;
use std::net::TcpStream;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use common::*;
use ertis::dsp::Matrix;
use ertis::imaging::encode_image;
use ertis::net::{
    encode_package, run_client, run_server, Client, ClientConfig, MeasurementPackage, PayloadKind,
    PipelineSetup, Placement, ServerConfig, ServerHandle, SinkItem, SinkPayload,
};
use ertis::waveform::WaveformSpec;
use ertis::{AcousticImage, Measurement};

const BITS: usize = 32_768;

fn setup() -> PipelineSetup {
    PipelineSetup::new(arc90(), poisson1(), WaveformSpec::default())
}

fn capture(serial: u32) -> Measurement {
    let mut m = measure(&one_reflector(25.0, 0.7), &poisson1(), BITS);
    m.device_serial = serial;
    m
}

type Keys = Arc<Mutex<Vec<(u32, u32)>>>;

fn recording_server(cfg: ServerConfig, delay: Duration) -> (ServerHandle, Keys) {
    let keys: Keys = Arc::default();
    let k = keys.clone();
    let sink = move |item: SinkItem| {
        thread::sleep(delay);
        k.lock().unwrap().push((item.device_serial, item.sequence));
        Ok(())
    };
    (
        ServerHandle::start_with_sink(cfg, Box::new(sink)).unwrap(),
        keys,
    )
}

fn image_package(
    serial: u32,
    sequence: u32,
    fingerprint: ertis::fingerprint::Fingerprint,
    cols: usize,
) -> Vec<u8> {
    let cfg = arc90();
    let img = AcousticImage {
        intensity: Matrix::zeros(cfg.grid.len(), cols),
        grid: cfg.grid,
        fs_decoded: 450e3,
        sound_speed: ertis::DEFAULT_SOUND_SPEED,
        group_delay_samples: 0.0,
        direction_shift: vec![0.0; 90],
    };
    encode_package(&MeasurementPackage {
        device_serial: serial,
        sequence,
        timestamp_us: sequence as u64,
        payload_kind: PayloadKind::AcousticImage,
        config_fingerprint: fingerprint,
        payload: encode_image(&img),
    })
}

#[test]
fn idle_server_starts_and_stops() {
    let (server, keys) = recording_server(
        ServerConfig::new(setup(), Placement::Server),
        Duration::ZERO,
    );
    let (stats, sink) = server.stop();
    assert!(sink.is_some());
    assert_eq!(
        (stats.connections, stats.received, stats.delivered),
        (0, 0, 0)
    );
    assert!(keys.lock().unwrap().is_empty());
}

#[test]
fn capacity_limits_are_enforced() {
    let mut cfg = ServerConfig::new(setup(), Placement::Server);
    cfg.worker_count = 0;
    assert!(cfg.validate().is_err());
    cfg.worker_count = ertis::net::MAX_WORKERS + 1;
    assert!(matches!(cfg.validate(), Err(ertis::Error::Capacity { .. })));
    cfg.worker_count = 1;
    cfg.queue_capacity = ertis::net::MAX_QUEUE_CAPACITY + 1;
    assert!(matches!(cfg.validate(), Err(ertis::Error::Capacity { .. })));
}

#[test]
fn client_numbers_packages_from_zero() {
    let (server, keys) = recording_server(
        ServerConfig::new(setup(), Placement::Client),
        Duration::ZERO,
    );
    let addr = server.local_addr().to_string();
    let m = capture(4);
    let report = run_client(
        ClientConfig::new(&addr, 4, Placement::Server, setup()),
        (0..100).map(move |_| m.clone()),
    )
    .join()
    .unwrap();
    let (stats, _) = server.stop();
    assert_eq!(report.sequences, (0..100).collect::<Vec<u32>>());
    // client placement on the server: raw captures pass straight through
    assert_eq!(stats.delivered, 100);
    assert_eq!(
        *keys.lock().unwrap(),
        (0..100).map(|s| (4, s)).collect::<Vec<_>>()
    );
}

#[test]
fn mismatched_fingerprint_is_rejected() {
    let (server, keys) = recording_server(
        ServerConfig::new(setup(), Placement::Server),
        Duration::ZERO,
    );
    let mut other = setup();
    other.processing.sound_speed = 340.0;
    assert_ne!(other.fingerprint(), setup().fingerprint());
    let m = capture(2);
    let report = run_client(
        ClientConfig::new(server.local_addr().to_string(), 2, Placement::Server, other),
        vec![m.clone(), m],
    )
    .join()
    .unwrap();
    let (stats, _) = server.stop();
    assert_eq!(report.sent(), 2);
    assert_eq!(
        (stats.received, stats.rejected_fingerprint, stats.enqueued),
        (2, 2, 0)
    );
    assert!(keys.lock().unwrap().is_empty());
}

#[test]
fn stale_sequences_are_rejected() {
    let (server, keys) = recording_server(
        ServerConfig::new(setup(), Placement::Server),
        Duration::ZERO,
    );
    let fp = setup().fingerprint();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    for seq in [0u32, 1, 1, 0, 5] {
        s.write_all(&image_package(7, seq, fp, 16)).unwrap();
    }
    drop(s);
    thread::sleep(Duration::from_millis(200));
    let (stats, _) = server.stop();
    assert_eq!(stats.rejected_sequence, 2);
    assert_eq!(*keys.lock().unwrap(), vec![(7, 0), (7, 1), (7, 5)]);
}

#[test]
fn garbage_drops_the_connection() {
    let (server, keys) = recording_server(
        ServerConfig::new(setup(), Placement::Server),
        Duration::ZERO,
    );
    let fp = setup().fingerprint();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    let mut corrupt = image_package(1, 0, fp, 16);
    let n = corrupt.len();
    corrupt[n - 1] ^= 0xff;
    for _ in 0..3 {
        s.write_all(&corrupt).unwrap();
    }
    s.flush().unwrap();
    thread::sleep(Duration::from_millis(300));
    let stats = server.stats();
    assert_eq!((stats.decode_errors, stats.connections_dropped), (3, 1));

    // a fresh connection is unaffected
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    s.write_all(&image_package(1, 0, fp, 16)).unwrap();
    drop(s);
    thread::sleep(Duration::from_millis(200));
    let (stats, _) = server.stop();
    assert_eq!(stats.delivered, 1);
    assert_eq!(*keys.lock().unwrap(), vec![(1, 0)]);
}

#[test]
fn slow_sink_pushes_back_on_the_sender() {
    let mut cfg = ServerConfig::new(setup(), Placement::Server);
    cfg.worker_count = 1;
    cfg.queue_capacity = 1;
    let limit = cfg.in_flight_limit() as u64;
    let delay = Duration::from_millis(20);
    let (server, keys) = recording_server(cfg, delay);
    let fp = setup().fingerprint();
    let n = 60u32;

    let t0 = Instant::now();
    let mut s = TcpStream::connect(server.local_addr()).unwrap();
    for seq in 0..n {
        // about 1.2 MB per package, far beyond what socket buffers absorb
        s.write_all(&image_package(3, seq, fp, 1_600)).unwrap();
    }
    drop(s);
    let send_time = t0.elapsed();
    let (stats, _) = server.stop();

    assert!(
        send_time >= delay * (n / 2),
        "sender finished in {send_time:?}"
    );
    assert_eq!(stats.delivered, n as u64);
    assert_eq!(stats.enqueued, n as u64);
    assert!(stats.high_water_mark <= limit);
    assert_eq!(
        *keys.lock().unwrap(),
        (0..n).map(|s| (3, s)).collect::<Vec<_>>()
    );
}

#[test]
fn directory_sink_writes_one_file_set_per_package() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ServerConfig::new(setup(), Placement::Server);
    cfg.sink_dir = Some(dir.path().to_path_buf());
    let server = run_server(cfg).unwrap();
    let mut client = Client::connect(ClientConfig::new(
        server.local_addr().to_string(),
        11,
        Placement::Client,
        setup(),
    ))
    .unwrap();
    let m = capture(11);
    assert_eq!(client.send(&m).unwrap(), 0);
    assert_eq!(client.send(&m).unwrap(), 1);
    client.finish().unwrap();
    let (stats, _) = server.stop();
    assert_eq!(stats.delivered, 2);
    let mut names: Vec<String> = std::fs::read_dir(dir.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    assert!(names.iter().any(|n| n.starts_with("11_0.")), "{names:?}");
    assert!(names.iter().any(|n| n.starts_with("11_1.")), "{names:?}");
}

#[test]
fn client_gives_up_on_unreachable_server() {
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let mut cfg = ClientConfig::new(format!("127.0.0.1:{port}"), 1, Placement::Server, setup());
    cfg.initial_backoff = Duration::from_millis(5);
    let t0 = Instant::now();
    assert!(Client::connect(cfg).is_err());
    assert!(t0.elapsed() >= Duration::from_millis(5 + 10 + 20));
}

#[test]
fn server_image_equals_local_processing() {
    let images: Arc<Mutex<Vec<AcousticImage>>> = Arc::default();
    let i = images.clone();
    let sink = move |item: SinkItem| {
        if let SinkPayload::Image(img) = item.payload {
            i.lock().unwrap().push(img);
        }
        Ok(())
    };
    let server = ServerHandle::start_with_sink(
        ServerConfig::new(setup(), Placement::Server),
        Box::new(sink),
    )
    .unwrap();
    let m = capture(5);
    run_client(
        ClientConfig::new(
            server.local_addr().to_string(),
            5,
            Placement::Server,
            setup(),
        ),
        vec![m.clone()],
    )
    .join()
    .unwrap();
    server.stop();
    let local = setup().process(&m).unwrap();
    assert_eq!(images.lock().unwrap().as_slice(), &[local]);
}
