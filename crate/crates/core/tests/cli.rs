use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Duration;

const BITS: &str = "32768";

fn ertis(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ertis"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("run ertis")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn ok(o: &Output) {
    assert_eq!(o.status.code(), Some(0), "{}", stderr(o));
}

/// Array file, scene file and a simulated capture in a fresh directory.
fn workspace() -> (tempfile::TempDir, PathBuf) {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path().to_path_buf();
    ok(&ertis(
        &d,
        &[
            "array", "gen", "--layout", "poisson", "--seed", "1", "--out", "a.json",
        ],
    ));
    std::fs::write(
        d.join("s.json"),
        r#"{"reflectors":[{"pos":[0.2,0.0,0.65],"reflectivity":1.0}],"noise_rms":0.0,"seed":0}"#,
    )
    .unwrap();
    ok(&ertis(
        &d,
        &[
            "simulate", "--scene", "s.json", "--array", "a.json", "--bits", BITS, "--out", "m.ertm",
        ],
    ));
    (dir, d)
}

#[test]
fn array_and_chirp_generation() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&ertis(
        d,
        &[
            "array", "gen", "--layout", "grid", "--rows", "5", "--cols", "6", "--out", "g.json",
        ],
    ));
    let grid =
        ertis::MicArray::from_json(&std::fs::read_to_string(d.join("g.json")).unwrap()).unwrap();
    assert_eq!(grid.n_mics(), 30);
    let o = ertis(d, &["array", "gen", "--layout", "poisson"]);
    ok(&o);
    assert_eq!(
        ertis::MicArray::from_json(&String::from_utf8_lossy(&o.stdout))
            .unwrap()
            .n_mics(),
        32
    );
    assert_eq!(
        ertis(d, &["array", "gen", "--layout", "grid", "--rows", "0"])
            .status
            .code(),
        Some(1)
    );

    ok(&ertis(d, &["chirp", "gen", "--out", "c.csv"]));
    let csv = std::fs::read_to_string(d.join("c.csv")).unwrap();
    assert_eq!(csv.lines().count(), 900);
}

#[test]
fn simulate_process_pointcloud() {
    let (_dir, d) = workspace();
    assert!(d.join("m.ertm").exists());
    assert!(ertis::pdm::sidecar_path(&d.join("m.ertm")).exists());

    let o = ertis(
        &d,
        &["process", "m.ertm", "--directions", "90", "--out", "img"],
    );
    ok(&o);
    assert!(stderr(&o).contains("config:"), "effective config is echoed");
    for ext in ["csv", "pgm", "json"] {
        assert!(d.join(format!("img.{ext}")).exists(), "img.{ext}");
    }
    let first = (
        std::fs::read(d.join("img.csv")).unwrap(),
        std::fs::read(d.join("img.pgm")).unwrap(),
    );
    ok(&ertis(
        &d,
        &["process", "m.ertm", "--directions", "90", "--out", "img"],
    ));
    let second = (
        std::fs::read(d.join("img.csv")).unwrap(),
        std::fs::read(d.join("img.pgm")).unwrap(),
    );
    assert!(first == second, "process is not idempotent");

    ok(&ertis(&d, &["pointcloud", "img", "--out", "cloud.csv"]));
    let cloud = std::fs::read_to_string(d.join("cloud.csv")).unwrap();
    assert_eq!(cloud.lines().count(), 2, "{cloud}");
}

#[test]
fn exit_codes() {
    let (_dir, d) = workspace();
    let o = ertis(&d, &["process", "missing.ertm"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing.ertm"), "{}", stderr(&o));

    assert_eq!(
        ertis(&d, &["process", "m.ertm", "--bogus"]).status.code(),
        Some(1)
    );
    assert_eq!(ertis(&d, &["frobnicate"]).status.code(), Some(1));

    std::fs::write(d.join("bad.json"), r#"{"matched_filter":false}"#).unwrap();
    let o = ertis(&d, &["process", "m.ertm", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("matched_filter"), "{}", stderr(&o));

    std::fs::write(d.join("v2.json"), r#"{"schema":"ertis.pipeline/2"}"#).unwrap();
    assert_eq!(
        ertis(&d, &["process", "m.ertm", "--config", "v2.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ertis(&d, &["process", "m.ertm", "--config", "nope.json"])
            .status
            .code(),
        Some(1)
    );
    assert_eq!(
        ertis(
            &d,
            &["sync", "inject", "m.ertm", "--marker", "16", "--out", "x.ertm"]
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn sync_inject_and_detect() {
    let (_dir, d) = workspace();
    ok(&ertis(
        &d,
        &[
            "sync",
            "inject",
            "m.ertm",
            "--marker",
            "5",
            "--offset",
            "100",
            "--out",
            "marked.ertm",
        ],
    ));
    let o = ertis(&d, &["sync", "detect", "marked.ertm"]);
    ok(&o);
    let det: ertis::sync::MarkerDetection = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(det.marker_id, 5);
    assert!((det.offset_samples - 100).abs() <= 1);
}

#[test]
fn bench_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = ertis(
        d,
        &[
            "bench",
            "--runs",
            "2",
            "--directions",
            "4,16",
            "--bits",
            BITS,
            "--out",
            "b.json",
        ],
    );
    ok(&o);
    assert!(String::from_utf8_lossy(&o.stdout).contains("directions"));
    let report: ertis::bench::BenchReport =
        serde_json::from_str(&std::fs::read_to_string(d.join("b.json")).unwrap()).unwrap();
    assert_eq!(report.direction_counts, vec![4, 16]);
    assert_eq!(report.runs, 2);
}

#[test]
fn serve_and_client() {
    let (_dir, d) = workspace();
    let port = std::net::TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port()
        .to_string();
    let server = Command::new(env!("CARGO_BIN_EXE_ertis"))
        .current_dir(&d)
        .args([
            "serve",
            "--array",
            "a.json",
            "--port",
            &port,
            "--out",
            "sink",
            "--duration",
            "6",
        ])
        .stdout(std::process::Stdio::piped())
        .stderr(std::process::Stdio::piped())
        .spawn()
        .unwrap();
    let t0 = std::time::Instant::now();
    while std::net::TcpStream::connect(format!("127.0.0.1:{port}")).is_err() {
        assert!(
            t0.elapsed() < Duration::from_secs(5),
            "server did not start"
        );
        std::thread::sleep(Duration::from_millis(50));
    }
    ok(&ertis(
        &d,
        &[
            "client", "--port", &port, "--serial", "3", "--input", "m.ertm", "--count", "2",
        ],
    ));
    ok(&ertis(
        &d,
        &[
            "client",
            "--port",
            &port,
            "--serial",
            "4",
            "--scene",
            "s.json",
            "--array",
            "a.json",
            "--bits",
            BITS,
            "--placement",
            "client",
        ],
    ));
    let out = server.wait_with_output().unwrap();
    ok(&out);
    let stats: ertis::net::StatsSnapshot = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(
        (stats.received, stats.delivered, stats.rejected),
        (3, 3, 0),
        "{}",
        stderr(&out)
    );
    let mut names: Vec<String> = std::fs::read_dir(d.join("sink"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    for stem in ["3_0.", "3_1.", "4_0."] {
        assert!(names.iter().any(|n| n.starts_with(stem)), "{names:?}");
    }
}
