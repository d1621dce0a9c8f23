use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Duration, Instant};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use ertis::array::{default_poisson_array, grid_array, DEFAULT_GRID_PITCH};
use ertis::bench::{bench_pipeline, BenchOptions, DEFAULT_COUNTS};
use ertis::config::{load_json, load_pipeline, PipelineConfig};
use ertis::imaging::{extract_pointcloud, read_image_files, write_image_files};
use ertis::net::{run_server, Client, ClientConfig, PipelineSetup, Placement, ServerConfig};
use ertis::scene::{simulate_measurement, CaptureSettings};
use ertis::sync::{detect_marker, inject_marker_at};
use ertis::{GridKind, Measurement, MicArray, Scene};

#[derive(Parser)]
#[command(
    name = "ertis",
    version,
    about = "Sonar capture simulation, imaging and networked processing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Microphone array layouts.
    Array {
        #[command(subcommand)]
        action: ArrayAction,
    },
    /// Excitation waveforms.
    Chirp {
        #[command(subcommand)]
        action: ChirpAction,
    },
    /// Simulate a scene into a PDM measurement file.
    Simulate(SimulateArgs),
    /// Turn a measurement into an acoustic image.
    Process(ProcessArgs),
    /// Extract reflector points from an image.
    Pointcloud(PointcloudArgs),
    /// Time the pipeline against direction count.
    Bench(BenchArgs),
    /// Run the processing server.
    Serve(ServeArgs),
    /// Stream simulated or recorded measurements to a server.
    Client(ClientArgs),
    /// In-band sync markers.
    Sync {
        #[command(subcommand)]
        action: SyncAction,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Layout {
    Grid,
    Poisson,
}

#[derive(Subcommand)]
enum ArrayAction {
    Gen {
        #[arg(long, value_enum, default_value = "poisson")]
        layout: Layout,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        rows: usize,
        #[arg(long, default_value_t = 6)]
        cols: usize,
        #[arg(long, default_value_t = DEFAULT_GRID_PITCH)]
        pitch: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum ChirpAction {
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 450_000.0)]
        fs: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    scene: PathBuf,
    #[arg(long)]
    array: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the scene's noise seed.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = ertis::DEFAULT_CAPTURE_BITS)]
    bits: usize,
    #[arg(long, default_value_t = 0)]
    serial: u32,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ProcessArgs {
    input: PathBuf,
    /// Array definition; defaults to the one stored with the measurement.
    #[arg(long)]
    array: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    directions: Option<usize>,
    /// Output base name: writes <out>.csv, <out>.pgm, <out>.json.
    #[arg(long, default_value = "img")]
    out: PathBuf,
}

#[derive(Args)]
struct PointcloudArgs {
    /// Image base name (reads <input>.csv and <input>.json).
    input: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    threshold_db: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 50)]
    runs: usize,
    #[arg(long, value_delimiter = ',')]
    directions: Option<Vec<usize>>,
    #[arg(long, default_value_t = ertis::DEFAULT_CAPTURE_BITS)]
    bits: usize,
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Use a horizontal arc instead of hemisphere grids.
    #[arg(long)]
    arc: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct ServeArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    array: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    placement: Option<Placement>,
    /// Sink directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Stop after this many seconds; runs until killed otherwise.
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct ClientArgs {
    #[arg(long, default_value = "127.0.0.1")]
    host: String,
    #[arg(long)]
    port: u16,
    #[arg(long, default_value_t = 0)]
    serial: u32,
    #[arg(long, default_value = "server")]
    placement: Placement,
    #[arg(long)]
    array: Option<PathBuf>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene to simulate; ignored with --input.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Recorded measurement to send instead of simulating.
    #[arg(long)]
    input: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    count: u32,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = ertis::DEFAULT_CAPTURE_BITS)]
    bits: usize,
}

#[derive(Subcommand)]
enum SyncAction {
    Inject {
        input: PathBuf,
        #[arg(long)]
        marker: u8,
        /// Start of the marker train, decoded samples.
        #[arg(long, default_value_t = 0)]
        offset: usize,
        #[arg(long)]
        out: PathBuf,
    },
    Detect {
        input: PathBuf,
    },
}

/// Server settings file for `serve`; the pipeline is described compactly
/// and the array may come from `--array`.
#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ServeFile {
    #[serde(default = "serve_schema")]
    schema: String,
    #[serde(default)]
    listen_port: u16,
    #[serde(default = "four")]
    worker_count: usize,
    #[serde(default = "eight")]
    queue_capacity: usize,
    #[serde(default = "server_placement")]
    processing_placement: Placement,
    #[serde(default)]
    pipeline: PipelineConfig,
    #[serde(default)]
    array: Option<MicArray>,
    #[serde(default)]
    sink_dir: Option<PathBuf>,
}

fn serve_schema() -> String {
    "ertis.serve/1".into()
}

fn four() -> usize {
    4
}

fn eight() -> usize {
    8
}

fn server_placement() -> Placement {
    Placement::Server
}

enum Failure {
    Usage(String),
    Runtime(ertis::Error),
}

impl From<ertis::Error> for Failure {
    fn from(e: ertis::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CliResult<T = ()> = std::result::Result<T, Failure>;

fn usage<T>(r: ertis::Result<T>) -> CliResult<T> {
    r.map_err(|e| Failure::Usage(e.to_string()))
}

fn echo<T: Serialize>(what: &str, value: &T) {
    match serde_json::to_string(value) {
        Ok(text) => eprintln!("{what}: {text}"),
        Err(e) => eprintln!("{what}: <unserializable: {e}>"),
    }
}

fn pipeline_config(path: Option<&Path>) -> CliResult<PipelineConfig> {
    match path {
        Some(p) => usage(load_pipeline(p)),
        None => Ok(PipelineConfig::default()),
    }
}

fn load_array(path: &Path) -> CliResult<MicArray> {
    let text = usage(fs::read_to_string(path).map_err(|e| ertis::Error::File {
        path: path.into(),
        source: e,
    }))?;
    usage(
        MicArray::from_json(&text)
            .map_err(|e| ertis::Error::Format(format!("{}: {e}", path.display()))),
    )
}

fn write_or_print(out: Option<&Path>, text: &str) -> CliResult {
    match out {
        Some(p) => {
            fs::write(p, text).map_err(|e| ertis::Error::File {
                path: p.into(),
                source: e,
            })?;
            eprintln!("wrote {}", p.display());
        }
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Array {
            action:
                ArrayAction::Gen {
                    layout,
                    seed,
                    rows,
                    cols,
                    pitch,
                    out,
                },
        } => {
            let array = match layout {
                Layout::Grid => usage(grid_array(rows, cols, pitch))?,
                Layout::Poisson => default_poisson_array(seed)?,
            };
            write_or_print(out.as_deref(), &(array.to_json()? + "\n"))
        }
        Command::Chirp {
            action: ChirpAction::Gen { config, fs, out },
        } => {
            let cfg = pipeline_config(config.as_deref())?;
            echo("excitation", &cfg.excitation);
            let w = usage(cfg.excitation.synthesize(fs))?;
            write_or_print(out.as_deref(), &w.to_csv())
        }
        Command::Simulate(a) => {
            let cfg = pipeline_config(a.config.as_deref())?;
            let array = load_array(&a.array)?;
            let mut scene: Scene = usage(load_json(&a.scene))?;
            usage(scene.validate())?;
            if let Some(seed) = a.seed {
                scene.seed = seed;
            }
            echo("scene", &scene);
            echo("excitation", &cfg.excitation);
            let capture = CaptureSettings {
                n_bits: a.bits,
                device_serial: a.serial,
                ..CaptureSettings::default()
            };
            let pulse = usage(cfg.excitation.synthesize(capture.fs_pdm_hz as f64))?;
            let m = simulate_measurement(&scene, &array, &pulse, cfg.sound_speed, &capture)?;
            m.write(&a.out)?;
            eprintln!(
                "wrote {} ({} channels × {} bits)",
                a.out.display(),
                m.stream.n_channels(),
                m.stream.n_bits_per_channel()
            );
            Ok(())
        }
        Command::Process(a) => {
            let mut cfg = pipeline_config(a.config.as_deref())?;
            if let Some(n) = a.directions {
                cfg.directions = cfg.directions.with_count(n);
            }
            let m = Measurement::read(&a.input)?;
            let array = match (&a.array, &m.meta.array) {
                (Some(p), _) => load_array(p)?,
                (None, Some(arr)) => arr.clone(),
                (None, None) => {
                    return Err(Failure::Usage(format!(
                        "{} carries no array definition; pass --array",
                        a.input.display()
                    )))
                }
            };
            if a.config.is_none() {
                if let Some(ex) = m.meta.excitation {
                    cfg.excitation = ex;
                }
                cfg.sound_speed = m.meta.sound_speed;
            }
            echo("config", &cfg);
            let setup = PipelineSetup::new(usage(cfg.processing())?, array, cfg.excitation);
            let img = setup.process(&m)?;
            for p in write_image_files(&img, &a.out)? {
                eprintln!("wrote {}", p.display());
            }
            Ok(())
        }
        Command::Pointcloud(a) => {
            let mut cfg = pipeline_config(a.config.as_deref())?;
            if let Some(t) = a.threshold_db {
                cfg.threshold_db = t;
            }
            eprintln!(
                "threshold_db: {}, min_separation_samples: {}",
                cfg.threshold_db, cfg.min_separation_samples
            );
            let img = read_image_files(&a.input)?;
            let cloud = usage(extract_pointcloud(
                &img,
                cfg.threshold_db,
                cfg.min_separation_samples,
            ))?;
            eprintln!("{} points", cloud.len());
            write_or_print(a.out.as_deref(), &cloud.to_csv())
        }
        Command::Bench(a) => {
            let cfg = pipeline_config(a.config.as_deref())?;
            let opts = BenchOptions {
                direction_counts: a.directions.unwrap_or_else(|| DEFAULT_COUNTS.to_vec()),
                runs: a.runs,
                grid_kind: if a.arc {
                    GridKind::Arc2d
                } else {
                    GridKind::Hemisphere3d
                },
                n_bits: a.bits,
                seed: a.seed,
                ..BenchOptions::default()
            };
            eprintln!(
                "bench: counts {:?}, runs {}, warm-up {}, bits {}, seed {}, grid {:?}",
                opts.direction_counts,
                opts.runs,
                opts.warmup_runs,
                opts.n_bits,
                opts.seed,
                opts.grid_kind
            );
            let report = usage(bench_pipeline(&opts, &usage(cfg.processing())?))?;
            print!("{}", report.to_table());
            let json = serde_json::to_string_pretty(&report).map_err(ertis::Error::from)?;
            match a.out {
                Some(p) => write_or_print(Some(&p), &(json + "\n")),
                None => {
                    println!("{json}");
                    Ok(())
                }
            }
        }
        Command::Serve(a) => {
            let file: ServeFile = match &a.config {
                Some(p) => usage(load_json(p))?,
                None => usage(serde_json::from_str("{}").map_err(ertis::Error::from))?,
            };
            if file.schema != serve_schema() {
                return Err(Failure::Usage(format!(
                    "serve config schema {:?}, expected \"ertis.serve/1\"",
                    file.schema
                )));
            }
            let array = match (&a.array, file.array) {
                (Some(p), _) => load_array(p)?,
                (None, Some(arr)) => arr,
                (None, None) => {
                    return Err(Failure::Usage(
                        "serve needs an array (--array or \"array\" in the config)".into(),
                    ))
                }
            };
            let setup = PipelineSetup::new(
                usage(file.pipeline.processing())?,
                array,
                file.pipeline.excitation,
            );
            let mut cfg =
                ServerConfig::new(setup, a.placement.unwrap_or(file.processing_placement));
            cfg.listen_port = a.port.unwrap_or(file.listen_port);
            cfg.worker_count = file.worker_count;
            cfg.queue_capacity = file.queue_capacity;
            cfg.sink_dir = Some(
                a.out
                    .or(file.sink_dir)
                    .unwrap_or_else(|| PathBuf::from("sink")),
            );
            usage(cfg.validate())?;
            eprintln!(
                "serve: port {}, workers {}, queue {}, placement {:?}, sink {}, fingerprint {}",
                cfg.listen_port,
                cfg.worker_count,
                cfg.queue_capacity,
                cfg.processing_placement,
                cfg.sink_dir.as_ref().unwrap().display(),
                cfg.pipeline.fingerprint()
            );
            let server = run_server(cfg)?;
            eprintln!("listening on {}", server.local_addr());
            let deadline = a
                .duration
                .map(|s| Instant::now() + Duration::from_secs_f64(s));
            loop {
                std::thread::sleep(Duration::from_millis(200));
                if deadline.is_some_and(|d| Instant::now() >= d) {
                    break;
                }
            }
            let (stats, _) = server.stop();
            println!("{}", stats.to_json());
            Ok(())
        }
        Command::Client(a) => {
            let cfg = pipeline_config(a.config.as_deref())?;
            let source = match &a.input {
                Some(p) => Some(Measurement::read(p)?),
                None => None,
            };
            let array = match (&a.array, source.as_ref().and_then(|m| m.meta.array.clone())) {
                (Some(p), _) => load_array(p)?,
                (None, Some(arr)) => arr,
                (None, None) => return Err(Failure::Usage("client needs --array".into())),
            };
            let scene: Option<Scene> = match (&a.scene, &source) {
                (_, Some(_)) => None,
                (Some(p), None) => Some(usage(load_json(p))?),
                (None, None) => {
                    return Err(Failure::Usage("client needs --scene or --input".into()))
                }
            };
            let setup = PipelineSetup::new(usage(cfg.processing())?, array.clone(), cfg.excitation);
            let client_cfg = ClientConfig::new(
                format!("{}:{}", a.host, a.port),
                a.serial,
                a.placement,
                setup,
            );
            eprintln!(
                "client: server {}, serial {}, placement {:?}, count {}, fingerprint {}",
                client_cfg.server,
                a.serial,
                a.placement,
                a.count,
                client_cfg.pipeline.fingerprint()
            );
            let mut client = Client::connect(client_cfg)?;
            let pulse = usage(cfg.excitation.synthesize(ertis::FS_PDM))?;
            for i in 0..a.count {
                let m = match (&source, &scene) {
                    (Some(m), _) => m.clone(),
                    (None, Some(scene)) => {
                        let scene = scene.clone().with_noise(scene.noise_rms, a.seed + i as u64);
                        let capture = CaptureSettings {
                            n_bits: a.bits,
                            device_serial: a.serial,
                            timestamp_us: i as u64,
                            ..CaptureSettings::default()
                        };
                        simulate_measurement(&scene, &array, &pulse, cfg.sound_speed, &capture)?
                    }
                    (None, None) => unreachable!(),
                };
                client.send(&m)?;
            }
            let report = client.finish()?;
            echo("report", &report);
            Ok(())
        }
        Command::Sync { action } => match action {
            SyncAction::Inject {
                input,
                marker,
                offset,
                out,
            } => {
                let m = Measurement::read(&input)?;
                let marked = usage(inject_marker_at(&m, marker, offset))?;
                marked.write(&out)?;
                eprintln!(
                    "wrote {} with marker {marker} at sample {offset}",
                    out.display()
                );
                Ok(())
            }
            SyncAction::Detect { input } => {
                let m = Measurement::read(&input)?;
                let det = detect_marker(&m)?;
                println!(
                    "{}",
                    serde_json::to_string(&det).map_err(ertis::Error::from)?
                );
                Ok(())
            }
        },
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ERTIS_LOG", "warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
