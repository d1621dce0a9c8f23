//! User-facing products derived from acoustic images: pointclouds and file
//! exports.
//!
//! Exports written by [`write_image_files`]:
//!
//! * `<base>.csv` — header `direction,s0,s1,…`, one row per direction,
//!   9 significant digits;
//! * `<base>.pgm` — binary P5, width = range samples, height = directions,
//!   big-endian 16-bit, global maximum mapped to 65535;
//! * `<base>.json` — grid, sample rate, sound speed and range calibration.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::array::{DirectionGrid, GridKind};
use crate::dsp::{AcousticImage, Matrix};
use crate::error::{param, Error, Result};
use crate::Vec3;

pub const DEFAULT_THRESHOLD_DB: f64 = 20.0;
pub const DEFAULT_MIN_SEPARATION: usize = 50;
pub const IMAGE_SCHEMA: &str = "ertis.image/1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CloudPoint {
    pub position: Vec3,
    pub intensity: f64,
    pub direction: usize,
    pub sample: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct PointCloud {
    pub points: Vec<CloudPoint>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    /// `x,y,z,intensity` with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,z,intensity\n");
        for p in &self.points {
            let _ = writeln!(
                out,
                "{},{},{},{}",
                crate::sig9(p.position[0]),
                crate::sig9(p.position[1]),
                crate::sig9(p.position[2]),
                crate::sig9(p.intensity)
            );
        }
        out
    }
}

fn is_strict_local_max(img: &Matrix, neighbors: &[Vec<usize>], d: usize, s: usize) -> bool {
    let v = img.get(d, s);
    let cols = img.cols();
    let lo = s.saturating_sub(1);
    let hi = (s + 1).min(cols - 1);
    for ss in lo..=hi {
        if ss != s && img.get(d, ss) >= v {
            return false;
        }
        for &nd in &neighbors[d] {
            if img.get(nd, ss) >= v {
                return false;
            }
        }
    }
    true
}

/// Peak-picks an image into points.
///
/// Candidates are strict local maxima over (direction, range sample) no more
/// than `threshold_db` below the image maximum. They are accepted strongest
/// first (ties by lowest direction then sample); a candidate is dropped when
/// an accepted point lies in the same or an adjacent direction within
/// `min_separation` samples.
pub fn extract_pointcloud(
    img: &AcousticImage,
    threshold_db: f64,
    min_separation: usize,
) -> Result<PointCloud> {
    if img.n_directions() == 0 || img.n_range_samples() == 0 {
        return Err(param("cannot extract points from an empty image"));
    }
    if !(threshold_db > 0.0) {
        return Err(param(format!(
            "threshold must be positive dB, got {threshold_db}"
        )));
    }
    let m = &img.intensity;
    let peak = m.max();
    if !(peak > 0.0) {
        return Ok(PointCloud::default());
    }
    let threshold = peak / 10f64.powf(threshold_db / 20.0);
    let neighbors = img.grid.neighbors();

    let mut candidates = Vec::new();
    for d in 0..m.rows() {
        for (s, &v) in m.row(d).iter().enumerate() {
            if v >= threshold && is_strict_local_max(m, &neighbors, d, s) {
                candidates.push((v, d, s));
            }
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let mut accepted: Vec<(usize, usize)> = Vec::new();
    let mut points = Vec::new();
    for (v, d, s) in candidates {
        let blocked = accepted.iter().any(|&(ad, as_)| {
            (ad == d || neighbors[d].contains(&ad)) && as_.abs_diff(s) <= min_separation
        });
        if blocked {
            continue;
        }
        accepted.push((d, s));
        points.push(CloudPoint {
            position: img.position_of(d, s),
            intensity: v,
            direction: d,
            sample: s,
        });
    }
    Ok(PointCloud { points })
}

/// 16-bit binary PGM, global maximum → 65535, round half up.
pub fn export_pgm(img: &AcousticImage) -> Vec<u8> {
    let m = &img.intensity;
    let header = format!("P5\n{} {}\n65535\n", m.cols(), m.rows());
    let mut out = Vec::with_capacity(header.len() + m.data().len() * 2);
    out.extend_from_slice(header.as_bytes());
    let peak = m.max();
    for &v in m.data() {
        let q = if peak > 0.0 {
            (v.max(0.0) / peak * 65535.0 + 0.5).floor().min(65535.0) as u16
        } else {
            0
        };
        out.extend_from_slice(&q.to_be_bytes());
    }
    out
}

/// Headered CSV matrix, directions as rows.
pub fn export_csv(img: &AcousticImage) -> String {
    let m = &img.intensity;
    let mut out = String::with_capacity(m.data().len() * 16 + 64);
    out.push_str("direction");
    for s in 0..m.cols() {
        let _ = write!(out, ",s{s}");
    }
    out.push('\n');
    for d in 0..m.rows() {
        let _ = write!(out, "{d}");
        for v in m.row(d) {
            out.push(',');
            out.push_str(&crate::sig9(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses [`export_csv`] output back into a matrix.
pub fn parse_csv(text: &str) -> Result<Matrix> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::Format("image CSV is empty".into()))?;
    let cols = header.split(',').count().saturating_sub(1);
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        fields.next();
        let before = data.len();
        for f in fields {
            data.push(
                f.trim().parse::<f64>().map_err(|e| {
                    Error::Format(format!("image CSV row {i}: bad value {f:?}: {e}"))
                })?,
            );
        }
        if data.len() - before != cols {
            return Err(Error::Format(format!(
                "image CSV row {i} has the wrong width"
            )));
        }
        rows += 1;
    }
    Matrix::from_vec(rows, cols, data)
}

/// Image metadata document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageMeta {
    pub schema: String,
    pub n_directions: usize,
    pub n_range_samples: usize,
    pub grid: DirectionGrid,
    pub fs_decoded: f64,
    pub sound_speed: f64,
    pub range_per_sample: f64,
    pub group_delay_samples: f64,
    pub direction_shift: Vec<f64>,
}

impl ImageMeta {
    pub fn of(img: &AcousticImage) -> Self {
        Self {
            schema: IMAGE_SCHEMA.into(),
            n_directions: img.n_directions(),
            n_range_samples: img.n_range_samples(),
            grid: img.grid.clone(),
            fs_decoded: img.fs_decoded,
            sound_speed: img.sound_speed,
            range_per_sample: img.range_per_sample(),
            group_delay_samples: img.group_delay_samples,
            direction_shift: img.direction_shift.clone(),
        }
    }
}

fn with_ext(base: &Path, ext: &str) -> PathBuf {
    let mut s = base.as_os_str().to_owned();
    s.push(".");
    s.push(ext);
    PathBuf::from(s)
}

/// Writes `<base>.csv`, `<base>.pgm` and `<base>.json`.
pub fn write_image_files(img: &AcousticImage, base: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let base = base.as_ref();
    let files = [
        (with_ext(base, "csv"), export_csv(img).into_bytes()),
        (with_ext(base, "pgm"), export_pgm(img)),
        (
            with_ext(base, "json"),
            serde_json::to_vec_pretty(&ImageMeta::of(img))?,
        ),
    ];
    let mut written = Vec::new();
    for (path, bytes) in files {
        fs::write(&path, bytes).map_err(|e| Error::file(&path, e))?;
        written.push(path);
    }
    Ok(written)
}

/// Reads an image back from `<base>.csv` and `<base>.json`.
pub fn read_image_files(base: impl AsRef<Path>) -> Result<AcousticImage> {
    let base = base.as_ref();
    let csv_path = with_ext(base, "csv");
    let json_path = with_ext(base, "json");
    let csv = fs::read_to_string(&csv_path).map_err(|e| Error::file(&csv_path, e))?;
    let meta_text = fs::read_to_string(&json_path).map_err(|e| Error::file(&json_path, e))?;
    let meta: ImageMeta = serde_json::from_str(&meta_text)?;
    let intensity = parse_csv(&csv)?;
    if intensity.rows() != meta.grid.len() || meta.direction_shift.len() != meta.grid.len() {
        return Err(Error::Format(format!(
            "image CSV has {} rows but metadata lists {} directions",
            intensity.rows(),
            meta.grid.len()
        )));
    }
    Ok(AcousticImage {
        intensity,
        grid: meta.grid,
        fs_decoded: meta.fs_decoded,
        sound_speed: meta.sound_speed,
        group_delay_samples: meta.group_delay_samples,
        direction_shift: meta.direction_shift,
    })
}

const IMAGE_MAGIC: &[u8; 4] = b"ERTI";
const IMAGE_VERSION: u8 = 1;
const IMAGE_HEADER_LEN: usize = 40;

/// Lossless little-endian image encoding used for network payloads:
///
/// ```text
/// "ERTI" | version u8 = 1 | grid kind u8 | reserved u16
///        | n_directions u32 | n_range u32 | fs_decoded f64 | sound_speed f64
///        | group_delay f64 | directions [f64; 3] × n | shifts f64 × n
///        | intensity f64 × n × n_range (row-major)
/// ```
pub fn encode_image(img: &AcousticImage) -> Vec<u8> {
    let n = img.n_directions();
    let r = img.n_range_samples();
    let mut out = Vec::with_capacity(IMAGE_HEADER_LEN + 8 * (4 * n + n * r));
    out.extend_from_slice(IMAGE_MAGIC);
    out.push(IMAGE_VERSION);
    out.push(match img.grid.kind() {
        GridKind::Arc2d => 0,
        GridKind::Hemisphere3d => 1,
    });
    out.extend_from_slice(&0u16.to_le_bytes());
    out.extend_from_slice(&(n as u32).to_le_bytes());
    out.extend_from_slice(&(r as u32).to_le_bytes());
    for v in [img.fs_decoded, img.sound_speed, img.group_delay_samples] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for d in img.grid.directions() {
        for v in d {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in img.direction_shift.iter().chain(img.intensity.data()) {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<AcousticImage> {
    if bytes.len() < IMAGE_HEADER_LEN || &bytes[..4] != IMAGE_MAGIC {
        return Err(Error::Format("not an encoded acoustic image".into()));
    }
    if bytes[4] != IMAGE_VERSION {
        return Err(Error::Format(format!(
            "unsupported image version {}",
            bytes[4]
        )));
    }
    let kind = match bytes[5] {
        0 => GridKind::Arc2d,
        1 => GridKind::Hemisphere3d,
        k => return Err(Error::Format(format!("unknown grid kind {k}"))),
    };
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
    let n = u32_at(8);
    let r = u32_at(12);
    let expected = n
        .checked_mul(r)
        .and_then(|nr| nr.checked_add(4 * n))
        .and_then(|w| w.checked_mul(8))
        .and_then(|b| b.checked_add(IMAGE_HEADER_LEN));
    if expected != Some(bytes.len()) {
        return Err(Error::Format(
            "encoded image length does not match its header".into(),
        ));
    }
    let mut floats = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut next = || floats.next().expect("length checked");
    let fs_decoded = next();
    let sound_speed = next();
    let group_delay_samples = next();
    let directions: Vec<Vec3> = (0..n).map(|_| [next(), next(), next()]).collect();
    let direction_shift: Vec<f64> = (0..n).map(|_| next()).collect();
    let data: Vec<f64> = (0..n * r).map(|_| next()).collect();
    Ok(AcousticImage {
        intensity: Matrix::from_vec(n, r, data)?,
        grid: DirectionGrid::from_directions(kind, directions)?,
        fs_decoded,
        sound_speed,
        group_delay_samples,
        direction_shift,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::direction_grid_2d;

    fn image(rows: Vec<Vec<f64>>) -> AcousticImage {
        let n = rows.len();
        AcousticImage {
            intensity: Matrix::from_rows(rows).unwrap(),
            grid: direction_grid_2d(n, -1.0, 1.0).unwrap(),
            fs_decoded: 450_000.0,
            sound_speed: 343.0,
            group_delay_samples: 0.0,
            direction_shift: vec![0.0; n],
        }
    }

    #[test]
    fn pgm_normalization() {
        let img = image(vec![vec![0.0, 1.0], vec![0.5, 0.0]]);
        let pgm = export_pgm(&img);
        let header = b"P5\n2 2\n65535\n";
        assert_eq!(&pgm[..header.len()], header);
        let px: Vec<u16> = pgm[header.len()..]
            .chunks(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect();
        assert_eq!(px, vec![0, 65535, 32768, 0]);
    }

    #[test]
    fn csv_round_trip() {
        let img = image(vec![vec![0.1234567891, 2.0, 3e-7], vec![1e5, 0.0, 7.25]]);
        let back = parse_csv(&export_csv(&img)).unwrap();
        for (a, b) in back.data().iter().zip(img.intensity.data()) {
            assert!((a - b).abs() <= 1e-8 * b.abs());
        }
        assert!(parse_csv("direction,s0\n0,1,2\n").is_err());
    }

    #[test]
    fn empty_image_gives_empty_cloud() {
        let img = image(vec![vec![0.0; 20]; 3]);
        assert!(extract_pointcloud(&img, 20.0, 5).unwrap().is_empty());
        assert!(extract_pointcloud(&img, 0.0, 5).is_err());
    }

    #[test]
    fn cloud_picks_strict_maxima_and_suppresses() {
        let mut rows = vec![vec![0.0; 40]; 4];
        rows[1][10] = 1.0;
        rows[1][12] = 0.9; // within separation of the stronger peak
        rows[3][30] = 0.5;
        rows[2][5] = 0.05; // below threshold
        let img = image(rows);
        let cloud = extract_pointcloud(&img, 10.0, 5).unwrap();
        let cells: Vec<(usize, usize)> = cloud
            .points
            .iter()
            .map(|p| (p.direction, p.sample))
            .collect();
        assert_eq!(cells, vec![(1, 10), (3, 30)]);
        assert!(cloud.to_csv().starts_with("x,y,z,intensity\n"));
    }

    #[test]
    fn plateau_is_not_a_strict_maximum() {
        let mut rows = vec![vec![0.0; 10]; 2];
        rows[0][4] = 1.0;
        rows[0][5] = 1.0;
        let cloud = extract_pointcloud(&image(rows), 20.0, 1).unwrap();
        assert!(cloud.is_empty());
    }

    #[test]
    fn binary_image_round_trip() {
        let mut img = image(vec![vec![0.25, 1.0, 3.5], vec![9.0, 0.0, 1e-300]]);
        img.direction_shift = vec![1.5, 2.25];
        img.group_delay_samples = 456.0;
        let bytes = encode_image(&img);
        assert_eq!(decode_image(&bytes).unwrap(), img);
        assert!(decode_image(&bytes[..bytes.len() - 8]).is_err());
    }

    #[test]
    fn files_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = image(vec![vec![0.5, 1.0], vec![0.0, 0.25]]);
        let base = dir.path().join("img");
        let files = write_image_files(&img, &base).unwrap();
        assert_eq!(files.len(), 3);
        let back = read_image_files(&base).unwrap();
        assert_eq!(back.grid, img.grid);
        assert_eq!(back.intensity, img.intensity);
    }
}
