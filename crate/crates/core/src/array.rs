//! Microphone array geometry, direction grids and far-field steering.
//!
//! Two front-end layouts are supported: a regular rectangular lattice and a
//! randomized layout drawn by Poisson-disc dart throwing. Coordinates are in
//! meters with the array lying in the `z = 0` plane and boresight along `+z`.
//! Horizontal (2D) scans sweep azimuth in the `x`-`z` plane.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};
use crate::{dot, norm, sub, Vec3, MAX_MICS};

/// Default lattice pitch, m.
pub const DEFAULT_GRID_PITCH: f64 = 0.009;
/// Default Poisson-disc aperture radius, m.
pub const DEFAULT_POISSON_RADIUS: f64 = 0.04;
/// Default minimum spacing between Poisson-disc microphones, m.
pub const DEFAULT_POISSON_MIN_DISTANCE: f64 = 0.008;
/// Emitter position relative to the array center.
pub const DEFAULT_EMITTER: Vec3 = [0.0, -0.06, 0.0];

const DART_ATTEMPTS_PER_POINT: usize = 10_000;
const DART_RESTARTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LayoutKind {
    Grid,
    Poisson,
}

/// Microphone and emitter geometry of one sensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MicArrayDoc", into = "MicArrayDoc")]
pub struct MicArray {
    mics: Vec<Vec3>,
    emitter: Vec3,
    layout: LayoutKind,
    seed: Option<u64>,
}

/// On-disk JSON shape of a [`MicArray`].
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MicArrayDoc {
    layout: LayoutKind,
    mics: Vec<Vec3>,
    emitter: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    seed: Option<u64>,
}

impl TryFrom<MicArrayDoc> for MicArray {
    type Error = Error;

    fn try_from(doc: MicArrayDoc) -> Result<Self> {
        MicArray::new(doc.mics, doc.emitter, doc.layout, doc.seed)
    }
}

impl From<MicArray> for MicArrayDoc {
    fn from(a: MicArray) -> Self {
        MicArrayDoc {
            layout: a.layout,
            mics: a.mics,
            emitter: a.emitter,
            seed: a.seed,
        }
    }
}

impl MicArray {
    pub fn new(
        mics: Vec<Vec3>,
        emitter: Vec3,
        layout: LayoutKind,
        seed: Option<u64>,
    ) -> Result<Self> {
        if mics.is_empty() {
            return Err(param("array needs at least one microphone"));
        }
        if mics.len() > MAX_MICS {
            return Err(Error::Capacity {
                what: "microphones",
                got: mics.len(),
                max: MAX_MICS,
            });
        }
        if mics
            .iter()
            .chain(Some(&emitter))
            .flatten()
            .any(|v| !v.is_finite())
        {
            return Err(param("array coordinates must be finite"));
        }
        Ok(Self {
            mics,
            emitter,
            layout,
            seed,
        })
    }

    pub fn mics(&self) -> &[Vec3] {
        &self.mics
    }

    pub fn n_mics(&self) -> usize {
        self.mics.len()
    }

    pub fn emitter(&self) -> Vec3 {
        self.emitter
    }

    pub fn layout(&self) -> LayoutKind {
        self.layout
    }

    pub fn seed(&self) -> Option<u64> {
        self.seed
    }

    pub fn with_emitter(mut self, emitter: Vec3) -> Self {
        self.emitter = emitter;
        self
    }

    /// Copy of the array with every microphone and the emitter shifted.
    pub fn translated(&self, offset: Vec3) -> Self {
        let shift = |p: Vec3| [p[0] + offset[0], p[1] + offset[1], p[2] + offset[2]];
        Self {
            mics: self.mics.iter().copied().map(shift).collect(),
            emitter: shift(self.emitter),
            ..self.clone()
        }
    }

    /// Largest distance between any two microphones.
    pub fn aperture_diameter(&self) -> f64 {
        let mut best = 0.0_f64;
        for (i, a) in self.mics.iter().enumerate() {
            for b in &self.mics[i + 1..] {
                best = best.max(norm(sub(*a, *b)));
            }
        }
        best
    }

    /// Smallest distance between any two microphones (infinite for one mic).
    pub fn min_spacing(&self) -> f64 {
        let mut best = f64::INFINITY;
        for (i, a) in self.mics.iter().enumerate() {
            for b in &self.mics[i + 1..] {
                best = best.min(norm(sub(*a, *b)));
            }
        }
        best
    }

    pub fn centroid(&self) -> Vec3 {
        let n = self.mics.len() as f64;
        let mut c = [0.0; 3];
        for m in &self.mics {
            for k in 0..3 {
                c[k] += m[k] / n;
            }
        }
        c
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Regular `rows × cols` lattice centered on the origin. Columns run along `x`,
/// rows along `y`.
pub fn grid_array(rows: usize, cols: usize, pitch: f64) -> Result<MicArray> {
    if rows == 0 || cols == 0 {
        return Err(param("grid needs at least one row and one column"));
    }
    let n = rows * cols;
    if n > MAX_MICS {
        return Err(Error::Capacity {
            what: "grid microphones",
            got: n,
            max: MAX_MICS,
        });
    }
    if !(pitch > 0.0 && pitch.is_finite()) {
        return Err(param(format!("grid pitch must be positive, got {pitch}")));
    }
    let x0 = (cols - 1) as f64 * pitch / 2.0;
    let y0 = (rows - 1) as f64 * pitch / 2.0;
    let mics = (0..rows)
        .flat_map(|r| (0..cols).map(move |c| [c as f64 * pitch - x0, r as f64 * pitch - y0, 0.0]))
        .collect();
    MicArray::new(mics, DEFAULT_EMITTER, LayoutKind::Grid, None)
}

/// Randomized layout of `n` microphones inside a disc, no two closer than
/// `min_distance`. Deterministic for a given seed.
pub fn poisson_disc_array(
    n: usize,
    aperture_radius: f64,
    min_distance: f64,
    seed: u64,
) -> Result<MicArray> {
    if n == 0 {
        return Err(param("poisson array needs at least one microphone"));
    }
    if n > MAX_MICS {
        return Err(Error::Capacity {
            what: "poisson microphones",
            got: n,
            max: MAX_MICS,
        });
    }
    if !(aperture_radius > 0.0) || !(min_distance >= 0.0) {
        return Err(param(
            "aperture radius must be positive and min distance non-negative",
        ));
    }
    let packed = n as f64 * (min_distance / 2.0).powi(2) * PI;
    let headroom = 0.5 * PI * aperture_radius.powi(2);
    if packed > headroom {
        return Err(param(format!(
            "{n} microphones at {min_distance} m spacing cannot pack into a {aperture_radius} m disc"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    'restart: for _ in 0..DART_RESTARTS {
        let mut pts: Vec<Vec3> = Vec::with_capacity(n);
        while pts.len() < n {
            let mut placed = false;
            for _ in 0..DART_ATTEMPTS_PER_POINT {
                let r = aperture_radius * rng.random::<f64>().sqrt();
                let theta = 2.0 * PI * rng.random::<f64>();
                let p = [r * theta.cos(), r * theta.sin(), 0.0];
                if pts.iter().all(|q| norm(sub(p, *q)) >= min_distance) {
                    pts.push(p);
                    placed = true;
                    break;
                }
            }
            if !placed {
                continue 'restart;
            }
        }
        return MicArray::new(pts, DEFAULT_EMITTER, LayoutKind::Poisson, Some(seed));
    }
    Err(Error::Generation(format!(
        "poisson disc sampling of {n} points failed after {DART_RESTARTS} restarts"
    )))
}

/// The 32-element randomized array with the default dimensions.
pub fn default_poisson_array(seed: u64) -> Result<MicArray> {
    poisson_disc_array(
        MAX_MICS,
        DEFAULT_POISSON_RADIUS,
        DEFAULT_POISSON_MIN_DISTANCE,
        seed,
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GridKind {
    Arc2d,
    Hemisphere3d,
}

/// Set of far-field look directions (unit vectors).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DirectionGrid {
    kind: GridKind,
    directions: Vec<Vec3>,
}

impl DirectionGrid {
    /// Wraps explicit unit vectors; each is re-normalized.
    pub fn from_directions(kind: GridKind, directions: Vec<Vec3>) -> Result<Self> {
        if directions.is_empty() {
            return Err(param("direction grid is empty"));
        }
        let directions = directions
            .into_iter()
            .map(|d| {
                let n = norm(d);
                if !(n > 0.0 && n.is_finite()) {
                    return Err(param("direction vectors must be non-zero"));
                }
                Ok([d[0] / n, d[1] / n, d[2] / n])
            })
            .collect::<Result<_>>()?;
        Ok(Self { kind, directions })
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn directions(&self) -> &[Vec3] {
        &self.directions
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// Azimuth of every direction in the `x`-`z` plane, radians.
    pub fn azimuths(&self) -> Vec<f64> {
        self.directions.iter().map(|d| d[0].atan2(d[2])).collect()
    }

    /// Index of the grid direction closest in angle to `u`.
    pub fn nearest(&self, u: Vec3) -> usize {
        let mut best = (0, f64::NEG_INFINITY);
        for (i, d) in self.directions.iter().enumerate() {
            let c = dot(*d, u);
            if c > best.1 {
                best = (i, c);
            }
        }
        best.0
    }

    /// Adjacency used for local-maximum tests: index neighbors on an arc,
    /// the eight angularly nearest directions on a hemisphere.
    pub fn neighbors(&self) -> Vec<Vec<usize>> {
        let n = self.directions.len();
        match self.kind {
            GridKind::Arc2d => (0..n)
                .map(|i| {
                    let mut v = Vec::with_capacity(2);
                    if i > 0 {
                        v.push(i - 1);
                    }
                    if i + 1 < n {
                        v.push(i + 1);
                    }
                    v
                })
                .collect(),
            GridKind::Hemisphere3d => {
                const K: usize = 8;
                (0..n)
                    .map(|i| {
                        let mut others: Vec<(f64, usize)> = (0..n)
                            .filter(|&j| j != i)
                            .map(|j| (-dot(self.directions[i], self.directions[j]), j))
                            .collect();
                        let k = K.min(others.len());
                        if k < others.len() {
                            others.select_nth_unstable_by(k, |a, b| a.0.total_cmp(&b.0));
                        }
                        let mut v: Vec<usize> = others[..k].iter().map(|p| p.1).collect();
                        v.sort_unstable();
                        v
                    })
                    .collect()
            }
        }
    }
}

/// `n` horizontal directions with equispaced azimuths from `az_min` to
/// `az_max` inclusive.
pub fn direction_grid_2d(n: usize, az_min: f64, az_max: f64) -> Result<DirectionGrid> {
    if n == 0 {
        return Err(param("direction count must be at least 1"));
    }
    if !(az_min < az_max) {
        return Err(param(format!(
            "az_min ({az_min}) must be below az_max ({az_max})"
        )));
    }
    let step = if n > 1 {
        (az_max - az_min) / (n - 1) as f64
    } else {
        0.0
    };
    let directions = (0..n)
        .map(|i| {
            let az = az_min + i as f64 * step;
            [az.sin(), 0.0, az.cos()]
        })
        .collect();
    Ok(DirectionGrid {
        kind: GridKind::Arc2d,
        directions,
    })
}

/// `n` directions covering the forward cap of half-angle `max_polar` by a
/// Fibonacci spiral (equal-area rings, golden-angle longitude steps).
pub fn direction_grid_3d(n: usize, max_polar: f64) -> Result<DirectionGrid> {
    if n == 0 {
        return Err(param("direction count must be at least 1"));
    }
    if !(max_polar > 0.0 && max_polar <= PI / 2.0) {
        return Err(param(format!(
            "max_polar must lie in (0, pi/2], got {max_polar}"
        )));
    }
    if n == 1 {
        return Ok(DirectionGrid {
            kind: GridKind::Hemisphere3d,
            directions: vec![[0.0, 0.0, 1.0]],
        });
    }
    let golden = PI * (3.0 - 5.0_f64.sqrt());
    let cap = 1.0 - max_polar.cos();
    let directions = (0..n)
        .map(|i| {
            let z = 1.0 - (i as f64 + 0.5) / n as f64 * cap;
            let r = (1.0 - z * z).max(0.0).sqrt();
            let phi = i as f64 * golden;
            let v = [r * phi.cos(), r * phi.sin(), z];
            let l = norm(v);
            [v[0] / l, v[1] / l, v[2] / l]
        })
        .collect();
    Ok(DirectionGrid {
        kind: GridKind::Hemisphere3d,
        directions,
    })
}

/// Per-(direction, microphone) integer read offsets at the decoded rate.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayTable {
    delays: Vec<u32>,
    n_directions: usize,
    n_mics: usize,
    reference_shift: Vec<f64>,
    fs_decoded: f64,
    sound_speed: f64,
}

impl DelayTable {
    pub fn n_directions(&self) -> usize {
        self.n_directions
    }

    pub fn n_mics(&self) -> usize {
        self.n_mics
    }

    pub fn fs_decoded(&self) -> f64 {
        self.fs_decoded
    }

    pub fn sound_speed(&self) -> f64 {
        self.sound_speed
    }

    pub fn row(&self, direction: usize) -> &[u32] {
        &self.delays[direction * self.n_mics..(direction + 1) * self.n_mics]
    }

    pub fn get(&self, direction: usize, mic: usize) -> u32 {
        self.delays[direction * self.n_mics + mic]
    }

    pub fn max_delay(&self) -> u32 {
        self.delays.iter().copied().max().unwrap_or(0)
    }

    /// Samples by which the beamformed timeline of each direction leads the
    /// arrival time at the array origin. Normalizing each row to a zero
    /// minimum removes this amount; range conversion adds it back.
    pub fn reference_shift(&self) -> &[f64] {
        &self.reference_shift
    }
}

/// Far-field steering delays. For microphone `r_m` and look direction `u` the
/// arrival advance is `-(r_m·u)/c`; each row is shifted to a zero minimum
/// before rounding to the nearest decoded sample.
pub fn steering_delays(
    array: &MicArray,
    grid: &DirectionGrid,
    sound_speed: f64,
    fs_decoded: f64,
) -> Result<DelayTable> {
    if !(sound_speed > 0.0) || !(fs_decoded > 0.0) {
        return Err(param("sound speed and sample rate must be positive"));
    }
    let n_mics = array.n_mics();
    let mut delays = Vec::with_capacity(grid.len() * n_mics);
    let mut reference_shift = Vec::with_capacity(grid.len());
    let mut raw = vec![0.0; n_mics];
    for u in grid.directions() {
        for (r, m) in raw.iter_mut().zip(array.mics()) {
            *r = -dot(*m, *u) / sound_speed * fs_decoded;
        }
        let min = raw.iter().copied().fold(f64::INFINITY, f64::min);
        reference_shift.push(-min);
        delays.extend(raw.iter().map(|r| (r - min).round() as u32));
    }
    Ok(DelayTable {
        delays,
        n_directions: grid.len(),
        n_mics,
        reference_shift,
        fs_decoded,
        sound_speed,
    })
}

/// Narrowband array factor magnitude, normalized so the steer direction is 1.
pub fn beampattern(
    array: &MicArray,
    frequency: f64,
    steer: Vec3,
    grid: &DirectionGrid,
    sound_speed: f64,
) -> Result<Vec<f64>> {
    if !(frequency > 0.0) {
        return Err(param("beampattern frequency must be positive"));
    }
    if !(sound_speed > 0.0) {
        return Err(param("sound speed must be positive"));
    }
    let k = 2.0 * PI * frequency / sound_speed;
    let n = array.n_mics() as f64;
    Ok(grid
        .directions()
        .iter()
        .map(|u| {
            let w = sub(*u, steer);
            let (re, im) = array.mics().iter().fold((0.0, 0.0), |(re, im), m| {
                let phase = k * dot(*m, w);
                (re + phase.cos(), im + phase.sin())
            });
            (re.hypot(im) / n).min(1.0)
        })
        .collect())
}

/// Highest pattern value outside the main lobe around `peak`. The main lobe
/// ends at the first local minimum on each side.
pub fn max_sidelobe_level(pattern: &[f64], peak: usize) -> f64 {
    if pattern.is_empty() {
        return 0.0;
    }
    let mut lo = peak;
    while lo > 0 && pattern[lo - 1] <= pattern[lo] {
        lo -= 1;
    }
    let mut hi = peak;
    while hi + 1 < pattern.len() && pattern[hi + 1] <= pattern[hi] {
        hi += 1;
    }
    pattern[..lo]
        .iter()
        .chain(&pattern[hi + 1..])
        .copied()
        .fold(0.0, f64::max)
}
