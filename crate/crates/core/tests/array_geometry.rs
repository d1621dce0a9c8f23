mod common;

use std::f64::consts::FRAC_PI_2;

use common::poisson1;
use ertis::array::{
    beampattern, default_poisson_array, direction_grid_2d, direction_grid_3d, grid_array,
    poisson_disc_array, steering_delays,
};
use ertis::{MicArray, DEFAULT_SOUND_SPEED};
use proptest::prelude::*;

fn angle(a: [f64; 3], b: [f64; 3]) -> f64 {
    (a[0] * b[0] + a[1] * b[1] + a[2] * b[2])
        .clamp(-1.0, 1.0)
        .acos()
}

fn min_pair_distance(a: &MicArray) -> f64 {
    let m = a.mics();
    let mut best = f64::INFINITY;
    for i in 0..m.len() {
        for j in i + 1..m.len() {
            let d = ((m[i][0] - m[j][0]).powi(2)
                + (m[i][1] - m[j][1]).powi(2)
                + (m[i][2] - m[j][2]).powi(2))
            .sqrt();
            best = best.min(d);
        }
    }
    best
}

#[test]
fn hemisphere_density_is_even() {
    let g = direction_grid_3d(1000, FRAC_PI_2).unwrap();
    let u = g.directions();
    let nn: Vec<f64> = (0..u.len())
        .map(|i| {
            (0..u.len())
                .filter(|&j| j != i)
                .map(|j| angle(u[i], u[j]))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    let max = nn.iter().copied().fold(0.0, f64::max);
    let min = nn.iter().copied().fold(f64::INFINITY, f64::min);
    assert!(max / min <= 2.5, "nearest-neighbor ratio {}", max / min);
}

#[test]
fn paper_direction_counts() {
    assert_eq!(direction_grid_3d(4000, FRAC_PI_2).unwrap().len(), 4000);
    let arc = direction_grid_2d(90, -FRAC_PI_2, FRAC_PI_2).unwrap();
    let az = arc.azimuths();
    assert_eq!(az.len(), 90);
    for w in az.windows(2) {
        assert!(((w[1] - w[0]).to_degrees() - 180.0 / 89.0).abs() < 1e-9);
    }
}

#[test]
fn poisson_arrays_keep_spacing_for_many_seeds() {
    for seed in 0..20 {
        let a = default_poisson_array(seed).unwrap();
        assert_eq!(a.n_mics(), 32);
        assert!(min_pair_distance(&a) >= 0.008 - 1e-12, "seed {seed}");
        assert!(a
            .mics()
            .iter()
            .all(|m| m[0].hypot(m[1]) <= 0.04 + 1e-12 && m[2] == 0.0));
    }
    assert!(poisson_disc_array(33, 0.04, 0.008, 1).is_err());
}

#[test]
fn beampattern_peaks_at_steer_direction() {
    let arc = direction_grid_2d(181, -FRAC_PI_2, FRAC_PI_2).unwrap();
    let array = poisson1();
    for steer_deg in [-40.0f64, 0.0, 25.0] {
        let s = steer_deg.to_radians();
        let steer = [s.sin(), 0.0, s.cos()];
        let p = beampattern(&array, 50e3, steer, &arc, DEFAULT_SOUND_SPEED).unwrap();
        let best = (0..p.len()).max_by(|&a, &b| p[a].total_cmp(&p[b])).unwrap();
        assert_eq!(best, arc.nearest(steer));
        assert!((p[best] - 1.0).abs() < 1e-9);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn hemisphere_directions_are_unit_and_forward(n in 1usize..1500, cap in 0.2f64..FRAC_PI_2) {
        let g = direction_grid_3d(n, cap).unwrap();
        prop_assert_eq!(g.len(), n);
        for u in g.directions() {
            let norm = (u[0] * u[0] + u[1] * u[1] + u[2] * u[2]).sqrt();
            prop_assert!((norm - 1.0).abs() < 1e-12);
            prop_assert!(u[2] >= cap.cos() - 1e-12);
        }
    }

    #[test]
    fn delays_are_translation_invariant(
        ox in -0.5f64..0.5, oy in -0.5f64..0.5, oz in -0.5f64..0.5, n in 2usize..60,
    ) {
        let array = poisson1();
        let moved = array.translated([ox, oy, oz]);
        let grid = direction_grid_3d(n, FRAC_PI_2).unwrap();
        let fs = 450e3;
        let a = steering_delays(&array, &grid, DEFAULT_SOUND_SPEED, fs).unwrap();
        let b = steering_delays(&moved, &grid, DEFAULT_SOUND_SPEED, fs).unwrap();
        for (d, u) in grid.directions().iter().enumerate() {
            for m in 0..array.n_mics() {
                prop_assert!(a.get(d, m).abs_diff(b.get(d, m)) <= 1);
            }
            let k = (ox * u[0] + oy * u[1] + oz * u[2]) * fs / DEFAULT_SOUND_SPEED;
            prop_assert!((b.reference_shift()[d] - a.reference_shift()[d] - k).abs() < 1e-6);
            prop_assert_eq!(*a.row(d).iter().min().unwrap(), 0);
        }
    }

    #[test]
    fn grid_spans_match_pitch(rows in 1usize..6, cols in 1usize..6, pitch in 0.002f64..0.02) {
        let g = grid_array(rows, cols, pitch).unwrap();
        prop_assert_eq!(g.n_mics(), rows * cols);
        let xs: Vec<f64> = g.mics().iter().map(|m| m[0]).collect();
        let ys: Vec<f64> = g.mics().iter().map(|m| m[1]).collect();
        let span = |v: &[f64]| v.iter().copied().fold(f64::NEG_INFINITY, f64::max) - v.iter().copied().fold(f64::INFINITY, f64::min);
        prop_assert!((span(&xs) - (cols - 1) as f64 * pitch).abs() < 1e-12);
        prop_assert!((span(&ys) - (rows - 1) as f64 * pitch).abs() < 1e-12);
    }
}
