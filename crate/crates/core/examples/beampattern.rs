//! Narrowband beampatterns of the regular 6×5 grid and the 32-mic Poisson
//! array, steered 30° off axis at 80 kHz.
//!
//! cargo run --example beampattern [frequency_hz]

use std::f64::consts::FRAC_PI_2;

use ertis::array::{
    beampattern, default_poisson_array, direction_grid_2d, grid_array, max_sidelobe_level,
};
use ertis::DEFAULT_SOUND_SPEED;

fn main() -> ertis::Result<()> {
    let f: f64 = std::env::args()
        .nth(1)
        .and_then(|a| a.parse().ok())
        .unwrap_or(80e3);
    let arc = direction_grid_2d(181, -FRAC_PI_2, FRAC_PI_2)?;
    let steer_az = 30f64.to_radians();
    let steer = [steer_az.sin(), 0.0, steer_az.cos()];
    let peak = arc.nearest(steer);

    let arrays = [
        ("grid 6x5, 9 mm", grid_array(6, 5, 0.009)?),
        ("poisson, 32 mics", default_poisson_array(1)?),
    ];
    for (name, array) in &arrays {
        let p = beampattern(array, f, steer, &arc, DEFAULT_SOUND_SPEED)?;
        let msl = max_sidelobe_level(&p, peak);
        println!(
            "{name}: aperture {:.1} mm, min spacing {:.1} mm, max sidelobe {:.2} ({:.1} dB)",
            array.aperture_diameter() * 1e3,
            array.min_spacing() * 1e3,
            msl,
            20.0 * msl.log10()
        );
        for (i, v) in p.iter().enumerate().step_by(10) {
            let db = (20.0 * v.max(1e-3).log10()).max(-30.0);
            let bar = "#".repeat(((db + 30.0) * 1.5) as usize);
            println!("  {:>4}° {:>6.1} dB {bar}", i as i64 - 90, db);
        }
    }
    Ok(())
}
