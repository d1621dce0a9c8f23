//! JSON documents read by the command-line tool. Each carries a `schema`
//! tag; unknown keys are rejected so typos surface as errors naming the key.

use std::f64::consts::FRAC_PI_2;
use std::path::Path;

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use crate::array::{direction_grid_2d, direction_grid_3d, DirectionGrid};
use crate::dsp::ProcessingConfig;
use crate::error::{param, Error, Result};
use crate::waveform::WaveformSpec;

pub const PIPELINE_SCHEMA: &str = "ertis.pipeline/1";

/// Look directions, described rather than listed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DirectionsSpec {
    /// Horizontal arc, angles in degrees from boresight.
    Arc {
        count: usize,
        #[serde(default = "minus_ninety")]
        az_min_deg: f64,
        #[serde(default = "ninety")]
        az_max_deg: f64,
    },
    /// Fibonacci hemisphere cap out to `max_polar_deg` from boresight.
    Hemisphere {
        count: usize,
        #[serde(default = "ninety")]
        max_polar_deg: f64,
    },
}

fn ninety() -> f64 {
    90.0
}

fn minus_ninety() -> f64 {
    -90.0
}

impl Default for DirectionsSpec {
    fn default() -> Self {
        DirectionsSpec::Arc {
            count: 90,
            az_min_deg: -90.0,
            az_max_deg: 90.0,
        }
    }
}

impl DirectionsSpec {
    pub fn count(&self) -> usize {
        match *self {
            DirectionsSpec::Arc { count, .. } | DirectionsSpec::Hemisphere { count, .. } => count,
        }
    }

    pub fn with_count(self, n: usize) -> Self {
        match self {
            DirectionsSpec::Arc {
                az_min_deg,
                az_max_deg,
                ..
            } => DirectionsSpec::Arc {
                count: n,
                az_min_deg,
                az_max_deg,
            },
            DirectionsSpec::Hemisphere { max_polar_deg, .. } => DirectionsSpec::Hemisphere {
                count: n,
                max_polar_deg,
            },
        }
    }

    pub fn build(&self) -> Result<DirectionGrid> {
        match *self {
            DirectionsSpec::Arc {
                count,
                az_min_deg,
                az_max_deg,
            } => direction_grid_2d(count, az_min_deg.to_radians(), az_max_deg.to_radians()),
            DirectionsSpec::Hemisphere {
                count,
                max_polar_deg,
            } => {
                let p = max_polar_deg.to_radians();
                if !(p > 0.0 && p <= FRAC_PI_2 + 1e-12) {
                    return Err(param("max_polar_deg must lie in (0, 90]"));
                }
                direction_grid_3d(count, p.min(FRAC_PI_2))
            }
        }
    }
}

fn pipeline_schema() -> String {
    PIPELINE_SCHEMA.into()
}

fn yes() -> bool {
    true
}

fn default_threshold() -> f64 {
    14.0
}

fn default_separation() -> usize {
    32
}

/// Excitation, processing switches and pointcloud extraction settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    #[serde(default = "pipeline_schema")]
    pub schema: String,
    #[serde(default)]
    pub excitation: WaveformSpec,
    #[serde(default = "yes")]
    pub matched_filter_enabled: bool,
    #[serde(default = "yes")]
    pub envelope_enabled: bool,
    #[serde(default)]
    pub directions: DirectionsSpec,
    #[serde(default = "crate_sound_speed")]
    pub sound_speed: f64,
    #[serde(default = "crate_decimation")]
    pub decimation: usize,
    /// Pointcloud threshold, dB below the image maximum. The default sits
    /// between the default chirp's range sidelobes (about -12 dB) and the
    /// Poisson array's broadband spatial sidelobes (about -16 dB).
    #[serde(default = "default_threshold")]
    pub threshold_db: f64,
    /// Pointcloud minimum range separation between peaks, samples; the
    /// default spans the first two envelope sidelobes of the compressed chirp.
    #[serde(default = "default_separation")]
    pub min_separation_samples: usize,
}

fn crate_sound_speed() -> f64 {
    crate::DEFAULT_SOUND_SPEED
}

fn crate_decimation() -> usize {
    crate::DEFAULT_DECIMATION
}

impl Default for PipelineConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields defaulted")
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if self.schema != PIPELINE_SCHEMA {
            return Err(param(format!(
                "pipeline config schema {:?}, expected {PIPELINE_SCHEMA:?}",
                self.schema
            )));
        }
        self.processing()?.validate()
    }

    pub fn processing(&self) -> Result<ProcessingConfig> {
        Ok(ProcessingConfig {
            matched_filter_enabled: self.matched_filter_enabled,
            envelope_enabled: self.envelope_enabled,
            grid: self.directions.build()?,
            sound_speed: self.sound_speed,
            decimation: self.decimation,
        })
    }
}

/// Reads and validates a JSON document; parse errors keep serde's message,
/// which names the offending key.
pub fn load_json<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<T> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::file(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn load_pipeline(path: impl AsRef<Path>) -> Result<PipelineConfig> {
    let cfg: PipelineConfig = load_json(path)?;
    cfg.validate()?;
    Ok(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_and_unknown_keys() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.directions.count(), 90);
        assert_eq!(cfg.processing().unwrap(), ProcessingConfig::default());
        let err = serde_json::from_str::<PipelineConfig>(r#"{"matched_filter":true}"#).unwrap_err();
        assert!(err.to_string().contains("matched_filter"), "{err}");
    }

    #[test]
    fn hemisphere_directions() {
        let cfg: PipelineConfig =
            serde_json::from_str(r#"{"directions":{"kind":"hemisphere","count":1000}}"#).unwrap();
        assert_eq!(cfg.processing().unwrap().grid.len(), 1000);
        assert_eq!(cfg.directions.with_count(12).count(), 12);
    }
}
