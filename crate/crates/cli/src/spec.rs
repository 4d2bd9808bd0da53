//! The `gen-data` input file.

use std::path::Path;

use approxnet_core::dataset::{Dwell, NoiseSchedule, PatternSource, SyntheticSpec};
use serde::Deserialize;

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataSpec {
    pub classes: usize,
    #[serde(default = "default_amplitude")]
    pub amplitude: f32,
    #[serde(default = "default_period")]
    pub period_s: f64,
    pub trace: StreamSpec,
    pub validation: StreamSpec,
    pub test: StreamSpec,
}

#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamSpec {
    pub length: usize,
    #[serde(default)]
    pub dwell: Option<Dwell>,
    /// `[event index, sigma]` knots.
    pub noise: Vec<(f64, f64)>,
}

fn default_amplitude() -> f32 {
    1.0
}

fn default_period() -> f64 {
    1.28
}

impl DataSpec {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        toml::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// Synthetic spec for one stream. Sets without a dwell switch class on
    /// every event.
    pub fn synthetic(&self, stream: &StreamSpec, seed: u64, default_dwell: Dwell) -> SyntheticSpec {
        let mut s = SyntheticSpec::new(self.classes, stream.length, seed);
        s.dwell = stream.dwell.unwrap_or(default_dwell);
        s.noise = NoiseSchedule {
            knots: stream.noise.clone(),
        };
        s.patterns = PatternSource::Sinusoid {
            amplitude: self.amplitude,
        };
        s.period_s = self.period_s;
        s
    }
}
