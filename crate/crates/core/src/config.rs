//! Approximation knobs, configurations and the configuration file.
//!
//! The file is JSON lines: a header line followed by one configuration per
//! line.
//!
//! ```text
//! {"format":"approxnet-configs","version":1,"temperature":1.0}
//! {"id":"baseline","knobs":[["conv1","exact"],["relu1","exact"],...]}
//! {"id":"cfg-001","knobs":[["conv1","perf_row/2/1+fp16"],...],"predicted":{...},"profile":{...}}
//! ```
//!
//! Knob notation: `exact`, `perf_row/<stride>/<offset>`,
//! `perf_col/<stride>/<offset>`, `samp/<stride>/<offset>`, each optionally
//! suffixed with `+fp16`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::graph::NetworkGraph;
use crate::ops::{FilterSampleSpec, PerforationAxis, PerforationSpec};

pub const CONFIG_FORMAT: &str = "approxnet-configs";
pub const CONFIG_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum KnobVariant {
    Exact,
    PerfRow { stride: usize, offset: usize },
    PerfCol { stride: usize, offset: usize },
    FilterSamp { stride: usize, offset: usize },
}

/// One layer's approximation setting.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct KnobSetting {
    pub variant: KnobVariant,
    pub fp16: bool,
}

impl KnobSetting {
    pub const EXACT: KnobSetting = KnobSetting {
        variant: KnobVariant::Exact,
        fp16: false,
    };

    pub fn new(variant: KnobVariant, fp16: bool) -> Self {
        KnobSetting { variant, fp16 }
    }

    pub fn exact_fp16() -> Self {
        KnobSetting::new(KnobVariant::Exact, true)
    }

    pub fn is_exact(&self) -> bool {
        *self == Self::EXACT
    }

    pub fn is_conv_only(&self) -> bool {
        !matches!(self.variant, KnobVariant::Exact)
    }

    pub fn perforation(&self) -> Option<PerforationSpec> {
        let (axis, stride, offset) = match self.variant {
            KnobVariant::PerfRow { stride, offset } => (PerforationAxis::Row, stride, offset),
            KnobVariant::PerfCol { stride, offset } => (PerforationAxis::Column, stride, offset),
            _ => return None,
        };
        Some(PerforationSpec {
            axis,
            stride,
            offset,
        })
    }

    pub fn sampling(&self) -> Option<FilterSampleSpec> {
        match self.variant {
            KnobVariant::FilterSamp { stride, offset } => Some(FilterSampleSpec { stride, offset }),
            _ => None,
        }
    }

    fn check_params(&self) -> std::result::Result<(), String> {
        match self.variant {
            KnobVariant::Exact => Ok(()),
            KnobVariant::PerfRow { stride, .. }
            | KnobVariant::PerfCol { stride, .. }
            | KnobVariant::FilterSamp { stride, .. } => {
                if stride < 2 {
                    Err(format!("knob `{self}` needs stride >= 2"))
                } else {
                    Ok(())
                }
            }
        }
    }
}

impl fmt::Display for KnobSetting {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.variant {
            KnobVariant::Exact => write!(f, "exact")?,
            KnobVariant::PerfRow { stride, offset } => write!(f, "perf_row/{stride}/{offset}")?,
            KnobVariant::PerfCol { stride, offset } => write!(f, "perf_col/{stride}/{offset}")?,
            KnobVariant::FilterSamp { stride, offset } => write!(f, "samp/{stride}/{offset}")?,
        }
        if self.fp16 {
            write!(f, "+fp16")?;
        }
        Ok(())
    }
}

impl FromStr for KnobSetting {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let (body, fp16) = match s.strip_suffix("+fp16") {
            Some(b) => (b, true),
            None => (s, false),
        };
        let mut parts = body.split('/');
        let name = parts.next().unwrap_or_default();
        let mut num = |what: &str| -> std::result::Result<usize, String> {
            parts
                .next()
                .ok_or_else(|| format!("knob `{s}` is missing its {what}"))?
                .parse()
                .map_err(|_| format!("knob `{s}` has a non-integer {what}"))
        };
        let variant = match name {
            "exact" => KnobVariant::Exact,
            "perf_row" => KnobVariant::PerfRow {
                stride: num("stride")?,
                offset: num("offset")?,
            },
            "perf_col" => KnobVariant::PerfCol {
                stride: num("stride")?,
                offset: num("offset")?,
            },
            "samp" => KnobVariant::FilterSamp {
                stride: num("stride")?,
                offset: num("offset")?,
            },
            other => return Err(format!("unknown knob variant `{other}`")),
        };
        if parts.next().is_some() {
            return Err(format!("knob `{s}` has trailing fields"));
        }
        let k = KnobSetting { variant, fp16 };
        k.check_params()?;
        Ok(k)
    }
}

impl Serialize for KnobSetting {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for KnobSetting {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Tuner estimate for a configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub accuracy: f64,
    /// Percentage points below baseline accuracy on the validation set.
    pub qos_loss: f64,
    /// Baseline MACs over configuration MACs.
    pub speedup: f64,
}

/// Measured metrics from the profiling phase.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProfileRecord {
    pub accuracy: f64,
    pub measured_qos_loss: f64,
    pub mean_batch_time_s: f64,
    /// Baseline mean batch time over this configuration's.
    pub measured_speedup: f64,
    /// Configuration MACs over baseline MACs.
    pub cost_ratio: f64,
    pub macs_per_inference: u64,
    pub temperature: f64,
    /// Mean calibrated confidence of correct predictions, per predicted class.
    pub c_plus: Vec<Option<f64>>,
    /// Mean calibrated confidence of incorrect predictions, per predicted class.
    pub c_minus: Vec<Option<f64>>,
    pub n_correct: Vec<u64>,
    pub n_incorrect: Vec<u64>,
    #[serde(default)]
    pub outlier: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Configuration {
    pub id: String,
    pub knobs: Vec<(String, KnobSetting)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predicted: Option<Prediction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileRecord>,
}

impl Configuration {
    pub fn baseline(graph: &NetworkGraph) -> Self {
        Configuration {
            id: "baseline".into(),
            knobs: graph
                .layers()
                .iter()
                .map(|l| (l.name.clone(), KnobSetting::EXACT))
                .collect(),
            predicted: None,
            profile: None,
        }
    }

    pub fn from_knobs(id: impl Into<String>, graph: &NetworkGraph, knobs: &[KnobSetting]) -> Self {
        Configuration {
            id: id.into(),
            knobs: graph
                .layers()
                .iter()
                .zip(knobs)
                .map(|(l, k)| (l.name.clone(), *k))
                .collect(),
            predicted: None,
            profile: None,
        }
    }

    pub fn is_baseline(&self) -> bool {
        self.knobs.iter().all(|(_, k)| k.is_exact())
    }

    pub fn knob(&self, layer: &str) -> Option<KnobSetting> {
        self.knobs.iter().find(|(n, _)| n == layer).map(|(_, k)| *k)
    }

    /// Same knobs, ignoring id and metadata.
    pub fn same_knobs(&self, other: &Configuration) -> bool {
        self.knobs == other.knobs
    }
}

pub fn validate_configuration(graph: &NetworkGraph, config: &Configuration) -> Result<()> {
    let layers = graph.layers();
    let mut seen = vec![false; layers.len()];
    for (name, knob) in &config.knobs {
        let i = graph.layer_index(name).ok_or_else(|| {
            Error::Config(format!("`{}`: unknown layer `{name}`", config.id))
        })?;
        if seen[i] {
            return Err(Error::Config(format!(
                "`{}`: layer `{name}` has more than one knob",
                config.id
            )));
        }
        seen[i] = true;
        knob.check_params()
            .map_err(|e| Error::Config(format!("`{}`: {e}", config.id)))?;
        if knob.is_conv_only() && !layers[i].kind.is_conv() {
            return Err(Error::Config(format!(
                "`{}`: illegal knob `{knob}` on non-convolution layer `{name}`",
                config.id
            )));
        }
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        return Err(Error::Config(format!(
            "`{}`: missing knob for layer `{}`",
            config.id, layers[i].name
        )));
    }
    Ok(())
}

/// Candidate knobs per layer, in graph order.
#[derive(Clone, Debug, PartialEq)]
pub struct KnobDomain {
    per_layer: Vec<Vec<KnobSetting>>,
}

impl KnobDomain {
    /// Exact and exact+fp16 everywhere; convolutions additionally get row and
    /// column perforation and filter sampling with stride 2..=4 and every
    /// offset below the stride, each with and without fp16.
    pub fn default_for(graph: &NetworkGraph) -> Self {
        let per_layer = graph
            .layers()
            .iter()
            .map(|l| {
                let mut v = vec![KnobSetting::EXACT, KnobSetting::exact_fp16()];
                if l.kind.is_conv() {
                    for make in [
                        (|stride, offset| KnobVariant::PerfRow { stride, offset })
                            as fn(usize, usize) -> KnobVariant,
                        |stride, offset| KnobVariant::PerfCol { stride, offset },
                        |stride, offset| KnobVariant::FilterSamp { stride, offset },
                    ] {
                        for stride in 2..=4 {
                            for offset in 0..stride {
                                for fp16 in [false, true] {
                                    v.push(KnobSetting::new(make(stride, offset), fp16));
                                }
                            }
                        }
                    }
                }
                v
            })
            .collect();
        KnobDomain { per_layer }
    }

    /// Only the exact knob on every layer.
    pub fn exact_only(graph: &NetworkGraph) -> Self {
        KnobDomain {
            per_layer: vec![vec![KnobSetting::EXACT]; graph.layers().len()],
        }
    }

    pub fn from_lists(graph: &NetworkGraph, per_layer: Vec<Vec<KnobSetting>>) -> Result<Self> {
        if per_layer.len() != graph.layers().len() {
            return Err(Error::Config(format!(
                "knob domain covers {} layers, graph has {}",
                per_layer.len(),
                graph.layers().len()
            )));
        }
        for (layer, knobs) in graph.layers().iter().zip(&per_layer) {
            if !knobs.contains(&KnobSetting::EXACT) {
                return Err(Error::Config(format!(
                    "knob domain for `{}` lacks the exact knob",
                    layer.name
                )));
            }
            for k in knobs {
                k.check_params().map_err(Error::Config)?;
                if k.is_conv_only() && !layer.kind.is_conv() {
                    return Err(Error::Config(format!(
                        "illegal knob `{k}` in domain of non-convolution layer `{}`",
                        layer.name
                    )));
                }
            }
        }
        Ok(KnobDomain { per_layer })
    }

    /// Replaces one layer's candidates.
    pub fn restrict(mut self, graph: &NetworkGraph, layer: &str, knobs: Vec<KnobSetting>) -> Result<Self> {
        let i = graph
            .layer_index(layer)
            .ok_or_else(|| Error::Config(format!("unknown layer `{layer}`")))?;
        self.per_layer[i] = knobs;
        Self::from_lists(graph, self.per_layer)
    }

    /// Keeps only candidates accepted by `keep` (the exact knob always stays).
    pub fn filter(mut self, keep: impl Fn(&KnobSetting) -> bool) -> Self {
        for knobs in &mut self.per_layer {
            knobs.retain(|k| k.is_exact() || keep(k));
        }
        self
    }

    pub fn layer(&self, i: usize) -> &[KnobSetting] {
        &self.per_layer[i]
    }

    pub fn layers(&self) -> usize {
        self.per_layer.len()
    }

    /// Number of distinct configurations, saturating.
    pub fn size(&self) -> u128 {
        self.per_layer
            .iter()
            .fold(1u128, |a, k| a.saturating_mul(k.len() as u128))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct FileHeader {
    format: String,
    version: u32,
    temperature: f64,
}

/// Parsed configuration file.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigFile {
    pub temperature: f64,
    pub configs: Vec<Configuration>,
}

pub fn serialize_configurations(file: &ConfigFile) -> String {
    let header = FileHeader {
        format: CONFIG_FORMAT.into(),
        version: CONFIG_VERSION,
        temperature: file.temperature,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for c in &file.configs {
        out.push_str(&serde_json::to_string(c).expect("config serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_configurations(text: &str, origin: &str) -> Result<ConfigFile> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l))
        .filter(|(_, l)| !l.trim().is_empty());
    let err = |line, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let (hl, header) = lines.next().ok_or_else(|| err(1, "empty configuration file".into()))?;
    let header: FileHeader =
        serde_json::from_str(header).map_err(|e| err(hl, format!("bad header: {e}")))?;
    if header.format != CONFIG_FORMAT {
        return Err(err(hl, format!("unexpected format `{}`", header.format)));
    }
    if header.version != CONFIG_VERSION {
        return Err(Error::Version {
            found: header.version.to_string(),
            expected: CONFIG_VERSION.to_string(),
        });
    }
    let mut configs = Vec::new();
    for (ln, line) in lines {
        let c: Configuration = serde_json::from_str(line)
            .map_err(|e| err(ln, format!("entry {}: {e}", configs.len() + 1)))?;
        configs.push(c);
    }
    Ok(ConfigFile {
        temperature: header.temperature,
        configs,
    })
}

pub fn write_config_file(file: &ConfigFile, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, serialize_configurations(file)).map_err(|e| Error::io(path, e))
}

pub fn read_config_file(path: impl AsRef<Path>) -> Result<ConfigFile> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_configurations(&text, &path.display().to_string())
}
