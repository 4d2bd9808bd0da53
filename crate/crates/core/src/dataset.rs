//! Synthetic inertial streams, the signal image transform and a
//! matched-filter reference model.
//!
//! A window holds 128 time steps of 9 channels: three feature sets (body
//! acceleration, total acceleration, body rotation) of three axes each,
//! stored time-major (`samples[t * 9 + set * 3 + axis]`).

use std::fs;
use std::io::Write as _;
use std::path::Path;

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine as _;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::archive::TensorSet;
use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::executor;
use crate::graph::{build_graph, GraphManifest, LayerKind, LayerSpec, NetworkGraph};
use crate::ops::{Activation, ConvGeometry, PoolKind, PoolParams};
use crate::tensor::Tensor;

pub const WINDOW_STEPS: usize = 128;
pub const WINDOW_CHANNELS: usize = 9;
pub const WINDOW_LEN: usize = WINDOW_STEPS * WINDOW_CHANNELS;
pub const IMAGE_SIDE: usize = 32;
/// Per-sample model input shape produced by [`signal_image`].
pub const IMAGE_DIMS: [usize; 4] = [1, 3, IMAGE_SIDE, IMAGE_SIDE];

pub const TRACE_FORMAT: &str = "approxnet-trace";
pub const TRACE_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct SignalWindow {
    samples: Vec<f32>,
    pub label: Option<usize>,
}

impl SignalWindow {
    pub fn new(samples: Vec<f32>, label: Option<usize>) -> Result<Self> {
        if samples.len() != WINDOW_LEN {
            return Err(Error::Shape(format!(
                "signal window needs {WINDOW_STEPS}x{WINDOW_CHANNELS} = {WINDOW_LEN} values, got {}",
                samples.len()
            )));
        }
        Ok(SignalWindow { samples, label })
    }

    pub fn from_fn(label: Option<usize>, mut f: impl FnMut(usize, usize) -> f32) -> Self {
        let mut samples = Vec::with_capacity(WINDOW_LEN);
        for t in 0..WINDOW_STEPS {
            for c in 0..WINDOW_CHANNELS {
                samples.push(f(t, c));
            }
        }
        SignalWindow { samples, label }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn at(&self, t: usize, channel: usize) -> f32 {
        self.samples[t * WINDOW_CHANNELS + channel]
    }
}

/// Axis feeding row `r` of an 8-row block: x, y, z, x, y, z, x, y.
pub fn axis_for_row(r: usize) -> usize {
    r % 3
}

/// Source `(feature set, axis, time step)` of image pixel `(channel, row, col)`.
pub fn pixel_source(channel: usize, row: usize, col: usize) -> (usize, usize, usize) {
    let block = row / 8;
    (channel, axis_for_row(row % 8), block * IMAGE_SIDE + col)
}

/// Rearranges a window into a `[1, 3, 32, 32]` image.
///
/// For each feature set the three axis series are repeated to eight rows,
/// giving an 8x128 matrix that is cut into four 8x32 blocks stacked top to
/// bottom. Neighbouring pixels in a row are neighbouring time steps.
pub fn signal_image(w: &SignalWindow) -> Tensor {
    let mut data = Vec::with_capacity(3 * IMAGE_SIDE * IMAGE_SIDE);
    for ch in 0..3 {
        for row in 0..IMAGE_SIDE {
            for col in 0..IMAGE_SIDE {
                let (set, axis, t) = pixel_source(ch, row, col);
                data.push(w.at(t, set * 3 + axis));
            }
        }
    }
    Tensor::new(IMAGE_DIMS.to_vec(), data).expect("fixed shape")
}

/// Piecewise-linear noise level over event index; constant beyond the ends.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSchedule {
    /// `(event index, sigma)` knots with strictly increasing positions.
    pub knots: Vec<(f64, f64)>,
}

impl NoiseSchedule {
    pub fn constant(sigma: f64) -> Self {
        NoiseSchedule {
            knots: vec![(0.0, sigma)],
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.knots.is_empty() {
            return Err(Error::Param("noise schedule has no knots".into()));
        }
        for w in self.knots.windows(2) {
            if !(w[1].0 > w[0].0) {
                return Err(Error::Param("noise schedule positions must increase".into()));
            }
        }
        if self.knots.iter().any(|&(p, s)| !p.is_finite() || !(s >= 0.0) || !s.is_finite()) {
            return Err(Error::Param("noise sigma must be finite and >= 0".into()));
        }
        Ok(())
    }

    pub fn sigma_at(&self, i: usize) -> f64 {
        let x = i as f64;
        let k = &self.knots;
        if x <= k[0].0 {
            return k[0].1;
        }
        for w in k.windows(2) {
            let ((x0, s0), (x1, s1)) = (w[0], w[1]);
            if x <= x1 {
                return s0 + (s1 - s0) * (x - x0) / (x1 - x0);
            }
        }
        k[k.len() - 1].1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Dwell {
    Constant { length: usize },
    /// Segment lengths `1 + Geometric(1 / mean)`, so the mean is `mean`.
    Geometric { mean: f64 },
}

impl Dwell {
    pub fn mean(&self) -> f64 {
        match *self {
            Dwell::Constant { length } => length as f64,
            Dwell::Geometric { mean } => mean,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PatternSource {
    /// Class `k`, channel `c` carries `amplitude * sin(2 pi (2 + k) t / 32 + phase(k, c))`.
    Sinusoid { amplitude: f32 },
    /// One window per class, time-major.
    Explicit { windows: Vec<Vec<f32>> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub length: usize,
    pub seed: u64,
    pub dwell: Dwell,
    pub noise: NoiseSchedule,
    pub patterns: PatternSource,
    /// Seconds between consecutive events.
    #[serde(default = "default_period")]
    pub period_s: f64,
}

fn default_period() -> f64 {
    1.28
}

impl SyntheticSpec {
    pub fn new(classes: usize, length: usize, seed: u64) -> Self {
        SyntheticSpec {
            classes,
            length,
            seed,
            dwell: Dwell::Geometric { mean: 25.0 },
            noise: NoiseSchedule::constant(0.0),
            patterns: PatternSource::Sinusoid { amplitude: 1.0 },
            period_s: default_period(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::Param(format!("need at least 2 classes, got {}", self.classes)));
        }
        if !(self.dwell.mean() >= 1.0) {
            return Err(Error::Param(format!("dwell mean {} must be >= 1", self.dwell.mean())));
        }
        if !(self.period_s > 0.0) {
            return Err(Error::Param("event period must be positive".into()));
        }
        self.noise.validate()?;
        match &self.patterns {
            PatternSource::Sinusoid { amplitude } => {
                if !amplitude.is_finite() {
                    return Err(Error::Param("pattern amplitude must be finite".into()));
                }
                if self.classes > 14 {
                    return Err(Error::Param("sinusoid patterns support at most 14 classes".into()));
                }
            }
            PatternSource::Explicit { windows } => {
                if windows.len() != self.classes {
                    return Err(Error::Param(format!(
                        "{} explicit patterns for {} classes",
                        windows.len(),
                        self.classes
                    )));
                }
                if let Some(w) = windows.iter().find(|w| w.len() != WINDOW_LEN) {
                    return Err(Error::Shape(format!(
                        "explicit pattern has {} values, expected {WINDOW_LEN}",
                        w.len()
                    )));
                }
            }
        }
        Ok(())
    }

    /// The noise-free window of class `k`.
    pub fn class_pattern(&self, k: usize) -> SignalWindow {
        match &self.patterns {
            PatternSource::Sinusoid { amplitude } => {
                let cycles = (2 + k) as f64;
                SignalWindow::from_fn(Some(k), |t, c| {
                    let phase = std::f64::consts::TAU * ((c * (k + 1) * 7) % 9) as f64 / 9.0;
                    let arg = std::f64::consts::TAU * cycles * t as f64 / IMAGE_SIDE as f64 + phase;
                    (*amplitude as f64 * arg.sin()) as f32
                })
            }
            PatternSource::Explicit { windows } => SignalWindow {
                samples: windows[k].clone(),
                label: Some(k),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TraceEvent {
    pub t: f64,
    pub input: Tensor,
    pub label: Option<usize>,
    /// Noise level the event was generated at, if synthetic.
    pub sigma: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceHeader {
    pub format: String,
    pub version: u32,
    pub classes: usize,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub schedule: Option<NoiseSchedule>,
    pub input_dims: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub header: TraceHeader,
    pub events: Vec<TraceEvent>,
}

impl Trace {
    pub fn new(classes: usize, input_dims: Vec<usize>, events: Vec<TraceEvent>) -> Result<Self> {
        let trace = Trace {
            header: TraceHeader {
                format: TRACE_FORMAT.into(),
                version: TRACE_VERSION,
                classes,
                seed: None,
                schedule: None,
                input_dims,
            },
            events,
        };
        trace.validate()?;
        Ok(trace)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, w) in self.events.windows(2).enumerate() {
            if !(w[1].t > w[0].t) {
                return Err(Error::Data(format!(
                    "trace timestamps must increase strictly (event {})",
                    i + 1
                )));
            }
        }
        for (i, e) in self.events.iter().enumerate() {
            if e.input.dims() != self.header.input_dims.as_slice() {
                return Err(Error::Shape(format!(
                    "event {i} input {:?} does not match trace dims {:?}",
                    e.input.dims(),
                    self.header.input_dims
                )));
            }
            if let Some(l) = e.label {
                if l >= self.header.classes {
                    return Err(Error::Data(format!(
                        "event {i} label {l} out of range for {} classes",
                        self.header.classes
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn inputs(&self) -> Vec<Tensor> {
        self.events.iter().map(|e| e.input.clone()).collect()
    }

    /// Labels, if every event has one.
    pub fn labels(&self) -> Option<Vec<usize>> {
        self.events.iter().map(|e| e.label).collect()
    }
}

/// Seeded stream of class-pure segments.
pub fn generate_stream(spec: &SyntheticSpec) -> Result<Trace> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let patterns: Vec<SignalWindow> = (0..spec.classes).map(|k| spec.class_pattern(k)).collect();
    let geometric = match spec.dwell {
        Dwell::Geometric { mean } => Some(Geometric::new(1.0 / mean).map_err(|e| Error::Param(e.to_string()))?),
        Dwell::Constant { .. } => None,
    };
    let draw_dwell = |rng: &mut ChaCha8Rng| -> usize {
        match (spec.dwell, &geometric) {
            (Dwell::Constant { length }, _) => length.max(1),
            (_, Some(g)) => 1 + g.sample(rng) as usize,
            _ => unreachable!(),
        }
    };

    let mut events = Vec::with_capacity(spec.length);
    let mut class = rng.random_range(0..spec.classes);
    let mut left = draw_dwell(&mut rng);
    for i in 0..spec.length {
        if left == 0 {
            let step = rng.random_range(1..spec.classes);
            class = (class + step) % spec.classes;
            left = draw_dwell(&mut rng);
        }
        left -= 1;
        let sigma = spec.noise.sigma_at(i);
        let window = noisy(&patterns[class], sigma, &mut rng);
        events.push(TraceEvent {
            t: i as f64 * spec.period_s,
            input: signal_image(&window),
            label: Some(class),
            sigma: Some(sigma),
        });
    }
    Ok(Trace {
        header: TraceHeader {
            format: TRACE_FORMAT.into(),
            version: TRACE_VERSION,
            classes: spec.classes,
            seed: Some(spec.seed),
            schedule: Some(spec.noise.clone()),
            input_dims: IMAGE_DIMS.to_vec(),
        },
        events,
    })
}

/// Lengths of maximal constant-label runs.
pub fn segment_lengths(labels: &[usize]) -> Vec<usize> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < labels.len() {
        let mut j = i + 1;
        while j < labels.len() && labels[j] == labels[i] {
            j += 1;
        }
        out.push(j - i);
        i = j;
    }
    out
}

#[derive(Serialize, Deserialize)]
struct EventRecord {
    t: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    label: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sigma: Option<f64>,
    /// Little-endian f32 values, base64.
    input: String,
}

fn encode_f32(data: &[f32]) -> String {
    let bytes: Vec<u8> = data.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f32(s: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = B64.decode(s).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32 values", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// JSON lines: a header, then one record per event.
pub fn serialize_trace(trace: &Trace) -> String {
    let mut out = serde_json::to_string(&trace.header).expect("header serializes");
    out.push('\n');
    for e in &trace.events {
        let rec = EventRecord {
            t: e.t,
            label: e.label,
            sigma: e.sigma,
            input: encode_f32(e.input.data()),
        };
        out.push_str(&serde_json::to_string(&rec).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn parse_trace(text: &str, origin: &str) -> Result<Trace> {
    let perr = |line: usize, reason: String| Error::Parse {
        path: origin.to_string(),
        line,
        reason,
    };
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (hl, header_line) = lines.next().ok_or_else(|| perr(1, "empty trace file".into()))?;
    let header: TraceHeader = serde_json::from_str(header_line).map_err(|e| perr(hl + 1, e.to_string()))?;
    if header.format != TRACE_FORMAT {
        return Err(perr(hl + 1, format!("not a trace file (format `{}`)", header.format)));
    }
    if header.version != TRACE_VERSION {
        return Err(Error::Version {
            found: header.version.to_string(),
            expected: TRACE_VERSION.to_string(),
        });
    }
    let mut events = Vec::new();
    for (n, line) in lines {
        let rec: EventRecord = serde_json::from_str(line).map_err(|e| perr(n + 1, e.to_string()))?;
        let data = decode_f32(&rec.input).map_err(|e| perr(n + 1, e))?;
        let input = Tensor::new(header.input_dims.clone(), data).map_err(|e| perr(n + 1, e.to_string()))?;
        events.push(TraceEvent {
            t: rec.t,
            input,
            label: rec.label,
            sigma: rec.sigma,
        });
    }
    let trace = Trace { header, events };
    trace.validate().map_err(|e| perr(0, e.to_string()))?;
    Ok(trace)
}

pub fn write_trace(trace: &Trace, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(serialize_trace(trace).as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: impl AsRef<Path>) -> Result<Trace> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, &path.display().to_string())
}

/// Reads windows from CSV, one per row: an optional `label` column followed
/// by 1152 values in time-major order. A header row is required.
pub fn read_windows_csv(path: impl AsRef<Path>) -> Result<Vec<SignalWindow>> {
    let path = path.as_ref();
    let origin = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| Error::Parse {
            path: origin.clone(),
            line: 1,
            reason: e.to_string(),
        })?;
    let has_label = rdr
        .headers()
        .map_err(|e| Error::Parse {
            path: origin.clone(),
            line: 1,
            reason: e.to_string(),
        })?
        .get(0)
        .is_some_and(|h| h.trim() == "label");
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let perr = |reason: String| Error::Parse {
            path: origin.clone(),
            line,
            reason,
        };
        let rec = rec.map_err(|e| perr(e.to_string()))?;
        let mut fields = rec.iter();
        let label = if has_label {
            let s = fields.next().unwrap_or("").trim();
            if s.is_empty() {
                None
            } else {
                Some(s.parse::<usize>().map_err(|e| perr(format!("label `{s}`: {e}")))?)
            }
        } else {
            None
        };
        let samples = fields
            .map(|f| f.trim().parse::<f32>().map_err(|e| perr(format!("value `{f}`: {e}"))))
            .collect::<Result<Vec<f32>>>()?;
        out.push(SignalWindow::new(samples, label).map_err(|e| perr(e.to_string()))?);
    }
    Ok(out)
}

/// Builds a trace from windows, one event every `period_s` seconds.
pub fn trace_from_windows(windows: &[SignalWindow], classes: usize, period_s: f64) -> Result<Trace> {
    let events = windows
        .iter()
        .enumerate()
        .map(|(i, w)| TraceEvent {
            t: i as f64 * period_s,
            input: signal_image(w),
            label: w.label,
            sigma: None,
        })
        .collect();
    Trace::new(classes, IMAGE_DIMS.to_vec(), events)
}

const FILTER_H: usize = 5;
const FILTER_W: usize = 5;
/// Clean logit margin between a class and its nearest rival.
const TARGET_MARGIN: f64 = 4.0;

fn noisy(w: &SignalWindow, sigma: f64, rng: &mut ChaCha8Rng) -> SignalWindow {
    let samples = w
        .samples()
        .iter()
        .map(|&v| {
            let n: f64 = StandardNormal.sample(rng);
            (v as f64 + sigma * n) as f32
        })
        .collect();
    SignalWindow {
        samples,
        label: w.label,
    }
}

fn layer(name: &str, kind: LayerKind) -> LayerSpec {
    LayerSpec::new(name, kind)
}

fn manifest() -> GraphManifest {
    GraphManifest::new(
        IMAGE_DIMS.to_vec(),
        vec![
            layer(
                "conv1",
                LayerKind::Conv2d {
                    geometry: ConvGeometry::default(),
                    weight: "conv1.weight".into(),
                    bias: None,
                },
            ),
            layer(
                "relu1",
                LayerKind::Activation {
                    activation: Activation::Relu,
                },
            ),
            layer(
                "conv2",
                LayerKind::Conv2d {
                    geometry: ConvGeometry::new(1, 1, 1, 1),
                    weight: "conv2.weight".into(),
                    bias: None,
                },
            ),
            layer(
                "relu2",
                LayerKind::Activation {
                    activation: Activation::Relu,
                },
            ),
            layer(
                "pool2",
                LayerKind::Pool {
                    params: PoolParams::square(PoolKind::Average, 28, 28),
                },
            ),
            layer("flatten", LayerKind::Flatten),
            layer(
                "fc",
                LayerKind::Dense {
                    weight: "fc.weight".into(),
                    bias: Some("fc.bias".into()),
                },
            ),
            layer("softmax", LayerKind::Softmax),
        ],
    )
}

/// Builds a CNN whose first convolution holds one matched filter per class,
/// followed by a smoothing convolution, global average pooling and a
/// nearest-centroid dense layer fitted to the clean class patterns.
pub fn build_matched_filter_model(spec: &SyntheticSpec) -> Result<(GraphManifest, TensorSet)> {
    spec.validate()?;
    let k = spec.classes;
    let images: Vec<Tensor> = (0..k).map(|c| signal_image(&spec.class_pattern(c))).collect();

    // conv1: the top-left 3x5x5 patch of each class image, unit norm.
    let mut w1 = Vec::with_capacity(k * 3 * FILTER_H * FILTER_W);
    for img in &images {
        let mut patch = Vec::with_capacity(3 * FILTER_H * FILTER_W);
        for ch in 0..3 {
            for r in 0..FILTER_H {
                for c in 0..FILTER_W {
                    patch.push(img.data()[(ch * IMAGE_SIDE + r) * IMAGE_SIDE + c]);
                }
            }
        }
        let norm = patch.iter().map(|v| v * v).sum::<f32>().sqrt();
        if norm > 0.0 {
            patch.iter_mut().for_each(|v| *v /= norm);
        }
        w1.extend(patch);
    }
    // conv2: 3x3 box filter per channel, no cross-channel mixing.
    let w2 = Tensor::from_fn(&[k, k, 3, 3], |i| {
        let (o, c) = (i / (k * 9), (i / 9) % k);
        if o == c {
            1.0 / 9.0
        } else {
            0.0
        }
    });

    let mut weights = TensorSet::new();
    weights.insert("conv1.weight".into(), Tensor::new(vec![k, 3, FILTER_H, FILTER_W], w1)?);
    weights.insert("conv2.weight".into(), w2);
    weights.insert(
        "fc.weight".into(),
        Tensor::from_fn(&[k, k], |i| if i / k == i % k { 1.0 } else { 0.0 }),
    );
    weights.insert("fc.bias".into(), Tensor::zeros(&[k]));

    // With an identity dense layer the logits are the pooled features.
    let probe = build_graph(manifest(), weights.clone())?;
    let base = Configuration::baseline(&probe);
    let mut features: Vec<Vec<f64>> = images
        .iter()
        .map(|img| {
            executor::run_inference(&probe, &base, img)
                .map(|r| r.logits.data().iter().map(|&v| v as f64).collect())
        })
        .collect::<Result<_>>()?;

    // Centred centroids make the classifier blind to offsets shared by all
    // features, such as the rectified noise floor.
    for f in features.iter_mut() {
        let mean = f.iter().sum::<f64>() / k as f64;
        f.iter_mut().for_each(|v| *v -= mean);
    }
    let mut min_gap = f64::INFINITY;
    for a in 0..k {
        for b in a + 1..k {
            let d2: f64 = features[a].iter().zip(&features[b]).map(|(x, y)| (x - y) * (x - y)).sum();
            if d2 > 0.0 {
                min_gap = min_gap.min(0.5 * d2);
            }
        }
    }
    let gain = if min_gap.is_finite() { TARGET_MARGIN / min_gap } else { 1.0 };
    let fc_w: Vec<f32> = features.iter().flat_map(|f| f.iter().map(|&v| (gain * v) as f32)).collect();
    let fc_b: Vec<f32> = features
        .iter()
        .map(|f| (-0.5 * gain * f.iter().map(|v| v * v).sum::<f64>()) as f32)
        .collect();
    weights.insert("fc.weight".into(), Tensor::new(vec![k, k], fc_w)?);
    weights.insert("fc.bias".into(), Tensor::new(vec![k], fc_b)?);
    Ok((manifest(), weights))
}

pub fn matched_filter_graph(spec: &SyntheticSpec) -> Result<NetworkGraph> {
    let (m, w) = build_matched_filter_model(spec)?;
    build_graph(m, w)
}
