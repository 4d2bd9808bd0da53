//! Runs a network under a configuration.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, KnobSetting};
use crate::error::{Error, Result};
use crate::graph::{LayerKind, NetworkGraph};
use crate::ops::{self, BatchNormParams, CostCounter};
use crate::tensor::{at_precision, tensor_quantize, PrecisionMode, Tensor};

/// Source of the time figures attached to results.
///
/// `Virtual` derives time from the cost counter, so every report built on it
/// is reproducible bit for bit. `Wall` uses the monotonic clock.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Clock {
    Wall,
    Virtual { ns_per_mac: f64, ns_per_elem: f64 },
}

impl Default for Clock {
    fn default() -> Self {
        Clock::Virtual {
            ns_per_mac: 1.0,
            ns_per_elem: 1.0,
        }
    }
}

impl Clock {
    fn measure<T>(&self, f: impl FnOnce() -> Result<(T, CostCounter)>) -> Result<(T, CostCounter, f64)> {
        match *self {
            Clock::Wall => {
                let start = Instant::now();
                let (v, c) = f()?;
                Ok((v, c, start.elapsed().as_secs_f64()))
            }
            Clock::Virtual {
                ns_per_mac,
                ns_per_elem,
            } => {
                let (v, c) = f()?;
                let t = (c.macs as f64 * ns_per_mac + c.elems as f64 * ns_per_elem) * 1e-9;
                Ok((v, c, t))
            }
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
#[derive(Default)]
pub struct RunOptions {
    /// Overrides the configuration's profiled temperature.
    pub temperature: Option<f64>,
    pub clock: Clock,
}


impl RunOptions {
    pub fn with_temperature(t: f64) -> Self {
        RunOptions {
            temperature: Some(t),
            ..Self::default()
        }
    }

    fn temperature_for(&self, config: &Configuration) -> f64 {
        self.temperature
            .or_else(|| config.profile.as_ref().map(|p| p.temperature))
            .unwrap_or(1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceResult {
    /// `[1, classes]`
    pub logits: Tensor,
    /// Temperature-scaled softmax of `logits`.
    pub probs: Tensor,
    pub predicted: usize,
    pub top_confidence: f32,
    pub wall_time: f64,
    pub cost: CostCounter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BatchResult {
    pub results: Vec<InferenceResult>,
    pub accuracy: Option<f64>,
    pub cost: CostCounter,
    pub wall_time: f64,
}

impl BatchResult {
    pub fn predictions(&self) -> Vec<usize> {
        self.results.iter().map(|r| r.predicted).collect()
    }
}

pub fn run_inference(graph: &NetworkGraph, config: &Configuration, input: &Tensor) -> Result<InferenceResult> {
    run_inference_with(graph, config, input, &RunOptions::default())
}

pub fn run_inference_with(
    graph: &NetworkGraph,
    config: &Configuration,
    input: &Tensor,
    opts: &RunOptions,
) -> Result<InferenceResult> {
    let knobs = resolve_knobs(graph, config)?;
    if input.dims() != graph.input_dims() {
        return Err(Error::Shape(format!(
            "input {:?} does not match graph input {:?}",
            input.dims(),
            graph.input_dims()
        )));
    }
    let temperature = opts.temperature_for(config);
    let (logits, cost, wall_time) = opts.clock.measure(|| {
        let mut counter = CostCounter::new();
        let logits = forward(graph, &knobs, input, &mut counter)?;
        Ok((logits, counter))
    })?;
    finish(logits, temperature, cost, wall_time)
}

fn finish(logits: Tensor, temperature: f64, mut cost: CostCounter, wall_time: f64) -> Result<InferenceResult> {
    let probs = ops::softmax_t(&logits, temperature, &mut cost)?;
    let predicted = ops::argmax(logits.data());
    let top_confidence = probs.data()[predicted];
    Ok(InferenceResult {
        logits,
        probs,
        predicted,
        top_confidence,
        wall_time,
        cost,
    })
}

pub fn run_batch(
    graph: &NetworkGraph,
    config: &Configuration,
    inputs: &[Tensor],
    labels: Option<&[usize]>,
    opts: &RunOptions,
) -> Result<BatchResult> {
    let knobs = resolve_knobs(graph, config)?;
    if let Some(l) = labels {
        if !l.is_empty() && l.len() != inputs.len() {
            return Err(Error::Data(format!(
                "{} labels for {} inputs",
                l.len(),
                inputs.len()
            )));
        }
    }
    let temperature = opts.temperature_for(config);
    let (results, cost, wall_time) = opts.clock.measure(|| {
        let mut results = Vec::with_capacity(inputs.len());
        let mut total = CostCounter::new();
        for x in inputs {
            if x.dims() != graph.input_dims() {
                return Err(Error::Shape(format!(
                    "input {:?} does not match graph input {:?}",
                    x.dims(),
                    graph.input_dims()
                )));
            }
            let (logits, cost, t) = opts.clock.measure(|| {
                let mut counter = CostCounter::new();
                let logits = forward(graph, &knobs, x, &mut counter)?;
                Ok((logits, counter))
            })?;
            let r = finish(logits, temperature, cost, t)?;
            total += r.cost;
            results.push(r);
        }
        Ok((results, total))
    })?;
    let accuracy = labels.filter(|l| !l.is_empty()).map(|l| {
        let hits = results.iter().zip(l).filter(|(r, &y)| r.predicted == y).count();
        hits as f64 / l.len() as f64
    });
    Ok(BatchResult {
        results,
        accuracy,
        cost,
        wall_time,
    })
}

/// MACs of one inference under `config`; shapes are static so every input
/// costs the same.
pub fn inference_cost(graph: &NetworkGraph, config: &Configuration) -> Result<CostCounter> {
    let knobs = resolve_knobs(graph, config)?;
    let mut counter = CostCounter::new();
    let logits = forward(graph, &knobs, &Tensor::zeros(graph.input_dims()), &mut counter)?;
    let _ = ops::softmax_t(&logits, 1.0, &mut counter)?;
    Ok(counter)
}

/// `config` MACs over baseline MACs for one inference.
pub fn cost_ratio(graph: &NetworkGraph, config: &Configuration) -> Result<f64> {
    let base = inference_cost(graph, &Configuration::baseline(graph))?.macs;
    let this = inference_cost(graph, config)?.macs;
    Ok(this as f64 / base as f64)
}

/// Knobs in layer order, validated against the graph.
fn resolve_knobs(graph: &NetworkGraph, config: &Configuration) -> Result<Vec<KnobSetting>> {
    crate::config::validate_configuration(graph, config)?;
    Ok(graph
        .layers()
        .iter()
        .map(|l| config.knob(&l.name).expect("validated"))
        .collect())
}

fn forward(graph: &NetworkGraph, knobs: &[KnobSetting], input: &Tensor, counter: &mut CostCounter) -> Result<Tensor> {
    let mut saved: Vec<Option<Tensor>> = vec![None; graph.layers().len()];
    let mut x = input.clone();
    for (i, layer) in graph.layers().iter().enumerate() {
        x = run_layer(graph, &layer.kind, knobs[i], &x, &saved, counter).map_err(|e| e.in_layer(&layer.name))?;
        if graph.is_retained(i) {
            saved[i] = Some(x.clone());
        }
    }
    let classes = graph.classes();
    x.reshape(vec![1, classes])
}

fn run_layer(
    graph: &NetworkGraph,
    kind: &LayerKind,
    knob: KnobSetting,
    input: &Tensor,
    saved: &[Option<Tensor>],
    counter: &mut CostCounter,
) -> Result<Tensor> {
    let mode = if knob.fp16 {
        PrecisionMode::Fp16
    } else {
        PrecisionMode::Fp32
    };
    let q = |t: &Tensor| at_precision(t, mode).into_owned();
    let x = at_precision(input, mode);
    let out = match kind {
        LayerKind::Conv2d {
            geometry,
            weight,
            bias,
        } => {
            let w = at_precision(graph.weight(weight), mode);
            let b = bias.as_ref().map(|b| q(graph.weight(b)));
            if let Some(p) = knob.perforation() {
                ops::conv2d_perforated(&x, &w, b.as_ref(), geometry, &p, counter)?
            } else if let Some(s) = knob.sampling() {
                ops::conv2d_filter_sampled(&x, &w, b.as_ref(), geometry, &s, counter)?
            } else {
                ops::conv2d_exact(&x, &w, b.as_ref(), geometry, counter)?
            }
        }
        LayerKind::Dense { weight, bias } => {
            let w = at_precision(graph.weight(weight), mode);
            let b = bias.as_ref().map(|b| q(graph.weight(b)));
            ops::dense(&x, &w, b.as_ref(), counter)?
        }
        LayerKind::BatchNorm {
            gamma,
            beta,
            mean,
            var,
            eps,
        } => {
            let (g, b, m, v) = (
                q(graph.weight(gamma)),
                q(graph.weight(beta)),
                q(graph.weight(mean)),
                q(graph.weight(var)),
            );
            let p = BatchNormParams {
                gamma: &g,
                beta: &b,
                mean: &m,
                var: &v,
                eps: *eps,
            };
            ops::batch_norm(&x, &p, counter)?
        }
        LayerKind::Pool { params } => ops::pool(&x, params, counter)?,
        LayerKind::Activation { activation } => ops::activation(&x, *activation, counter)?,
        LayerKind::Add { with } => {
            let j = graph.layer_index(with).expect("checked at build");
            let other = saved[j].as_ref().expect("retained at build");
            ops::elementwise_add(&x, &at_precision(other, mode), counter)?
        }
        LayerKind::Softmax => x.into_owned(),
        LayerKind::Flatten => {
            let n = x.dims()[0];
            let f = x.len() / n;
            x.into_owned().reshape(vec![n, f])?
        }
    };
    Ok(match mode {
        PrecisionMode::Fp32 => out,
        PrecisionMode::Fp16 => tensor_quantize(&out),
    })
}
