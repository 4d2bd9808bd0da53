//! Phase one of configuration identification: search the knob space for the
//! Pareto frontier of (QoS loss, predicted speedup).
//!
//! Predicted speedup is the MAC ratio against the all-exact baseline. Small
//! knob spaces are enumerated outright; larger ones are explored by a seeded,
//! sensitivity-weighted mutation search over an archive of evaluated
//! configurations.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::config::{Configuration, KnobDomain, KnobSetting, Prediction};
use crate::error::{Error, Result};
use crate::executor::{self, RunOptions};
use crate::graph::NetworkGraph;
use crate::profiler::dominates;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TunerParams {
    /// Percentage points; configurations losing more are discarded.
    pub max_qos_loss: f64,
    pub max_configs: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Knob spaces up to this many configurations are enumerated.
    pub exhaustive_limit: u128,
}

impl Default for TunerParams {
    fn default() -> Self {
        TunerParams {
            max_qos_loss: 3.0,
            max_configs: 20,
            iterations: 400,
            seed: 0,
            exhaustive_limit: 512,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TradeoffPoint {
    pub config: Configuration,
    pub qos_loss: f64,
    pub predicted_speedup: f64,
}

impl TradeoffPoint {
    fn objectives(&self) -> (f64, f64) {
        (self.qos_loss, self.predicted_speedup)
    }
}

/// One knob applied alone, every other layer exact.
#[derive(Clone, Debug, PartialEq)]
pub struct KnobScore {
    pub knob: KnobSetting,
    pub qos_loss: f64,
    pub mac_reduction: u64,
    pub speedup: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sensitivity {
    pub baseline_accuracy: f64,
    pub baseline_macs: u64,
    /// Indexed like the knob domain.
    pub per_layer: Vec<Vec<KnobScore>>,
}

/// Indices into each layer's candidate list.
type Key = Vec<u16>;

struct Evaluator<'a> {
    graph: &'a NetworkGraph,
    domain: &'a KnobDomain,
    inputs: &'a [Tensor],
    labels: &'a [usize],
    baseline_accuracy: f64,
    baseline_macs: u64,
    cache: HashMap<Key, (f64, f64)>,
    order: Vec<Key>,
}

impl<'a> Evaluator<'a> {
    fn new(graph: &'a NetworkGraph, domain: &'a KnobDomain, inputs: &'a [Tensor], labels: &'a [usize]) -> Result<Self> {
        if inputs.is_empty() {
            return Err(Error::Data("tuning needs a non-empty validation set".into()));
        }
        if inputs.len() != labels.len() {
            return Err(Error::Data(format!(
                "{} labels for {} validation inputs",
                labels.len(),
                inputs.len()
            )));
        }
        if domain.layers() != graph.layers().len() {
            return Err(Error::Config("knob domain does not match graph".into()));
        }
        let base = Configuration::baseline(graph);
        let r = executor::run_batch(graph, &base, inputs, Some(labels), &RunOptions::default())?;
        Ok(Evaluator {
            graph,
            domain,
            inputs,
            labels,
            baseline_accuracy: r.accuracy.expect("labelled"),
            baseline_macs: executor::inference_cost(graph, &base)?.macs,
            cache: HashMap::new(),
            order: Vec::new(),
        })
    }

    fn baseline_key(&self) -> Key {
        (0..self.domain.layers())
            .map(|i| {
                self.domain
                    .layer(i)
                    .iter()
                    .position(|k| k.is_exact())
                    .expect("domain holds exact") as u16
            })
            .collect()
    }

    fn knobs(&self, key: &Key) -> Vec<KnobSetting> {
        key.iter()
            .enumerate()
            .map(|(i, &k)| self.domain.layer(i)[k as usize])
            .collect()
    }

    fn config(&self, id: &str, key: &Key) -> Configuration {
        Configuration::from_knobs(id, self.graph, &self.knobs(key))
    }

    /// `(qos_loss, predicted_speedup)`, cached.
    fn eval(&mut self, key: &Key) -> Result<(f64, f64)> {
        if let Some(v) = self.cache.get(key) {
            return Ok(*v);
        }
        let cfg = self.config("candidate", key);
        let v = if cfg.is_baseline() {
            (0.0, 1.0)
        } else {
            let r = executor::run_batch(self.graph, &cfg, self.inputs, Some(self.labels), &RunOptions::default())?;
            let macs = executor::inference_cost(self.graph, &cfg)?.macs;
            (
                100.0 * (self.baseline_accuracy - r.accuracy.expect("labelled")),
                self.baseline_macs as f64 / macs as f64,
            )
        };
        self.cache.insert(key.clone(), v);
        self.order.push(key.clone());
        Ok(v)
    }
}

pub fn sensitivity_pass(
    graph: &NetworkGraph,
    domain: &KnobDomain,
    inputs: &[Tensor],
    labels: &[usize],
) -> Result<Sensitivity> {
    let mut ev = Evaluator::new(graph, domain, inputs, labels)?;
    sensitivity_with(&mut ev)
}

fn sensitivity_with(ev: &mut Evaluator<'_>) -> Result<Sensitivity> {
    let base = ev.baseline_key();
    let mut per_layer = Vec::with_capacity(ev.domain.layers());
    for i in 0..ev.domain.layers() {
        let mut scores = Vec::new();
        for (k, &knob) in ev.domain.layer(i).iter().enumerate() {
            let mut key = base.clone();
            key[i] = k as u16;
            let (qos_loss, speedup) = ev.eval(&key)?;
            let macs = (ev.baseline_macs as f64 / speedup).round() as u64;
            scores.push(KnobScore {
                knob,
                qos_loss,
                mac_reduction: ev.baseline_macs.saturating_sub(macs),
                speedup,
            });
        }
        per_layer.push(scores);
    }
    Ok(Sensitivity {
        baseline_accuracy: ev.baseline_accuracy,
        baseline_macs: ev.baseline_macs,
        per_layer,
    })
}

/// Keeps points no other point dominates, ordered by ascending speedup
/// (ties keep input order).
pub fn pareto_filter(points: &[TradeoffPoint]) -> Vec<TradeoffPoint> {
    let obj: Vec<(f64, f64)> = points.iter().map(TradeoffPoint::objectives).collect();
    pareto_indices(&obj).into_iter().map(|i| points[i].clone()).collect()
}

/// Indices of non-dominated `(loss, speedup)` points, by ascending speedup.
pub fn pareto_indices(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    // Sort by speedup descending, loss ascending; sweep keeping the running
    // minimum loss.
    idx.sort_by(|&a, &b| {
        points[b]
            .1
            .total_cmp(&points[a].1)
            .then(points[a].0.total_cmp(&points[b].0))
            .then(a.cmp(&b))
    });
    let mut keep = Vec::new();
    let mut best_loss = f64::INFINITY;
    let mut i = 0;
    while i < idx.len() {
        // Group of equal speedup.
        let s = points[idx[i]].1;
        let mut j = i;
        while j < idx.len() && points[idx[j]].1 == s {
            j += 1;
        }
        let group_min = points[idx[i]].0;
        if group_min < best_loss {
            for &k in &idx[i..j] {
                if points[k].0 == group_min {
                    keep.push(k);
                }
            }
            best_loss = group_min;
        }
        i = j;
    }
    keep.sort_by(|&a, &b| points[a].1.total_cmp(&points[b].1).then(a.cmp(&b)));
    keep
}

/// Area dominated by `points` (loss minimised, speedup maximised) and
/// bounded by `reference = (worst loss, worst speedup)`.
pub fn hypervolume(points: &[(f64, f64)], reference: (f64, f64)) -> f64 {
    let mut front: Vec<(f64, f64)> = pareto_indices(points)
        .into_iter()
        .map(|i| points[i])
        .filter(|p| p.0 < reference.0 && p.1 > reference.1)
        .collect();
    front.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut area = 0.0;
    let mut prev_speed = reference.1;
    for (loss, speed) in front {
        if speed > prev_speed {
            area += (speed - prev_speed) * (reference.0 - loss);
            prev_speed = speed;
        }
    }
    area
}

pub fn tune(
    graph: &NetworkGraph,
    domain: &KnobDomain,
    inputs: &[Tensor],
    labels: &[usize],
    params: &TunerParams,
) -> Result<Vec<TradeoffPoint>> {
    if params.max_configs == 0 || params.iterations == 0 {
        return Err(Error::Param("max_configs and iterations must be >= 1".into()));
    }
    let mut ev = Evaluator::new(graph, domain, inputs, labels)?;
    let base_key = ev.baseline_key();
    ev.eval(&base_key)?;

    if domain.size() <= params.exhaustive_limit {
        enumerate_all(&mut ev)?;
    } else {
        search(&mut ev, params)?;
    }
    Ok(select_frontier(&ev, &base_key, params))
}

fn enumerate_all(ev: &mut Evaluator<'_>) -> Result<()> {
    let sizes: Vec<usize> = (0..ev.domain.layers()).map(|i| ev.domain.layer(i).len()).collect();
    let mut key: Key = vec![0; sizes.len()];
    loop {
        ev.eval(&key)?;
        let mut i = 0;
        loop {
            if i == sizes.len() {
                return Ok(());
            }
            key[i] += 1;
            if (key[i] as usize) < sizes[i] {
                break;
            }
            key[i] = 0;
            i += 1;
        }
    }
}

fn search(ev: &mut Evaluator<'_>, params: &TunerParams) -> Result<()> {
    let sens = sensitivity_with(ev)?;
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let loss_scale = (params.max_qos_loss / 2.0).max(0.5);

    // Knob weights favour cheap (low loss) and effective (high reduction) knobs.
    let weights: Vec<Vec<f64>> = sens
        .per_layer
        .iter()
        .map(|scores| {
            scores
                .iter()
                .map(|s| {
                    let gain = s.mac_reduction as f64 / sens.baseline_macs.max(1) as f64;
                    let penalty = (-(s.qos_loss.max(0.0)) / loss_scale).exp();
                    (0.05 + gain) * (0.05 + penalty)
                })
                .collect()
        })
        .collect();
    let layer_weights: Vec<f64> = sens
        .per_layer
        .iter()
        .map(|scores| {
            if scores.len() < 2 {
                0.0
            } else {
                0.1 + scores.iter().map(|s| s.mac_reduction).max().unwrap_or(0) as f64
                    / sens.baseline_macs.max(1) as f64
            }
        })
        .collect();
    if layer_weights.iter().all(|&w| w == 0.0) {
        return Ok(());
    }
    let total = ev.domain.size();

    for _ in 0..params.iterations {
        if ev.cache.len() as u128 >= total {
            break;
        }
        let pool: Vec<Key> = {
            let eligible: Vec<&Key> = ev
                .order
                .iter()
                .filter(|k| ev.cache[*k].0 <= params.max_qos_loss)
                .collect();
            let obj: Vec<(f64, f64)> = eligible.iter().map(|k| ev.cache[*k]).collect();
            pareto_indices(&obj).into_iter().map(|i| eligible[i].clone()).collect()
        };
        let mut child = if pool.is_empty() || rng.random_bool(0.2) {
            ev.order[rng.random_range(0..ev.order.len())].clone()
        } else {
            pool[rng.random_range(0..pool.len())].clone()
        };
        let mutations = if rng.random_bool(0.35) { 2 } else { 1 };
        for _ in 0..mutations {
            let layer = weighted_pick(&layer_weights, &mut rng);
            child[layer] = weighted_pick(&weights[layer], &mut rng) as u16;
        }
        ev.eval(&child)?;
    }
    Ok(())
}

fn weighted_pick(weights: &[f64], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().sum();
    let mut x = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        if x < w {
            return i;
        }
        x -= w;
    }
    weights.iter().rposition(|&w| w > 0.0).unwrap_or(0)
}

/// Canonical preference among configurations with identical objectives:
/// fewer approximated layers, then fewer fp16 layers, then domain order.
fn simplicity(ev: &Evaluator<'_>, key: &Key) -> (usize, usize, Key) {
    let knobs = ev.knobs(key);
    (
        knobs.iter().filter(|k| k.is_conv_only()).count(),
        knobs.iter().filter(|k| k.fp16).count(),
        key.clone(),
    )
}

fn select_frontier(ev: &Evaluator<'_>, base_key: &Key, params: &TunerParams) -> Vec<TradeoffPoint> {
    // Deduplicate objectives, keeping the simplest configuration per point.
    let mut by_point: HashMap<(u64, u64), Key> = HashMap::new();
    for key in &ev.order {
        let (l, s) = ev.cache[key];
        if l > params.max_qos_loss {
            continue;
        }
        let slot = by_point.entry((l.to_bits(), s.to_bits())).or_insert_with(|| key.clone());
        if simplicity(ev, key) < simplicity(ev, slot) {
            *slot = key.clone();
        }
    }
    let mut keys: Vec<Key> = by_point.into_values().collect();
    keys.sort();
    let obj: Vec<(f64, f64)> = keys.iter().map(|k| ev.cache[k]).collect();
    let mut front: Vec<Key> = pareto_indices(&obj).into_iter().map(|i| keys[i].clone()).collect();
    front.retain(|k| k != base_key);

    let loss_ref = if params.max_qos_loss.is_finite() {
        params.max_qos_loss
    } else {
        front.iter().map(|k| ev.cache[k].0).fold(0.0, f64::max) + 1.0
    };
    // The baseline anchor takes one slot.
    while front.len() + 1 > params.max_configs && !front.is_empty() {
        let pts: Vec<(f64, f64)> = front.iter().map(|k| ev.cache[k]).collect();
        let full = hypervolume(&pts, (loss_ref, 1.0));
        let mut worst = 0;
        let mut worst_contrib = f64::INFINITY;
        for i in 0..pts.len() {
            let mut rest = pts.clone();
            rest.remove(i);
            let c = full - hypervolume(&rest, (loss_ref, 1.0));
            if c < worst_contrib {
                worst_contrib = c;
                worst = i;
            }
        }
        front.remove(worst);
    }

    let mut out = Vec::with_capacity(front.len() + 1);
    let push = |out: &mut Vec<TradeoffPoint>, id: String, key: &Key| {
        let (qos_loss, speedup) = ev.cache[key];
        let mut config = ev.config(&id, key);
        config.predicted = Some(Prediction {
            accuracy: ev.baseline_accuracy - qos_loss / 100.0,
            qos_loss,
            speedup,
        });
        out.push(TradeoffPoint {
            config,
            qos_loss,
            predicted_speedup: speedup,
        });
    };
    push(&mut out, "baseline".into(), base_key);
    for (n, key) in front.iter().enumerate() {
        push(&mut out, format!("cfg-{:03}", n + 1), key);
    }
    out
}

/// Frontier points other than the anchor must not dominate one another.
pub fn is_mutually_non_dominated(points: &[TradeoffPoint]) -> bool {
    let rest: Vec<(f64, f64)> = points
        .iter()
        .filter(|p| !p.config.is_baseline())
        .map(TradeoffPoint::objectives)
        .collect();
    rest.iter().enumerate().all(|(i, &p)| {
        rest.iter()
            .enumerate()
            .all(|(j, &q)| i == j || !dominates(q, p))
    })
}
