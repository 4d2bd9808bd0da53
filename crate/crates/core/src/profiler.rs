//! Measures frontier configurations on a labelled test set: accuracy, time,
//! cost and per-class confidence statistics.

use serde::{Deserialize, Serialize};

use crate::config::{Configuration, ProfileRecord};
use crate::error::{Error, Result};
use crate::executor::{self, Clock, RunOptions};
use crate::graph::NetworkGraph;
use crate::ops;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProfileParams {
    pub batch_size: usize,
    pub temperature: f64,
    pub clock: Clock,
}

impl Default for ProfileParams {
    fn default() -> Self {
        ProfileParams {
            batch_size: 50,
            temperature: 1.0,
            clock: Clock::default(),
        }
    }
}

/// Per predicted class: mean confidence of correct and incorrect predictions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceStats {
    pub c_plus: Vec<Option<f64>>,
    pub c_minus: Vec<Option<f64>>,
    pub n_correct: Vec<u64>,
    pub n_incorrect: Vec<u64>,
}

/// Builds [`ConfidenceStats`] from raw logits, calibrated with `temperature`.
pub fn confidence_stats(
    logits: &[Vec<f32>],
    labels: &[usize],
    classes: usize,
    temperature: f64,
) -> Result<ConfidenceStats> {
    if logits.len() != labels.len() {
        return Err(Error::Data(format!(
            "{} logit rows for {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let mut sum_plus = vec![0.0; classes];
    let mut sum_minus = vec![0.0; classes];
    let mut n_correct = vec![0u64; classes];
    let mut n_incorrect = vec![0u64; classes];
    for (z, &y) in logits.iter().zip(labels) {
        let p = ops::softmax_row(z, temperature)?;
        let pred = ops::argmax(z);
        if pred == y {
            sum_plus[pred] += p[pred];
            n_correct[pred] += 1;
        } else {
            sum_minus[pred] += p[pred];
            n_incorrect[pred] += 1;
        }
    }
    let mean = |s: &[f64], n: &[u64]| -> Vec<Option<f64>> {
        s.iter()
            .zip(n)
            .map(|(&s, &n)| (n > 0).then(|| s / n as f64))
            .collect()
    };
    Ok(ConfidenceStats {
        c_plus: mean(&sum_plus, &n_correct),
        c_minus: mean(&sum_minus, &n_incorrect),
        n_correct,
        n_incorrect,
    })
}

struct Measured {
    accuracy: f64,
    mean_batch_time: f64,
    logits: Vec<Vec<f32>>,
}

fn measure(
    graph: &NetworkGraph,
    config: &Configuration,
    inputs: &[Tensor],
    labels: &[usize],
    params: &ProfileParams,
) -> Result<Measured> {
    let opts = RunOptions {
        temperature: Some(params.temperature),
        clock: params.clock,
    };
    let mut hits = 0usize;
    let mut time = 0.0;
    let mut logits = Vec::with_capacity(inputs.len());
    let batches = inputs.len() / params.batch_size;
    for b in 0..batches {
        let range = b * params.batch_size..(b + 1) * params.batch_size;
        let r = executor::run_batch(graph, config, &inputs[range.clone()], Some(&labels[range.clone()]), &opts)?;
        hits += r
            .results
            .iter()
            .zip(&labels[range])
            .filter(|(r, &y)| r.predicted == y)
            .count();
        time += r.wall_time;
        logits.extend(r.results.into_iter().map(|r| r.logits.into_data()));
    }
    let used = batches * params.batch_size;
    Ok(Measured {
        accuracy: hits as f64 / used as f64,
        mean_batch_time: time / batches as f64,
        logits,
    })
}

/// Profiles every configuration against a baseline measured in the same
/// session. Samples past the last full batch are dropped.
pub fn profile(
    graph: &NetworkGraph,
    configs: &[Configuration],
    inputs: &[Tensor],
    labels: &[usize],
    params: &ProfileParams,
) -> Result<Vec<Configuration>> {
    if labels.len() != inputs.len() {
        return Err(Error::Data(format!(
            "profiling needs a labelled test set: {} labels for {} inputs",
            labels.len(),
            inputs.len()
        )));
    }
    if params.batch_size == 0 {
        return Err(Error::Param("batch size must be >= 1".into()));
    }
    let batches = inputs.len() / params.batch_size;
    if batches == 0 {
        return Err(Error::Data(format!(
            "{} samples do not fill one batch of {}",
            inputs.len(),
            params.batch_size
        )));
    }
    let used = batches * params.batch_size;
    let (inputs, labels) = (&inputs[..used], &labels[..used]);
    for c in configs {
        crate::config::validate_configuration(graph, c)?;
    }

    let baseline_cfg = Configuration::baseline(graph);
    let baseline = measure(graph, &baseline_cfg, inputs, labels, params)?;
    let classes = graph.classes();

    configs
        .iter()
        .map(|c| {
            let m = if c.same_knobs(&baseline_cfg) {
                Measured {
                    accuracy: baseline.accuracy,
                    mean_batch_time: baseline.mean_batch_time,
                    logits: baseline.logits.clone(),
                }
            } else {
                measure(graph, c, inputs, labels, params)?
            };
            let stats = confidence_stats(&m.logits, labels, classes, params.temperature)?;
            let macs = executor::inference_cost(graph, c)?.macs;
            let mut out = c.clone();
            out.profile = Some(ProfileRecord {
                accuracy: m.accuracy,
                measured_qos_loss: 100.0 * (baseline.accuracy - m.accuracy),
                mean_batch_time_s: m.mean_batch_time,
                measured_speedup: baseline.mean_batch_time / m.mean_batch_time,
                cost_ratio: executor::cost_ratio(graph, c)?,
                macs_per_inference: macs,
                temperature: params.temperature,
                c_plus: stats.c_plus,
                c_minus: stats.c_minus,
                n_correct: stats.n_correct,
                n_incorrect: stats.n_incorrect,
                outlier: false,
            });
            Ok(out)
        })
        .collect()
}

/// Recomputes only the confidence statistics at a new temperature.
pub fn restat_confidence(
    graph: &NetworkGraph,
    configs: &mut [Configuration],
    inputs: &[Tensor],
    labels: &[usize],
    batch_size: usize,
    temperature: f64,
) -> Result<()> {
    let used = (inputs.len() / batch_size.max(1)) * batch_size.max(1);
    let (inputs, labels) = (&inputs[..used], &labels[..used]);
    let opts = RunOptions::with_temperature(temperature);
    for c in configs.iter_mut() {
        let r = executor::run_batch(graph, c, inputs, Some(labels), &opts)?;
        let logits: Vec<Vec<f32>> = r.results.into_iter().map(|r| r.logits.into_data()).collect();
        let stats = confidence_stats(&logits, labels, graph.classes(), temperature)?;
        let p = c.profile.as_mut().ok_or_else(|| {
            Error::Config(format!("`{}` has not been profiled", c.id))
        })?;
        p.temperature = temperature;
        p.c_plus = stats.c_plus;
        p.c_minus = stats.c_minus;
        p.n_correct = stats.n_correct;
        p.n_incorrect = stats.n_incorrect;
    }
    Ok(())
}

/// Kendall's tau-b between two score lists. `1.0` when either list is
/// constant throughout.
pub fn kendall_tau(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len().min(b.len());
    let (mut concordant, mut discordant) = (0i64, 0i64);
    let (mut ties_a, mut ties_b) = (0i64, 0i64);
    for i in 0..n {
        for j in i + 1..n {
            let da = a[i].partial_cmp(&a[j]).unwrap_or(std::cmp::Ordering::Equal);
            let db = b[i].partial_cmp(&b[j]).unwrap_or(std::cmp::Ordering::Equal);
            use std::cmp::Ordering::Equal;
            match (da, db) {
                (Equal, Equal) => {}
                (Equal, _) => ties_a += 1,
                (_, Equal) => ties_b += 1,
                _ if da == db => concordant += 1,
                _ => discordant += 1,
            }
        }
    }
    let n0 = (concordant + discordant + ties_a) as f64;
    let n1 = (concordant + discordant + ties_b) as f64;
    if n0 == 0.0 || n1 == 0.0 {
        return 1.0;
    }
    (concordant - discordant) as f64 / (n0 * n1).sqrt()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrderReport {
    /// Tuner speedup order vs measured speedup order.
    pub tau_predicted_vs_measured: f64,
    /// MAC order vs measured speedup order.
    pub tau_cost_vs_measured: f64,
    /// Configurations dominated in measured (QoS loss, speedup) space.
    pub outliers: Vec<String>,
}

pub fn reprofile_order_check(configs: &[Configuration]) -> Result<OrderReport> {
    if configs.len() < 2 {
        return Err(Error::Data(format!(
            "order check needs at least 2 configurations, got {}",
            configs.len()
        )));
    }
    let mut predicted = Vec::new();
    let mut measured = Vec::new();
    let mut cost = Vec::new();
    let mut points = Vec::new();
    for c in configs {
        let (Some(pred), Some(prof)) = (&c.predicted, &c.profile) else {
            return Err(Error::Config(format!(
                "`{}` lacks predicted or measured metrics",
                c.id
            )));
        };
        predicted.push(pred.speedup);
        measured.push(prof.measured_speedup);
        cost.push(1.0 / prof.cost_ratio);
        points.push((prof.measured_qos_loss, prof.measured_speedup));
    }
    let outliers = configs
        .iter()
        .enumerate()
        .filter(|(i, c)| {
            !c.is_baseline()
                && points
                    .iter()
                    .enumerate()
                    .any(|(j, q)| j != *i && dominates(*q, points[*i]))
        })
        .map(|(_, c)| c.id.clone())
        .collect();
    Ok(OrderReport {
        tau_predicted_vs_measured: kendall_tau(&predicted, &measured),
        tau_cost_vs_measured: kendall_tau(&cost, &measured),
        outliers,
    })
}

/// `(loss, speedup)` dominance: no worse in both, better in one.
pub(crate) fn dominates(q: (f64, f64), p: (f64, f64)) -> bool {
    q.0 <= p.0 && q.1 >= p.1 && (q.0 < p.0 || q.1 > p.1)
}

/// Sets the outlier flag on every configuration named in `report`.
pub fn mark_outliers(configs: &mut [Configuration], report: &OrderReport) {
    for c in configs {
        if let Some(p) = c.profile.as_mut() {
            p.outlier = report.outliers.contains(&c.id);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tau_extremes() {
        let a = [1.0, 2.0, 3.0, 4.0];
        assert_eq!(kendall_tau(&a, &a), 1.0);
        assert_eq!(kendall_tau(&a, &[4.0, 3.0, 2.0, 1.0]), -1.0);
    }

    #[test]
    fn confidence_stats_by_predicted_class() {
        // Class 0 always predicted correctly at ~0.9; class 1 predictions are
        // wrong half the time.
        let z0 = vec![(9.0f32).ln(), 0.0];
        let z1 = vec![0.0, 2.0];
        let logits = vec![z0.clone(), z0.clone(), z1.clone(), z1.clone()];
        let labels = vec![0, 0, 1, 0];
        let s = confidence_stats(&logits, &labels, 2, 1.0).unwrap();
        assert!((s.c_plus[0].unwrap() - 0.9).abs() < 1e-6);
        assert_eq!(s.c_minus[0], None);
        let p1 = 1.0 / (1.0 + (-2.0f64).exp());
        assert!((s.c_plus[1].unwrap() - p1).abs() < 1e-12);
        assert!((s.c_minus[1].unwrap() - p1).abs() < 1e-12);
        assert_eq!(s.n_correct, vec![2, 1]);
        assert_eq!(s.n_incorrect, vec![0, 1]);
    }

    #[test]
    fn order_check_needs_two() {
        assert!(reprofile_order_check(&[]).is_err());
    }
}
