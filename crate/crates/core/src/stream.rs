//! Trace-driven evaluation of adaptive runs against the always-exact model,
//! with report, timeline CSV, summary table and SVG plot outputs.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::adapt::{self, ConfigurationLadder, StrategySpec};
use crate::dataset::Trace;
use crate::error::{Error, Result};
use crate::executor::{self, RunOptions};
use crate::graph::NetworkGraph;

pub const REPORT_FORMAT: &str = "approxnet-report";
pub const REPORT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimelineRow {
    pub t: f64,
    pub rung: usize,
    pub adaptive_pred: usize,
    pub baseline_pred: usize,
    pub label: Option<usize>,
    pub confidence: f64,
    pub macs: u64,
    pub baseline_macs: u64,
    pub cumulative_relative_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StreamReport {
    pub format: String,
    pub version: u32,
    pub trace_id: String,
    pub strategy: String,
    pub rungs: usize,
    pub events: usize,
    pub accuracy: Option<f64>,
    pub baseline_accuracy: Option<f64>,
    pub agreement_with_baseline: f64,
    pub relative_cost: f64,
    pub relative_wall_time: f64,
    pub adaptive_macs: u64,
    pub baseline_macs: u64,
    pub timeline: Vec<TimelineRow>,
}

impl StreamReport {
    pub fn accuracy_drop_pp(&self) -> Option<f64> {
        Some(100.0 * (self.baseline_accuracy? - self.accuracy?))
    }

    /// Share of events spent on each rung.
    pub fn rung_occupancy(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.rungs];
        for r in &self.timeline {
            counts[r.rung] += 1;
        }
        counts.iter().map(|&c| c as f64 / self.events.max(1) as f64).collect()
    }
}

/// Runs the adaptive loop and an always-baseline pass over the same trace.
pub fn run_adaptive(
    graph: &NetworkGraph,
    ladder: &ConfigurationLadder,
    strategy: &StrategySpec,
    trace: &Trace,
    trace_id: &str,
    opts: &RunOptions,
) -> Result<StreamReport> {
    if trace.events.is_empty() {
        return Err(Error::Data("trace has no events".into()));
    }
    let inputs: Vec<_> = trace.events.iter().map(|e| &e.input).collect();
    let mut strat = strategy.build(ladder)?;
    let steps = adapt::adapt_loop(graph, ladder, strat.as_mut(), strategy.mode(), inputs.iter().copied(), opts)
        .map_err(|a| a.error)?;

    let baseline = ladder.rung(0);
    let mut timeline = Vec::with_capacity(steps.len());
    let (mut adaptive_macs, mut baseline_macs) = (0u64, 0u64);
    let (mut adaptive_time, mut baseline_time) = (0.0, 0.0);
    let (mut agree, mut hits, mut base_hits, mut labelled) = (0usize, 0usize, 0usize, 0usize);
    for (e, s) in trace.events.iter().zip(&steps) {
        let b = executor::run_inference_with(graph, baseline, &e.input, opts)?;
        adaptive_macs += s.macs;
        baseline_macs += b.cost.macs;
        adaptive_time += s.wall_time;
        baseline_time += b.wall_time;
        agree += usize::from(s.predicted == b.predicted);
        if let Some(l) = e.label {
            labelled += 1;
            hits += usize::from(s.predicted == l);
            base_hits += usize::from(b.predicted == l);
        }
        timeline.push(TimelineRow {
            t: e.t,
            rung: s.rung,
            adaptive_pred: s.predicted,
            baseline_pred: b.predicted,
            label: e.label,
            confidence: s.confidence,
            macs: s.macs,
            baseline_macs: b.cost.macs,
            cumulative_relative_cost: adaptive_macs as f64 / baseline_macs as f64,
        });
    }
    let n = steps.len();
    let all_labelled = labelled == n;
    Ok(StreamReport {
        format: REPORT_FORMAT.into(),
        version: REPORT_VERSION,
        trace_id: trace_id.into(),
        strategy: strategy.to_string(),
        rungs: ladder.len(),
        events: n,
        accuracy: all_labelled.then(|| hits as f64 / n as f64),
        baseline_accuracy: all_labelled.then(|| base_hits as f64 / n as f64),
        agreement_with_baseline: agree as f64 / n as f64,
        relative_cost: adaptive_macs as f64 / baseline_macs as f64,
        relative_wall_time: if baseline_time > 0.0 { adaptive_time / baseline_time } else { 1.0 },
        adaptive_macs,
        baseline_macs,
        timeline,
    })
}

pub fn write_report(report: &StreamReport, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = serde_json::to_string_pretty(report).expect("report serializes");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_report(path: impl AsRef<Path>) -> Result<StreamReport> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let perr = |line: usize, reason: String| Error::Parse {
        path: path.display().to_string(),
        line,
        reason,
    };
    let r: StreamReport = serde_json::from_str(&text).map_err(|e| perr(e.line(), e.to_string()))?;
    if r.format != REPORT_FORMAT {
        return Err(perr(1, format!("not a report file (format `{}`)", r.format)));
    }
    if r.version != REPORT_VERSION {
        return Err(Error::Version {
            found: r.version.to_string(),
            expected: REPORT_VERSION.to_string(),
        });
    }
    if r.timeline.len() != r.events || r.timeline.iter().any(|row| row.rung >= r.rungs) {
        return Err(perr(0, "timeline does not match the report header".into()));
    }
    Ok(r)
}

pub fn timeline_csv(rows: &[TimelineRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf-8")
}

pub fn parse_timeline_csv(text: &str, origin: &str) -> Result<Vec<TimelineRow>> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    rdr.deserialize()
        .enumerate()
        .map(|(i, r)| {
            r.map_err(|e| Error::Parse {
                path: origin.into(),
                line: i + 2,
                reason: e.to_string(),
            })
        })
        .collect()
}

fn opt_pct(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |v| format!("{:.2}", 100.0 * v))
}

/// One row per report: accuracy, agreement and relative cost.
pub fn summary_table(reports: &[StreamReport]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<28} {:>6} {:>6} {:>9} {:>8} {:>9} {:>9} {:>9}",
        "trace", "strategy", "events", "rungs", "acc %", "base %", "agree %", "rel cost", "rel time"
    );
    for r in reports {
        let _ = writeln!(
            out,
            "{:<16} {:<28} {:>6} {:>6} {:>9} {:>8} {:>9.2} {:>9.4} {:>9.4}",
            r.trace_id,
            r.strategy,
            r.events,
            r.rungs,
            opt_pct(r.accuracy),
            opt_pct(r.baseline_accuracy),
            100.0 * r.agreement_with_baseline,
            r.relative_cost,
            r.relative_wall_time
        );
    }
    out
}

/// Static plot: rung over time, mismatches with the baseline, and the
/// cumulative saving.
pub fn plot_svg(report: &StreamReport) -> String {
    const W: f64 = 900.0;
    const PANEL: f64 = 140.0;
    const LEFT: f64 = 60.0;
    const TOP: f64 = 30.0;
    let n = report.timeline.len().max(1);
    let plot_w = W - LEFT - 20.0;
    let x = |i: usize| LEFT + plot_w * i as f64 / n as f64;
    let height = TOP + 3.0 * (PANEL + 30.0);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="18">{} / {}: agreement {:.3}, relative cost {:.3}</text>"#,
        report.trace_id, report.strategy, report.agreement_with_baseline, report.relative_cost
    );
    let panel_top = |p: usize| TOP + p as f64 * (PANEL + 30.0);
    for (p, title) in ["rung", "mismatch", "saving"].iter().enumerate() {
        let y0 = panel_top(p);
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{y0}" width="{plot_w}" height="{PANEL}" fill="none" stroke="gray"/>"#
        );
        let _ = writeln!(s, r#"<text x="4" y="{:.1}">{title}</text>"#, y0 + PANEL / 2.0);
    }

    let top_rung = report.rungs.saturating_sub(1).max(1) as f64;
    let mut path = String::new();
    for (i, r) in report.timeline.iter().enumerate() {
        let y = panel_top(0) + PANEL - PANEL * r.rung as f64 / top_rung;
        if i == 0 {
            let _ = write!(path, "M{:.1} {y:.1} ", x(0));
        } else {
            let _ = write!(path, "V{y:.1} ");
        }
        let _ = write!(path, "H{:.1} ", x(i + 1));
    }
    let _ = writeln!(s, r#"<path d="{}" fill="none" stroke="steelblue"/>"#, path.trim_end());

    for (i, r) in report.timeline.iter().enumerate() {
        if r.adaptive_pred != r.baseline_pred {
            let y0 = panel_top(1);
            let _ = writeln!(
                s,
                r#"<line x1="{0:.1}" y1="{1:.1}" x2="{0:.1}" y2="{2:.1}" stroke="crimson"/>"#,
                x(i),
                y0 + 10.0,
                y0 + PANEL - 10.0
            );
        }
    }

    let mut pts = String::new();
    for (i, r) in report.timeline.iter().enumerate() {
        let saving = (1.0 - r.cumulative_relative_cost).clamp(0.0, 1.0);
        let y = panel_top(2) + PANEL - PANEL * saving;
        let _ = write!(pts, "{:.1},{:.1} ", x(i + 1), y);
    }
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="seagreen"/>"#, pts.trim_end());
    s.push_str("</svg>\n");
    s
}
