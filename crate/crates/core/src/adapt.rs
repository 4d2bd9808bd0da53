//! Runtime adaptation: the configuration ladder, cursor moves and the
//! strategies that pick a rung for each inference.

use std::collections::VecDeque;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::config::Configuration;
use crate::error::{Error, Result};
use crate::executor::{self, RunOptions};
use crate::graph::NetworkGraph;
use crate::tensor::Tensor;

/// Profiled configurations from least to most approximate.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfigurationLadder {
    rungs: Vec<Configuration>,
}

impl ConfigurationLadder {
    /// Orders profiled configurations by descending cost ratio, then
    /// ascending measured QoS loss. Outliers are dropped and the baseline
    /// becomes rung 0.
    pub fn from_profiled(configs: &[Configuration]) -> Result<Self> {
        let baseline = configs
            .iter()
            .find(|c| c.is_baseline())
            .ok_or_else(|| Error::Config("ladder needs the baseline configuration".into()))?;
        let mut rest = Vec::new();
        for c in configs {
            let p = c
                .profile
                .as_ref()
                .ok_or_else(|| Error::Config(format!("configuration `{}` has not been profiled", c.id)))?;
            if !c.is_baseline() && !p.outlier {
                rest.push(c.clone());
            }
        }
        rest.sort_by(|a, b| {
            let (pa, pb) = (a.profile.as_ref().unwrap(), b.profile.as_ref().unwrap());
            pb.cost_ratio
                .total_cmp(&pa.cost_ratio)
                .then(pa.measured_qos_loss.total_cmp(&pb.measured_qos_loss))
        });
        let mut rungs = vec![baseline.clone()];
        rungs.extend(rest);
        Ok(ConfigurationLadder { rungs })
    }

    /// Uses `rungs` in the given order; rung 0 must be the baseline.
    pub fn new(rungs: Vec<Configuration>) -> Result<Self> {
        match rungs.first() {
            Some(c) if c.is_baseline() => Ok(ConfigurationLadder { rungs }),
            _ => Err(Error::Config("rung 0 must be the all-exact baseline".into())),
        }
    }

    pub fn baseline_only(graph: &NetworkGraph) -> Self {
        ConfigurationLadder {
            rungs: vec![Configuration::baseline(graph)],
        }
    }

    pub fn len(&self) -> usize {
        self.rungs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rungs.is_empty()
    }

    pub fn rung(&self, i: usize) -> &Configuration {
        &self.rungs[i]
    }

    pub fn rungs(&self) -> &[Configuration] {
        &self.rungs
    }

    pub fn top(&self) -> usize {
        self.rungs.len() - 1
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    More,
    Less,
}

/// How moves toward more approximation grow. Moves toward less
/// approximation are always exponential.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncreaseMode {
    #[default]
    Linear,
    Exponential,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LadderCursor {
    pub index: usize,
    /// Jump size of the next move if it continues in `last`'s direction.
    pub step: usize,
    pub mode: IncreaseMode,
    pub last: Option<Direction>,
}

impl LadderCursor {
    pub fn new(index: usize, mode: IncreaseMode) -> Self {
        LadderCursor {
            index,
            step: 1,
            mode,
            last: None,
        }
    }

    /// Stays on the current rung and resets the doubling.
    pub fn hold(self) -> Self {
        LadderCursor {
            step: 1,
            last: None,
            ..self
        }
    }
}

/// Moves `cursor` one decision in `dir` on a ladder of `rungs` rungs.
pub fn ladder_move(cursor: LadderCursor, dir: Direction, rungs: usize) -> LadderCursor {
    let doubling = dir == Direction::Less || cursor.mode == IncreaseMode::Exponential;
    let jump = if doubling && cursor.last == Some(dir) {
        cursor.step
    } else {
        1
    };
    let target = match dir {
        Direction::More => cursor.index.checked_add(jump).filter(|&t| t < rungs),
        Direction::Less => cursor.index.checked_sub(jump),
    };
    match target {
        Some(index) => LadderCursor {
            index,
            step: if doubling { jump * 2 } else { 1 },
            last: Some(dir),
            ..cursor
        },
        None => LadderCursor {
            index: match dir {
                Direction::More => rungs.saturating_sub(1),
                Direction::Less => 0,
            },
            ..cursor.hold()
        },
    }
}

/// What a strategy sees after each inference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Observation {
    pub rung: usize,
    pub predicted: usize,
    pub confidence: f64,
}

pub trait Strategy {
    fn name(&self) -> &str;

    fn initial_rung(&self, _rungs: usize) -> usize {
        0
    }

    /// Cursor for the next event given the outcome of the last one.
    fn observe(&mut self, obs: &Observation, cursor: LadderCursor, rungs: usize) -> LadderCursor;
}

/// Never leaves its starting rung.
#[derive(Clone, Debug, Default)]
pub struct Pinned {
    pub rung: usize,
}

impl Strategy for Pinned {
    fn name(&self) -> &str {
        "pinned"
    }

    fn initial_rung(&self, rungs: usize) -> usize {
        self.rung.min(rungs.saturating_sub(1))
    }

    fn observe(&mut self, _obs: &Observation, cursor: LadderCursor, _rungs: usize) -> LadderCursor {
        cursor.hold()
    }
}

/// Approximates more while consecutive predictions agree.
#[derive(Clone, Debug, Default)]
pub struct Naive {
    prev: Option<usize>,
}

pub fn naive_step(prev: Option<usize>, cur: usize, cursor: LadderCursor, rungs: usize) -> LadderCursor {
    match prev {
        None => cursor.hold(),
        Some(p) if p == cur => ladder_move(cursor, Direction::More, rungs),
        Some(_) => ladder_move(cursor, Direction::Less, rungs),
    }
}

impl Strategy for Naive {
    fn name(&self) -> &str {
        "naive"
    }

    fn observe(&mut self, obs: &Observation, cursor: LadderCursor, rungs: usize) -> LadderCursor {
        let next = naive_step(self.prev, obs.predicted, cursor, rungs);
        self.prev = Some(obs.predicted);
        next
    }
}

/// Window of recent predictions and a clamped reliability index.
#[derive(Clone, Debug, PartialEq)]
pub struct StateDrivenState {
    pub window: VecDeque<usize>,
    pub v: i64,
    pub n: usize,
    pub v_limit: i64,
}

impl StateDrivenState {
    pub fn new(n: usize, v_limit: i64) -> Result<Self> {
        if n < 2 || v_limit < 1 {
            return Err(Error::Param(format!(
                "state-driven strategy needs N >= 2 and V_L >= 1, got N={n}, V_L={v_limit}"
            )));
        }
        Ok(StateDrivenState {
            window: VecDeque::with_capacity(n),
            v: 0,
            n,
            v_limit,
        })
    }
}

/// One update; a rung change happens only when `|V|` reaches the limit,
/// after which `V` restarts from 0.
pub fn state_driven_step(
    pred: usize,
    state: &mut StateDrivenState,
    cursor: LadderCursor,
    rungs: usize,
) -> LadderCursor {
    if state.window.len() == state.n {
        state.window.pop_front();
    }
    state.window.push_back(pred);
    if state.window.len() < state.n {
        return cursor;
    }
    let first = state.window[0];
    state.v = if state.window.iter().all(|&p| p == first) {
        state.v.max(0) + 1
    } else {
        state.v.min(0) - 1
    };
    state.v = state.v.clamp(-state.v_limit, state.v_limit);
    if state.v <= -state.v_limit {
        state.v = 0;
        ladder_move(cursor, Direction::Less, rungs)
    } else if state.v >= state.v_limit {
        state.v = 0;
        ladder_move(cursor, Direction::More, rungs)
    } else {
        cursor
    }
}

#[derive(Clone, Debug)]
pub struct StateDriven {
    pub state: StateDrivenState,
}

impl StateDriven {
    pub fn new(n: usize, v_limit: i64) -> Result<Self> {
        Ok(StateDriven {
            state: StateDrivenState::new(n, v_limit)?,
        })
    }
}

impl Strategy for StateDriven {
    fn name(&self) -> &str {
        "state_driven"
    }

    fn observe(&mut self, obs: &Observation, cursor: LadderCursor, rungs: usize) -> LadderCursor {
        state_driven_step(obs.predicted, &mut self.state, cursor, rungs)
    }
}

/// Per-class hysteresis thresholds; `None` disables moves for that class.
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceThresholds {
    pub c_less: Vec<Option<f64>>,
    pub c_more: Vec<Option<f64>>,
}

impl ConfidenceThresholds {
    pub fn from_stats(c_plus: &[Option<f64>], c_minus: &[Option<f64>]) -> Self {
        let (c_less, c_more) = c_plus
            .iter()
            .zip(c_minus)
            .map(|(&p, &m)| match (p, m) {
                (Some(p), Some(m)) if p > m => (Some(m + 0.5 * (p - m)), Some(m + 0.75 * (p - m))),
                _ => (None, None),
            })
            .unzip();
        ConfidenceThresholds { c_less, c_more }
    }

    pub fn from_config(config: &Configuration) -> Self {
        match &config.profile {
            Some(p) => Self::from_stats(&p.c_plus, &p.c_minus),
            None => ConfidenceThresholds {
                c_less: Vec::new(),
                c_more: Vec::new(),
            },
        }
    }

    /// `None` means hold.
    pub fn decide(&self, class: usize, confidence: f64) -> Option<Direction> {
        let less = self.c_less.get(class).copied().flatten()?;
        let more = self.c_more.get(class).copied().flatten()?;
        if confidence > more {
            Some(Direction::More)
        } else if confidence < less {
            Some(Direction::Less)
        } else {
            None
        }
    }
}

pub fn confidence_step(
    obs: &Observation,
    thresholds: &ConfidenceThresholds,
    cursor: LadderCursor,
    rungs: usize,
) -> LadderCursor {
    match thresholds.decide(obs.predicted, obs.confidence) {
        Some(dir) => ladder_move(cursor, dir, rungs),
        None => cursor.hold(),
    }
}

/// Thresholds come from the profile of the rung that produced the
/// observation.
#[derive(Clone, Debug)]
pub struct ConfidenceDriven {
    pub per_rung: Vec<ConfidenceThresholds>,
}

impl ConfidenceDriven {
    pub fn new(ladder: &ConfigurationLadder) -> Self {
        ConfidenceDriven {
            per_rung: ladder.rungs().iter().map(ConfidenceThresholds::from_config).collect(),
        }
    }
}

impl Strategy for ConfidenceDriven {
    fn name(&self) -> &str {
        "confidence"
    }

    fn observe(&mut self, obs: &Observation, cursor: LadderCursor, rungs: usize) -> LadderCursor {
        match self.per_rung.get(obs.rung) {
            Some(t) => confidence_step(obs, t, cursor, rungs),
            None => cursor.hold(),
        }
    }
}

/// Serializable strategy choice.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StrategySpec {
    Pinned {
        rung: usize,
    },
    Naive {
        #[serde(default)]
        mode: IncreaseMode,
    },
    StateDriven {
        n: usize,
        v_limit: i64,
        #[serde(default)]
        mode: IncreaseMode,
    },
    Confidence {
        #[serde(default)]
        mode: IncreaseMode,
    },
}

impl StrategySpec {
    pub fn mode(&self) -> IncreaseMode {
        match *self {
            StrategySpec::Pinned { .. } => IncreaseMode::Linear,
            StrategySpec::Naive { mode } | StrategySpec::StateDriven { mode, .. } | StrategySpec::Confidence { mode } => {
                mode
            }
        }
    }

    pub fn build(&self, ladder: &ConfigurationLadder) -> Result<Box<dyn Strategy>> {
        Ok(match *self {
            StrategySpec::Pinned { rung } => Box::new(Pinned { rung }),
            StrategySpec::Naive { .. } => Box::new(Naive::default()),
            StrategySpec::StateDriven { n, v_limit, .. } => Box::new(StateDriven::new(n, v_limit)?),
            StrategySpec::Confidence { .. } => Box::new(ConfidenceDriven::new(ladder)),
        })
    }
}

impl fmt::Display for StrategySpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mode = |m: IncreaseMode| match m {
            IncreaseMode::Linear => "linear",
            IncreaseMode::Exponential => "exponential",
        };
        match *self {
            StrategySpec::Pinned { rung } => write!(f, "pinned/{rung}"),
            StrategySpec::Naive { mode: m } => write!(f, "naive/{}", mode(m)),
            StrategySpec::StateDriven { n, v_limit, mode: m } => write!(f, "state_driven/{n}/{v_limit}/{}", mode(m)),
            StrategySpec::Confidence { mode: m } => write!(f, "confidence/{}", mode(m)),
        }
    }
}

/// One logged inference of an adaptive run.
#[derive(Clone, Debug, PartialEq)]
pub struct AdaptStep {
    pub rung: usize,
    pub predicted: usize,
    pub confidence: f64,
    pub macs: u64,
    pub elems: u64,
    pub wall_time: f64,
}

/// An adaptive run stopped by an inference error; `steps` holds the events
/// completed before it.
#[derive(Debug)]
pub struct Aborted {
    pub steps: Vec<AdaptStep>,
    pub error: Error,
}

impl fmt::Display for Aborted {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "adaptive run aborted after {} events: {}", self.steps.len(), self.error)
    }
}

impl std::error::Error for Aborted {}

/// Runs every input under the rung the strategy picked from the previous
/// outcomes.
pub fn adapt_loop<'a>(
    graph: &NetworkGraph,
    ladder: &ConfigurationLadder,
    strategy: &mut dyn Strategy,
    mode: IncreaseMode,
    inputs: impl IntoIterator<Item = &'a Tensor>,
    opts: &RunOptions,
) -> std::result::Result<Vec<AdaptStep>, Aborted> {
    let rungs = ladder.len();
    let mut cursor = LadderCursor::new(strategy.initial_rung(rungs), mode);
    let mut steps = Vec::new();
    for x in inputs {
        let rung = cursor.index;
        debug_assert!(rung < rungs);
        let r = match executor::run_inference_with(graph, ladder.rung(rung), x, opts) {
            Ok(r) => r,
            Err(error) => return Err(Aborted { steps, error }),
        };
        let obs = Observation {
            rung,
            predicted: r.predicted,
            confidence: r.top_confidence as f64,
        };
        steps.push(AdaptStep {
            rung,
            predicted: r.predicted,
            confidence: obs.confidence,
            macs: r.cost.macs,
            elems: r.cost.elems,
            wall_time: r.wall_time,
        });
        cursor = strategy.observe(&obs, cursor, rungs);
    }
    Ok(steps)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cur(index: usize, mode: IncreaseMode) -> LadderCursor {
        LadderCursor::new(index, mode)
    }

    #[test]
    fn exponential_more_doubles() {
        let mut c = cur(0, IncreaseMode::Exponential);
        let mut seen = vec![];
        for _ in 0..3 {
            c = ladder_move(c, Direction::More, 8);
            seen.push(c.index);
        }
        assert_eq!(seen, [1, 3, 7]);
    }

    #[test]
    fn exponential_clamps_and_resets() {
        let mut c = cur(0, IncreaseMode::Exponential);
        for _ in 0..3 {
            c = ladder_move(c, Direction::More, 5);
        }
        assert_eq!((c.index, c.step), (4, 1));
    }

    #[test]
    fn linear_more_then_less() {
        let c = ladder_move(cur(3, IncreaseMode::Linear), Direction::More, 10);
        assert_eq!(c.index, 4);
        assert_eq!(ladder_move(c, Direction::Less, 10).index, 3);
    }

    #[test]
    fn less_at_bottom_stays() {
        assert_eq!(ladder_move(cur(0, IncreaseMode::Linear), Direction::Less, 4).index, 0);
    }

    #[test]
    fn naive_disagreement_steps_down_exponentially() {
        let c = LadderCursor {
            index: 5,
            step: 1,
            mode: IncreaseMode::Linear,
            last: Some(Direction::Less),
        };
        let c = naive_step(Some(0), 1, c, 10);
        assert_eq!((c.index, c.step), (4, 2));
        assert_eq!(naive_step(Some(0), 1, c, 10).index, 2);
    }

    #[test]
    fn worked_thresholds() {
        let t = ConfidenceThresholds::from_stats(&[Some(1.0)], &[Some(0.6)]);
        assert_eq!(t.c_less[0], Some(0.8));
        assert_eq!(t.c_more[0], Some(0.9));
        assert_eq!(t.decide(0, 0.95), Some(Direction::More));
        assert_eq!(t.decide(0, 0.85), None);
        assert_eq!(t.decide(0, 0.7), Some(Direction::Less));
    }

    #[test]
    fn inverted_stats_disable_moves() {
        let t = ConfidenceThresholds::from_stats(&[Some(0.5), None], &[Some(0.7), Some(0.2)]);
        assert_eq!(t.decide(0, 0.99), None);
        assert_eq!(t.decide(1, 0.01), None);
    }
}
