use approxnet_core::adapt::{
    self, ladder_move, ConfigurationLadder, Direction, IncreaseMode, LadderCursor, StateDrivenState, StrategySpec,
};
use approxnet_core::dataset::{self, Dwell, NoiseSchedule, SyntheticSpec, Trace};
use approxnet_core::profiler::{self, ProfileParams};
use approxnet_core::stream::{self, StreamReport};
use approxnet_core::{executor, Configuration, KnobSetting, NetworkGraph};
use proptest::prelude::*;

fn setup() -> (NetworkGraph, ConfigurationLadder, Trace) {
    let g = dataset::matched_filter_graph(&SyntheticSpec::new(4, 1, 3)).unwrap();
    let mut configs = vec![Configuration::baseline(&g)];
    for (i, (c1, c2)) in [("perf_row/3/0", "exact"), ("samp/2/0", "perf_col/2/1"), ("perf_row/2/0", "samp/2/0")]
        .iter()
        .enumerate()
    {
        let knobs: Vec<KnobSetting> = g
            .layers()
            .iter()
            .map(|l| match l.name.as_str() {
                "conv1" => c1.parse().unwrap(),
                "conv2" => c2.parse().unwrap(),
                _ => KnobSetting::EXACT,
            })
            .collect();
        configs.push(Configuration::from_knobs(format!("cfg-{i:03}"), &g, &knobs));
    }
    let mut s = SyntheticSpec::new(4, 60, 21);
    s.dwell = Dwell::Constant { length: 1 };
    s.noise = NoiseSchedule::constant(2.5);
    let set = dataset::generate_stream(&s).unwrap();
    let profiled =
        profiler::profile(&g, &configs, &set.inputs(), &set.labels().unwrap(), &ProfileParams::default()).unwrap();
    let ladder = ConfigurationLadder::from_profiled(&profiled).unwrap();

    let mut t = SyntheticSpec::new(4, 80, 22);
    t.noise = NoiseSchedule { knots: vec![(0.0, 0.5), (80.0, 3.0)] };
    (g, ladder, dataset::generate_stream(&t).unwrap())
}

fn strategies() -> Vec<StrategySpec> {
    let mut v = vec![StrategySpec::Pinned { rung: 0 }];
    for mode in [IncreaseMode::Linear, IncreaseMode::Exponential] {
        v.push(StrategySpec::Naive { mode });
        v.push(StrategySpec::StateDriven { n: 3, v_limit: 2, mode });
        v.push(StrategySpec::Confidence { mode });
    }
    v
}

fn run(g: &NetworkGraph, l: &ConfigurationLadder, s: &StrategySpec, t: &Trace) -> StreamReport {
    stream::run_adaptive(g, l, s, t, "t", &Default::default()).unwrap()
}

#[test]
fn ladder_is_ordered_by_cost() {
    let (_, ladder, _) = setup();
    assert!(ladder.rung(0).is_baseline());
    let ratios: Vec<f64> = ladder.rungs()[1..].iter().map(|c| c.profile.as_ref().unwrap().cost_ratio).collect();
    assert!(ratios.windows(2).all(|w| w[0] >= w[1]), "{ratios:?}");
}

#[test]
fn reports_are_consistent() {
    let (g, ladder, trace) = setup();
    let reports: Vec<StreamReport> = strategies().iter().map(|s| run(&g, &ladder, s, &trace)).collect();
    let base_preds: Vec<usize> = reports[0].timeline.iter().map(|r| r.baseline_pred).collect();
    for r in &reports {
        assert_eq!(r.events, trace.events.len());
        // The always-exact reference does not depend on the strategy.
        assert_eq!(r.timeline.iter().map(|r| r.baseline_pred).collect::<Vec<_>>(), base_preds);
        let adaptive: u64 = r.timeline.iter().map(|t| t.macs).sum();
        let baseline: u64 = r.timeline.iter().map(|t| t.baseline_macs).sum();
        assert_eq!(r.relative_cost, adaptive as f64 / baseline as f64);
        assert_eq!((r.adaptive_macs, r.baseline_macs), (adaptive, baseline));
        for row in &r.timeline {
            let want = executor::inference_cost(&g, ladder.rung(row.rung)).unwrap().macs;
            assert_eq!(row.macs, want, "{}: rung {}", r.strategy, row.rung);
        }
        assert!(r.relative_cost <= 1.0 + 1e-12);
        let occ: f64 = r.rung_occupancy().iter().sum();
        assert!((occ - 1.0).abs() < 1e-9);
    }
    let pinned = &reports[0];
    assert_eq!(pinned.relative_cost, 1.0);
    assert_eq!(pinned.agreement_with_baseline, 1.0);
    assert_eq!(pinned.accuracy, pinned.baseline_accuracy);
}

#[test]
fn single_rung_ladder_matches_baseline() {
    let (g, _, trace) = setup();
    let ladder = ConfigurationLadder::baseline_only(&g);
    for s in strategies() {
        let r = run(&g, &ladder, &s, &trace);
        assert_eq!(r.agreement_with_baseline, 1.0, "{s}");
        assert_eq!(r.relative_cost, 1.0, "{s}");
        assert!(r.timeline.iter().all(|t| t.rung == 0));
    }
}

#[test]
fn report_round_trips_through_disk() {
    let (g, ladder, trace) = setup();
    let r = run(&g, &ladder, &StrategySpec::StateDriven { n: 3, v_limit: 2, mode: IncreaseMode::Linear }, &trace);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("r.json");
    stream::write_report(&r, &path).unwrap();
    assert_eq!(stream::read_report(&path).unwrap(), r);
    let rows = stream::parse_timeline_csv(&stream::timeline_csv(&r.timeline), "mem").unwrap();
    assert_eq!(rows, r.timeline);
    let svg = stream::plot_svg(&r);
    assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
}

#[test]
fn pinned_rung_out_of_range_is_clamped_or_rejected() {
    let (g, ladder, trace) = setup();
    let s = StrategySpec::Pinned { rung: ladder.len() + 3 };
    match stream::run_adaptive(&g, &ladder, &s, &trace, "t", &Default::default()) {
        Ok(r) => assert!(r.timeline.iter().all(|t| t.rung < ladder.len())),
        Err(e) => assert!(e.to_string().contains("rung"), "{e}"),
    }
}

proptest! {
    #[test]
    fn cursor_stays_on_the_ladder(
        rungs in 1usize..12,
        start in 0usize..12,
        moves in prop::collection::vec(prop::option::of(any::<bool>()), 0..60),
        exp in any::<bool>(),
    ) {
        let mode = if exp { IncreaseMode::Exponential } else { IncreaseMode::Linear };
        let mut c = LadderCursor::new(start.min(rungs - 1), mode);
        for m in moves {
            let before = c.index;
            c = match m {
                None => c.hold(),
                Some(true) => ladder_move(c, Direction::More, rungs),
                Some(false) => ladder_move(c, Direction::Less, rungs),
            };
            prop_assert!(c.index < rungs && c.step >= 1);
            match m {
                Some(true) => prop_assert!(c.index >= before),
                Some(false) => prop_assert!(c.index <= before),
                None => prop_assert_eq!(c.index, before),
            }
        }
    }

    #[test]
    fn state_driven_vote_is_bounded(
        preds in prop::collection::vec(0usize..3, 0..200),
        n in 2usize..6,
        v_limit in 1i64..5,
        rungs in 1usize..9,
    ) {
        let mut st = StateDrivenState::new(n, v_limit).unwrap();
        let mut c = LadderCursor::new(0, IncreaseMode::Linear);
        for p in preds {
            let before = c.index;
            c = adapt::state_driven_step(p, &mut st, c, rungs);
            prop_assert!(st.v.abs() < v_limit || st.v == 0);
            prop_assert!(c.index < rungs);
            prop_assert!(c.index == before || st.v == 0);
        }
    }

    #[test]
    fn naive_agreement_never_moves_down(cur in 0usize..4, index in 0usize..6) {
        let c = LadderCursor::new(index, IncreaseMode::Linear);
        let next = adapt::naive_step(Some(cur), cur, c, 6);
        prop_assert!(next.index >= index);
        let first = adapt::naive_step(None, cur, c, 6);
        prop_assert_eq!(first.index, index);
    }
}
