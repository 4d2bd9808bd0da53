use approxnet_core::dataset::{self, Dwell, NoiseSchedule, SyntheticSpec};
use approxnet_core::profiler::{self, ProfileParams};
use approxnet_core::tuner::{self, TunerParams};
use approxnet_core::{executor, Configuration, KnobDomain, KnobSetting, NetworkGraph, Tensor};
use proptest::prelude::*;

fn points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    // Coarse grid so ties and duplicates are common.
    prop::collection::vec((0u8..8, 1u8..8).prop_map(|(l, s)| (l as f64 * 0.5, 1.0 + s as f64 * 0.25)), 0..30)
}

fn dominated(p: (f64, f64), by: (f64, f64)) -> bool {
    by.0 <= p.0 && by.1 >= p.1 && (by.0 < p.0 || by.1 > p.1)
}

fn small_problem() -> (NetworkGraph, KnobDomain, Vec<Tensor>, Vec<usize>) {
    let g = dataset::matched_filter_graph(&SyntheticSpec::new(3, 1, 7)).unwrap();
    let k = |s: &[&str]| s.iter().map(|v| v.parse::<KnobSetting>().unwrap()).collect::<Vec<_>>();
    let lists = g
        .layers()
        .iter()
        .map(|l| match l.name.as_str() {
            "conv1" => k(&["exact", "perf_row/2/0", "samp/2/0", "samp/3/1"]),
            "conv2" => k(&["exact", "perf_col/2/1", "samp/2/1"]),
            _ => vec![KnobSetting::EXACT],
        })
        .collect();
    let d = KnobDomain::from_lists(&g, lists).unwrap();
    let mut s = SyntheticSpec::new(3, 45, 8);
    s.dwell = Dwell::Constant { length: 1 };
    s.noise = NoiseSchedule::constant(3.0);
    let t = dataset::generate_stream(&s).unwrap();
    (g, d, t.inputs(), t.labels().unwrap())
}

proptest! {
    #[test]
    fn pareto_indices_match_definition(pts in points()) {
        let idx = tuner::pareto_indices(&pts);
        for (i, &p) in pts.iter().enumerate() {
            let keep = !pts.iter().any(|&q| dominated(p, q));
            prop_assert_eq!(idx.contains(&i), keep, "point {:?}", p);
        }
        let speeds: Vec<f64> = idx.iter().map(|&i| pts[i].1).collect();
        prop_assert!(speeds.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn hypervolume_never_shrinks(pts in points(), extra in (0u8..8, 1u8..8)) {
        let r = (4.0, 1.0);
        let base = tuner::hypervolume(&pts, r);
        let mut more = pts.clone();
        more.push((extra.0 as f64 * 0.5, 1.0 + extra.1 as f64 * 0.25));
        prop_assert!(tuner::hypervolume(&more, r) >= base - 1e-12);
        let front: Vec<(f64, f64)> = tuner::pareto_indices(&pts).iter().map(|&i| pts[i]).collect();
        prop_assert!((tuner::hypervolume(&front, r) - base).abs() < 1e-12);
    }

    #[test]
    fn kendall_tau_is_bounded_and_symmetric(
        a in prop::collection::vec(0u8..5, 2..15),
        b in prop::collection::vec(0u8..5, 2..15),
    ) {
        let n = a.len().min(b.len());
        let a: Vec<f64> = a[..n].iter().map(|&v| v as f64).collect();
        let b: Vec<f64> = b[..n].iter().map(|&v| v as f64).collect();
        let t = profiler::kendall_tau(&a, &b);
        prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&t));
        prop_assert!((t - profiler::kendall_tau(&b, &a)).abs() < 1e-12);
        // Constant lists score 1.0 by convention, so the sign flip needs variation.
        prop_assume!(a.iter().any(|&v| v != a[0]) && b.iter().any(|&v| v != b[0]));
        let neg: Vec<f64> = b.iter().map(|v| -v).collect();
        prop_assert!((t + profiler::kendall_tau(&a, &neg)).abs() < 1e-12);
    }
}

#[test]
fn tuner_output_invariants() {
    let (g, d, x, y) = small_problem();
    for (exhaustive_limit, max_configs, max_qos_loss) in [(1000, 50, 10.0), (0, 3, 10.0), (1000, 50, 0.0)] {
        let params = TunerParams { max_qos_loss, max_configs, iterations: 30, seed: 4, exhaustive_limit };
        let front = tuner::tune(&g, &d, &x, &y, &params).unwrap();
        assert!(front.len() <= max_configs.max(1));
        assert_eq!(front.iter().filter(|p| p.config.is_baseline()).count(), 1);
        assert_eq!(front.iter().find(|p| p.config.is_baseline()).unwrap().config.id, "baseline");
        assert!(tuner::is_mutually_non_dominated(&front));
        let speeds: Vec<f64> = front.iter().map(|p| p.predicted_speedup).collect();
        assert!(speeds.windows(2).all(|w| w[0] <= w[1]), "{speeds:?}");
        for p in front.iter().filter(|p| !p.config.is_baseline()) {
            assert!(p.qos_loss <= max_qos_loss);
            assert!(p.config.id.starts_with("cfg-"));
            let macs = executor::inference_cost(&g, &Configuration::baseline(&g)).unwrap().macs as f64
                / executor::inference_cost(&g, &p.config).unwrap().macs as f64;
            assert_eq!(p.predicted_speedup, macs);
        }
    }
}

#[test]
fn profile_records_are_consistent() {
    let (g, d, x, y) = small_problem();
    let params = TunerParams { max_qos_loss: 20.0, max_configs: 10, iterations: 1, seed: 0, exhaustive_limit: 1000 };
    let configs: Vec<Configuration> = tuner::tune(&g, &d, &x, &y, &params).unwrap().into_iter().map(|p| p.config).collect();
    let profiled = profiler::profile(&g, &configs, &x, &y, &ProfileParams { batch_size: 10, ..Default::default() }).unwrap();
    let base = profiled.iter().find(|c| c.is_baseline()).unwrap().profile.clone().unwrap();
    assert_eq!((base.measured_qos_loss, base.cost_ratio, base.measured_speedup), (0.0, 1.0, 1.0));
    for c in &profiled {
        let p = c.profile.as_ref().unwrap();
        let n: u64 = p.n_correct.iter().chain(&p.n_incorrect).sum();
        // 45 samples in batches of 10: the partial batch is dropped.
        assert_eq!(n, 40);
        assert!((p.accuracy - p.n_correct.iter().sum::<u64>() as f64 / 40.0).abs() < 1e-12);
        assert_eq!(p.cost_ratio, executor::cost_ratio(&g, c).unwrap());
        for (cp, n) in p.c_plus.iter().zip(&p.n_correct) {
            assert_eq!(cp.is_some(), *n > 0);
        }
        assert!(p.measured_speedup > 0.0);
    }
    let report = profiler::reprofile_order_check(&profiled).unwrap();
    assert!(!report.outliers.contains(&"baseline".to_string()));
}
