use approxnet_core::fp16;
use approxnet_core::ops::{self, ConvGeometry, FilterSampleSpec, PerforationAxis, PerforationSpec};
use approxnet_core::{tensor_quantize, CostCounter, Tensor};
use proptest::prelude::*;

fn tensor(dims: Vec<usize>) -> impl Strategy<Value = Tensor> {
    let n: usize = dims.iter().product();
    prop::collection::vec(-2.0f32..2.0, n).prop_map(move |d| Tensor::new(dims.clone(), d).unwrap())
}

proptest! {
    #[test]
    fn fp16_round_trip_is_idempotent_and_matches_half(bits in any::<u32>()) {
        let x = f32::from_bits(bits);
        prop_assume!(!x.is_nan());
        let y = fp16::round_trip(x);
        prop_assert_eq!(fp16::round_trip(y).to_bits(), y.to_bits());
        let want = half::f16::from_f32(x).to_f32().clamp(-65504.0, 65504.0);
        prop_assert!(y == want, "{x:e}: {y:e} vs {want:e}");
    }

    #[test]
    fn fp16_is_monotone(a in -70000.0f32..70000.0, b in -70000.0f32..70000.0) {
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        prop_assert!(fp16::round_trip(lo) <= fp16::round_trip(hi));
    }

    #[test]
    fn quantize_is_elementwise_round_trip(t in tensor(vec![2, 3, 4])) {
        let q = tensor_quantize(&t);
        prop_assert_eq!(q.dims(), t.dims());
        for (a, b) in q.data().iter().zip(t.data()) {
            prop_assert_eq!(a.to_bits(), fp16::round_trip(*b).to_bits());
        }
    }

    #[test]
    fn perforation_keeps_computed_rows_exact(
        x in tensor(vec![1, 2, 7, 6]),
        w in tensor(vec![3, 2, 3, 2]),
        stride in 2usize..5,
        offset in 0usize..5,
        col in any::<bool>(),
    ) {
        let axis = if col { PerforationAxis::Column } else { PerforationAxis::Row };
        let spec = PerforationSpec::new(axis, stride, offset).unwrap();
        let g = ConvGeometry::new(1, 1, 0, 0);
        let exact = ops::conv2d_exact(&x, &w, None, &g, &mut CostCounter::new()).unwrap();
        let [_, k, ho, wo] = exact.nchw();
        let extent = if col { wo } else { ho };
        prop_assume!(spec.computed_count(extent) > 0);
        let got = ops::conv2d_perforated(&x, &w, None, &g, &spec, &mut CostCounter::new()).unwrap();
        prop_assert_eq!(got.dims(), exact.dims());
        for f in 0..k {
            for y in 0..ho {
                for xx in 0..wo {
                    let pos = if col { xx } else { y };
                    let skipped = pos >= offset && (pos - offset) % stride == 0;
                    let i = (f * ho + y) * wo + xx;
                    if !skipped {
                        prop_assert_eq!(got.data()[i].to_bits(), exact.data()[i].to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn sampling_counts_partition(n_elm in 1usize..500, stride in 2usize..10, offset in 0usize..600) {
        let s = FilterSampleSpec::new(stride, offset).unwrap();
        prop_assert_eq!(s.removed_count(n_elm) + s.kept_count(n_elm), n_elm);
    }

    #[test]
    fn softmax_rows_are_distributions(z in prop::collection::vec(-50.0f32..50.0, 1..12), t in 0.05f64..20.0) {
        let p = ops::softmax_row(&z, t).unwrap();
        let sum: f64 = p.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-9);
        prop_assert!(p.iter().all(|&v| (0.0..=1.0).contains(&v)));
        let top = ops::argmax(&z);
        prop_assert!(p.iter().all(|&v| v <= p[top]));
    }
}
