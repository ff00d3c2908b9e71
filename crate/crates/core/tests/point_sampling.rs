use csk_core::points::{
    generate_biased_points, generate_biased_points_on_stream, soft_labels, SamplingConfig, ScoredPoint, Strategy,
};
use csk_core::{Error, FeatureMap, SamplePoint};
use proptest::prelude::*;

fn ramp(h: usize, w: usize) -> FeatureMap {
    FeatureMap::from_fn(1, h, w, |_, _, c| c as f32 / (w - 1) as f32)
}

proptest! {
    #[test]
    fn sampling_is_reproducible_and_counted(seed in any::<u64>(), stream in 0u64..100, h in 4usize..40, w in 4usize..40) {
        let cfg = SamplingConfig::new(3.0, 0.75, 8, seed).unwrap();
        let map = ramp(h, w);
        let a = generate_biased_points_on_stream(&map, &cfg, stream).unwrap();
        prop_assert_eq!(&a, &generate_biased_points_on_stream(&map, &cfg, stream).unwrap());
        prop_assert_eq!(a.generated.len(), cfg.generated_count(h, w));
        prop_assert_eq!(a.points.len(), cfg.selected_count(h, w));
        prop_assert!(a.points.windows(2).all(|p| p[0].uncertainty >= p[1].uncertainty));
        for p in &a.generated {
            prop_assert!((0.0..=(w - 1) as f64).contains(&p.point.u));
            prop_assert!((0.0..=(h - 1) as f64).contains(&p.point.v));
        }
    }
}

#[test]
fn streams_differ() {
    let cfg = SamplingConfig::new(3.0, 0.75, 8, 1).unwrap();
    let map = ramp(16, 16);
    let a = generate_biased_points_on_stream(&map, &cfg, 0).unwrap();
    let b = generate_biased_points_on_stream(&map, &cfg, 1).unwrap();
    assert_ne!(a.generated, b.generated);
    assert_eq!(a, generate_biased_points(&map, &cfg).unwrap());
}

#[test]
fn tiny_mask_has_nothing_to_sample() {
    let cfg = SamplingConfig::new(3.0, 0.75, 8, 0).unwrap();
    let err = generate_biased_points(&ramp(2, 3), &cfg).unwrap_err();
    assert!(matches!(err, Error::EmptySampling(_)));
}

#[test]
fn strategy_names_round_trip() {
    for s in Strategy::ALL {
        assert_eq!(Strategy::from_name(s.name()), Some(s));
    }
    assert_eq!(Strategy::from_name("nope"), None);
}

#[test]
fn soft_labels_interpolate_binary_masks() {
    let gt = FeatureMap::from_fn(1, 4, 4, |_, _, c| if c >= 2 { 1.0 } else { 0.0 });
    let at = |u, v| ScoredPoint { point: SamplePoint::new(u, v), uncertainty: 0.0 };
    let labels = soft_labels(&gt, &[at(0.0, 0.0), at(1.5, 2.0), at(1.25, 3.0), at(3.0, 1.0)]).unwrap();
    assert_eq!(labels, vec![0.0, 0.5, 0.25, 1.0]);
    let fuzzy = FeatureMap::filled(1, 2, 2, 0.5);
    assert!(soft_labels(&fuzzy, &[at(0.0, 0.0)]).unwrap_err().is_usage());
}
