use csk_core::codec::nms_maxpool;
use csk_core::roi::{crop_roi_pyramid, roi_grid_size, PyramidLevel, PyramidLevels};
use csk_core::tensor::{bilinear_neighbors, bilinear_sample, grid_sample_crop, roi_sample_axis};
use csk_core::{BBox, FeatureMap, RoiRect, SamplePoint};
use csk_synth::oracle::{oracle_bilinear, oracle_nms};
use proptest::prelude::*;

fn map_strategy(max: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max, 1..=max).prop_flat_map(|(h, w)| {
        prop::collection::vec(-5.0f32..5.0, h * w)
            .prop_map(move |data| FeatureMap::new(1, h, w, data).unwrap())
    })
}

proptest! {
    #[test]
    fn bilinear_matches_reference(map in map_strategy(12), fu in -0.3f64..1.3, fv in -0.3f64..1.3) {
        let u = fu * (map.width() - 1) as f64;
        let v = fv * (map.height() - 1) as f64;
        let ours = bilinear_sample(&map, SamplePoint::new(u, v), 0).unwrap();
        let reference = oracle_bilinear(&map, u, v, 0);
        prop_assert!((ours - reference).abs() <= 1e-6 * (1.0 + reference.abs()));
    }

    #[test]
    fn bilinear_weights_form_a_partition(h in 1usize..30, w in 1usize..30, u in -4.0f64..34.0, v in -4.0f64..34.0) {
        let n = bilinear_neighbors(u, v, h, w);
        let total: f64 = n.iter().map(|t| t.2).sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
        prop_assert!(n.iter().all(|&(r, c, wt)| r < h && c < w && (0.0..=1.0).contains(&wt)));
    }

    #[test]
    fn integer_points_read_stored_pixels(map in map_strategy(10), r in 0usize..10, c in 0usize..10) {
        let (r, c) = (r % map.height(), c % map.width());
        let v = bilinear_sample(&map, SamplePoint::new(c as f64, r as f64), 0).unwrap();
        prop_assert_eq!(v, map.get(0, r, c) as f64);
    }

    #[test]
    fn nms_matches_reference(map in map_strategy(16)) {
        let ours = nms_maxpool(&map).unwrap();
        let reference = oracle_nms(&map);
        prop_assert_eq!(ours.data(), reference.as_slice());
    }

    #[test]
    fn tight_crop_at_stride_one_is_a_copy(map in map_strategy(16), a in 0usize..16, b in 0usize..16, c in 0usize..16, d in 0usize..16) {
        let (c0, c1) = ((a % map.width()).min(b % map.width()), (a % map.width()).max(b % map.width()));
        let (r0, r1) = ((c % map.height()).min(d % map.height()), (c % map.height()).max(d % map.height()));
        let bbox = BBox::from_pixel_range(c0, r0, c1, r1);
        let crop = grid_sample_crop(&map, &bbox.roi(), 1.0, r1 - r0 + 1, c1 - c0 + 1).unwrap();
        for r in r0..=r1 {
            for c in c0..=c1 {
                prop_assert_eq!(crop.get(0, r - r0, c - c0), map.get(0, r, c));
            }
        }
    }
}

#[test]
fn sample_axis_centers_cells_on_the_interval() {
    // pixels 2..=5 tightly: center 3.5, extent 4
    assert_eq!(roi_sample_axis(3.5, 4.0, 1.0, 4), vec![2.0, 3.0, 4.0, 5.0]);
    // the same interval at stride 2 covers level pixels 1 and 2
    assert_eq!(roi_sample_axis(3.5, 4.0, 2.0, 2), vec![1.0, 2.0]);
}

#[test]
fn crop_of_constant_map_is_constant() {
    let map = FeatureMap::filled(2, 9, 7, 0.25);
    let roi = RoiRect::new(3.3, 4.1, 5.5, 2.7).unwrap();
    let crop = grid_sample_crop(&map, &roi, 1.0, 3, 4).unwrap();
    assert_eq!(crop.shape(), (2, 3, 4));
    assert!(crop.data().iter().all(|&v| v == 0.25));
}

#[test]
fn pyramid_crop_rejects_small_and_outside_boxes() {
    let levels = PyramidLevels::new(
        32,
        32,
        vec![
            PyramidLevel { map: FeatureMap::zeros(1, 16, 16), stride: 2.0 },
            PyramidLevel { map: FeatureMap::zeros(1, 8, 8), stride: 4.0 },
        ],
    )
    .unwrap();
    // 3.9 px wide is under two cells at stride 2
    assert!(crop_roi_pyramid(&levels, &BBox::new(10.0, 10.0, 3.9, 8.0).unwrap()).unwrap().is_empty());
    assert!(crop_roi_pyramid(&levels, &BBox::new(-20.0, 10.0, 8.0, 8.0).unwrap()).unwrap().is_empty());
    let b = BBox::new(10.0, 10.0, 4.0, 12.0).unwrap();
    let crops = crop_roi_pyramid(&levels, &b).unwrap();
    assert_eq!(crops.len(), 2);
    assert_eq!((crops[0].height(), crops[0].width()), roi_grid_size(&b, 2.0));
    assert_eq!((crops[1].height(), crops[1].width()), (3, 1));
}
