mod common;

use proptest::prelude::*;
use sslv::data::generate_seg_dataset;
use sslv::encore::{
    cac_thresholds, check_monotonicity, generate_pseudo_mask, policy_by_name, train_encore, ThresholdGrid, ThresholdProfile, IGNORE,
};
use sslv::experiment::split_frames;

use common::{percentile_oracle, random_profile, random_seg_prediction, rng, tiny_config};

proptest! {
    #[test]
    fn raising_thresholds_shrinks_masks(seed in any::<u64>(), bump in 0.0f64..0.3) {
        let mut r = rng(seed);
        let pred = random_seg_prediction(&mut r, 5, 4, 3);
        let low = random_profile(&mut r, 3);
        let high = ThresholdProfile {
            per_class_threshold: low.per_class_threshold.iter().map(|t| (t + bump).min(1.0)).collect(),
            ..low.clone()
        };
        let a = generate_pseudo_mask(&pred, &low, "f").unwrap();
        let b = generate_pseudo_mask(&pred, &high, "f").unwrap();
        prop_assert!(b.accepted_pixel_fraction <= a.accepted_pixel_fraction);
        for ((&x, &y), &am) in a.mask.iter().zip(&b.mask).zip(&pred.argmax_mask) {
            prop_assert!(x == IGNORE || x == am);
            prop_assert!(y == IGNORE || y == x);
        }
        prop_assert!(check_monotonicity(&[low], &[pred], bump.max(1e-3)).unwrap());
    }

    #[test]
    fn low_thresholds_keep_the_argmax(seed in any::<u64>()) {
        let mut r = rng(seed);
        let pred = random_seg_prediction(&mut r, 3, 3, 4);
        let m = generate_pseudo_mask(&pred, &ThresholdProfile::fixed(4, 0.01).unwrap(), "f").unwrap();
        prop_assert_eq!(&m.mask, &pred.argmax_mask);
        prop_assert_eq!(m.accepted_pixel_fraction, 1.0);
    }

    #[test]
    fn cac_matches_the_sort_oracle(list in prop::collection::vec(0.01f64..0.99, 1..40), q in 0.0f64..=100.0) {
        let prof = cac_thresholds(&[list.clone()], q, 0.5).unwrap();
        prop_assert_eq!(prof.per_class_threshold[0], percentile_oracle(&list, q));
    }
}

#[test]
fn adaptive_candidates_cover_the_grid() {
    let grid = ThresholdGrid::default();
    let tp = vec![vec![], vec![0.6, 0.7, 0.8], vec![0.9]];
    let adaptive = policy_by_name("adaptive").unwrap().candidates(&tp, &grid).unwrap();
    assert_eq!(adaptive.len(), grid.percentiles.len() + grid.fixed.len());
    let fixed = policy_by_name("fixed").unwrap().candidates(&tp, &grid).unwrap();
    assert_eq!(fixed.len(), 1);
    assert!(fixed[0].per_class_threshold.iter().all(|&t| t == grid.fixed_threshold));
    assert!(policy_by_name("otsu").is_err());
}

#[test]
fn without_unlabeled_frames_the_policy_is_irrelevant() {
    let cfg = tiny_config("encore");
    let seg = &cfg.segmentation;
    let frames = generate_seg_dataset(&seg.dataset).unwrap();
    let (labeled, _, _) = split_frames(&frames, &seg.split, 2).unwrap();
    let mut fixed = cfg.encore.clone();
    fixed.policy = "fixed".into();
    let a = train_encore(&seg.model, &labeled, &[], &cfg.encore, 2).unwrap();
    let b = train_encore(&seg.model, &labeled, &[], &fixed, 2).unwrap();
    assert_eq!(a.model.params().values(), b.model.params().values());
}
