mod common;

use proptest::prelude::*;
use sslv::data::generate_clip_dataset;
use sslv::experiment::split_clips;
use sslv::models::train_supervised;
use sslv::semivt::{
    clp_triplet_loss, ema_update, hard_negative_prototype, tcr_loss, train_semivt, update_prototype, PrototypeStore, SemiVtConfig,
};

use common::{rng, tiny_config};
use rand::Rng;

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

#[test]
fn prototypes_stay_finite_over_many_updates() {
    let mut r = rng(11);
    let mut store = PrototypeStore::new(4, 16, 0.9).unwrap();
    let mut largest: f64 = 0.0;
    for _ in 0..10_000 {
        let e: Vec<f64> = (0..16).map(|_| r.random_range(-50.0..50.0)).collect();
        largest = largest.max(norm(&e));
        update_prototype(&mut store, r.random_range(0..4), &e).unwrap();
    }
    for k in 0..4 {
        let p = store.get(k).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!(norm(p) <= largest + 1e-9);
    }
}

proptest! {
    #[test]
    fn tcr_pass_rate_falls_with_tau(raw in prop::collection::vec(prop::collection::vec(0.01f64..1.0, 4), 1..30), t1 in 0.0f64..1.0, t2 in 0.0f64..1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        let dists: Vec<Vec<f64>> = raw.iter().map(|v| { let s: f64 = v.iter().sum(); v.iter().map(|x| x / s).collect() }).collect();
        let student = vec![0.25; 4];
        let passing = |tau: f64| dists.iter().filter(|t| tcr_loss(t, &student, tau).unwrap().1).count();
        prop_assert!(passing(hi) <= passing(lo));
    }

    #[test]
    fn ema_matches_the_closed_form(m in 0.01f64..0.999, s0 in -5.0f64..5.0, target in -5.0f64..5.0, steps in 1usize..12) {
        let mut teacher = vec![s0];
        for _ in 0..steps {
            ema_update(&mut teacher, &[target], m);
        }
        let closed = target + m.powi(steps as i32) * (s0 - target);
        prop_assert!((teacher[0] - closed).abs() <= 1e-9);
    }

    #[test]
    fn triplet_loss_is_a_nonnegative_hinge(e in prop::collection::vec(-3.0f64..3.0, 3), p in prop::collection::vec(-3.0f64..3.0, 3), n in prop::collection::vec(-3.0f64..3.0, 3), m in 0.0f64..1.0) {
        let l = clp_triplet_loss(&e, &p, &n, m).unwrap();
        prop_assert!(l >= 0.0);
        prop_assert!(l <= norm(&p.iter().zip(&n).map(|(a, b)| a - b).collect::<Vec<_>>()) + m + 1e-12);
    }

    #[test]
    fn hard_negative_is_the_nearest_other_class(e in prop::collection::vec(-2.0f64..2.0, 2), protos in prop::collection::vec(prop::collection::vec(-2.0f64..2.0, 2), 3), class in 0usize..3) {
        let mut store = PrototypeStore::new(3, 2, 0.5).unwrap();
        for (k, p) in protos.iter().enumerate() {
            store.set(k, p).unwrap();
        }
        let got = hard_negative_prototype(&store, &e, class).unwrap();
        prop_assert_ne!(got, class);
        let d = |k: usize| norm(&e.iter().zip(&protos[k]).map(|(a, b)| a - b).collect::<Vec<_>>());
        prop_assert!((0..3).filter(|&k| k != class).all(|k| d(got) <= d(k)));
    }
}

#[test]
fn hard_negative_needs_another_class() {
    let mut store = PrototypeStore::new(2, 2, 0.5).unwrap();
    store.set(0, &[0.0, 0.0]).unwrap();
    assert_eq!(hard_negative_prototype(&store, &[1.0, 1.0], 0), None);
}

#[test]
fn zero_weights_equal_supervised_training() {
    let cfg = tiny_config("semivt");
    let (clips, _) = generate_clip_dataset(&cfg.dataset).unwrap();
    let (_, s) = split_clips(&clips, &cfg.split, 1).unwrap();
    let ablated = SemiVtConfig {
        lambda_clp: 0.0,
        lambda_tcr: 0.0,
        ..cfg.semivt.clone()
    };
    let a = train_semivt(&cfg.model, &s.labeled, &s.unlabeled, &s.val, &ablated, 1).unwrap();
    let b = train_supervised(&cfg.model, &s.labeled, &cfg.semivt.train, 1).unwrap();
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(a.student.params().values()), bits(b.model.params().values()));
}
