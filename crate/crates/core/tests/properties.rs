mod common;

use iusp::eval::{classwise_auprc, micro_pr_curve, PredictionSet};
use iusp::kernels::{
    bilinear_resize, channel_normalize, frame_gram, sigmoid_squash, sp_gram, SquashParams,
};
use iusp::losses::{iusp_loss, kd_logit_loss_grad, sp_loss, total_loss, LossComponents, LossWeights};
use iusp::models::HintPair;
use iusp::{FeatureMap, GramKind, LayerId, SimilarityMatrix};
use ndarray::{Array2, Array4, Axis};
use proptest::prelude::*;

fn map_strategy(max_batch: usize) -> impl Strategy<Value = FeatureMap> {
    (1..=max_batch, 1..=4usize, 1..=4usize, 1..=4usize).prop_flat_map(|(b, c, h, w)| {
        prop::collection::vec(-2.0..2.0f64, b * c * h * w).prop_map(move |data| {
            FeatureMap::from_shape_vec([b, c, h, w], data, LayerId::new("p")).unwrap()
        })
    })
}

/// A map and a positive factor for each of its channels.
fn map_and_channel_scales() -> impl Strategy<Value = (FeatureMap, Vec<f64>)> {
    map_strategy(4).prop_flat_map(|m| {
        let c = m.channels();
        (Just(m), prop::collection::vec(0.05..20.0f64, c))
    })
}

fn scale_channels(m: &FeatureMap, k: &[f64]) -> FeatureMap {
    let mut v = m.values().clone();
    for mut item in v.outer_iter_mut() {
        for (ci, mut slice) in item.outer_iter_mut().enumerate() {
            slice *= k[ci];
        }
    }
    FeatureMap::new(v, m.layer().clone()).unwrap()
}

fn with_values(m: &FeatureMap, v: Array4<f64>) -> FeatureMap {
    FeatureMap::new(v, m.layer().clone()).unwrap()
}

fn max_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    common::max_abs_diff(a.iter().copied(), b.iter().copied())
}

fn all_frame_grams(m: &FeatureMap) -> Vec<Array2<f64>> {
    (0..m.batch()).map(|i| frame_gram(m, i).unwrap().into_values()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn sp_gram_rows_are_unit_or_zero_and_scale_free(m in map_strategy(4), k in 0.01..100.0f64) {
        let g = sp_gram(&m);
        prop_assert_eq!(g.kind(), GramKind::Batch);
        for row in g.values().rows() {
            let n = row.dot(&row).sqrt();
            prop_assert!(n == 0.0 || (n - 1.0).abs() < 1e-12, "row norm {}", n);
        }
        prop_assert!(max_diff(g.values(), sp_gram(&m.scaled(k)).values()) <= 1e-12);
    }

    #[test]
    fn channel_normalize_is_idempotent_and_channel_scale_free((m, k) in map_and_channel_scales()) {
        let once = channel_normalize(&m);
        let twice = channel_normalize(&once);
        prop_assert!(common::max_abs_diff(once.values().iter().copied(), twice.values().iter().copied()) <= 1e-12);
        let scaled = channel_normalize(&scale_channels(&m, &k));
        prop_assert!(common::max_abs_diff(once.values().iter().copied(), scaled.values().iter().copied()) <= 1e-12);
    }

    #[test]
    fn frame_gram_is_symmetric_and_psd(m in map_strategy(3)) {
        let n = channel_normalize(&m);
        for g in all_frame_grams(&n) {
            prop_assert!(max_diff(&g, &g.t().to_owned()) <= 1e-12);
            let w = g.nrows();
            let mat = nalgebra::DMatrix::from_fn(w, w, |i, j| g[[i, j]]);
            let min = mat.symmetric_eigenvalues().min();
            prop_assert!(min >= -1e-8, "min eigenvalue {}", min);
        }
    }

    #[test]
    fn frame_gram_ignores_channel_height_layout(m in map_strategy(3)) {
        // the same frame vectors stacked as (c*h, 1) and as (1, c*h)
        let [b, c, h, w] = m.dims();
        let tall = with_values(&m, m.values().clone().into_shape_with_order((b, c * h, 1, w)).unwrap());
        let flat = with_values(&m, m.values().clone().into_shape_with_order((b, 1, c * h, w)).unwrap());
        for ((g, t), f) in all_frame_grams(&m).iter().zip(all_frame_grams(&tall)).zip(all_frame_grams(&flat)) {
            prop_assert!(max_diff(g, &t) <= 1e-12);
            prop_assert!(max_diff(g, &f) <= 1e-12);
        }
    }

    #[test]
    fn normalized_frame_gram_ignores_channel_scaling((m, k) in map_and_channel_scales()) {
        let a = all_frame_grams(&channel_normalize(&m));
        let b = all_frame_grams(&channel_normalize(&scale_channels(&m, &k)));
        for (x, y) in a.iter().zip(&b) {
            prop_assert!(max_diff(x, y) <= 1e-12);
        }
    }

    #[test]
    fn squash_is_strictly_monotone_and_centered(
        gamma in 0.5..20.0f64,
        delta in -1.0..1.0f64,
        z in -10.0..10.0f64,
        gap in 1e-4..1.0f64,
    ) {
        // keep gamma * (x - delta) where a float sigmoid still resolves steps
        let lo = delta + z / gamma;
        let p = SquashParams::new(gamma, delta).unwrap();
        let g = SimilarityMatrix::new(ndarray::arr2(&[[lo, lo + gap], [lo + gap, delta]]), GramKind::Frame, false).unwrap();
        let s = sigmoid_squash(&g, p).unwrap();
        let v = s.values();
        prop_assert!(v[[0, 0]] < v[[0, 1]]);
        prop_assert_eq!(v[[1, 1]], 0.5);
        prop_assert!(v.iter().all(|&x| x > 0.0 && x < 1.0));
        prop_assert!(s.is_squashed());
    }

    #[test]
    fn bilinear_keeps_identity_and_constants(m in map_strategy(2), th in 1..=6usize, tw in 1..=6usize, k in -3.0..3.0f64) {
        let [_, _, h, w] = m.dims();
        let same = bilinear_resize(&m, h, w).unwrap();
        prop_assert_eq!(same.values(), m.values());
        let constant = with_values(&m, Array4::from_elem(m.values().raw_dim(), k));
        let r = bilinear_resize(&constant, th, tw).unwrap();
        prop_assert_eq!(r.dims(), [m.batch(), m.channels(), th, tw]);
        prop_assert!(r.values().iter().all(|v| (v - k).abs() <= 1e-12));
    }

    #[test]
    fn sp_loss_is_scale_free_and_zero_at_equality(
        t in map_strategy(4),
        seed in any::<u64>(),
        kt in 0.01..100.0f64,
        ks in 0.01..100.0f64,
    ) {
        let mut r = common::rng(seed);
        let mut shape = common::random_shape(&mut r);
        shape[0] = t.batch();
        let s = common::random_map(&mut r, shape);
        let pairs = [HintPair::new(0, 0)];
        let base = sp_loss(&[t.clone()], &[s.clone()], &pairs).unwrap();
        prop_assert!(base >= 0.0);
        let scaled = sp_loss(&[t.scaled(kt)], &[s.scaled(ks)], &pairs).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
        prop_assert_eq!(sp_loss(&[t.clone()], &[t.scaled(ks)], &pairs).unwrap() <= 1e-24, true);
    }

    #[test]
    fn iusp_loss_channel_scale_free_symmetric_and_zero_at_equality(
        (t, kt) in map_and_channel_scales(),
        seed in any::<u64>(),
    ) {
        let mut r = common::rng(seed);
        let s = common::random_map(&mut r, t.dims());
        let ks: Vec<f64> = (0..s.channels()).map(|_| rand::Rng::gen_range(&mut r, 0.05..20.0)).collect();
        let p = SquashParams::default();
        let base = iusp_loss(&t, &s, p).unwrap();
        prop_assert!(base >= 0.0);
        let scaled = iusp_loss(&scale_channels(&t, &kt), &scale_channels(&s, &ks), p).unwrap();
        prop_assert!((base - scaled).abs() <= 1e-9);
        prop_assert_eq!(iusp_loss(&s, &t, p).unwrap(), base);
        prop_assert_eq!(iusp_loss(&t, &t, p).unwrap(), 0.0);
    }

    #[test]
    fn kd_gradient_vanishes_at_teacher_logits(
        logits in prop::collection::vec(-8.0..8.0f64, 1..=32),
        temp in 0.1..10.0f64,
    ) {
        let a = Array2::from_shape_vec((1, logits.len()), logits).unwrap();
        let (loss, g) = kd_logit_loss_grad(&a, &a, temp).unwrap();
        prop_assert!(loss >= 0.0);
        prop_assert!(g.iter().all(|v| v.abs() <= 1e-15));
    }

    #[test]
    fn total_loss_is_linear_in_the_weights(
        c in prop::array::uniform4(0.0..5.0f64),
        a in prop::array::uniform4(0.0..20.0f64),
    ) {
        let comps = LossComponents { bce: c[0], kd: c[1], sp: c[2], iusp: c[3] };
        let w = LossWeights { alpha_bce: a[0], alpha_kd: a[1], alpha_sp: a[2], alpha_iusp: a[3], ..LossWeights::default() };
        let w2 = LossWeights { alpha_bce: 2.0 * a[0], alpha_kd: 2.0 * a[1], alpha_sp: 2.0 * a[2], alpha_iusp: 2.0 * a[3], ..w };
        let v = total_loss(comps, &w);
        let expected: f64 = c.iter().zip(a).map(|(c, a)| c * a).sum();
        prop_assert!((v.total - expected).abs() <= 1e-9 * expected.max(1.0));
        prop_assert!((total_loss(comps, &w2).total - 2.0 * v.total).abs() <= 1e-9 * v.total.max(1.0));
    }

    #[test]
    fn auprc_matches_brute_force_and_ignores_monotone_transforms(
        (scores, labels) in (1..=40usize, 1..=8usize).prop_flat_map(|(n, k)| (
            prop::collection::vec(prop::sample::select(vec![0.0, 0.1, 0.25, 0.5, 0.6, 0.9, 1.0]), n * k)
                .prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap()),
            prop::collection::vec(any::<bool>(), n * k).prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap()),
        )),
    ) {
        let ids: Vec<String> = (0..scores.nrows()).map(|i| i.to_string()).collect();
        let p = PredictionSet::new(scores.clone(), labels.clone(), ids.clone()).unwrap();
        let flat_s: Vec<f64> = scores.iter().copied().collect();
        let flat_l: Vec<bool> = labels.iter().copied().collect();
        let micro = micro_pr_curve(&p).ok().map(|c| c.auprc);
        let brute = common::brute_auprc(&flat_s, &flat_l);
        prop_assert_eq!(micro.is_some(), brute.is_some());
        if let (Some(m), Some(b)) = (micro, brute) {
            prop_assert!((m - b).abs() <= 1e-12);
            prop_assert!((0.0..=1.0).contains(&m));
        }
        let cw = classwise_auprc(&p);
        for (k, got) in cw.iter().enumerate() {
            let s: Vec<f64> = scores.column(k).to_vec();
            let l: Vec<bool> = labels.column(k).to_vec();
            let want = common::brute_auprc(&s, &l);
            prop_assert_eq!(got.is_some(), want.is_some());
            if let (Some(g), Some(w)) = (got, want) {
                prop_assert!((g - w).abs() <= 1e-12);
            }
            // a single class scored on its own agrees with its class-wise value
            let single = PredictionSet::new(
                scores.column(k).to_owned().insert_axis(Axis(1)),
                labels.column(k).to_owned().insert_axis(Axis(1)),
                ids.clone(),
            ).unwrap();
            prop_assert_eq!(micro_pr_curve(&single).ok().map(|c| c.auprc), *got);
        }
        let warped = PredictionSet::new(scores.mapv(|s| (3.0 * s).exp() - 7.0), labels, ids).unwrap();
        // same curve up to the threshold labels
        let pr = |p: &PredictionSet| micro_pr_curve(p).ok().map(|c| {
            let pts: Vec<(f64, f64)> = c.points.iter().map(|q| (q.precision, q.recall)).collect();
            (pts, c.auprc)
        });
        prop_assert_eq!(pr(&warped), pr(&p));
        prop_assert_eq!(classwise_auprc(&warped), cw);
    }
}

#[test]
fn perfect_predictions_score_exactly_one() {
    let labels = Array2::from_shape_fn((37, 8), |(i, k)| (i * 3 + k) % 4 == 0);
    let scores = labels.mapv(|l| if l { 0.8 } else { 0.3 });
    let ids = (0..37).map(|i| i.to_string()).collect();
    let p = PredictionSet::new(scores, labels, ids).unwrap();
    assert_eq!(micro_pr_curve(&p).unwrap().auprc, 1.0);
    assert!(classwise_auprc(&p).iter().all(|v| *v == Some(1.0)));
}
