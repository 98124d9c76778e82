use super::*;
use crate::feature_store::FeatureMap;
use crate::flow::FlowConfig;

fn g(h: usize, w: usize, v: &[f64]) -> Grid {
    Grid::new(h, w, v.to_vec()).unwrap()
}

#[test]
fn probabilities_from_known_logliks() {
    let out =
        normalize_probabilities(&[vec![g(1, 3, &[-2.0, -1.0, 0.0])]], NormScope::Pooled).unwrap();
    let want = [0.0, 0.2689414213699951, 1.0];
    // exp(-1) − exp(-2) over 1 − exp(-2)
    let mid = ((-1f64).exp() - (-2f64).exp()) / (1.0 - (-2f64).exp());
    assert!((out[0][0].data[1] - mid).abs() < 1e-15);
    assert_eq!(out[0][0].data[0], want[0]);
    assert_eq!(out[0][0].data[2], want[2]);
}

#[test]
fn constant_logliks_normalize_to_half() {
    let out = normalize_probabilities(&[vec![g(2, 2, &[-3.0; 4])]], NormScope::Pooled).unwrap();
    assert!(out[0][0].data.iter().all(|&v| v == 0.5));
}

#[test]
fn pooled_and_per_image_scopes_differ() {
    let maps = vec![vec![g(1, 2, &[0.0, -1.0])], vec![g(1, 2, &[-5.0, -6.0])]];
    let pooled = normalize_probabilities(&maps, NormScope::Pooled).unwrap();
    let single = normalize_probabilities(&maps, NormScope::PerImage).unwrap();
    assert_eq!(single[1][0].data, vec![1.0, 0.0]);
    assert!(pooled[1][0].data[0] < 0.01);
    assert_eq!(pooled[0][0].data[0], 1.0);
}

#[test]
fn non_finite_loglik_is_rejected() {
    let err =
        normalize_probabilities(&[vec![g(1, 2, &[0.0, f64::NAN])]], NormScope::Pooled).unwrap_err();
    assert!(matches!(err, Error::Numeric(_)));
}

#[test]
fn aggregate_uses_set_wide_maximum() {
    let a = vec![g(1, 2, &[1.0, 0.5]), g(1, 2, &[1.0, 0.0])];
    let b = vec![g(1, 2, &[0.0, 0.25]), g(1, 2, &[0.5, 0.5])];
    let maps = aggregate(vec![a, b]).unwrap();
    assert_eq!(maps[0].scores.data, vec![0.0, 1.5]);
    assert_eq!(maps[1].scores.data, vec![1.5, 1.25]);
}

#[test]
fn aggregate_rejects_mismatched_shapes() {
    let err = aggregate(vec![vec![g(1, 2, &[0.0; 2]), g(2, 1, &[0.0; 2])]]).unwrap_err();
    assert!(matches!(err, Error::Dimension { .. }));
}

fn brute_f1(scores: &[f64], labels: &[bool]) -> (f64, f64) {
    let mut cands: Vec<f64> = scores.to_vec();
    cands.sort_by(f64::total_cmp);
    cands.dedup();
    let mut best = (f64::NAN, -1.0);
    for &t in &cands {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for (&s, &l) in scores.iter().zip(labels) {
            match (s >= t, l) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let f1 = f1_from_counts(tp, fp, fn_);
        if f1 > best.1 {
            best = (t, f1);
        }
    }
    best
}

#[test]
fn f1_threshold_matches_exhaustive_search() {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_xoshiro::Xoshiro256PlusPlus::seed_from_u64(5);
    for _ in 0..300 {
        let n = rng.random_range(2..40);
        let scores: Vec<f64> = (0..n)
            .map(|_| rng.random_range(0..8) as f64 / 4.0)
            .collect();
        let mut labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.3)).collect();
        labels[0] = true;
        labels[1] = false;
        let got = f1_threshold(&scores, &labels).unwrap();
        let want = brute_f1(&scores, &labels);
        assert_eq!(got, want, "{scores:?} {labels:?}");
    }
}

#[test]
fn f1_threshold_small_example() {
    let (t, f1) = f1_threshold(&[0.1, 0.4, 0.35, 0.8], &[false, false, true, true]).unwrap();
    assert_eq!(t, 0.35);
    assert!((f1 - 0.8).abs() < 1e-15);
    assert!(f1_threshold(&[0.1, 0.2], &[true, true]).is_err());
}

#[test]
fn image_score_reductions() {
    let m = g(2, 5, &[0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);
    assert_eq!(image_score(&m, ImageReduction::Max), 9.0);
    assert_eq!(image_score(&m, ImageReduction::TopFraction(0.2)), 8.5);
    assert_eq!(image_score(&m, ImageReduction::TopFraction(0.01)), 9.0);
}

fn tiny_model() -> (FlowModel, FeaturePyramid) {
    let mut cfg = FlowConfig::new(3);
    cfg.cond_dim = 8;
    cfg.layers = 2;
    let mut model = FlowModel::new(&[cfg]).unwrap();
    model.scales[0].randomize_parameters(3, 0.2);
    let data: Vec<f32> = (0..5 * 7 * 3).map(|i| ((i as f32) * 0.37).sin()).collect();
    let p = FeaturePyramid::new("a", vec![FeatureMap::new(5, 7, 3, data).unwrap()]).unwrap();
    (model, p)
}

#[test]
fn likelihood_maps_independent_of_batch_size() {
    let (model, p) = tiny_model();
    let whole = likelihood_maps(&model, &p, 1000).unwrap();
    for b in [1, 3, 8, 35] {
        assert_eq!(likelihood_maps(&model, &p, b).unwrap(), whole);
    }
    let v = p.scales[0].vector_f64(9);
    let code = model.scales[0].encoder().encode(1, 2);
    let single = model.scales[0].log_likelihood(&v, &code).unwrap();
    assert_eq!(whole[0].at(1, 2), single);
}

#[test]
fn likelihood_maps_reject_wrong_depth() {
    let (model, _) = tiny_model();
    let p =
        FeaturePyramid::new("b", vec![FeatureMap::new(2, 2, 4, vec![0.0; 16]).unwrap()]).unwrap();
    assert!(matches!(
        likelihood_maps(&model, &p, 4),
        Err(Error::Config(_))
    ));
}

#[test]
fn threaded_scoring_matches_serial() {
    let (model, p) = tiny_model();
    let mut q = p.clone();
    q.image_id = "b".into();
    for v in &mut q.scales[0].data_mut()[..6] {
        *v += 2.0;
    }
    let set = vec![p, q.clone(), q];
    let serial = score_flow(&model, &set, (10, 14), &ScoreOptions::default()).unwrap();
    let threaded = score_flow(
        &model,
        &set,
        (10, 14),
        &ScoreOptions {
            threads: 3,
            ..Default::default()
        },
    )
    .unwrap();
    assert_eq!(serial, threaded);
    assert_eq!(serial[0].scores.height, 10);
}

#[test]
fn map_image_quantizes_range() {
    let img = map_to_image(&g(1, 3, &[0.0, 0.5, 2.0]), 0.0, 1.0);
    assert_eq!(img.pixels, vec![0, 32768, 65535]);
}
