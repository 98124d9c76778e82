use super::*;
use crate::diagnostics::grid_integral;
use crate::feature_store::FeatureMap;
use crate::flow::{FlowConfig, FlowScale};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

fn random_spd(rng: &mut Xoshiro256PlusPlus, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

fn random_vec(rng: &mut Xoshiro256PlusPlus, d: usize, r: f64) -> Vec<f64> {
    (0..d).map(|_| rng.random_range(-r..r)).collect()
}

#[test]
fn two_point_fit() {
    let g = fit_gaussian(&[vec![0.0, 0.0], vec![2.0, 0.0]], 0.01).unwrap();
    assert_eq!(g.mean().as_slice(), &[1.0, 0.0]);
    let cov = g.covariance();
    assert!((cov[(0, 0)] - 2.01).abs() < 1e-12);
    assert!((cov[(1, 1)] - 0.01).abs() < 1e-12);
    assert!(cov[(0, 1)].abs() < 1e-12);
}

#[test]
fn identical_samples_give_ridge_covariance() {
    let g = fit_gaussian(&vec![vec![0.5, -1.0, 2.0]; 7], 0.01).unwrap();
    let cov = g.covariance();
    assert!((cov - DMatrix::identity(3, 3) * 0.01).abs().max() < 1e-15);
}

#[test]
fn fit_rejects_bad_inputs() {
    assert!(matches!(
        fit_gaussian(&[vec![1.0]], 0.01),
        Err(Error::Validation(_))
    ));
    assert!(matches!(
        fit_gaussian(&[vec![1.0], vec![2.0]], 0.0),
        Err(Error::Config(_))
    ));
    assert!(Gaussian::new(DVector::zeros(2), DMatrix::zeros(2, 2)).is_err());
}

#[test]
fn monte_carlo_fit_within_sampling_bounds() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(21);
    let truth = Gaussian::new(
        DVector::from_vec(vec![1.0, -2.0, 0.5]),
        random_spd(&mut rng, 3),
    )
    .unwrap();
    let n = 500;
    let samples: Vec<Vec<f64>> = (0..n)
        .map(|_| {
            let u: Vec<f64> = (0..3).map(|_| StandardNormal.sample(&mut rng)).collect();
            truth.transform(&u).as_slice().to_vec()
        })
        .collect();
    let fit = fit_gaussian(&samples, 1e-9).unwrap();
    let cov = truth.covariance();
    let est = fit.covariance();
    for i in 0..3 {
        let se_mean = (cov[(i, i)] / n as f64).sqrt();
        assert!((fit.mean()[i] - truth.mean()[i]).abs() < 3.0 * se_mean);
        for j in 0..3 {
            // var of a sample covariance entry ≈ (σ_ij² + σ_ii σ_jj) / n
            let se = ((cov[(i, j)].powi(2) + cov[(i, i)] * cov[(j, j)]) / n as f64).sqrt();
            assert!((est[(i, j)] - cov[(i, j)]).abs() < 3.0 * se, "({i},{j})");
        }
    }
}

#[test]
fn mahalanobis_spec_examples() {
    let g = Gaussian::standard(2);
    assert_eq!(g.mahalanobis(&[3.0, 4.0]).unwrap(), 5.0);
    let g = Gaussian::new(
        DVector::from_vec(vec![1.0, 0.0]),
        DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])),
    )
    .unwrap();
    assert!((g.mahalanobis(&[3.0, 2.0]).unwrap() - 5f64.sqrt()).abs() < 1e-15);
    assert!(matches!(
        g.mahalanobis(&[1.0]),
        Err(Error::Dimension { .. })
    ));
}

#[test]
fn mahalanobis_matches_explicit_inverse() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(22);
    for _ in 0..100 {
        let cov = random_spd(&mut rng, 3);
        let mean = DVector::from_vec(random_vec(&mut rng, 3, 2.0));
        let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let z = random_vec(&mut rng, 3, 3.0);
        let diff = DVector::from_vec(z.clone()) - mean;
        let want = (diff.transpose() * cov.try_inverse().unwrap() * &diff)[(0, 0)];
        let got = g.mahalanobis_sq(&z).unwrap();
        assert!((got - want).abs() < 1e-10 * want.max(1.0));
        let cov_check = g.covariance();
        assert!(
            (&cov_check * cov_check.clone().try_inverse().unwrap() - DMatrix::identity(3, 3))
                .abs()
                .max()
                < 1e-8
        );
    }
}

#[test]
fn log_density_spec_examples() {
    let g = Gaussian::standard(1);
    assert!((g.log_density(&[0.0]).unwrap() + 0.9189385332046727).abs() < 1e-15);
    let g = Gaussian::standard(2);
    assert!((g.log_density(&[0.0, 0.0]).unwrap() + LOG_2PI).abs() < 1e-15);
}

#[test]
fn log_density_matches_eigendecomposition_oracle() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(23);
    for _ in 0..100 {
        let d = rng.random_range(1..=4);
        let cov = random_spd(&mut rng, d);
        let mean = DVector::from_vec(random_vec(&mut rng, d, 1.0));
        let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let z = random_vec(&mut rng, d, 2.0);
        let eig = cov.symmetric_eigen();
        let diff = DVector::from_vec(z.clone()) - mean;
        let proj = eig.eigenvectors.transpose() * diff;
        let mut want = -0.5 * d as f64 * LOG_2PI;
        for i in 0..d {
            let lam = eig.eigenvalues[i];
            want -= 0.5 * (lam.ln() + proj[i] * proj[i] / lam);
        }
        assert!((g.log_density(&z).unwrap() - want).abs() < 1e-10);
    }
}

#[test]
fn log_density_integrates_to_one() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(24);
    let g1 = Gaussian::new(
        DVector::from_vec(vec![0.3]),
        DMatrix::from_element(1, 1, 0.7),
    )
    .unwrap();
    let v = grid_integral(|z| g1.log_density(z), 1, -10.0, 10.0, 4000).unwrap();
    assert!((v - 1.0).abs() < 1e-2);
    let g2 = Gaussian::new(
        DVector::from_vec(vec![0.2, -0.1]),
        random_spd(&mut rng, 2) * 0.5,
    )
    .unwrap();
    let v = grid_integral(|z| g2.log_density(z), 2, -8.0, 8.0, 400).unwrap();
    assert!((v - 1.0).abs() < 1e-2);
}

proptest! {
    #[test]
    fn mahalanobis_invariant_under_affine_maps(seed in 0u64..500, d in 1usize..=4) {
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let cov = random_spd(&mut rng, d);
        let mean = DVector::from_vec(random_vec(&mut rng, d, 1.0));
        let z = DVector::from_vec(random_vec(&mut rng, d, 2.0));
        let a = DMatrix::from_fn(d, d, |i, j| rng.random_range(-1.0..1.0) + if i == j { 2.0 } else { 0.0 });
        let b = DVector::from_vec(random_vec(&mut rng, d, 3.0));
        let g = Gaussian::new(mean.clone(), cov.clone()).unwrap();
        let moved = Gaussian::new(&a * &mean + &b, &a * cov * a.transpose()).unwrap();
        let m0 = g.mahalanobis(z.as_slice()).unwrap();
        let m1 = moved.mahalanobis((&a * &z + &b).as_slice()).unwrap();
        prop_assert!((m0 - m1).abs() < 1e-8 * m0.max(1.0));
        prop_assert_eq!(g.mahalanobis(mean.as_slice()).unwrap(), 0.0);
    }
}

fn pyramids(rng: &mut Xoshiro256PlusPlus, n: usize) -> Vec<FeaturePyramid> {
    (0..n)
        .map(|i| {
            let a: Vec<f32> = (0..3 * 2 * 2)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            let b: Vec<f32> = (0..6 * 4 * 3)
                .map(|_| rng.random_range(-1.0f32..1.0))
                .collect();
            FeaturePyramid::new(
                format!("p{i}"),
                vec![
                    FeatureMap::new(3, 2, 2, a).unwrap(),
                    FeatureMap::new(6, 4, 3, b).unwrap(),
                ],
            )
            .unwrap()
        })
        .collect()
}

#[test]
fn fitted_scales_score_means_as_zero() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(25);
    let train = pyramids(&mut rng, 6);
    let model = fit_mvg(&train, DEFAULT_RIDGE, 1).unwrap();
    assert_eq!(model.scales.len(), 2);
    let mut at_mean = train[0].clone();
    for (k, s) in model.scales.iter().enumerate() {
        let mut data = Vec::new();
        for g in &s.positions {
            data.extend(g.mean().iter().map(|&v| v as f32));
        }
        at_mean.scales[k] = FeatureMap::new(s.height, s.width, s.dim, data).unwrap();
    }
    let maps = model.distance_maps(&at_mean).unwrap();
    // f32 storage of the means leaves tiny residuals
    assert!(maps
        .iter()
        .flat_map(|g| &g.data)
        .all(|&v| (0.0..1e-5).contains(&v)));
    let other = model.distance_maps(&train[3]).unwrap();
    assert!(other.iter().flat_map(|g| &g.data).all(|&v| v >= 0.0));
}

#[test]
fn threaded_fit_matches_serial() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(26);
    let train = pyramids(&mut rng, 5);
    assert_eq!(
        fit_mvg(&train, 0.05, 1).unwrap(),
        fit_mvg(&train, 0.05, 4).unwrap()
    );
}

#[test]
fn mismatched_pyramid_is_rejected() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(27);
    let train = pyramids(&mut rng, 3);
    let model = fit_mvg(&train, DEFAULT_RIDGE, 1).unwrap();
    let wrong =
        FeaturePyramid::new("w", vec![FeatureMap::new(3, 2, 2, vec![0.0; 12]).unwrap()]).unwrap();
    assert!(matches!(model.distance_maps(&wrong), Err(Error::Config(_))));
    assert!(matches!(
        fit_mvg(&train[..1], DEFAULT_RIDGE, 1),
        Err(Error::Validation(_))
    ));
}

#[test]
fn checkpoint_roundtrip_and_corruption() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(28);
    let model = fit_mvg(&pyramids(&mut rng, 4), DEFAULT_RIDGE, 1).unwrap();
    let bytes = encode_mvg(&model);
    let back = decode_mvg(&bytes, "m").unwrap();
    assert_eq!(back, model);
    assert_eq!(bytes.len(), 8 + 2 * 20 + model.parameter_bytes());
    assert!(decode_mvg(&bytes[..bytes.len() - 3], "m").is_err());
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(matches!(decode_mvg(&extra, "m"), Err(Error::Format { .. })));
    let mut bad = bytes;
    bad[4] = 9;
    assert!(matches!(
        decode_mvg(&bad, "m"),
        Err(Error::UnsupportedVersion { .. })
    ));
}

#[test]
fn parameter_bytes_scale_with_positions() {
    assert_eq!(
        mvg_parameter_bytes(32, 32, 8) / mvg_parameter_bytes(8, 8, 8),
        16
    );
    assert_eq!(mvg_parameter_bytes(1, 1, 2), 8 * 5);
}

fn random_flow(d: usize, c: usize, seed: u64) -> FlowScale {
    let mut cfg = FlowConfig::new(d);
    cfg.cond_dim = c;
    cfg.layers = 4;
    cfg.seed = seed;
    let mut f = FlowScale::new(cfg).unwrap();
    f.randomize_parameters(seed, 0.2);
    f
}

#[test]
fn identity_collapses_for_identity_flow_and_standard_target() {
    let flow = FlowScale::new(FlowConfig::new(3).unconditional()).unwrap();
    let r =
        reverse_kl_identity_check(&flow, &Gaussian::standard(3), &[0.3, -1.2, 2.0], &[]).unwrap();
    assert_eq!((r.lhs, r.rhs, r.gap), (0.0, 0.0, 0.0));
}

#[test]
fn identity_holds_for_random_flows_and_targets() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(29);
    let mut worst = 0.0f64;
    for i in 0..200 {
        let d = [2, 4, 8][i % 3];
        let flow = random_flow(d, 4, i as u64);
        let target = Gaussian::new(
            DVector::from_vec(random_vec(&mut rng, d, 1.0)),
            random_spd(&mut rng, d),
        )
        .unwrap();
        let z = random_vec(&mut rng, d, 2.0);
        let c = random_vec(&mut rng, 4, 1.0);
        worst = worst.max(
            reverse_kl_identity_check(&flow, &target, &z, &c)
                .unwrap()
                .gap,
        );
    }
    assert!(worst < 1e-9, "{worst}");
}

#[test]
fn reverse_kl_estimate_is_zero_for_matching_target_and_positive_otherwise() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(30);
    let flow = FlowScale::new(FlowConfig::new(2).unconditional()).unwrap();
    let same = reverse_kl_loss_estimate(&flow, &Gaussian::standard(2), &[], 200, &mut rng).unwrap();
    assert!(same.abs() < 1e-12);
    let shifted =
        Gaussian::new(DVector::from_vec(vec![1.0, 0.0]), DMatrix::identity(2, 2)).unwrap();
    let kl = reverse_kl_loss_estimate(&flow, &shifted, &[], 4000, &mut rng).unwrap();
    // KL(N(0,I) || N(e1, I)) = 0.5
    assert!((kl - 0.5).abs() < 0.05, "{kl}");
}
