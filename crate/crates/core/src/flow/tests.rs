use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::*;
use crate::diagnostics::{grid_integral, numerical_log_abs_det};

fn config(dim: usize, cond_dim: usize, layers: usize, seed: u64) -> FlowConfig {
    FlowConfig {
        dim,
        cond_dim,
        layers,
        seed,
        ..FlowConfig::new(dim)
    }
}

fn random_flow(dim: usize, cond_dim: usize, layers: usize, seed: u64, magnitude: f64) -> FlowScale {
    let mut f = FlowScale::new(config(dim, cond_dim, layers, seed)).unwrap();
    f.randomize_parameters(seed + 1000, magnitude);
    f
}

fn random_vec(rng: &mut Xoshiro256PlusPlus, n: usize, r: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-r..r)).collect()
}

#[test]
fn identity_initialized_flow_permutes_and_preserves_volume() {
    let flow = FlowScale::new(config(6, 4, 8, 3)).unwrap();
    let z: Vec<f64> = (0..6).map(|i| i as f64).collect();
    let (u, ld) = flow.inverse(&z, &[0.5; 4]).unwrap();
    assert_eq!(ld, 0.0);
    let mut sorted = u.clone();
    sorted.sort_by(f64::total_cmp);
    assert_eq!(sorted, z);
}

#[test]
fn identity_flow_log_likelihood() {
    let flow = FlowScale::new(config(2, 0, 4, 0)).unwrap();
    assert!((flow.log_likelihood(&[0.0, 0.0], &[]).unwrap() + LOG_2PI).abs() < 1e-15);
    assert!((flow.log_likelihood(&[1.0, 0.0], &[]).unwrap() - (-2.337877066409345)).abs() < 1e-12);
}

#[test]
fn bijectivity_across_dims_and_depths() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(42);
    for &d in &[2usize, 4, 16, 64] {
        for &l in &[1usize, 4, 8] {
            let flow = random_flow(d, 8, l, (d * 10 + l) as u64, 0.2);
            for _ in 0..10 {
                let z = random_vec(&mut rng, d, 3.0);
                let c = random_vec(&mut rng, 8, 1.0);
                let (u, ld_inv) = flow.inverse(&z, &c).unwrap();
                let (back, ld_fwd) = flow.forward(&u, &c).unwrap();
                let err = z
                    .iter()
                    .zip(&back)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "d={d} l={l} err={err}");
                assert!((ld_inv + ld_fwd).abs() < 1e-9);
                let (fz, _) = flow.forward(&z, &c).unwrap();
                let (z2, _) = flow.inverse(&fz, &c).unwrap();
                let err = z
                    .iter()
                    .zip(&z2)
                    .map(|(a, b)| (a - b).abs())
                    .fold(0.0, f64::max);
                assert!(err < 1e-8, "d={d} l={l} err={err}");
            }
        }
    }
}

#[test]
fn logdet_matches_numerical_jacobian() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(7);
    for &d in &[1usize, 2, 3, 4, 6] {
        for &l in &[1usize, 4] {
            let flow = random_flow(d, 4, l, 100 + d as u64, 0.5);
            let z = random_vec(&mut rng, d, 2.0);
            let c = random_vec(&mut rng, 4, 1.0);
            let (_, analytic) = flow.inverse(&z, &c).unwrap();
            let numeric =
                numerical_log_abs_det(|x| flow.inverse(x, &c).map(|r| r.0), &z, 1e-6).unwrap();
            let rel = (analytic.exp() - numeric.exp()).abs() / numeric.exp();
            assert!(
                rel < 1e-4,
                "d={d} l={l} analytic={analytic} numeric={numeric}"
            );
        }
    }
}

#[test]
fn single_layer_forward_jacobian() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(8);
    let flow = random_flow(4, 0, 1, 5, 0.7);
    let layer = &flow.layers()[0];
    let z = random_vec(&mut rng, 4, 2.0);
    let (_, analytic) = layer.forward(&z, &[]).unwrap();
    let numeric = numerical_log_abs_det(|x| layer.forward(x, &[]).map(|r| r.0), &z, 1e-6).unwrap();
    assert!((analytic.exp() - numeric.exp()).abs() / numeric.exp() < 1e-4);
}

#[test]
fn random_flows_are_normalized() {
    for (dim, steps) in [(1usize, 4000usize), (2, 400)] {
        let flow = random_flow(dim, 4, 4, 11, 0.3);
        let c = positional_encoding(3, 5, 4, DEFAULT_PE_BASE).unwrap();
        let mass = grid_integral(|x| flow.log_likelihood(x, &c), dim, -6.0, 6.0, steps).unwrap();
        assert!((mass - 1.0).abs() < 1e-2, "dim={dim} mass={mass}");
    }
}

#[test]
fn batched_and_single_vector_agree_bitwise() {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(9);
    let flow = random_flow(5, 8, 4, 12, 0.4);
    let rows: Vec<Vec<f64>> = (0..7).map(|_| random_vec(&mut rng, 5, 2.0)).collect();
    let conds: Vec<Vec<f64>> = (0..7).map(|_| random_vec(&mut rng, 8, 1.0)).collect();
    let z = crate::numerics::Tensor::from_rows(&rows).unwrap();
    let c = crate::numerics::Tensor::from_rows(&conds).unwrap();
    let batch = flow.log_likelihood_batch(&z, Some(&c)).unwrap();
    for i in 0..7 {
        assert_eq!(
            batch[i].to_bits(),
            flow.log_likelihood(&rows[i], &conds[i]).unwrap().to_bits()
        );
    }
}

#[test]
fn unconditional_flow_ignores_condition() {
    let flow = random_flow(4, 0, 4, 13, 0.4);
    let z = [0.1, -0.2, 0.3, 0.9];
    assert_eq!(
        flow.log_likelihood(&z, &[]).unwrap(),
        flow.log_likelihood(&z, &[1.0; 8]).unwrap()
    );
}

#[test]
fn dimension_mismatch_names_scale() {
    let flow = random_flow(4, 4, 2, 1, 0.1);
    let err = flow.log_likelihood(&[0.0; 3], &[0.0; 4]).unwrap_err();
    assert!(err.to_string().contains("scale"), "{err}");
}
