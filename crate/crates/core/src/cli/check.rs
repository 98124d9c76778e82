use std::path::PathBuf;

use clap::Args;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::Xoshiro256PlusPlus;

use super::config::Echo;
use crate::diagnostics::numerical_log_abs_det;
use crate::error::{Error, Result};
use crate::flow::{read_checkpoint, FlowConfig, FlowModel, FlowScale};
use crate::mvg::{reverse_kl_identity_check, Gaussian};
use crate::numerics::{grad_check_stencil, Stencil, Tape, Tensor, Var};
use crate::rng;
use crate::training::cflow_loss_traced;

#[derive(Debug, Args, Clone, PartialEq)]
pub struct CheckArgs {
    /// Flow checkpoint to check; a fresh model is built when absent.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Feature dimension of the fresh model.
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub cond_dim: usize,
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    /// Magnitude of random parameters for the fresh model (0 keeps the identity init).
    #[arg(long, default_value_t = 0.0)]
    pub randomize: f64,
    /// Random `(z, c)` pairs for the identity sweep.
    #[arg(long, default_value_t = 1000)]
    pub points: usize,
    /// Points for the Jacobian and gradient checks.
    #[arg(long, default_value_t = 20)]
    pub probe_points: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1e-8)]
    pub identity_tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub jacobian_tol: f64,
    #[arg(long, default_value_t = 1e-6)]
    pub grad_tol: f64,
    /// Adds an offset to the analytic log-determinant (negative control).
    #[arg(long, hide = true)]
    pub corrupt_logdet: bool,
}

impl Echo for CheckArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = Vec::new();
        if let Some(c) = &self.checkpoint {
            p.push(("checkpoint", c.display().to_string()));
        }
        p.extend([
            ("dim", self.dim.to_string()),
            ("cond-dim", self.cond_dim.to_string()),
            ("layers", self.layers.to_string()),
            ("randomize", self.randomize.to_string()),
            ("points", self.points.to_string()),
            ("probe-points", self.probe_points.to_string()),
            ("seed", self.seed.to_string()),
            ("identity-tol", self.identity_tol.to_string()),
            ("jacobian-tol", self.jacobian_tol.to_string()),
            ("grad-tol", self.grad_tol.to_string()),
            ("corrupt-logdet", self.corrupt_logdet.to_string()),
        ]);
        p
    }
}

const CORRUPTION: f64 = 1e-3;

fn random_condition(scale: &FlowScale, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    scale
        .encoder()
        .encode(rng.random_range(0..32), rng.random_range(0..32))
}

fn random_spd(d: usize, rng: &mut Xoshiro256PlusPlus) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-0.05..0.05));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.3
}

fn normal_vec(d: usize, sigma: f64, rng: &mut Xoshiro256PlusPlus) -> Vec<f64> {
    (0..d)
        .map(|_| sigma * <StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
        .collect()
}

/// Maximum gap of the pointwise density identity over random inputs and targets.
pub fn identity_sweep(scale: &FlowScale, points: usize, seed: u64, corrupt: bool) -> Result<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
    let d = scale.dim();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let target = Gaussian::new(
            DVector::from_vec(normal_vec(d, 1.0, &mut rng)),
            random_spd(d, &mut rng),
        )?;
        let z = normal_vec(d, 1.5, &mut rng);
        let c = random_condition(scale, &mut rng);
        let r = reverse_kl_identity_check(scale, &target, &z, &c)?;
        let rhs = if corrupt { r.rhs + CORRUPTION } else { r.rhs };
        worst = worst.max((r.lhs - rhs).abs());
    }
    Ok(worst)
}

/// Maximum relative error of the analytic log-determinant against finite differences.
pub fn jacobian_sweep(scale: &FlowScale, points: usize, seed: u64, corrupt: bool) -> Result<f64> {
    let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed ^ 0x1AC0);
    let d = scale.dim();
    let mut worst = 0.0f64;
    for _ in 0..points {
        let z = normal_vec(d, 1.0, &mut rng);
        let c = random_condition(scale, &mut rng);
        let (_, analytic) = scale.inverse(&z, &c)?;
        let analytic = if corrupt {
            analytic + CORRUPTION
        } else {
            analytic
        };
        let numeric = numerical_log_abs_det(|x| scale.inverse(x, &c).map(|r| r.0), &z, 1e-5)?;
        worst = worst.max((analytic - numeric).abs() / numeric.abs().max(1.0));
    }
    Ok(worst)
}

/// Batch size for each gradient probe.
const GRAD_BATCH: usize = 8;

/// Decoder depth used for the central-difference gradient probe.
///
/// Every coupling layer runs the same traced operations, so two layers cover
/// the whole code path including the inter-layer permutation. Deeper stacks
/// push many gradient entries below the round-off floor of central
/// differences, where the relative error is meaningless.
const GRAD_LAYERS: usize = 2;

/// Step for the five-point central stencil on the flow loss. Three-point
/// differences cannot reach 1e-6 relative accuracy here: coordinates with tiny
/// gradients need a large step to beat round-off, curved ones a small step to
/// beat truncation. The O(h⁴) stencil at this step satisfies both.
const GRAD_STEP: f64 = 1e-3;

/// Half-width of the uniform draw for probe parameters.
const GRAD_MAGNITUDE: f64 = 0.3;

/// A decoder with `scale`'s input and condition sizes (capped) and random parameters.
fn gradient_probe(scale: &FlowScale, seed: u64) -> Result<FlowScale> {
    let mut config = *scale.config();
    config.layers = config.layers.min(GRAD_LAYERS);
    config.dim = config.dim.min(8);
    config.cond_dim = config.cond_dim.min(8);
    let mut probe = FlowScale::new(config)?;
    probe.randomize_parameters(seed, GRAD_MAGNITUDE);
    Ok(probe)
}

/// Worst tape-vs-central-difference relative error of the loss gradient over
/// `points` random parameter points near `scale`, each on a fresh batch.
pub fn gradient_check(scale: &FlowScale, points: usize, seed: u64) -> Result<f64> {
    let mut worst = 0.0f64;
    for i in 0..points as u64 {
        let point_seed = rng::mix(seed ^ rng::mix(i));
        let probe = gradient_probe(scale, point_seed)?;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(point_seed ^ 0x6AD2);
        let d = probe.dim();
        let z = Tensor::matrix(GRAD_BATCH, d, normal_vec(GRAD_BATCH * d, 1.0, &mut rng))?;
        let c = (probe.cond_dim() > 0)
            .then(|| {
                let codes: Vec<f64> = (0..GRAD_BATCH)
                    .flat_map(|_| random_condition(&probe, &mut rng))
                    .collect();
                Tensor::matrix(GRAD_BATCH, probe.cond_dim(), codes)
            })
            .transpose()?;
        let params: Vec<Tensor> = probe.parameters().into_iter().cloned().collect();
        let report = grad_check_stencil(
            |tape: &mut Tape, p: &[Var]| cflow_loss_traced(tape, &probe, p, &z, c.as_ref()),
            &params,
            GRAD_STEP,
            Stencil::FivePoint,
        )?;
        log::debug!(
            "gradient point {i}: rel {:.3e} at {} (analytic {:e}, numeric {:e})",
            report.max_rel_error,
            report.worst_index,
            report.analytic[report.worst_index],
            report.numeric[report.worst_index]
        );
        worst = worst.max(report.max_rel_error);
    }
    Ok(worst)
}

fn gate(name: &str, value: f64, tol: f64) -> bool {
    let ok = value < tol;
    println!(
        "{} {name}: {value:.3e} (tolerance {tol:.0e})",
        if ok { "PASS" } else { "FAIL" }
    );
    ok
}

pub(crate) fn run(args: &CheckArgs) -> Result<()> {
    let model = match &args.checkpoint {
        Some(p) => read_checkpoint(p)?,
        None => {
            let config = FlowConfig {
                cond_dim: args.cond_dim,
                layers: args.layers,
                seed: args.seed,
                ..FlowConfig::new(args.dim)
            };
            let mut model = FlowModel::new(&[config])?;
            if args.randomize > 0.0 {
                model.scales[0].randomize_parameters(args.seed, args.randomize);
            }
            model
        }
    };
    let mut ok = true;
    for (k, scale) in model.scales.iter().enumerate() {
        let seed = args.seed.wrapping_add(k as u64);
        println!(
            "scale {k}: D={} C={} L={}",
            scale.dim(),
            scale.cond_dim(),
            scale.layers().len()
        );
        ok &= gate(
            "identity gap",
            identity_sweep(scale, args.points, seed, args.corrupt_logdet)?,
            args.identity_tol,
        );
        ok &= gate(
            "jacobian log-det relative error",
            jacobian_sweep(scale, args.probe_points, seed, args.corrupt_logdet)?,
            args.jacobian_tol,
        );
        ok &= gate(
            "gradient relative error",
            gradient_check(scale, args.probe_points, seed)?,
            args.grad_tol,
        );
    }
    if ok {
        Ok(())
    } else {
        Err(Error::Numeric("one or more checks failed".into()))
    }
}
