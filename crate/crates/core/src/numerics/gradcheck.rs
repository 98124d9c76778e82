use super::tape::{ParamId, Tape, Var};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// A scalar function of parameters, built on a tape.
pub trait TracedFn: Fn(&mut Tape, &[Var]) -> Result<Var> {}
impl<F: Fn(&mut Tape, &[Var]) -> Result<Var>> TracedFn for F {}

/// Per-coordinate result of a gradient check.
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

fn evaluate(f: &impl TracedFn, params: &[Tensor]) -> Result<f64> {
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    tape.value(loss)?
        .item()
        .ok_or_else(|| Error::Contract("traced function must return a scalar".into()))
}

/// Central-difference stencil used for the numeric gradient.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Stencil {
    /// `(f(x+h) − f(x−h)) / 2h`, truncation error O(h²).
    #[default]
    ThreePoint,
    /// `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`, truncation error O(h⁴).
    FivePoint,
}

impl Stencil {
    fn offsets(self) -> &'static [(f64, f64)] {
        match self {
            Stencil::ThreePoint => &[(1.0, 0.5), (-1.0, -0.5)],
            Stencil::FivePoint => &[
                (2.0, -1.0 / 12.0),
                (1.0, 8.0 / 12.0),
                (-1.0, -8.0 / 12.0),
                (-2.0, 1.0 / 12.0),
            ],
        }
    }
}

/// Compares tape gradients against three-point central differences with step `h`.
///
/// Relative error per coordinate is `|a - n| / max(|a|, |n|, 1e-8)`.
/// Coordinates are numbered across all parameters in order.
pub fn grad_check_report(f: impl TracedFn, params: &[Tensor], h: f64) -> Result<GradCheckReport> {
    grad_check_stencil(f, params, h, Stencil::ThreePoint)
}

/// [`grad_check_report`] with a choice of central-difference stencil.
pub fn grad_check_stencil(
    f: impl TracedFn,
    params: &[Tensor],
    h: f64,
    stencil: Stencil,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Contract(format!(
            "finite-difference step must be positive, got {h}"
        )));
    }
    let mut tape = Tape::new();
    let vars = params
        .iter()
        .enumerate()
        .map(|(i, p)| tape.param(ParamId(i), p.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = f(&mut tape, &vars)?;
    let analytic: Vec<f64> = tape
        .backward(loss)?
        .into_ordered()
        .into_iter()
        .flat_map(Tensor::into_data)
        .collect();

    let mut numeric = Vec::with_capacity(analytic.len());
    let mut work: Vec<Tensor> = params.to_vec();
    let mut flat = 0;
    for p in 0..params.len() {
        for j in 0..params[p].len() {
            let base = params[p].data()[j];
            let shift = |work: &mut Vec<Tensor>, v: f64| {
                let mut data = params[p].data().to_vec();
                data[j] = v;
                work[p] = Tensor::new(params[p].shape().to_vec(), data).expect("same shape");
            };
            let mut derivative = 0.0;
            for &(step, weight) in stencil.offsets() {
                shift(&mut work, base + step * h);
                let value = evaluate(&f, &work)?;
                if !value.is_finite() {
                    return Err(Error::GradCheck {
                        index: flat,
                        msg: format!("non-finite value {value} at perturbed point"),
                    });
                }
                derivative += weight * value;
            }
            work[p] = params[p].clone();
            numeric.push(derivative / h);
            flat += 1;
        }
    }

    let (mut max_rel_error, mut worst_index) = (0.0f64, 0);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-8);
        if rel > max_rel_error {
            max_rel_error = rel;
            worst_index = i;
        }
    }
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}

/// Maximum relative error between analytic and central-difference gradients.
pub fn grad_check(f: impl TracedFn, params: &[Tensor], h: f64) -> Result<f64> {
    grad_check_report(f, params, h).map(|r| r.max_rel_error)
}
