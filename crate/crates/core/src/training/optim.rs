use std::f64::consts::PI;

use super::TrainConfig;
use crate::error::{Error, Result};

/// Learning rate for a step: linear warmup to `learning_rate` over the warmup
/// epochs, then cosine annealing to zero at the last step.
///
/// Steps are counted from 1 so the first warmup step already moves.
pub fn lr_schedule(
    config: &TrainConfig,
    epoch: usize,
    step_in_epoch: usize,
    steps_per_epoch: usize,
) -> f64 {
    let spe = steps_per_epoch.max(1);
    let step = (epoch * spe + step_in_epoch + 1) as f64;
    let warmup = (config.warmup_epochs * spe) as f64;
    let total = (config.epochs * spe) as f64;
    if step <= warmup {
        return config.learning_rate * step / warmup;
    }
    let progress = ((step - warmup) / (total - warmup).max(1.0)).clamp(0.0, 1.0);
    config.learning_rate * 0.5 * (1.0 + (PI * progress).cos())
}

/// First and second moment estimates for Adam over a flat parameter vector.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        AdamState {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamParams {
    fn default() -> Self {
        AdamParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    hp: AdamParams,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::Dimension {
            op: "adam_step",
            left: vec![params.len(), state.m.len()],
            right: vec![grads.len()],
        });
    }
    if let Some(i) = grads.iter().position(|g| g.is_nan()) {
        return Err(Error::Training {
            batch: state.step,
            msg: format!("NaN gradient at parameter {i}"),
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(&mut state.m)
        .zip(&mut state.v)
    {
        *m = hp.beta1 * *m + (1.0 - hp.beta1) * g;
        *v = hp.beta2 * *v + (1.0 - hp.beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + hp.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ends_at_base_rate() {
        let c = TrainConfig::default();
        let spe = 10;
        assert_eq!(lr_schedule(&c, 1, spe - 1, spe), 2e-4);
        assert!((lr_schedule(&c, 0, 0, spe) - 2e-4 / 20.0).abs() < 1e-20);
    }

    #[test]
    fn cosine_reaches_zero() {
        let c = TrainConfig::default();
        let spe = 7;
        assert!(lr_schedule(&c, c.epochs - 1, spe - 1, spe) < 1e-9);
        let mid = lr_schedule(&c, 51, 0, spe);
        assert!(mid > 0.4 * 2e-4 && mid < 0.6 * 2e-4, "{mid}");
    }

    #[test]
    fn schedule_is_non_increasing_after_warmup() {
        let c = TrainConfig::default();
        let spe = 3;
        let mut prev = f64::INFINITY;
        for e in c.warmup_epochs..c.epochs {
            for s in 0..spe {
                let lr = lr_schedule(&c, e, s, spe);
                assert!(lr <= prev);
                prev = lr;
            }
        }
    }

    #[test]
    fn first_adam_step_moves_by_lr() {
        let mut p = [0.5];
        let mut st = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut st, 2e-4, AdamParams::default()).unwrap();
        assert!((p[0] - (0.5 - 2e-4)).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut p = [0.5, -1.0];
        let mut st = AdamState::new(2);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0, 0.0], &mut st, 1e-2, AdamParams::default()).unwrap();
        }
        assert_eq!(p, [0.5, -1.0]);
    }

    #[test]
    fn nan_gradient_errors() {
        let mut p = [0.0];
        let mut st = AdamState::new(1);
        assert!(matches!(
            adam_step(&mut p, &[f64::NAN], &mut st, 1e-3, AdamParams::default()),
            Err(Error::Training { .. })
        ));
    }
}
