//! Conditional affine coupling layer.
//!
//! The layer permutes its input with a fixed `π`, keeps a passive block
//! `y_a`, and maps the active block as `y_b ⊙ exp(s) + t` where
//! `(s_raw, t) = subnet([y_a, c])` and `s = α·tanh(s_raw/α)`. The output stays
//! in permuted order. The subnet is `dense → softplus → dense`, hidden width
//! `D_a + C`, output width `2·D_b`.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::numerics::{self, Tape, Tensor, Var};

pub const DEFAULT_CLAMP: f64 = 1.9;

#[derive(Debug, Clone, PartialEq)]
pub struct CouplingLayer {
    dim: usize,
    cond_dim: usize,
    clamp: f64,
    /// `y[j] = z[perm[j]]`.
    perm: Vec<usize>,
    passive: Vec<usize>,
    active: Vec<usize>,
    /// Column of `[y_a, y_b]` that lands on each original coordinate.
    unpermute: Vec<usize>,
    w1: Tensor,
    b1: Tensor,
    w2: Tensor,
    b2: Tensor,
}

/// Subnet outputs for a batch: clamped log-scales and shifts, each `N×D_b`.
struct ScaleShift {
    s: Tensor,
    t: Tensor,
}

fn invert(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; perm.len()];
    for (j, &p) in perm.iter().enumerate() {
        inv[p] = j;
    }
    inv
}

impl CouplingLayer {
    /// Builds an identity-initialized layer: hidden weights drawn from
    /// `N(0, 1/fan_in)`, output layer zero.
    ///
    /// `passive_first` selects the split parity: the passive block is the first
    /// `⌈D/2⌉` permuted coordinates, otherwise the last `⌊D/2⌋`.
    pub fn new(
        dim: usize,
        cond_dim: usize,
        clamp: f64,
        perm: Vec<usize>,
        passive_first: bool,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("coupling layer needs dim >= 1".into()));
        }
        if !(clamp > 0.0) {
            return Err(Error::Config(format!(
                "scale clamp must be positive, got {clamp}"
            )));
        }
        let mut seen = vec![false; dim];
        if perm.len() != dim
            || !perm
                .iter()
                .all(|&p| p < dim && !std::mem::replace(&mut seen[p], true))
        {
            return Err(Error::Config(format!(
                "permutation is not a bijection on {dim} indices"
            )));
        }
        let (passive, active): (Vec<usize>, Vec<usize>) = if passive_first {
            let n_a = dim.div_ceil(2);
            ((0..n_a).collect(), (n_a..dim).collect())
        } else {
            let n_b = dim.div_ceil(2);
            ((n_b..dim).collect(), (0..n_b).collect())
        };
        let mut col_of_position = vec![0; dim];
        for (c, &p) in passive.iter().chain(&active).enumerate() {
            col_of_position[p] = c;
        }
        let perm_inv = invert(&perm);
        let unpermute = (0..dim).map(|i| col_of_position[perm_inv[i]]).collect();

        let fan_in = passive.len() + cond_dim;
        let std = if fan_in > 0 {
            (1.0 / fan_in as f64).sqrt()
        } else {
            0.0
        };
        let w1 = (0..fan_in * fan_in)
            .map(|_| std * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let out = 2 * active.len();
        Ok(CouplingLayer {
            dim,
            cond_dim,
            clamp,
            w1: Tensor::matrix(fan_in, fan_in, w1)?,
            b1: Tensor::zeros(&[fan_in]),
            w2: Tensor::zeros(&[fan_in, out]),
            b2: Tensor::zeros(&[out]),
            perm,
            passive,
            active,
            unpermute,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.cond_dim
    }

    pub fn clamp(&self) -> f64 {
        self.clamp
    }

    pub fn permutation(&self) -> &[usize] {
        &self.perm
    }

    pub fn passive_len(&self) -> usize {
        self.passive.len()
    }

    pub fn active_len(&self) -> usize {
        self.active.len()
    }

    /// Parameters in declaration order: hidden weight, hidden bias, output weight, output bias.
    pub fn parameters(&self) -> [&Tensor; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn parameter_count(&self) -> usize {
        self.parameters().iter().map(|t| t.len()).sum()
    }

    /// Replaces the parameters; shapes must match the current ones.
    pub fn set_parameters(&mut self, params: [Tensor; 4]) -> Result<()> {
        for (new, old) in params.iter().zip(self.parameters()) {
            if new.shape() != old.shape() {
                return Err(Error::Dimension {
                    op: "set_parameters",
                    left: old.shape().to_vec(),
                    right: new.shape().to_vec(),
                });
            }
        }
        let [w1, b1, w2, b2] = params;
        self.w1 = w1;
        self.b1 = b1;
        self.w2 = w2;
        self.b2 = b2;
        Ok(())
    }

    fn check_batch(&self, x: &Tensor, cond: Option<&Tensor>) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim {
            return Err(Error::Dimension {
                op: "coupling input",
                left: vec![self.dim],
                right: x.shape().to_vec(),
            });
        }
        match cond {
            Some(c) if c.shape() != [x.rows(), self.cond_dim] => Err(Error::Dimension {
                op: "coupling condition",
                left: vec![x.rows(), self.cond_dim],
                right: c.shape().to_vec(),
            }),
            None if self.cond_dim != 0 => Err(Error::Config(format!(
                "layer expects a {}-dim condition, none given",
                self.cond_dim
            ))),
            _ => Ok(()),
        }
    }

    fn subnet(&self, passive: &Tensor, cond: Option<&Tensor>) -> Result<ScaleShift> {
        let x = match cond {
            Some(c) if self.cond_dim > 0 => numerics::concat_cols(passive, c)?,
            _ => passive.clone(),
        };
        let h = numerics::softplus(&numerics::add_row_bias(
            &numerics::matmul(&x, &self.w1)?,
            &self.b1,
        )?);
        let o = numerics::add_row_bias(&numerics::matmul(&h, &self.w2)?, &self.b2)?;
        let n_b = self.active.len();
        let alpha = self.clamp;
        let s = numerics::gather_cols(&o, &(0..n_b).collect::<Vec<_>>())?
            .map(|v| alpha * (v / alpha).tanh());
        let t = numerics::gather_cols(&o, &(n_b..2 * n_b).collect::<Vec<_>>())?;
        Ok(ScaleShift { s, t })
    }

    /// Batched forward map on `N×D` inputs; returns outputs and per-row log-dets.
    pub fn forward_batch(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(z, cond)?;
        let y = numerics::gather_cols(z, &self.perm)?;
        let y_a = numerics::gather_cols(&y, &self.passive)?;
        let y_b = numerics::gather_cols(&y, &self.active)?;
        let ScaleShift { s, t } = self.subnet(&y_a, cond)?;
        let scaled = y_b.zip_with(&s, "coupling", |y, s| y * s.exp())?;
        let z_b = scaled.zip_with(&t, "coupling", |y, t| y + t)?;
        let mut out = y.into_data();
        for r in 0..z.rows() {
            let row = &mut out[r * self.dim..(r + 1) * self.dim];
            for (&pos, &v) in self.active.iter().zip(z_b.row(r)) {
                row[pos] = v;
            }
        }
        let logdet = numerics::row_sums(&s)?.into_data();
        Ok((Tensor::matrix(z.rows(), self.dim, out)?, logdet))
    }

    /// Exact inverse of [`forward_batch`](Self::forward_batch); log-dets are `-Σ s`.
    pub fn inverse_batch(
        &self,
        z_out: &Tensor,
        cond: Option<&Tensor>,
    ) -> Result<(Tensor, Vec<f64>)> {
        self.check_batch(z_out, cond)?;
        let y_a = numerics::gather_cols(z_out, &self.passive)?;
        let z_b = numerics::gather_cols(z_out, &self.active)?;
        let ScaleShift { s, t } = self.subnet(&y_a, cond)?;
        let shifted = z_b.zip_with(&t, "coupling", |z, t| z - t)?;
        let y_b = shifted.zip_with(&s, "coupling", |v, s| v * (-s).exp())?;
        let joined = numerics::concat_cols(&y_a, &y_b)?;
        let z = numerics::gather_cols(&joined, &self.unpermute)?;
        let logdet = numerics::row_sums(&s)?
            .into_data()
            .into_iter()
            .map(|v| -v)
            .collect();
        Ok((z, logdet))
    }

    /// Single-vector forward map.
    pub fn forward(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (out, ld) = self.forward_batch(
            &Tensor::matrix(1, z.len(), z.to_vec())?,
            self.cond_row(cond)?.as_ref(),
        )?;
        Ok((out.into_data(), ld[0]))
    }

    /// Single-vector inverse map.
    pub fn inverse(&self, z_out: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (out, ld) = self.inverse_batch(
            &Tensor::matrix(1, z_out.len(), z_out.to_vec())?,
            self.cond_row(cond)?.as_ref(),
        )?;
        Ok((out.into_data(), ld[0]))
    }

    fn cond_row(&self, cond: &[f64]) -> Result<Option<Tensor>> {
        if self.cond_dim == 0 {
            return Ok(None);
        }
        Tensor::matrix(1, cond.len(), cond.to_vec()).map(Some)
    }

    /// Recorded inverse map for training. `params` are this layer's four
    /// parameter variables; returns `(z, logdet)` with `logdet` shaped `N×1`.
    pub fn inverse_traced(
        &self,
        tape: &mut Tape,
        params: &[Var],
        z_out: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        let [w1, b1, w2, b2] = params else {
            return Err(Error::Contract(format!(
                "coupling layer takes 4 parameters, got {}",
                params.len()
            )));
        };
        let y_a = tape.gather_cols(z_out, &self.passive)?;
        let z_b = tape.gather_cols(z_out, &self.active)?;
        let x = match cond {
            Some(c) if self.cond_dim > 0 => tape.concat_cols(y_a, c)?,
            _ => y_a,
        };
        let h = tape.matmul(x, *w1)?;
        let h = tape.add_row_bias(h, *b1)?;
        let h = tape.softplus(h)?;
        let o = tape.matmul(h, *w2)?;
        let o = tape.add_row_bias(o, *b2)?;
        let n_b = self.active.len();
        let s_raw = tape.gather_cols(o, &(0..n_b).collect::<Vec<_>>())?;
        let t = tape.gather_cols(o, &(n_b..2 * n_b).collect::<Vec<_>>())?;
        let s = tape.scale(s_raw, 1.0 / self.clamp)?;
        let s = tape.tanh(s)?;
        let s = tape.scale(s, self.clamp)?;
        let neg_s = tape.scale(s, -1.0)?;
        let inv_scale = tape.exp(neg_s)?;
        let shifted = tape.sub(z_b, t)?;
        let y_b = tape.mul(shifted, inv_scale)?;
        let joined = tape.concat_cols(y_a, y_b)?;
        let z = tape.gather_cols(joined, &self.unpermute)?;
        let logdet = tape.row_sums(neg_s)?;
        Ok((z, logdet))
    }
}
