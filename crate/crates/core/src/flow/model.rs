use rand::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use super::coupling::{CouplingLayer, DEFAULT_CLAMP};
use super::posenc::{PositionalEncoder, DEFAULT_CONDITION_CHANNELS, DEFAULT_PE_BASE};
use crate::error::{Error, Result};
use crate::numerics::{ParamId, Tape, Tensor, Var};
use crate::rng::shuffle;

pub const LOG_2PI: f64 = 1.8378770664093453;

/// Shape and initialization of one scale's decoder.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowConfig {
    pub dim: usize,
    /// Condition channels; 0 gives an unconditional flow.
    pub cond_dim: usize,
    pub layers: usize,
    pub clamp: f64,
    /// Seeds the per-layer permutations and the hidden-layer initialization.
    pub seed: u64,
    pub pe_base: f64,
    /// When false every permutation is the identity.
    pub shuffle: bool,
}

impl FlowConfig {
    pub fn new(dim: usize) -> Self {
        FlowConfig {
            dim,
            cond_dim: DEFAULT_CONDITION_CHANNELS,
            layers: 8,
            clamp: DEFAULT_CLAMP,
            seed: 0,
            pe_base: DEFAULT_PE_BASE,
            shuffle: true,
        }
    }

    pub fn unconditional(mut self) -> Self {
        self.cond_dim = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.layers == 0 {
            return Err(Error::Config(format!(
                "flow needs dim >= 1 and layers >= 1, got dim={} layers={}",
                self.dim, self.layers
            )));
        }
        PositionalEncoder::new(self.cond_dim, self.pe_base)?;
        if !(self.clamp > 0.0) {
            return Err(Error::Config(format!(
                "clamp must be positive, got {}",
                self.clamp
            )));
        }
        Ok(())
    }

    /// Closed-form parameter count; independent of the feature map size.
    pub fn parameter_count(&self) -> usize {
        (0..self.layers)
            .map(|l| {
                let passive = if l % 2 == 0 {
                    self.dim.div_ceil(2)
                } else {
                    self.dim / 2
                };
                let active = self.dim - passive;
                let hidden = passive + self.cond_dim;
                hidden * hidden + hidden + hidden * 2 * active + 2 * active
            })
            .sum()
    }
}

/// One scale's conditional flow decoder: `L` coupling layers.
///
/// [`inverse`](Self::inverse) maps features to the latent `u`;
/// [`forward`](Self::forward) maps latents back to features.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowScale {
    config: FlowConfig,
    layers: Vec<CouplingLayer>,
}

impl FlowScale {
    pub fn new(config: FlowConfig) -> Result<Self> {
        config.validate()?;
        let mut perm_rng = Xoshiro256PlusPlus::seed_from_u64(config.seed);
        let mut init_rng = Xoshiro256PlusPlus::seed_from_u64(config.seed ^ 0x9E37_79B9_7F4A_7C15);
        let layers = (0..config.layers)
            .map(|l| {
                let mut perm: Vec<usize> = (0..config.dim).collect();
                if config.shuffle {
                    shuffle(&mut perm_rng, &mut perm);
                }
                CouplingLayer::new(
                    config.dim,
                    config.cond_dim,
                    config.clamp,
                    perm,
                    l % 2 == 0,
                    &mut init_rng,
                )
            })
            .collect::<Result<_>>()?;
        Ok(FlowScale { config, layers })
    }

    pub fn config(&self) -> &FlowConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.config.dim
    }

    pub fn cond_dim(&self) -> usize {
        self.config.cond_dim
    }

    pub fn layers(&self) -> &[CouplingLayer] {
        &self.layers
    }

    pub fn encoder(&self) -> PositionalEncoder {
        PositionalEncoder::new(self.config.cond_dim, self.config.pe_base)
            .expect("validated at construction")
    }

    pub fn parameters(&self) -> Vec<&Tensor> {
        self.layers.iter().flat_map(|l| l.parameters()).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(CouplingLayer::parameter_count).sum()
    }

    pub fn set_parameters(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != 4 * self.layers.len() {
            return Err(Error::Config(format!(
                "expected {} parameter tensors, got {}",
                4 * self.layers.len(),
                params.len()
            )));
        }
        let mut it = params.into_iter();
        for layer in &mut self.layers {
            let p = [(); 4].map(|_| it.next().expect("length checked"));
            layer.set_parameters(p)?;
        }
        Ok(())
    }

    /// Overwrites parameters from a flat vector in declaration order.
    pub fn set_flat_parameters(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.parameter_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                flat.len()
            )));
        }
        let mut offset = 0;
        let params = self
            .parameters()
            .into_iter()
            .map(|p| {
                let t = Tensor::new(p.shape().to_vec(), flat[offset..offset + p.len()].to_vec());
                offset += p.len();
                t
            })
            .collect::<Result<Vec<_>>>()?;
        self.set_parameters(params)
    }

    /// Fills every parameter with uniform noise in `[-magnitude, magnitude]`.
    /// Used to build non-trivial flows for diagnostics.
    pub fn randomize_parameters(&mut self, seed: u64, magnitude: f64) {
        use rand::Rng;
        let mut rng = Xoshiro256PlusPlus::seed_from_u64(seed);
        let n = self.parameter_count();
        let flat: Vec<f64> = (0..n)
            .map(|_| magnitude * rng.random_range(-1.0..1.0))
            .collect();
        self.set_flat_parameters(&flat).expect("length matches");
    }

    pub fn flat_parameters(&self) -> Vec<f64> {
        self.parameters()
            .iter()
            .flat_map(|t| t.data().iter().copied())
            .collect()
    }

    fn check(&self, x: &Tensor, cond: Option<&Tensor>, scale: usize) -> Result<()> {
        if x.shape().len() != 2 || x.cols() != self.dim() {
            return Err(Error::Config(format!(
                "scale {scale}: expected {}-dim features, got shape {:?}",
                self.dim(),
                x.shape()
            )));
        }
        if self.cond_dim() > 0 && cond.is_none_or(|c| c.shape() != [x.rows(), self.cond_dim()]) {
            return Err(Error::Config(format!(
                "scale {scale}: expected {}x{} condition, got {:?}",
                x.rows(),
                self.cond_dim(),
                cond.map(Tensor::shape)
            )));
        }
        Ok(())
    }

    /// Features `N×D` to latents; returns `(u, log|det ∂u/∂z|)` per row.
    pub fn inverse_batch(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.check(z, cond, 0)?;
        let cond = cond.filter(|_| self.cond_dim() > 0);
        let mut x = z.clone();
        let mut total = vec![0.0; z.rows()];
        for layer in self.layers.iter().rev() {
            let (next, ld) = layer.inverse_batch(&x, cond)?;
            for (acc, v) in total.iter_mut().zip(ld) {
                *acc += v;
            }
            x = next;
        }
        Ok((x, total))
    }

    /// Latents `N×D` to features; returns `(z, log|det ∂z/∂u|)` per row.
    pub fn forward_batch(&self, u: &Tensor, cond: Option<&Tensor>) -> Result<(Tensor, Vec<f64>)> {
        self.check(u, cond, 0)?;
        let cond = cond.filter(|_| self.cond_dim() > 0);
        let mut x = u.clone();
        let mut total = vec![0.0; u.rows()];
        for layer in &self.layers {
            let (next, ld) = layer.forward_batch(&x, cond)?;
            for (acc, v) in total.iter_mut().zip(ld) {
                *acc += v;
            }
            x = next;
        }
        Ok((x, total))
    }

    fn single(&self, v: &[f64], cond: &[f64]) -> Result<(Tensor, Option<Tensor>)> {
        let x = Tensor::matrix(1, v.len(), v.to_vec())?;
        let c = (self.cond_dim() > 0)
            .then(|| Tensor::matrix(1, cond.len(), cond.to_vec()))
            .transpose()?;
        Ok((x, c))
    }

    pub fn inverse(&self, z: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, c) = self.single(z, cond)?;
        let (u, ld) = self.inverse_batch(&x, c.as_ref())?;
        Ok((u.into_data(), ld[0]))
    }

    pub fn forward(&self, u: &[f64], cond: &[f64]) -> Result<(Vec<f64>, f64)> {
        let (x, c) = self.single(u, cond)?;
        let (z, ld) = self.forward_batch(&x, c.as_ref())?;
        Ok((z.into_data(), ld[0]))
    }

    /// `log p̂(z | c) = -(‖u‖² + D·log 2π)/2 + log|det J|` per row.
    pub fn log_likelihood_batch(&self, z: &Tensor, cond: Option<&Tensor>) -> Result<Vec<f64>> {
        let (u, logdet) = self.inverse_batch(z, cond)?;
        let d = self.dim() as f64;
        Ok((0..u.rows())
            .map(|r| {
                let sq: f64 = u.row(r).iter().map(|v| v * v).sum();
                -0.5 * (sq + d * LOG_2PI) + logdet[r]
            })
            .collect())
    }

    pub fn log_likelihood(&self, z: &[f64], cond: &[f64]) -> Result<f64> {
        let (x, c) = self.single(z, cond)?;
        Ok(self.log_likelihood_batch(&x, c.as_ref())?[0])
    }

    /// Registers every parameter on `tape` with ids `first_id..`.
    pub fn register(&self, tape: &mut Tape, first_id: usize) -> Result<Vec<Var>> {
        self.parameters()
            .into_iter()
            .enumerate()
            .map(|(i, p)| tape.param(ParamId(first_id + i), p.clone()))
            .collect()
    }

    /// Recorded feature-to-latent map; `logdet` is `N×1`.
    pub fn inverse_traced(
        &self,
        tape: &mut Tape,
        params: &[Var],
        z: Var,
        cond: Option<Var>,
    ) -> Result<(Var, Var)> {
        if params.len() != 4 * self.layers.len() {
            return Err(Error::Contract(format!(
                "expected {} parameter vars, got {}",
                4 * self.layers.len(),
                params.len()
            )));
        }
        let mut x = z;
        let mut total: Option<Var> = None;
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let (next, ld) = layer.inverse_traced(tape, &params[4 * l..4 * l + 4], x, cond)?;
            total = Some(match total {
                None => ld,
                Some(t) => tape.add(t, ld)?,
            });
            x = next;
        }
        Ok((x, total.expect("at least one layer")))
    }
}

/// `K` independent per-scale decoders.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    pub scales: Vec<FlowScale>,
}

impl FlowModel {
    pub fn new(configs: &[FlowConfig]) -> Result<Self> {
        if configs.is_empty() {
            return Err(Error::Config("flow model needs at least one scale".into()));
        }
        Ok(FlowModel {
            scales: configs
                .iter()
                .map(|&c| FlowScale::new(c))
                .collect::<Result<_>>()?,
        })
    }

    pub fn scale(&self, k: usize) -> Result<&FlowScale> {
        self.scales.get(k).ok_or_else(|| {
            Error::Config(format!(
                "model has {} scales, asked for scale {k}",
                self.scales.len()
            ))
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.scales.iter().map(FlowScale::parameter_count).sum()
    }
}
