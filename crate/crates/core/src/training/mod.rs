//! Maximum-likelihood training of the per-scale flow decoders.

mod loss;
mod optim;
mod sampler;
mod state;

use crate::error::{Error, Result};
use crate::feature_store::FeaturePyramid;
use crate::flow::{FlowModel, FlowScale, LOG_2PI};
use crate::rng;

pub use loss::{cflow_loss, cflow_loss_traced, cflow_loss_value};
pub use optim::{adam_step, lr_schedule, AdamParams, AdamState};
pub use sampler::ScaleSamples;
pub use state::{ScaleState, TrainState, STATE_MAGIC, STATE_VERSION};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub image_batch: usize,
    pub vector_batch: usize,
    pub warmup_epochs: usize,
    pub seed: u64,
    pub adam: AdamParams,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 2e-4,
            epochs: 100,
            image_batch: 32,
            vector_batch: 8192,
            warmup_epochs: 2,
            seed: 0,
            adam: AdamParams::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.image_batch == 0 || self.vector_batch == 0 {
            return Err(Error::Config(
                "epochs, image_batch and vector_batch must be positive".into(),
            ));
        }
        if self.warmup_epochs >= self.epochs {
            return Err(Error::Config(format!(
                "warmup_epochs ({}) must be below epochs ({})",
                self.warmup_epochs, self.epochs
            )));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        Ok(())
    }

    /// One epoch covers the training vectors once in expectation.
    pub fn steps_per_epoch(&self, total_vectors: usize) -> usize {
        total_vectors.div_ceil(self.vector_batch).max(1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub scale: usize,
    pub mean_loss: f64,
}

/// Trains one scale decoder in place, continuing from `state`, until
/// `until_epoch` epochs are done (capped at `config.epochs`).
pub fn train_scale(
    scale: &mut FlowScale,
    scale_index: usize,
    samples: &ScaleSamples<'_>,
    config: &TrainConfig,
    state: &mut ScaleState,
    until_epoch: usize,
) -> Result<()> {
    config.validate()?;
    if samples.depth() != scale.dim() {
        return Err(Error::Config(format!(
            "scale {scale_index}: features are {}-dim, decoder expects {}",
            samples.depth(),
            scale.dim()
        )));
    }
    let n_params = scale.parameter_count();
    if state.adam.m.len() != n_params {
        return Err(Error::Config(format!(
            "scale {scale_index}: train state has {} moments for {n_params} parameters",
            state.adam.m.len()
        )));
    }
    let spe = config.steps_per_epoch(samples.total_vectors());
    let mut params = scale.flat_parameters();
    let until = until_epoch.min(config.epochs);
    while state.epochs_done < until {
        let epoch = state.epochs_done;
        let mut sum = 0.0;
        let mut finite = 0usize;
        for step in 0..spe {
            let global = (epoch * spe + step) as u64;
            let mut stream = rng::stream(&[config.seed, scale_index as u64, global]);
            let (z, c, _) = samples.sample(config, &mut stream);
            match cflow_loss(scale, &z, c.as_ref(), global) {
                Ok((loss, grads)) => {
                    let lr = lr_schedule(config, epoch, step, spe);
                    adam_step(&mut params, &grads, &mut state.adam, lr, config.adam)?;
                    scale.set_flat_parameters(&params)?;
                    sum += loss;
                    finite += 1;
                }
                Err(Error::Training { batch, msg }) => {
                    log::warn!("scale {scale_index} batch {batch}: {msg}; skipping update");
                }
                Err(e) => return Err(e),
            }
        }
        if finite == 0 {
            return Err(Error::Training {
                batch: (epoch * spe) as u64,
                msg: format!(
                    "scale {scale_index}: every batch of epoch {} had a non-finite loss",
                    epoch + 1
                ),
            });
        }
        let mean = sum / finite as f64;
        log::debug!(
            "scale {scale_index} epoch {}: loss {mean:.5} (nll {:.5})",
            epoch + 1,
            mean + 0.5 * scale.dim() as f64 * LOG_2PI
        );
        state.epoch_losses.push(mean);
        state.epochs_done += 1;
    }
    Ok(())
}

/// Options for [`train`] beyond the hyperparameters.
#[derive(Debug, Clone, Default)]
pub struct TrainRun {
    /// Continue from a saved state (the model must hold the matching parameters).
    pub resume: Option<TrainState>,
    /// Stop after this many total epochs; `None` runs to `config.epochs`.
    pub stop_after: Option<usize>,
    /// Worker threads across scales; results do not depend on it.
    pub threads: usize,
}

pub struct TrainOutcome {
    pub model: FlowModel,
    pub state: TrainState,
}

impl TrainOutcome {
    pub fn loss_curve(&self) -> Vec<EpochLoss> {
        let mut out = Vec::new();
        for (k, s) in self.state.scales.iter().enumerate() {
            for (e, &mean_loss) in s.epoch_losses.iter().enumerate() {
                out.push(EpochLoss {
                    epoch: e + 1,
                    scale: k,
                    mean_loss,
                });
            }
        }
        out.sort_by_key(|l| (l.epoch, l.scale));
        out
    }
}

/// Position codes for every position of a `height×width` map.
pub fn position_codes(scale: &FlowScale, height: usize, width: usize) -> Vec<f64> {
    scale.encoder().grid(height, width)
}

/// Trains the `K` scale decoders of `model` independently on the train pyramids.
pub fn train(
    pyramids: &[FeaturePyramid],
    mut model: FlowModel,
    config: &TrainConfig,
    run: TrainRun,
) -> Result<TrainOutcome> {
    config.validate()?;
    if pyramids.is_empty() {
        return Err(Error::Config("no training pyramids".into()));
    }
    let k = model.scales.len();
    if let Some(p) = pyramids.iter().find(|p| p.num_scales() != k) {
        return Err(Error::Config(format!(
            "pyramid {} has {} scales, model has {k}",
            p.image_id,
            p.num_scales()
        )));
    }
    let mut states = match run.resume {
        Some(s) if s.scales.len() == k => s.scales,
        Some(s) => {
            return Err(Error::Config(format!(
                "train state has {} scales, model has {k}",
                s.scales.len()
            )));
        }
        None => model
            .scales
            .iter()
            .map(|s| ScaleState::new(s.parameter_count()))
            .collect(),
    };
    let until = run.stop_after.unwrap_or(config.epochs);

    let job = |idx: usize, scale: &mut FlowScale, state: &mut ScaleState| -> Result<()> {
        let maps: Vec<_> = pyramids.iter().map(|p| &p.scales[idx]).collect();
        let (h, w) = (maps[0].height(), maps[0].width());
        let samples = ScaleSamples::new(maps, position_codes(scale, h, w), scale.cond_dim())?;
        train_scale(scale, idx, &samples, config, state, until)
    };

    let job = &job;
    if run.threads > 1 && k > 1 {
        let results: Vec<Result<()>> = std::thread::scope(|scope| {
            let handles: Vec<_> = model
                .scales
                .iter_mut()
                .zip(states.iter_mut())
                .enumerate()
                .map(|(i, (scale, state))| scope.spawn(move || job(i, scale, state)))
                .collect();
            handles
                .into_iter()
                .map(|h| {
                    h.join()
                        .unwrap_or_else(|_| Err(Error::Numeric("training thread panicked".into())))
                })
                .collect()
        });
        results.into_iter().collect::<Result<()>>()?;
    } else {
        for (i, (scale, state)) in model.scales.iter_mut().zip(states.iter_mut()).enumerate() {
            job(i, scale, state)?;
        }
    }
    Ok(TrainOutcome {
        model,
        state: TrainState { scales: states },
    })
}

pub fn loss_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,scale,mean_loss\n");
    for l in curve {
        s.push_str(&format!("{},{},{}\n", l.epoch, l.scale, l.mean_loss));
    }
    s
}
