use cflow::diagnostics::grid_integral;
use cflow::feature_store::{FeaturePyramid, Label, Split};
use cflow::flow::{positional_encoding, FlowConfig, FlowModel, FlowScale, DEFAULT_PE_BASE};
use cflow::metrics::{evaluate, EvalInput, PixelPooling, Report, DEFAULT_FPR_LIMIT};
use cflow::mvg::{fit_mvg, DEFAULT_RIDGE};
use cflow::scoring::{
    score_flow, score_from_distances, AnomalyMap, ImageReduction, NormScope, ScoreOptions,
};
use cflow::synth::{generate_images, SynthConfig};
use cflow::training::{train, TrainConfig, TrainRun, TrainState};
use cflow::{Error, Result};

/// Condition channels used by the demo's conditional decoders.
pub const DEMO_COND_DIM: usize = 32;

/// A small synthetic dataset sized for interactive use in a browser tab.
pub fn demo_config(seed: u64, shift: f64) -> SynthConfig {
    SynthConfig {
        seed,
        shift,
        n_train: 32,
        n_test_good: 8,
        n_test_anom: 8,
        name: "demo".into(),
        ..SynthConfig::default()
    }
}

struct FlowRun {
    model: Option<FlowModel>,
    state: Option<TrainState>,
    config: TrainConfig,
    done: usize,
}

/// Dataset, the model being trained and the latest anomaly maps.
pub struct Session {
    config: SynthConfig,
    train: Vec<FeaturePyramid>,
    test: Vec<FeaturePyramid>,
    labels: Vec<bool>,
    masks: Vec<Vec<bool>>,
    flow: Option<FlowRun>,
    maps: Option<Vec<AnomalyMap>>,
}

impl Session {
    pub fn new(config: SynthConfig) -> Result<Self> {
        let images = generate_images(&config, 1)?;
        let (mut train, mut test, mut labels, mut masks) =
            (Vec::new(), Vec::new(), Vec::new(), Vec::new());
        for image in images {
            if image.split == Split::Train {
                train.push(image.pyramid);
            } else {
                labels.push(image.label == Label::Anomalous);
                masks.push(image.mask(&config));
                test.push(image.pyramid);
            }
        }
        Ok(Session {
            config,
            train,
            test,
            labels,
            masks,
            flow: None,
            maps: None,
        })
    }

    pub fn image_size(&self) -> (usize, usize) {
        self.config.image_size
    }

    pub fn test_count(&self) -> usize {
        self.test.len()
    }

    pub fn is_anomalous(&self, index: usize) -> bool {
        self.labels.get(index).copied().unwrap_or(false)
    }

    pub fn mask(&self, index: usize) -> Option<&[bool]> {
        self.masks.get(index).map(Vec::as_slice)
    }

    /// Prepares a fresh flow decoder per scale; epochs then run one at a time.
    pub fn start_flow(&mut self, epochs: usize, conditional: bool) -> Result<()> {
        let configs: Vec<FlowConfig> = self
            .config
            .scales
            .iter()
            .enumerate()
            .map(|(k, &(_, _, d))| FlowConfig {
                cond_dim: if conditional { DEMO_COND_DIM } else { 0 },
                seed: self.config.seed ^ k as u64,
                ..FlowConfig::new(d)
            })
            .collect();
        let config = TrainConfig {
            learning_rate: 2e-3,
            epochs,
            image_batch: 8,
            vector_batch: 256,
            warmup_epochs: 1.min(epochs.saturating_sub(1)),
            seed: self.config.seed,
            ..TrainConfig::default()
        };
        config.validate()?;
        self.flow = Some(FlowRun {
            model: Some(FlowModel::new(&configs)?),
            state: None,
            config,
            done: 0,
        });
        self.maps = None;
        Ok(())
    }

    /// Runs one more epoch and returns its loss averaged over scales; once the
    /// planned epochs are done, scores the test set and returns `None`.
    pub fn train_epoch(&mut self) -> Result<Option<f64>> {
        let run = self
            .flow
            .as_mut()
            .ok_or_else(|| Error::Config("no flow training in progress".into()))?;
        if run.done >= run.config.epochs {
            if self.maps.is_none() {
                let opts = ScoreOptions {
                    threads: 1,
                    ..ScoreOptions::default()
                };
                let model = run.model.as_ref().expect("model present between epochs");
                self.maps = Some(score_flow(
                    model,
                    &self.test,
                    self.config.image_size,
                    &opts,
                )?);
            }
            return Ok(None);
        }
        let model = run
            .model
            .take()
            .expect("model is restored after every epoch");
        let outcome = train(
            &self.train,
            model,
            &run.config,
            TrainRun {
                resume: run.state.take(),
                stop_after: Some(run.done + 1),
                threads: 1,
            },
        )?;
        run.model = Some(outcome.model);
        run.done += 1;
        let losses: Vec<f64> = outcome
            .state
            .scales
            .iter()
            .filter_map(|s| s.epoch_losses.last().copied())
            .collect();
        run.state = Some(outcome.state);
        Ok(Some(losses.iter().sum::<f64>() / losses.len() as f64))
    }

    pub fn epochs_done(&self) -> usize {
        self.flow.as_ref().map_or(0, |r| r.done)
    }

    /// The flow decoders as trained so far.
    pub fn flow_model(&self) -> Option<&FlowModel> {
        self.flow.as_ref()?.model.as_ref()
    }

    /// Hyperparameters of the flow run in progress.
    pub fn flow_train_config(&self) -> Option<TrainConfig> {
        self.flow.as_ref().map(|r| r.config)
    }

    pub fn train_set(&self) -> &[FeaturePyramid] {
        &self.train
    }

    /// Fits the per-position Gaussian baseline and scores the test set.
    pub fn fit_mvg(&mut self) -> Result<()> {
        let model = fit_mvg(&self.train, DEFAULT_RIDGE, 1)?;
        let distances = self
            .test
            .iter()
            .map(|p| model.distance_maps(p))
            .collect::<Result<Vec<_>>>()?;
        self.flow = None;
        self.maps = Some(score_from_distances(
            distances,
            self.config.image_size,
            NormScope::Pooled,
        )?);
        Ok(())
    }

    /// Anomaly map of test image `index`, row-major, once a model has been scored.
    pub fn anomaly_map(&self, index: usize) -> Option<&[f64]> {
        self.maps
            .as_ref()?
            .get(index)
            .map(|m| m.scores.data.as_slice())
    }

    /// Smallest and largest score over all current maps.
    pub fn score_range(&self) -> Option<(f64, f64)> {
        let maps = self.maps.as_ref()?;
        let values = maps.iter().flat_map(|m| m.scores.data.iter().copied());
        Some(
            values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
                (lo.min(v), hi.max(v))
            }),
        )
    }

    pub fn evaluate(&self) -> Result<Report> {
        let maps = self
            .maps
            .as_ref()
            .ok_or_else(|| Error::Config("train or fit a model first".into()))?;
        evaluate(&EvalInput {
            class: &self.config.name,
            maps,
            labels: &self.labels,
            masks: Some(&self.masks),
            reduction: ImageReduction::Max,
            pooling: PixelPooling::Pooled,
            fpr_limit: DEFAULT_FPR_LIMIT,
        })
    }
}

/// Half-width of the square shown by the density explorer.
pub const DENSITY_EXTENT: f64 = 6.0;

/// Log-density of a random conditional 2-D flow on a `steps×steps` grid over
/// `[-extent, extent]²` (row-major, `y` down), and its integral over that square.
pub fn flow_density(
    seed: u64,
    magnitude: f64,
    layers: usize,
    position: (usize, usize),
    steps: usize,
    extent: f64,
) -> Result<(Vec<f64>, f64)> {
    if steps < 2 || extent.is_nan() || extent <= 0.0 {
        return Err(Error::Config(
            "need at least 2 steps and a positive extent".into(),
        ));
    }
    let mut flow = FlowScale::new(FlowConfig {
        cond_dim: 8,
        layers,
        seed,
        ..FlowConfig::new(2)
    })?;
    flow.randomize_parameters(seed, magnitude);
    let c = positional_encoding(position.0, position.1, 8, DEFAULT_PE_BASE)?;
    let step = 2.0 * extent / (steps - 1) as f64;
    let mut grid = Vec::with_capacity(steps * steps);
    for i in 0..steps {
        for j in 0..steps {
            let z = [-extent + j as f64 * step, extent - i as f64 * step];
            grid.push(flow.log_likelihood(&z, &c)?);
        }
    }
    let mass = grid_integral(|z| flow.log_likelihood(z, &c), 2, -extent, extent, steps)?;
    Ok((grid, mass))
}
