use std::fs;
use std::path::PathBuf;

use clap::{Args, ValueEnum};

use super::config::Echo;
use super::data::{entries, load_pyramids};
use super::write_echo;
use crate::error::{Error, Result};
use crate::feature_store::{Dataset, FeaturePyramid, Split};
use crate::flow::{read_checkpoint, write_checkpoint, FlowConfig, FlowModel};
use crate::mvg::{fit_mvg, write_mvg};
use crate::rng::mix;
use crate::training::{loss_csv, train, AdamParams, TrainConfig, TrainRun, TrainState};

pub const FLOW_CHECKPOINT: &str = "checkpoint.cfck";
pub const MVG_CHECKPOINT: &str = "checkpoint.cfmv";
pub const TRAIN_STATE: &str = "train_state.cfts";
pub const LOSS_CSV: &str = "loss.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Flow,
    Mvg,
}

impl std::fmt::Display for ModelKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ModelKind::Flow => "flow",
            ModelKind::Mvg => "mvg",
        })
    }
}

#[derive(Debug, Args, Clone, PartialEq)]
pub struct TrainArgs {
    /// Dataset directory (holds manifest.tsv and features/).
    #[arg(long)]
    pub data: PathBuf,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = ModelKind::Flow)]
    pub model: ModelKind,
    /// Drop the positional condition (unconditional flow).
    #[arg(long)]
    pub no_condition: bool,
    /// Coupling layers per scale.
    #[arg(long, default_value_t = 8)]
    pub layers: usize,
    /// Positional-encoding channels (multiple of 4).
    #[arg(long, default_value_t = 128)]
    pub cond_dim: usize,
    /// Soft clamp on coupling log-scales.
    #[arg(long, default_value_t = 1.9)]
    pub clamp: f64,
    #[arg(long, default_value_t = 1e4)]
    pub pe_base: f64,
    #[arg(long, default_value_t = 2e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 32)]
    pub image_batch: usize,
    #[arg(long, default_value_t = 8192)]
    pub vector_batch: usize,
    #[arg(long, default_value_t = 2)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Covariance ridge for the MVG baseline.
    #[arg(long, default_value_t = 0.01)]
    pub ridge: f64,
    /// Continue from the checkpoint and train state in --out.
    #[arg(long)]
    pub resume: bool,
    /// Stop once this many epochs are done (state is saved for --resume).
    #[arg(long)]
    pub stop_after: Option<usize>,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl Echo for TrainArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![
            ("data", self.data.display().to_string()),
            ("out", self.out.display().to_string()),
            ("model", self.model.to_string()),
            ("no-condition", self.no_condition.to_string()),
            ("layers", self.layers.to_string()),
            ("cond-dim", self.cond_dim.to_string()),
            ("clamp", self.clamp.to_string()),
            ("pe-base", self.pe_base.to_string()),
            ("lr", self.lr.to_string()),
            ("epochs", self.epochs.to_string()),
            ("image-batch", self.image_batch.to_string()),
            ("vector-batch", self.vector_batch.to_string()),
            ("warmup-epochs", self.warmup_epochs.to_string()),
            ("seed", self.seed.to_string()),
            ("ridge", self.ridge.to_string()),
            ("resume", self.resume.to_string()),
        ];
        if let Some(s) = self.stop_after {
            p.push(("stop-after", s.to_string()));
        }
        p.push(("threads", self.threads.to_string()));
        p
    }
}

impl TrainArgs {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.lr,
            epochs: self.epochs,
            image_batch: self.image_batch,
            vector_batch: self.vector_batch,
            warmup_epochs: self.warmup_epochs,
            seed: self.seed,
            adam: AdamParams::default(),
        }
    }

    /// One decoder per pyramid scale; scale `k` seeds its permutations from `(seed, k)`.
    pub fn flow_configs(&self, pyramid: &FeaturePyramid) -> Vec<FlowConfig> {
        pyramid
            .scales
            .iter()
            .enumerate()
            .map(|(k, map)| FlowConfig {
                cond_dim: if self.no_condition { 0 } else { self.cond_dim },
                layers: self.layers,
                clamp: self.clamp,
                seed: mix(self.seed ^ mix(k as u64)),
                pe_base: self.pe_base,
                ..FlowConfig::new(map.depth())
            })
            .collect()
    }
}

pub(crate) fn run(args: &TrainArgs) -> Result<()> {
    let ds = Dataset::open(&args.data)?;
    let train_entries = entries(&ds, Split::Train);
    if train_entries.is_empty() {
        return Err(Error::Config(format!(
            "{} has no train images",
            args.data.display()
        )));
    }
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let pyramids = load_pyramids(&ds, &train_entries, args.threads)?;
    match args.model {
        ModelKind::Mvg => {
            let model = fit_mvg(&pyramids, args.ridge, args.threads)?;
            write_mvg(args.out.join(MVG_CHECKPOINT), &model)?;
            write_echo(&args.out, &args.echo())?;
            log::info!(
                "fitted MVG baseline on {} images ({} bytes)",
                pyramids.len(),
                model.parameter_bytes()
            );
            Ok(())
        }
        ModelKind::Flow => train_flow(args, &pyramids),
    }
}

fn train_flow(args: &TrainArgs, pyramids: &[FeaturePyramid]) -> Result<()> {
    let config = args.train_config();
    config.validate()?;
    let configs = args.flow_configs(&pyramids[0]);
    let (model, resume) = if args.resume {
        let model = read_checkpoint(args.out.join(FLOW_CHECKPOINT))?;
        let fresh = FlowModel::new(&configs)?;
        let same_layout = model.scales.len() == fresh.scales.len()
            && model
                .scales
                .iter()
                .zip(&fresh.scales)
                .all(|(a, b)| a.config() == b.config());
        if !same_layout {
            return Err(Error::Config(
                "checkpoint in --out does not match the requested model; drop --resume".into(),
            ));
        }
        let state = TrainState::read(args.out.join(TRAIN_STATE))?;
        (model, Some(state))
    } else {
        (FlowModel::new(&configs)?, None)
    };
    let outcome = train(
        pyramids,
        model,
        &config,
        TrainRun {
            resume,
            stop_after: args.stop_after,
            threads: args.threads,
        },
    )?;
    write_checkpoint(args.out.join(FLOW_CHECKPOINT), &outcome.model)?;
    outcome.state.write(args.out.join(TRAIN_STATE))?;
    let loss_path = args.out.join(LOSS_CSV);
    fs::write(&loss_path, loss_csv(&outcome.loss_curve())).map_err(|e| Error::io(&loss_path, e))?;
    write_echo(&args.out, &args.echo())?;
    let done = outcome
        .state
        .scales
        .iter()
        .map(|s| s.epochs_done)
        .min()
        .unwrap_or(0);
    log::info!(
        "trained {} scale(s) for {done}/{} epochs; {} parameters",
        outcome.model.scales.len(),
        config.epochs,
        outcome.model.parameter_count()
    );
    Ok(())
}
