use std::path::PathBuf;

use clap::Args;

use super::config::Echo;
use super::write_echo;
use crate::error::{Error, Result};
use crate::synth::{generate, SynthConfig};

#[derive(Debug, Args, Clone, PartialEq)]
pub struct SynthArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 64)]
    pub n_train: usize,
    #[arg(long, default_value_t = 24)]
    pub n_test_good: usize,
    #[arg(long, default_value_t = 24)]
    pub n_test_anom: usize,
    /// Comma-separated `HxWxD` per scale, coarsest first.
    #[arg(long, default_value = "8x8x16,16x16x8")]
    pub scales: String,
    /// Image size `HxW`.
    #[arg(long, default_value = "64x64")]
    pub image_size: String,
    /// Smallest anomaly rectangle side, in finest-grid cells.
    #[arg(long, default_value_t = 5)]
    pub patch_min: usize,
    #[arg(long, default_value_t = 10)]
    pub patch_max: usize,
    /// Mean shift of anomalous vectors.
    #[arg(long, default_value_t = 6.0)]
    pub shift: f64,
    /// Amplitude of the position-dependent mean field.
    #[arg(long, default_value_t = 2.0)]
    pub field_amplitude: f64,
    #[arg(long, default_value = "synth")]
    pub name: String,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

fn dims(s: &str, n: usize) -> Result<Vec<usize>> {
    let parts: Vec<&str> = s.split('x').collect();
    if parts.len() != n {
        return Err(Error::Config(format!(
            "expected {n} 'x'-separated sizes, got {s:?}"
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad size {p:?} in {s:?}")))
        })
        .collect()
}

pub(crate) fn parse_scales(s: &str) -> Result<Vec<(usize, usize, usize)>> {
    s.split(',')
        .map(|part| dims(part, 3).map(|d| (d[0], d[1], d[2])))
        .collect()
}

pub(crate) fn parse_size(s: &str) -> Result<(usize, usize)> {
    dims(s, 2).map(|d| (d[0], d[1]))
}

impl SynthArgs {
    pub fn to_config(&self) -> Result<SynthConfig> {
        let config = SynthConfig {
            seed: self.seed,
            n_train: self.n_train,
            n_test_good: self.n_test_good,
            n_test_anom: self.n_test_anom,
            scales: parse_scales(&self.scales)?,
            image_size: parse_size(&self.image_size)?,
            patch: (self.patch_min, self.patch_max),
            shift: self.shift,
            field_amplitude: self.field_amplitude,
            name: self.name.clone(),
        };
        config.validate()?;
        Ok(config)
    }
}

impl Echo for SynthArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("n-train", self.n_train.to_string()),
            ("n-test-good", self.n_test_good.to_string()),
            ("n-test-anom", self.n_test_anom.to_string()),
            ("scales", self.scales.clone()),
            ("image-size", self.image_size.clone()),
            ("patch-min", self.patch_min.to_string()),
            ("patch-max", self.patch_max.to_string()),
            ("shift", self.shift.to_string()),
            ("field-amplitude", self.field_amplitude.to_string()),
            ("name", self.name.clone()),
            ("threads", self.threads.to_string()),
        ]
    }
}

pub(crate) fn run(args: &SynthArgs) -> Result<()> {
    let config = args.to_config()?;
    let manifest = generate(&config, &args.out, args.threads)?;
    write_echo(&args.out, &args.echo())?;
    log::info!(
        "wrote {} images ({} train, {} test) to {}",
        manifest.entries.len(),
        manifest.train().count(),
        manifest.test().count(),
        args.out.display()
    );
    Ok(())
}
