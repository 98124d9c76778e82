use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;

use super::config::Echo;
use super::data::{entries, load_masks, load_pyramids};
use super::write_echo;
use crate::error::{Error, Result};
use crate::feature_store::{write_pgm, Dataset, FeaturePyramid, Label, Split};
use crate::flow::decode_checkpoint;
use crate::metrics::{
    evaluate, report_csv, EvalInput, PixelPooling, Report, DEFAULT_FPR_LIMIT, REPORT_HEADER,
};
use crate::mvg::decode_mvg;
use crate::scoring::{
    f1_threshold, map_to_image, par_map, score_flow, score_from_distances, AnomalyMap, Grid,
    ImageReduction, NormScope, ScoreOptions, DEFAULT_SCORE_BATCH,
};

pub const REPORT_CSV: &str = "report.csv";
pub const RUNS_CSV: &str = "runs.csv";
pub const HIST_CSV: &str = "hist.csv";
pub const MAPS_DIR: &str = "maps";

#[derive(Debug, Args, Clone, PartialEq)]
pub struct EvalArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flow (`.cfck`) or MVG (`.cfmv`) checkpoint; with --repeats the path
    /// may contain `{seed}`.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Write 16-bit PGM score maps to `maps/`.
    #[arg(long)]
    pub emit_maps: bool,
    /// Write per-pixel `score,label` rows to `hist.csv`.
    #[arg(long)]
    pub emit_hist: bool,
    /// Probability normalization statistics: pooled or per-image.
    #[arg(long, default_value = "pooled")]
    pub norm: String,
    /// Localization AUROC pooling: pooled or per-image.
    #[arg(long, default_value = "pooled")]
    pub pixel_pooling: String,
    /// Image score: `max` or `top:<fraction>`.
    #[arg(long, default_value = "max")]
    pub image_score: String,
    #[arg(long, default_value_t = DEFAULT_FPR_LIMIT)]
    pub fpr_limit: f64,
    /// Positions per likelihood batch.
    #[arg(long, default_value_t = DEFAULT_SCORE_BATCH)]
    pub batch: usize,
    /// Number of runs to aggregate into mean and standard deviation.
    #[arg(long, default_value_t = 1)]
    pub repeats: usize,
    /// Comma-separated seeds substituted for `{seed}` (default 0..repeats).
    #[arg(long)]
    pub seeds: Option<String>,
    /// Replace model scores by the ground-truth masks (pipeline self-test).
    #[arg(long, hide = true)]
    pub oracle_maps: bool,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl Echo for EvalArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut p = vec![
            ("data", self.data.display().to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
            ("out", self.out.display().to_string()),
            ("emit-maps", self.emit_maps.to_string()),
            ("emit-hist", self.emit_hist.to_string()),
            ("norm", self.norm.clone()),
            ("pixel-pooling", self.pixel_pooling.clone()),
            ("image-score", self.image_score.clone()),
            ("fpr-limit", self.fpr_limit.to_string()),
            ("batch", self.batch.to_string()),
            ("repeats", self.repeats.to_string()),
        ];
        if let Some(s) = &self.seeds {
            p.push(("seeds", s.clone()));
        }
        p.push(("oracle-maps", self.oracle_maps.to_string()));
        p.push(("threads", self.threads.to_string()));
        p
    }
}

pub(crate) fn parse_reduction(s: &str) -> Result<ImageReduction> {
    if s == "max" {
        return Ok(ImageReduction::Max);
    }
    let q = s
        .strip_prefix("top:")
        .and_then(|q| q.parse::<f64>().ok())
        .filter(|q| *q > 0.0 && *q <= 1.0)
        .ok_or_else(|| {
            Error::Config(format!(
                "image score must be max or top:<fraction in (0,1]>, got {s:?}"
            ))
        })?;
    Ok(ImageReduction::TopFraction(q))
}

impl EvalArgs {
    fn seeds(&self) -> Result<Vec<String>> {
        if self.repeats == 0 {
            return Err(Error::Config("repeats must be at least 1".into()));
        }
        let seeds: Vec<String> = match &self.seeds {
            Some(s) => s.split(',').map(|x| x.trim().to_string()).collect(),
            None => (0..self.repeats).map(|i| i.to_string()).collect(),
        };
        if seeds.len() != self.repeats {
            return Err(Error::Config(format!(
                "{} seeds given for {} repeats",
                seeds.len(),
                self.repeats
            )));
        }
        if self.repeats > 1 && !self.checkpoint.to_string_lossy().contains("{seed}") {
            return Err(Error::Config(
                "--repeats > 1 needs a checkpoint path containing {seed}".into(),
            ));
        }
        Ok(seeds)
    }
}

/// Scores the test pyramids with whichever model the checkpoint holds.
pub(crate) fn score_checkpoint(
    path: &Path,
    test: &[FeaturePyramid],
    image_size: (usize, usize),
    opts: &ScoreOptions,
) -> Result<Vec<AnomalyMap>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let source = path.display().to_string();
    match bytes.get(..4) {
        Some(b"CFCK") => score_flow(&decode_checkpoint(&bytes, &source)?, test, image_size, opts),
        Some(b"CFMV") => {
            let model = decode_mvg(&bytes, &source)?;
            let dists = par_map(test, opts.threads, |p| model.distance_maps(p))?;
            score_from_distances(dists, image_size, opts.scope)
        }
        _ => Err(Error::Format {
            path: source,
            offset: 0,
            msg: "not a flow or MVG checkpoint".into(),
        }),
    }
}

fn oracle(masks: &[Vec<bool>], size: (usize, usize)) -> Result<Vec<AnomalyMap>> {
    masks
        .iter()
        .map(|m| {
            Ok(AnomalyMap {
                scores: Grid::new(size.0, size.1, m.iter().map(|&b| b as u8 as f64).collect())?,
                probabilities: Vec::new(),
                threshold: None,
            })
        })
        .collect()
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = if values.len() > 1 {
        values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn summary_csv(class: &str, reports: &[Report]) -> String {
    let mut out = String::from("class");
    for m in ["detection_auroc", "localization_auroc", "aupro"] {
        let _ = write!(out, ",{m},{m}_std");
    }
    out.push('\n');
    out.push_str(class);
    let columns: [fn(&Report) -> Option<f64>; 3] =
        [|r| r.detection_auroc, |r| r.localization_auroc, |r| r.aupro];
    for col in columns {
        let values: Option<Vec<f64>> = reports.iter().map(col).collect();
        match values {
            Some(v) => {
                let (m, s) = mean_std(&v);
                let _ = write!(out, ",{m:.6},{s:.6}");
            }
            None => out.push_str(",n/a,n/a"),
        }
    }
    out.push('\n');
    out
}

pub(crate) fn run(args: &EvalArgs) -> Result<()> {
    let scope: NormScope = args.norm.parse()?;
    let pooling: PixelPooling = args.pixel_pooling.parse()?;
    let reduction = parse_reduction(&args.image_score)?;
    let seeds = args.seeds()?;
    if !(args.fpr_limit > 0.0 && args.fpr_limit <= 1.0) {
        return Err(Error::Config(format!(
            "fpr-limit must be in (0, 1], got {}",
            args.fpr_limit
        )));
    }
    let ds = Dataset::open(&args.data)?;
    let test_entries = entries(&ds, Split::Test);
    if test_entries.is_empty() {
        return Err(Error::Config(format!(
            "{} has no test images",
            args.data.display()
        )));
    }
    let test = load_pyramids(&ds, &test_entries, args.threads)?;
    let masks = load_masks(&ds, &test_entries, args.threads)?;
    if masks.is_none() {
        log::warn!("dataset has no masks; reporting detection metrics only");
    }
    let labels: Vec<bool> = test_entries
        .iter()
        .map(|e| e.label == Label::Anomalous)
        .collect();
    let size = ds.manifest.image_size;
    let opts = ScoreOptions {
        scope,
        batch: args.batch,
        threads: args.threads,
    };
    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;

    let mut reports = Vec::new();
    for (run, seed) in seeds.iter().enumerate() {
        let ckpt = PathBuf::from(args.checkpoint.to_string_lossy().replace("{seed}", seed));
        let mut maps = if args.oracle_maps {
            let m = masks
                .as_ref()
                .ok_or_else(|| Error::Config("--oracle-maps needs a dataset with masks".into()))?;
            oracle(m, size)?
        } else {
            score_checkpoint(&ckpt, &test, size, &opts)?
        };
        let report = evaluate(&EvalInput {
            class: &ds.manifest.name,
            maps: &maps,
            labels: &labels,
            masks: masks.as_deref(),
            reduction,
            pooling,
            fpr_limit: args.fpr_limit,
        })?;
        print!("{}", report.table());
        if run == 0 {
            emit_extras(args, &test_entries, masks.as_deref(), &mut maps)?;
        }
        reports.push(report);
    }

    let report_path = args.out.join(REPORT_CSV);
    let text = if reports.len() == 1 {
        report_csv(&reports)
    } else {
        let runs = args.out.join(RUNS_CSV);
        let mut runs_text = format!("seed,{REPORT_HEADER}\n");
        for (seed, r) in seeds.iter().zip(&reports) {
            let _ = writeln!(runs_text, "{seed},{}", r.csv_row());
        }
        fs::write(&runs, runs_text).map_err(|e| Error::io(&runs, e))?;
        summary_csv(&ds.manifest.name, &reports)
    };
    fs::write(&report_path, text).map_err(|e| Error::io(&report_path, e))?;
    write_echo(&args.out, &args.echo())
}

fn emit_extras(
    args: &EvalArgs,
    test_entries: &[crate::feature_store::ManifestEntry],
    masks: Option<&[Vec<bool>]>,
    maps: &mut [AnomalyMap],
) -> Result<()> {
    if let Some(masks) = masks {
        let scores: Vec<f64> = maps
            .iter()
            .flat_map(|m| m.scores.data.iter().copied())
            .collect();
        let labels: Vec<bool> = masks.iter().flatten().copied().collect();
        match f1_threshold(&scores, &labels) {
            Ok((tau, f1)) => {
                println!("F1-optimal threshold {tau:.6} (F1 {f1:.6})");
                for m in maps.iter_mut() {
                    m.threshold = Some(tau);
                }
            }
            Err(e) => log::warn!("no F1 threshold: {e}"),
        }
        if args.emit_hist {
            let path = args.out.join(HIST_CSV);
            let mut text = String::from("score,label\n");
            for (s, l) in scores.iter().zip(&labels) {
                let _ = writeln!(text, "{s},{}", if *l { "anomalous" } else { "good" });
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
    } else if args.emit_hist {
        log::warn!("--emit-hist needs pixel masks; skipped");
    }
    if args.emit_maps {
        let dir = args.out.join(MAPS_DIR);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let lo = maps
            .iter()
            .map(|m| m.scores.min())
            .fold(f64::INFINITY, f64::min);
        let hi = maps
            .iter()
            .map(|m| m.scores.max())
            .fold(f64::NEG_INFINITY, f64::max);
        for (e, m) in test_entries.iter().zip(maps.iter()) {
            let comment = m
                .threshold
                .map(|t| format!("threshold {}", (t - lo) / (hi - lo).max(f64::MIN_POSITIVE)));
            write_pgm(
                dir.join(format!("{}.pgm", e.image_id)),
                &map_to_image(&m.scores, lo, hi),
                comment.as_deref(),
            )?;
        }
    }
    Ok(())
}
