use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::Args;

use super::config::Echo;
use super::data::{entries, load_pyramids};
use super::eval::score_checkpoint;
use super::write_echo;
use crate::error::{Error, Result};
use crate::feature_store::{Dataset, Split};
use crate::flow::{read_checkpoint, FlowConfig};
use crate::mvg::mvg_parameter_bytes;
use crate::scoring::{NormScope, ScoreOptions, DEFAULT_SCORE_BATCH};

pub const BENCH_CSV: &str = "bench.csv";
pub const MEMORY_CSV: &str = "memory.csv";

#[derive(Debug, Args, Clone, PartialEq)]
pub struct BenchArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Flow (`.cfck`) or MVG (`.cfmv`) checkpoint to time.
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Timed iterations (at least 30).
    #[arg(long, default_value_t = 30)]
    pub iterations: usize,
    /// Untimed warm-up iterations.
    #[arg(long, default_value_t = 3)]
    pub warmup: usize,
    /// Spatial sizes `S` (S×S grids) for the memory comparison.
    #[arg(long, default_value = "8,32")]
    pub sizes: String,
    #[arg(long, default_value_t = DEFAULT_SCORE_BATCH)]
    pub batch: usize,
    #[arg(long, default_value_t = 1)]
    pub threads: usize,
}

impl Echo for BenchArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("data", self.data.display().to_string()),
            ("checkpoint", self.checkpoint.display().to_string()),
            ("out", self.out.display().to_string()),
            ("iterations", self.iterations.to_string()),
            ("warmup", self.warmup.to_string()),
            ("sizes", self.sizes.clone()),
            ("batch", self.batch.to_string()),
            ("threads", self.threads.to_string()),
        ]
    }
}

/// Median and interquartile range (linear interpolation between order statistics).
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let x = p * (v.len() - 1) as f64;
        let (lo, hi) = (x.floor() as usize, x.ceil() as usize);
        v[lo] + (v[hi] - v[lo]) * (x - lo as f64)
    };
    (q(0.5), q(0.75) - q(0.25))
}

/// One row of the memory comparison.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryRow {
    pub model: &'static str,
    pub spatial: usize,
    pub dims: Vec<usize>,
    pub bytes: usize,
}

/// Flow bytes come from the closed-form parameter count and ignore the grid
/// size; MVG bytes grow with `S²` positions.
pub fn memory_rows(configs: &[FlowConfig], sizes: &[usize]) -> Vec<MemoryRow> {
    let mut rows = Vec::new();
    for (factor, tag) in [(1, "flow"), (2, "flow-2d")] {
        for &s in sizes {
            let dims: Vec<usize> = configs.iter().map(|c| c.dim * factor).collect();
            let bytes = configs
                .iter()
                .map(|c| {
                    8 * FlowConfig {
                        dim: c.dim * factor,
                        ..*c
                    }
                    .parameter_count()
                })
                .sum();
            rows.push(MemoryRow {
                model: tag,
                spatial: s,
                dims,
                bytes,
            });
        }
    }
    for (factor, tag) in [(1, "mvg"), (2, "mvg-2d")] {
        for &s in sizes {
            let dims: Vec<usize> = configs.iter().map(|c| c.dim * factor).collect();
            let bytes = dims.iter().map(|&d| mvg_parameter_bytes(s, s, d)).sum();
            rows.push(MemoryRow {
                model: tag,
                spatial: s,
                dims,
                bytes,
            });
        }
    }
    rows
}

pub(crate) fn run(args: &BenchArgs) -> Result<()> {
    if args.iterations < 30 {
        return Err(Error::Config(format!(
            "bench needs at least 30 iterations, got {}",
            args.iterations
        )));
    }
    let sizes: Vec<usize> = args
        .sizes
        .split(',')
        .map(|s| {
            s.trim()
                .parse()
                .map_err(|_| Error::Config(format!("bad size {s:?}")))
        })
        .collect::<Result<_>>()?;
    let ds = Dataset::open(&args.data)?;
    let mut test_entries = entries(&ds, Split::Test);
    if test_entries.is_empty() {
        test_entries = entries(&ds, Split::Train);
    }
    let test = load_pyramids(&ds, &test_entries, args.threads)?;
    let opts = ScoreOptions {
        scope: NormScope::Pooled,
        batch: args.batch,
        threads: args.threads,
    };
    let size = ds.manifest.image_size;
    for _ in 0..args.warmup {
        score_checkpoint(&args.checkpoint, &test, size, &opts)?;
    }
    let mut rates = Vec::with_capacity(args.iterations);
    for _ in 0..args.iterations {
        let start = Instant::now();
        score_checkpoint(&args.checkpoint, &test, size, &opts)?;
        rates.push(test.len() as f64 / start.elapsed().as_secs_f64());
    }
    let (median, iqr) = median_iqr(&rates);

    let configs: Vec<FlowConfig> = match read_checkpoint(&args.checkpoint) {
        Ok(model) => model.scales.iter().map(|s| *s.config()).collect(),
        Err(_) => test[0]
            .scales
            .iter()
            .map(|m| FlowConfig::new(m.depth()))
            .collect(),
    };
    let rows = memory_rows(&configs, &sizes);

    fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut bench =
        String::from("images,iterations,threads,median_images_per_sec,iqr_images_per_sec\n");
    let _ = writeln!(
        bench,
        "{},{},{},{median:.4},{iqr:.4}",
        test.len(),
        args.iterations,
        args.threads
    );
    let mut memory = String::from("model,spatial,dims,bytes\n");
    for r in &rows {
        let dims: Vec<String> = r.dims.iter().map(ToString::to_string).collect();
        let _ = writeln!(
            memory,
            "{},{}x{},{},{}",
            r.model,
            r.spatial,
            r.spatial,
            dims.join("/"),
            r.bytes
        );
    }
    print!("{bench}{memory}");
    let p = args.out.join(BENCH_CSV);
    fs::write(&p, bench).map_err(|e| Error::io(&p, e))?;
    let p = args.out.join(MEMORY_CSV);
    fs::write(&p, memory).map_err(|e| Error::io(&p, e))?;
    write_echo(&args.out, &args.echo())
}
