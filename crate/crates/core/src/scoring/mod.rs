//! From per-scale log-likelihoods to pixel anomaly maps and thresholds.

mod grid;

pub use grid::{upsample_bilinear, Grid};

use crate::error::{Error, Result};
use crate::feature_store::{FeaturePyramid, GrayImage};
use crate::flow::FlowModel;
use crate::numerics::Tensor;
use crate::training::position_codes;

/// Positions evaluated per batch during scoring.
pub const DEFAULT_SCORE_BATCH: usize = 8192;

/// Where min/max normalization statistics come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum NormScope {
    /// Pooled over every image in the evaluation set.
    #[default]
    Pooled,
    PerImage,
}

impl std::str::FromStr for NormScope {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(NormScope::Pooled),
            "per-image" => Ok(NormScope::PerImage),
            _ => Err(Error::Config(format!(
                "unknown normalization scope {s:?} (pooled|per-image)"
            ))),
        }
    }
}

impl std::fmt::Display for NormScope {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormScope::Pooled => "pooled",
            NormScope::PerImage => "per-image",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnomalyMap {
    /// `H×W` scores; high means anomalous.
    pub scores: Grid,
    /// Upsampled normalized per-scale probabilities `P_k`.
    pub probabilities: Vec<Grid>,
    pub threshold: Option<f64>,
}

/// Log-likelihood of every position of every scale, in raster order,
/// evaluated `batch` positions at a time.
pub fn likelihood_maps(
    model: &FlowModel,
    pyramid: &FeaturePyramid,
    batch: usize,
) -> Result<Vec<Grid>> {
    if pyramid.num_scales() != model.scales.len() {
        return Err(Error::Config(format!(
            "pyramid {} has {} scales, model has {}",
            pyramid.image_id,
            pyramid.num_scales(),
            model.scales.len()
        )));
    }
    let batch = batch.max(1);
    model
        .scales
        .iter()
        .zip(&pyramid.scales)
        .enumerate()
        .map(|(k, (flow, map))| {
            if map.depth() != flow.dim() {
                return Err(Error::Config(format!(
                    "scale {k}: features are {}-dim, decoder expects {}",
                    map.depth(),
                    flow.dim()
                )));
            }
            let (h, w, d, c) = (map.height(), map.width(), map.depth(), flow.cond_dim());
            let codes = position_codes(flow, h, w);
            let n = h * w;
            let mut out = Vec::with_capacity(n);
            for start in (0..n).step_by(batch) {
                let end = (start + batch).min(n);
                let z: Vec<f64> = map.data()[start * d..end * d]
                    .iter()
                    .map(|&v| v as f64)
                    .collect();
                let z = Tensor::matrix(end - start, d, z)?;
                let cond = (c > 0)
                    .then(|| Tensor::matrix(end - start, c, codes[start * c..end * c].to_vec()))
                    .transpose()?;
                out.extend(flow.log_likelihood_batch(&z, cond.as_ref())?);
            }
            Grid::new(h, w, out)
        })
        .collect()
}

fn min_max_in_place(grids: &mut [&mut Grid], what: &str) {
    let lo = grids.iter().map(|g| g.min()).fold(f64::INFINITY, f64::min);
    let hi = grids
        .iter()
        .map(|g| g.max())
        .fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        let span = hi - lo;
        for g in grids.iter_mut() {
            for v in &mut g.data {
                *v = ((*v - lo) / span).clamp(0.0, 1.0);
            }
        }
    } else {
        log::warn!("{what}: constant values carry no signal; using 0.5");
        for g in grids.iter_mut() {
            g.data.fill(0.5);
        }
    }
}

fn check_layout(maps: &[Vec<Grid>]) -> Result<usize> {
    let k = maps
        .first()
        .map(Vec::len)
        .ok_or_else(|| Error::Contract("normalization needs at least one image".into()))?;
    for (i, m) in maps.iter().enumerate() {
        if m.len() != k {
            return Err(Error::Config(format!(
                "image {i} has {} scales, expected {k}",
                m.len()
            )));
        }
        if m.iter().flat_map(|g| &g.data).any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("image {i}: non-finite score")));
        }
    }
    Ok(k)
}

fn group_by_scale(maps: &mut [Vec<Grid>], k: usize, scope: NormScope) -> Vec<Vec<&mut Grid>> {
    let mut groups: Vec<Vec<&mut Grid>> = Vec::new();
    match scope {
        NormScope::Pooled => {
            let mut by_scale: Vec<Vec<&mut Grid>> = (0..k).map(|_| Vec::new()).collect();
            for img in maps.iter_mut() {
                for (s, g) in img.iter_mut().enumerate() {
                    by_scale[s].push(g);
                }
            }
            groups.extend(by_scale);
        }
        NormScope::PerImage => {
            for img in maps.iter_mut() {
                for g in img.iter_mut() {
                    groups.push(vec![g]);
                }
            }
        }
    }
    groups
}

/// Converts log-likelihoods (`[image][scale]`) to probabilities in `[0, 1]`:
/// `exp(ll − max)` per scale, then min-max normalized.
pub fn normalize_probabilities(logliks: &[Vec<Grid>], scope: NormScope) -> Result<Vec<Vec<Grid>>> {
    let k = check_layout(logliks)?;
    let mut maps = logliks.to_vec();
    for mut group in group_by_scale(&mut maps, k, scope) {
        let top = group
            .iter()
            .map(|g| g.max())
            .fold(f64::NEG_INFINITY, f64::max);
        for g in group.iter_mut() {
            for v in &mut g.data {
                *v = (*v - top).exp();
            }
        }
        min_max_in_place(&mut group, "probability map");
    }
    Ok(maps)
}

/// Min-max normalizes scores that are already "high = anomalous".
pub fn normalize_scores(scores: &[Vec<Grid>], scope: NormScope) -> Result<Vec<Vec<Grid>>> {
    let k = check_layout(scores)?;
    let mut maps = scores.to_vec();
    for mut group in group_by_scale(&mut maps, k, scope) {
        min_max_in_place(&mut group, "score map");
    }
    Ok(maps)
}

/// `S = max(Σ_k P_k) − Σ_k P_k`, with the max taken over the whole set.
pub fn aggregate(upsampled: Vec<Vec<Grid>>) -> Result<Vec<AnomalyMap>> {
    let sums = sum_scales(&upsampled)?;
    let top = sums.iter().map(Grid::max).fold(f64::NEG_INFINITY, f64::max);
    Ok(sums
        .into_iter()
        .zip(upsampled)
        .map(|(mut t, probabilities)| {
            for v in &mut t.data {
                *v = top - *v;
            }
            AnomalyMap {
                scores: t,
                probabilities,
                threshold: None,
            }
        })
        .collect())
}

fn sum_scales(upsampled: &[Vec<Grid>]) -> Result<Vec<Grid>> {
    upsampled
        .iter()
        .map(|scales| {
            let first = scales
                .first()
                .ok_or_else(|| Error::Contract("no scales to aggregate".into()))?;
            let mut total = Grid::filled(first.height, first.width, 0.0);
            for g in scales {
                if !g.same_shape(first) {
                    return Err(Error::Dimension {
                        op: "aggregate",
                        left: vec![first.height, first.width],
                        right: vec![g.height, g.width],
                    });
                }
                for (t, v) in total.data.iter_mut().zip(&g.data) {
                    *t += v;
                }
            }
            Ok(total)
        })
        .collect()
}

/// Sums already-oriented per-scale score grids (MVG baseline path).
pub fn aggregate_scores(upsampled: Vec<Vec<Grid>>) -> Result<Vec<AnomalyMap>> {
    let sums = sum_scales(&upsampled)?;
    Ok(sums
        .into_iter()
        .zip(upsampled)
        .map(|(scores, probabilities)| AnomalyMap {
            scores,
            probabilities,
            threshold: None,
        })
        .collect())
}

fn upsample_all(maps: Vec<Vec<Grid>>, size: (usize, usize)) -> Vec<Vec<Grid>> {
    maps.into_iter()
        .map(|scales| {
            scales
                .iter()
                .map(|g| upsample_bilinear(g, size.0, size.1))
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreOptions {
    pub scope: NormScope,
    pub batch: usize,
    pub threads: usize,
}

impl Default for ScoreOptions {
    fn default() -> Self {
        ScoreOptions {
            scope: NormScope::Pooled,
            batch: DEFAULT_SCORE_BATCH,
            threads: 1,
        }
    }
}

/// Per-image work split over `threads` scoped workers; output order follows input.
pub(crate) fn par_map<T: Sync, R: Send>(
    items: &[T],
    threads: usize,
    f: impl Fn(&T) -> Result<R> + Sync,
) -> Result<Vec<R>> {
    if threads <= 1 || items.len() <= 1 {
        return items.iter().map(&f).collect();
    }
    let chunk = items.len().div_ceil(threads);
    let f = &f;
    std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(f).collect::<Result<Vec<R>>>()))
            .collect();
        let mut out = Vec::with_capacity(items.len());
        for h in handles {
            out.extend(
                h.join()
                    .map_err(|_| Error::Numeric("scoring worker panicked".into()))??,
            );
        }
        Ok(out)
    })
}

/// Full flow scoring pipeline over an evaluation set.
pub fn score_flow(
    model: &FlowModel,
    pyramids: &[FeaturePyramid],
    image_size: (usize, usize),
    opts: &ScoreOptions,
) -> Result<Vec<AnomalyMap>> {
    let logliks = par_map(pyramids, opts.threads, |p| {
        likelihood_maps(model, p, opts.batch)
    })?;
    let probs = normalize_probabilities(&logliks, opts.scope)?;
    aggregate(upsample_all(probs, image_size))
}

/// Scoring pipeline for per-scale grids that are already "high = anomalous".
pub fn score_from_distances(
    distances: Vec<Vec<Grid>>,
    image_size: (usize, usize),
    scope: NormScope,
) -> Result<Vec<AnomalyMap>> {
    let normalized = normalize_scores(&distances, scope)?;
    aggregate_scores(upsample_all(normalized, image_size))
}

/// F1-optimal threshold over unique score values; pixels with `score >= τ`
/// are predicted anomalous, ties in F1 go to the smaller `τ`.
pub fn f1_threshold(scores: &[f64], labels: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op: "f1_threshold",
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    let positives = labels.iter().filter(|&&l| l).count();
    if positives == 0 || positives == labels.len() {
        return Err(Error::Validation(
            "F1 is undefined without both classes".into(),
        ));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut best = (f64::NAN, -1.0);
    let mut i = 0;
    while i < order.len() {
        let tau = scores[order[i]];
        while i < order.len() && scores[order[i]] == tau {
            if labels[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let f1 = f1_from_counts(tp, fp, positives - tp);
        if f1 >= best.1 {
            best = (tau, f1);
        }
    }
    Ok(best)
}

pub(crate) fn f1_from_counts(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        return 0.0;
    }
    2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub enum ImageReduction {
    #[default]
    Max,
    /// Mean of the top `q` fraction of pixels (at least one pixel).
    TopFraction(f64),
}

pub fn image_score(map: &Grid, reduction: ImageReduction) -> f64 {
    match reduction {
        ImageReduction::Max => map.max(),
        ImageReduction::TopFraction(q) => {
            let mut v = map.data.clone();
            v.sort_by(|a, b| b.total_cmp(a));
            let n = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
            v[..n].iter().sum::<f64>() / n as f64
        }
    }
}

/// Quantizes a score grid to a 16-bit image, mapping `[lo, hi]` onto `[0, 65535]`.
pub fn map_to_image(grid: &Grid, lo: f64, hi: f64) -> GrayImage {
    let span = hi - lo;
    let pixels = grid
        .data
        .iter()
        .map(|&v| {
            let u = if span > 0.0 {
                ((v - lo) / span).clamp(0.0, 1.0)
            } else {
                0.0
            };
            (u * 65535.0).round() as u16
        })
        .collect();
    GrayImage {
        height: grid.height,
        width: grid.width,
        maxval: u16::MAX,
        pixels,
    }
}

#[cfg(test)]
mod tests;
