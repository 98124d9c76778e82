//! Threshold-free evaluation: AUROC, per-region overlap, and the report.

mod components;

pub use components::{connected_components, Components};

use crate::error::{Error, Result};
use crate::scoring::{image_score, AnomalyMap, ImageReduction};

/// Default FPR cap for the per-region-overlap integral.
pub const DEFAULT_FPR_LIMIT: f64 = 0.3;
/// Upper bound on the number of thresholds in the per-region-overlap sweep.
pub const MAX_PRO_THRESHOLDS: usize = 1000;

fn check_binary(op: &'static str, scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Dimension {
            op,
            left: vec![scores.len()],
            right: vec![labels.len()],
        });
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Numeric(format!("{op}: non-finite score")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Validation(format!(
            "{op}: both classes must be present ({pos} positive, {neg} negative)"
        )));
    }
    Ok((pos, neg))
}

/// Area under the ROC curve via the Mann–Whitney statistic with midranks.
pub fn auroc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_binary("auroc", scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            j += 1;
        }
        // ranks i+1..=j share their mean
        let midrank = (i + 1 + j) as f64 / 2.0;
        let hits = order[i..j].iter().filter(|&&k| labels[k]).count();
        rank_sum += midrank * hits as f64;
        i = j;
    }
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, PartialEq)]
pub struct RocCurve {
    /// Unique thresholds, descending; point `i + 1` predicts `score >= thresholds[i]`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub tpr: Vec<f64>,
    pub auroc: f64,
}

/// ROC sweep from +∞ to −∞; starts at (0, 0) and ends at (1, 1).
pub fn roc_curve(scores: &[f64], labels: &[bool]) -> Result<RocCurve> {
    let (pos, neg) = check_binary("roc_curve", scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let (mut fpr, mut tpr, mut thresholds) = (vec![0.0], vec![0.0], Vec::new());
    let (mut tp, mut fp) = (0usize, 0usize);
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
        thresholds.push(tau);
        fpr.push(fp as f64 / neg as f64);
        tpr.push(tp as f64 / pos as f64);
    }
    let auroc = auroc(scores, labels)?;
    Ok(RocCurve {
        thresholds,
        fpr,
        tpr,
        auroc,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProCurve {
    /// Thresholds, descending; point `i + 1` predicts `score >= thresholds[i]`.
    pub thresholds: Vec<f64>,
    pub fpr: Vec<f64>,
    pub pro: Vec<f64>,
    /// True when the sweep was coarsened to quantile thresholds.
    pub coarse: bool,
}

impl ProCurve {
    /// Normalized area on `[0, fpr_limit]`.
    ///
    /// On the exact grid each segment corresponds to one score plateau and is
    /// integrated left-continuously (the overlap reached at the end of the
    /// plateau only counts from there on). Without mixed plateaus this equals
    /// the trapezoid rule, because each segment is then horizontal or
    /// vertical. A coarsened grid is integrated with the trapezoid rule.
    pub fn area(&self, fpr_limit: f64) -> Result<f64> {
        if !(fpr_limit > 0.0 && fpr_limit <= 1.0) {
            return Err(Error::Config(format!(
                "fpr limit must be in (0, 1], got {fpr_limit}"
            )));
        }
        let mut area = 0.0;
        for i in 1..self.fpr.len() {
            let (x0, x1) = (self.fpr[i - 1], self.fpr[i]);
            if x0 >= fpr_limit {
                break;
            }
            let (y0, y1) = (self.pro[i - 1], self.pro[i]);
            let end = x1.min(fpr_limit);
            if x1 <= x0 {
                continue;
            }
            area += if self.coarse {
                let y_end = y0 + (y1 - y0) * (end - x0) / (x1 - x0);
                0.5 * (y0 + y_end) * (end - x0)
            } else {
                y0 * (end - x0)
            };
        }
        Ok(area / fpr_limit)
    }
}

/// Per-region-overlap curve over a set of score maps and ground-truth masks.
pub fn pro_curve(
    maps: &[&[f64]],
    masks: &[&[bool]],
    widths: &[usize],
    max_thresholds: usize,
) -> Result<ProCurve> {
    if maps.len() != masks.len() || maps.len() != widths.len() {
        return Err(Error::Dimension {
            op: "pro_curve",
            left: vec![maps.len()],
            right: vec![masks.len()],
        });
    }
    // (score, region id or usize::MAX for anomaly-free)
    let mut pixels: Vec<(f64, usize)> = Vec::new();
    let mut region_sizes: Vec<usize> = Vec::new();
    for ((scores, mask), &w) in maps.iter().zip(masks).zip(widths) {
        if scores.len() != mask.len() || w == 0 || mask.len() % w != 0 {
            return Err(Error::Dimension {
                op: "pro_curve",
                left: vec![scores.len()],
                right: vec![mask.len()],
            });
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Numeric("pro_curve: non-finite score".into()));
        }
        let comps = connected_components(mask, mask.len() / w, w);
        let base = region_sizes.len();
        region_sizes.extend(&comps.sizes);
        for (i, &s) in scores.iter().enumerate() {
            let r = comps.labels[i].map_or(usize::MAX, |l| base + l);
            pixels.push((s, r));
        }
    }
    if region_sizes.is_empty() {
        return Err(Error::Validation(
            "per-region overlap needs at least one anomalous region".into(),
        ));
    }
    let normal = pixels.iter().filter(|p| p.1 == usize::MAX).count();
    if normal == 0 {
        return Err(Error::Validation(
            "per-region overlap needs anomaly-free pixels".into(),
        ));
    }
    pixels.sort_by(|a, b| b.0.total_cmp(&a.0));

    let unique = 1 + pixels.windows(2).filter(|w| w[0].0 != w[1].0).count();
    let coarse = unique > max_thresholds.max(2);
    let mut thresholds: Vec<f64> = if coarse {
        let m = max_thresholds.max(2);
        let n = pixels.len();
        let mut t: Vec<f64> = (0..m)
            .map(|j| pixels[(j * (n - 1) + (m - 1) / 2) / (m - 1)].0)
            .collect();
        t.dedup();
        t
    } else {
        let mut t: Vec<f64> = pixels.iter().map(|p| p.0).collect();
        t.dedup();
        t
    };
    // the last point must include every pixel
    if *thresholds.last().unwrap() != pixels.last().unwrap().0 {
        thresholds.push(pixels.last().unwrap().0);
    }

    let n_regions = region_sizes.len() as f64;
    let (mut fp, mut overlap_sum) = (0usize, 0.0f64);
    let (mut fpr, mut pro) = (vec![0.0], vec![0.0]);
    let mut i = 0;
    for &tau in &thresholds {
        while i < pixels.len() && pixels[i].0 >= tau {
            match pixels[i].1 {
                usize::MAX => fp += 1,
                r => overlap_sum += 1.0 / region_sizes[r] as f64,
            }
            i += 1;
        }
        fpr.push(fp as f64 / normal as f64);
        pro.push((overlap_sum / n_regions).min(1.0));
    }
    Ok(ProCurve {
        thresholds,
        fpr,
        pro,
        coarse,
    })
}

/// Normalized area under the per-region-overlap curve up to `fpr_limit`.
pub fn aupro(maps: &[&[f64]], masks: &[&[bool]], widths: &[usize], fpr_limit: f64) -> Result<f64> {
    pro_curve(maps, masks, widths, MAX_PRO_THRESHOLDS)?.area(fpr_limit)
}

/// How localization AUROC combines pixels across images.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PixelPooling {
    /// One sweep over every test pixel.
    #[default]
    Pooled,
    /// Mean of per-image AUROCs over images containing both classes.
    PerImage,
}

impl std::str::FromStr for PixelPooling {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pooled" => Ok(PixelPooling::Pooled),
            "per-image" => Ok(PixelPooling::PerImage),
            _ => Err(Error::Config(format!(
                "unknown pixel pooling {s:?} (pooled|per-image)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub class: String,
    pub detection_auroc: Option<f64>,
    pub localization_auroc: Option<f64>,
    pub aupro: Option<f64>,
}

pub const REPORT_HEADER: &str = "class,detection_auroc,localization_auroc,aupro";

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |x| format!("{x:.6}"))
}

impl Report {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{}",
            self.class,
            cell(self.detection_auroc),
            cell(self.localization_auroc),
            cell(self.aupro)
        )
    }

    pub fn table(&self) -> String {
        format!(
            "class               {}\ndetection AUROC     {}\nlocalization AUROC  {}\nAUPRO               {}\n",
            self.class,
            cell(self.detection_auroc),
            cell(self.localization_auroc),
            cell(self.aupro)
        )
    }
}

pub fn report_csv(reports: &[Report]) -> String {
    let mut out = String::from(REPORT_HEADER);
    out.push('\n');
    for r in reports {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

pub struct EvalInput<'a> {
    pub class: &'a str,
    pub maps: &'a [AnomalyMap],
    /// Image labels, `true` = anomalous.
    pub labels: &'a [bool],
    /// Pixel masks matching the maps, when the dataset provides them.
    pub masks: Option<&'a [Vec<bool>]>,
    pub reduction: ImageReduction,
    pub pooling: PixelPooling,
    pub fpr_limit: f64,
}

/// Detection AUROC, localization AUROC and AUPRO for one class.
pub fn evaluate(input: &EvalInput<'_>) -> Result<Report> {
    let maps = input.maps;
    if maps.len() != input.labels.len() {
        return Err(Error::Dimension {
            op: "evaluate",
            left: vec![maps.len()],
            right: vec![input.labels.len()],
        });
    }
    let image_scores: Vec<f64> = maps
        .iter()
        .map(|m| image_score(&m.scores, input.reduction))
        .collect();
    let detection_auroc = match auroc(&image_scores, input.labels) {
        Ok(v) => Some(v),
        Err(Error::Validation(msg)) => {
            log::warn!("detection AUROC unavailable: {msg}");
            None
        }
        Err(e) => return Err(e),
    };
    let (localization_auroc, aupro_value) = match input.masks {
        None => (None, None),
        Some(masks) => {
            if masks.len() != maps.len() {
                return Err(Error::Dimension {
                    op: "evaluate masks",
                    left: vec![maps.len()],
                    right: vec![masks.len()],
                });
            }
            for (m, mask) in maps.iter().zip(masks) {
                if m.scores.data.len() != mask.len() {
                    return Err(Error::Dimension {
                        op: "evaluate masks",
                        left: vec![m.scores.height, m.scores.width],
                        right: vec![mask.len()],
                    });
                }
            }
            if !masks.iter().flatten().any(|&b| b) {
                log::warn!(
                    "no anomalous pixels in the evaluation set; localization metrics are n/a"
                );
                (None, None)
            } else {
                let loc = localization_auroc(maps, masks, input.pooling)?;
                let score_refs: Vec<&[f64]> =
                    maps.iter().map(|m| m.scores.data.as_slice()).collect();
                let mask_refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
                let widths: Vec<usize> = maps.iter().map(|m| m.scores.width).collect();
                let pro = aupro(&score_refs, &mask_refs, &widths, input.fpr_limit)?;
                (loc, Some(pro))
            }
        }
    };
    Ok(Report {
        class: input.class.to_string(),
        detection_auroc,
        localization_auroc,
        aupro: aupro_value,
    })
}

fn localization_auroc(
    maps: &[AnomalyMap],
    masks: &[Vec<bool>],
    pooling: PixelPooling,
) -> Result<Option<f64>> {
    match pooling {
        PixelPooling::Pooled => {
            let scores: Vec<f64> = maps
                .iter()
                .flat_map(|m| m.scores.data.iter().copied())
                .collect();
            let labels: Vec<bool> = masks.iter().flatten().copied().collect();
            auroc(&scores, &labels).map(Some)
        }
        PixelPooling::PerImage => {
            let mut values = Vec::new();
            for (m, mask) in maps.iter().zip(masks) {
                if mask.iter().any(|&b| b) && mask.iter().any(|&b| !b) {
                    values.push(auroc(&m.scores.data, mask)?);
                }
            }
            Ok((!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64))
        }
    }
}

#[cfg(test)]
mod tests;
