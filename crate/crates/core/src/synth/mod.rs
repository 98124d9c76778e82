//! Deterministic synthetic feature pyramids with known anomaly ground truth.
//!
//! Normal vectors at scale `k`, position `(h, w)` are drawn from
//! `N(μ_k(h, w), Σ_k)` where `μ_k` is a low-frequency sinusoidal field and
//! `Σ_k` a fixed random SPD matrix. Anomalous test images carry an
//! axis-aligned rectangle (in finest-grid cells) whose vectors are shifted by
//! `δ` along a random unit direction.

use std::f64::consts::TAU;
use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::feature_store::{
    write_manifest, write_mask, write_pyramid, DatasetManifest, FeatureMap, FeaturePyramid, Label,
    ManifestEntry, Split, FEATURES_DIR, MANIFEST_FILE,
};
use crate::rng::stream;
use crate::scoring::par_map;

pub const MASKS_DIR: &str = "masks";

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_train: usize,
    pub n_test_good: usize,
    pub n_test_anom: usize,
    /// `(H, W, D)` per scale, coarsest first.
    pub scales: Vec<(usize, usize, usize)>,
    pub image_size: (usize, usize),
    /// Inclusive side-length range of the anomaly rectangle, in finest-grid cells.
    pub patch: (usize, usize),
    pub shift: f64,
    pub field_amplitude: f64,
    pub name: String,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 0,
            n_train: 64,
            n_test_good: 24,
            n_test_anom: 24,
            scales: vec![(8, 8, 16), (16, 16, 8)],
            image_size: (64, 64),
            patch: (5, 10),
            shift: 6.0,
            field_amplitude: 2.0,
            name: "synth".into(),
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.scales.is_empty() {
            return bad("at least one scale is required".into());
        }
        if self.n_train < 2 {
            return bad(format!("n_train must be at least 2, got {}", self.n_train));
        }
        if self.n_test_good + self.n_test_anom == 0 {
            return bad("test split is empty".into());
        }
        if !(self.shift >= 0.0 && self.shift.is_finite()) {
            return bad(format!(
                "shift must be finite and non-negative, got {}",
                self.shift
            ));
        }
        if !self.field_amplitude.is_finite() {
            return bad("field amplitude must be finite".into());
        }
        let (ih, iw) = self.image_size;
        for &(h, w, d) in &self.scales {
            if h == 0 || w == 0 || d == 0 {
                return bad(format!("scale {h}x{w}x{d} has a zero dimension"));
            }
            if ih % h != 0 || iw % w != 0 {
                return bad(format!(
                    "image size {ih}x{iw} is not a multiple of scale {h}x{w}"
                ));
            }
        }
        let (fh, fw, _) = self.finest();
        for pair in self.scales.windows(2) {
            if pair[0].0 > pair[1].0 || pair[0].1 > pair[1].1 {
                return bad("scales must be ordered from coarsest to finest".into());
            }
        }
        for &(h, w, _) in &self.scales {
            if fh % h != 0 || fw % w != 0 {
                return bad(format!(
                    "scale {h}x{w} does not evenly divide the finest grid {fh}x{fw}"
                ));
            }
        }
        let (lo, hi) = self.patch;
        if lo == 0 || lo > hi || hi > fh || hi > fw {
            return bad(format!(
                "patch range {lo}..={hi} does not fit the {fh}x{fw} grid"
            ));
        }
        Ok(())
    }

    fn finest(&self) -> (usize, usize, usize) {
        *self.scales.last().expect("validated")
    }
}

/// Per-scale generative parameters shared by every image.
#[derive(Debug, Clone)]
pub struct ScaleModel {
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    /// `H·W·D` means in raster order.
    pub mean_field: Vec<f64>,
    pub covariance: DMatrix<f64>,
    factor: DMatrix<f64>,
}

impl ScaleModel {
    fn new(
        seed: u64,
        k: usize,
        (height, width, dim): (usize, usize, usize),
        amplitude: f64,
    ) -> Self {
        let mut rng = stream(&[seed, 0x5C41E, k as u64]);
        let freq: Vec<(f64, f64, f64)> = (0..dim)
            .map(|_| {
                (
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.25..1.0),
                    rng.random_range(0.0..TAU),
                )
            })
            .collect();
        let mut mean_field = Vec::with_capacity(height * width * dim);
        for h in 0..height {
            for w in 0..width {
                for &(fh, fw, phase) in &freq {
                    let arg = TAU * (fh * h as f64 / height as f64 + fw * w as f64 / width as f64)
                        + phase;
                    mean_field.push(amplitude * arg.sin());
                }
            }
        }
        let b: DMatrix<f64> = DMatrix::from_fn(dim, dim, |_, _| StandardNormal.sample(&mut rng));
        let covariance = &b * b.transpose() / dim as f64 + DMatrix::identity(dim, dim) * 0.5;
        let factor = covariance
            .clone()
            .cholesky()
            .expect("shifted Gram matrix is SPD")
            .l();
        ScaleModel {
            height,
            width,
            dim,
            mean_field,
            covariance,
            factor,
        }
    }

    pub fn mean(&self, position: usize) -> &[f64] {
        &self.mean_field[position * self.dim..(position + 1) * self.dim]
    }
}

pub fn scale_models(config: &SynthConfig) -> Vec<ScaleModel> {
    config
        .scales
        .iter()
        .enumerate()
        .map(|(k, &s)| ScaleModel::new(config.seed, k, s, config.field_amplitude))
        .collect()
}

/// Rectangle in finest-grid cells: rows `top..top+height`, cols `left..left+width`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Rect {
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Rect {
    pub fn contains(&self, r: usize, c: usize) -> bool {
        (self.top..self.top + self.height).contains(&r)
            && (self.left..self.left + self.width).contains(&c)
    }

    pub fn area(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone)]
pub struct SynthImage {
    pub pyramid: FeaturePyramid,
    pub split: Split,
    pub label: Label,
    pub rect: Option<Rect>,
}

impl SynthImage {
    /// Image-resolution mask of the anomaly rectangle.
    pub fn mask(&self, config: &SynthConfig) -> Vec<bool> {
        let (ih, iw) = config.image_size;
        let (fh, fw, _) = config.finest();
        let (sy, sx) = (ih / fh, iw / fw);
        (0..ih * iw)
            .map(|p| {
                self.rect
                    .is_some_and(|r| r.contains(p / iw / sy, p % iw / sx))
            })
            .collect()
    }
}

/// Whether a position of a `h×w` grid counts as inside `rect` (given in
/// finest-grid cells): at least half of the fine cells it covers are inside.
fn covered(rect: &Rect, fine: (usize, usize), grid: (usize, usize), pos: (usize, usize)) -> bool {
    let (ry, rx) = (fine.0 / grid.0, fine.1 / grid.1);
    let mut inside = 0;
    for dy in 0..ry {
        for dx in 0..rx {
            inside += rect.contains(pos.0 * ry + dy, pos.1 * rx + dx) as usize;
        }
    }
    2 * inside >= ry * rx
}

fn image_id(split: Split, label: Label, index: usize) -> String {
    match (split, label) {
        (Split::Train, _) => format!("train_{index:04}"),
        (Split::Test, Label::Good) => format!("test_good_{index:04}"),
        (Split::Test, Label::Anomalous) => format!("test_anom_{index:04}"),
    }
}

fn generate_image(
    config: &SynthConfig,
    models: &[ScaleModel],
    index: usize,
    split: Split,
    label: Label,
    ordinal: usize,
) -> Result<SynthImage> {
    let mut rng = stream(&[config.seed, index as u64]);
    let (fh, fw, _) = config.finest();
    let rect = (label == Label::Anomalous).then(|| {
        let height = rng.random_range(config.patch.0..=config.patch.1);
        let width = rng.random_range(config.patch.0..=config.patch.1);
        Rect {
            top: rng.random_range(0..=fh - height),
            left: rng.random_range(0..=fw - width),
            height,
            width,
        }
    });
    let mut scales = Vec::with_capacity(models.len());
    for m in models {
        let shift = rect.map(|_| {
            let v: DVector<f64> = DVector::from_fn(m.dim, |_, _| StandardNormal.sample(&mut rng));
            v.normalize() * config.shift
        });
        let mut data = Vec::with_capacity(m.height * m.width * m.dim);
        for p in 0..m.height * m.width {
            let u: DVector<f64> = DVector::from_fn(m.dim, |_, _| StandardNormal.sample(&mut rng));
            let mut z = &m.factor * u + DVector::from_column_slice(m.mean(p));
            if let (Some(r), Some(s)) = (&rect, &shift) {
                if covered(r, (fh, fw), (m.height, m.width), (p / m.width, p % m.width)) {
                    z += s;
                }
            }
            data.extend(z.iter().map(|&v| v as f32));
        }
        scales.push(FeatureMap::new(m.height, m.width, m.dim, data)?);
    }
    Ok(SynthImage {
        pyramid: FeaturePyramid::new(image_id(split, label, ordinal), scales)?,
        split,
        label,
        rect,
    })
}

/// Generates every image in memory; image `i` draws from its own stream.
pub fn generate_images(config: &SynthConfig, threads: usize) -> Result<Vec<SynthImage>> {
    config.validate()?;
    let models = scale_models(config);
    let mut plan = Vec::new();
    for i in 0..config.n_train {
        plan.push((Split::Train, Label::Good, i));
    }
    for i in 0..config.n_test_good {
        plan.push((Split::Test, Label::Good, i));
    }
    for i in 0..config.n_test_anom {
        plan.push((Split::Test, Label::Anomalous, i));
    }
    let indexed: Vec<(usize, (Split, Label, usize))> = plan.into_iter().enumerate().collect();
    par_map(&indexed, threads, |&(index, (split, label, ordinal))| {
        generate_image(config, &models, index, split, label, ordinal)
    })
}

/// Writes `manifest.tsv`, `features/*.cfpd` and `masks/*.pgm` under `out`.
pub fn generate(
    config: &SynthConfig,
    out: impl AsRef<Path>,
    threads: usize,
) -> Result<DatasetManifest> {
    let out = out.as_ref();
    let images = generate_images(config, threads)?;
    let features = out.join(FEATURES_DIR);
    let masks = out.join(MASKS_DIR);
    fs::create_dir_all(&features).map_err(|e| Error::io(&features, e))?;
    fs::create_dir_all(&masks).map_err(|e| Error::io(&masks, e))?;
    let mut entries = Vec::with_capacity(images.len());
    for img in &images {
        let id = &img.pyramid.image_id;
        write_pyramid(features.join(format!("{id}.cfpd")), &img.pyramid)?;
        let mask_path = if img.label == Label::Anomalous {
            let rel = format!("{MASKS_DIR}/{id}.pgm");
            write_mask(
                out.join(&rel),
                config.image_size.0,
                config.image_size.1,
                &img.mask(config),
            )?;
            Some(rel)
        } else {
            None
        };
        entries.push(ManifestEntry {
            image_id: id.clone(),
            split: img.split,
            label: img.label,
            mask_path,
        });
    }
    let manifest = DatasetManifest {
        name: config.name.clone(),
        image_size: config.image_size,
        masks_available: true,
        entries,
    };
    write_manifest(out.join(MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}
