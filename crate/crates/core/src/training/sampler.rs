use rand::RngCore;

use super::TrainConfig;
use crate::error::{Error, Result};
use crate::feature_store::FeatureMap;
use crate::numerics::Tensor;
use crate::rng;

/// Training feature maps of one scale plus their position codes.
pub struct ScaleSamples<'a> {
    maps: Vec<&'a FeatureMap>,
    height: usize,
    width: usize,
    depth: usize,
    codes: Vec<f64>,
    cond_dim: usize,
}

impl<'a> ScaleSamples<'a> {
    /// `codes` holds `H*W*cond_dim` position codes in raster order.
    pub fn new(maps: Vec<&'a FeatureMap>, codes: Vec<f64>, cond_dim: usize) -> Result<Self> {
        let first = maps
            .first()
            .ok_or_else(|| Error::Config("training set is empty".into()))?;
        let (height, width, depth) = (first.height(), first.width(), first.depth());
        if let Some(m) = maps
            .iter()
            .find(|m| (m.height(), m.width(), m.depth()) != (height, width, depth))
        {
            return Err(Error::Config(format!(
                "training maps disagree on shape: {height}x{width}x{depth} vs {}x{}x{}",
                m.height(),
                m.width(),
                m.depth()
            )));
        }
        if codes.len() != height * width * cond_dim {
            return Err(Error::Dimension {
                op: "position codes",
                left: vec![height, width, cond_dim],
                right: vec![codes.len()],
            });
        }
        Ok(ScaleSamples {
            maps,
            height,
            width,
            depth,
            codes,
            cond_dim,
        })
    }

    pub fn total_vectors(&self) -> usize {
        self.maps.len() * self.height * self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Draws one mini-batch: `image_batch` maps (without replacement when
    /// enough exist), then `vector_batch / image_batch` uniform positions per
    /// map; the first `vector_batch % image_batch` maps take one extra.
    ///
    /// Returns features `N×D`, position codes `N×C` (when `C > 0`) and the
    /// sampled `(map, position)` pairs.
    pub fn sample(
        &self,
        config: &TrainConfig,
        rng: &mut impl RngCore,
    ) -> (Tensor, Option<Tensor>, Vec<(usize, usize)>) {
        let n_maps = self.maps.len();
        let image_batch = config.image_batch.max(1);
        let chosen: Vec<usize> = if n_maps >= image_batch {
            let mut pool: Vec<usize> = (0..n_maps).collect();
            for i in 0..image_batch {
                let j = i + rng::index(rng, n_maps - i);
                pool.swap(i, j);
            }
            pool.truncate(image_batch);
            pool
        } else {
            (0..image_batch).map(|_| rng::index(rng, n_maps)).collect()
        };
        let per_image = config.vector_batch / image_batch;
        let extra = config.vector_batch % image_batch;
        let positions = self.height * self.width;
        let mut picks = Vec::with_capacity(config.vector_batch);
        for (slot, &m) in chosen.iter().enumerate() {
            let count = per_image + usize::from(slot < extra);
            for _ in 0..count {
                picks.push((m, rng::index(rng, positions)));
            }
        }
        let n = picks.len();
        let mut z = Vec::with_capacity(n * self.depth);
        let mut c = Vec::with_capacity(n * self.cond_dim);
        for &(m, p) in &picks {
            let d = self.depth;
            z.extend(
                self.maps[m].data()[p * d..(p + 1) * d]
                    .iter()
                    .map(|&v| v as f64),
            );
            c.extend_from_slice(&self.codes[p * self.cond_dim..(p + 1) * self.cond_dim]);
        }
        let z = Tensor::matrix(n, self.depth, z).expect("sized above");
        let c =
            (self.cond_dim > 0).then(|| Tensor::matrix(n, self.cond_dim, c).expect("sized above"));
        (z, c, picks)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::PositionalEncoder;

    fn cfg(image_batch: usize, vector_batch: usize) -> TrainConfig {
        TrainConfig {
            image_batch,
            vector_batch,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn single_pixel_map_repeats_its_vector() {
        let map = FeatureMap::new(1, 1, 3, vec![1.0, 2.0, 3.0]).unwrap();
        let s = ScaleSamples::new(vec![&map], vec![], 0).unwrap();
        let (z, c, _) = s.sample(&cfg(4, 16), &mut rng::stream(&[1]));
        assert!(c.is_none());
        assert_eq!(z.rows(), 16);
        for r in 0..16 {
            assert_eq!(z.row(r), &[1.0, 2.0, 3.0]);
        }
    }

    #[test]
    fn default_batch_gives_256_per_image() {
        let maps: Vec<FeatureMap> = (0..40)
            .map(|i| FeatureMap::new(4, 4, 1, vec![i as f32; 16]).unwrap())
            .collect();
        let s = ScaleSamples::new(maps.iter().collect(), vec![], 0).unwrap();
        let (z, _, picks) = s.sample(&cfg(32, 8192), &mut rng::stream(&[2]));
        assert_eq!(z.rows(), 8192);
        let mut per_map = std::collections::BTreeMap::new();
        for (m, _) in picks {
            *per_map.entry(m).or_insert(0) += 1;
        }
        assert_eq!(per_map.len(), 32);
        assert!(per_map.values().all(|&n| n == 256));
    }

    #[test]
    fn conditions_follow_positions() {
        let map = FeatureMap::new(2, 3, 1, (0..6).map(|v| v as f32).collect()).unwrap();
        let enc = PositionalEncoder::new(4, 100.0).unwrap();
        let s = ScaleSamples::new(vec![&map], enc.grid(2, 3), 4).unwrap();
        let (z, c, picks) = s.sample(&cfg(1, 20), &mut rng::stream(&[3]));
        let c = c.unwrap();
        for (r, &(_, p)) in picks.iter().enumerate() {
            assert_eq!(z.row(r)[0], p as f64);
            assert_eq!(c.row(r), enc.encode(p / 3, p % 3).as_slice());
        }
    }

    #[test]
    fn positions_are_uniform() {
        let map = FeatureMap::new(4, 4, 1, vec![0.0; 16]).unwrap();
        let s = ScaleSamples::new(vec![&map], vec![], 0).unwrap();
        let mut counts = [0usize; 16];
        let mut rng = rng::stream(&[4]);
        let mut draws = 0;
        while draws < 100_000 {
            let (_, _, picks) = s.sample(&cfg(1, 1000), &mut rng);
            for (_, p) in picks {
                counts[p] += 1;
            }
            draws += 1000;
        }
        let expected = draws as f64 / 16.0;
        let chi2: f64 = counts
            .iter()
            .map(|&o| (o as f64 - expected).powi(2) / expected)
            .sum();
        // 15 degrees of freedom: mean 15, sd sqrt(30); 3 sigma above the mean.
        assert!(
            chi2 < 15.0 + 3.0 * 30f64.sqrt(),
            "chi2={chi2} counts={counts:?}"
        );
    }

    #[test]
    fn empty_or_ragged_sets_rejected() {
        assert!(ScaleSamples::new(vec![], vec![], 0).is_err());
        let a = FeatureMap::new(2, 2, 1, vec![0.0; 4]).unwrap();
        let b = FeatureMap::new(2, 1, 1, vec![0.0; 2]).unwrap();
        assert!(ScaleSamples::new(vec![&a, &b], vec![], 0).is_err());
    }
}
