use crate::error::{Error, Result};

/// Row-major `height×width` grid of reals.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl Grid {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Dimension {
                op: "grid",
                left: vec![height, width],
                right: vec![data.len()],
            });
        }
        Ok(Grid {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: f64) -> Self {
        Grid {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn at(&self, h: usize, w: usize) -> f64 {
        self.data[h * self.width + w]
    }

    pub fn same_shape(&self, other: &Grid) -> bool {
        self.height == other.height && self.width == other.width
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Align-corners bilinear resampling: corner samples land exactly on output
/// corners and the interior is linear along each axis.
pub fn upsample_bilinear(src: &Grid, height: usize, width: usize) -> Grid {
    let axis = |n_out: usize, n_in: usize| -> Vec<(usize, usize, f64)> {
        (0..n_out)
            .map(|i| {
                if n_in == 1 || n_out == 1 {
                    return (0, 0, 0.0);
                }
                let pos = i as f64 * (n_in - 1) as f64 / (n_out - 1) as f64;
                let lo = (pos.floor() as usize).min(n_in - 1);
                let hi = (lo + 1).min(n_in - 1);
                (lo, hi, pos - lo as f64)
            })
            .collect()
    };
    let rows = axis(height, src.height);
    let cols = axis(width, src.width);
    let mut data = Vec::with_capacity(height * width);
    for &(r0, r1, fr) in &rows {
        for &(c0, c1, fc) in &cols {
            let top = src.at(r0, c0) * (1.0 - fc) + src.at(r0, c1) * fc;
            let bottom = src.at(r1, c0) * (1.0 - fc) + src.at(r1, c1) * fc;
            data.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    Grid {
        height,
        width,
        data,
    }
}
