use crate::error::{Error, Result};

pub const DEFAULT_CONDITION_CHANNELS: usize = 128;
pub const DEFAULT_PE_BASE: f64 = 10000.0;

/// 2D sinusoidal position code.
///
/// For `j in 0..C/4` with `ω_j = base^(-4j/C)` the channels are laid out as
/// `[sin(h·ω_j), cos(h·ω_j), sin(w·ω_j), cos(w·ω_j)]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionalEncoder {
    channels: usize,
    base: f64,
}

impl PositionalEncoder {
    pub fn new(channels: usize, base: f64) -> Result<Self> {
        if !channels.is_multiple_of(4) {
            return Err(Error::Config(format!(
                "condition channels must be divisible by 4, got {channels}"
            )));
        }
        if !(base > 0.0) || !base.is_finite() {
            return Err(Error::Config(format!(
                "encoding base must be positive, got {base}"
            )));
        }
        Ok(PositionalEncoder { channels, base })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    pub fn encode_into(&self, h: usize, w: usize, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.channels);
        let c = self.channels as f64;
        for (j, chunk) in out.chunks_exact_mut(4).enumerate() {
            let omega = self.base.powf(-4.0 * j as f64 / c);
            let (sh, ch) = (h as f64 * omega).sin_cos();
            let (sw, cw) = (w as f64 * omega).sin_cos();
            chunk.copy_from_slice(&[sh, ch, sw, cw]);
        }
    }

    pub fn encode(&self, h: usize, w: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        self.encode_into(h, w, &mut out);
        out
    }

    /// Codes for every position of an `height×width` grid in raster order,
    /// flattened to `height*width*C` values.
    pub fn grid(&self, height: usize, width: usize) -> Vec<f64> {
        let mut out = vec![0.0; height * width * self.channels];
        if self.channels == 0 {
            return out;
        }
        for (i, chunk) in out.chunks_exact_mut(self.channels).enumerate() {
            self.encode_into(i / width, i % width, chunk);
        }
        out
    }
}

pub fn positional_encoding(h: usize, w: usize, channels: usize, base: f64) -> Result<Vec<f64>> {
    Ok(PositionalEncoder::new(channels, base)?.encode(h, w))
}
