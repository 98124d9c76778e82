//! The `CFMV` baseline checkpoint format.
//!
//! ```text
//! magic "CFMV", version u16 = 1, K u16
//! K times: H u32, W u32, D u32, ridge f64,
//!          H·W times: mean f64 × D, lower factor f64 × D(D+1)/2 (row-major)
//! ```
//!
//! All little-endian.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use super::{Gaussian, MvgModel, MvgScale};
use crate::error::{Error, Result};
use crate::feature_store::ByteReader;

pub const MVG_MAGIC: &[u8; 4] = b"CFMV";
pub const MVG_VERSION: u16 = 1;

pub fn encode_mvg(model: &MvgModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(MVG_MAGIC);
    out.extend_from_slice(&MVG_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.scales.len() as u16).to_le_bytes());
    for s in &model.scales {
        for v in [s.height, s.width, s.dim] {
            out.extend_from_slice(&(v as u32).to_le_bytes());
        }
        out.extend_from_slice(&s.ridge.to_le_bytes());
        for g in &s.positions {
            for v in g.mean().iter() {
                out.extend_from_slice(&v.to_le_bytes());
            }
            let l = g.factor();
            for i in 0..s.dim {
                for j in 0..=i {
                    out.extend_from_slice(&l[(i, j)].to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn decode_mvg(bytes: &[u8], source: &str) -> Result<MvgModel> {
    let mut r = ByteReader::new(bytes, source);
    if r.take(4, "magic")? != MVG_MAGIC {
        return Err(r.error_at(0, "bad MVG checkpoint magic".into()));
    }
    let version = r.u16("version")?;
    if version != MVG_VERSION {
        return Err(Error::UnsupportedVersion {
            path: source.into(),
            found: version,
            expected: MVG_VERSION,
        });
    }
    let k = r.u16("scale count")? as usize;
    let mut scales = Vec::with_capacity(k);
    for s in 0..k {
        let at = r.offset();
        let (h, w, d) = (
            r.u32("height")? as usize,
            r.u32("width")? as usize,
            r.u32("dim")? as usize,
        );
        if h == 0 || w == 0 || d == 0 {
            return Err(r.error_at(at, format!("scale {s}: zero dimension")));
        }
        let per_position = d + d * (d + 1) / 2;
        if h.saturating_mul(w)
            .saturating_mul(per_position)
            .saturating_mul(8)
            > r.remaining()
        {
            return Err(r.error_at(at, format!("scale {s}: {h}x{w}x{d} exceeds the file size")));
        }
        let ridge = r.f64("ridge")?;
        let mut positions = Vec::with_capacity(h * w);
        for i in 0..h * w {
            let mean = DVector::from_vec(r.f64_vec(d, "mean")?);
            let packed = r.f64_vec(d * (d + 1) / 2, "factor")?;
            let mut l = DMatrix::zeros(d, d);
            let mut it = packed.into_iter();
            for a in 0..d {
                for b in 0..=a {
                    l[(a, b)] = it.next().unwrap_or_default();
                }
            }
            if mean.iter().chain(l.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Data {
                    path: source.into(),
                    msg: format!("scale {s} position {i}: non-finite value"),
                });
            }
            let g = Gaussian::from_factor(mean, l).map_err(|e| Error::Data {
                path: source.into(),
                msg: format!("scale {s} position {i}: {e}"),
            })?;
            positions.push(g);
        }
        scales.push(MvgScale {
            height: h,
            width: w,
            dim: d,
            ridge,
            positions,
        });
    }
    if r.remaining() != 0 {
        return Err(r.error_at(r.offset(), "trailing bytes".into()));
    }
    Ok(MvgModel { scales })
}

pub fn write_mvg(path: impl AsRef<Path>, model: &MvgModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_mvg(model)).map_err(|e| Error::io(path, e))
}

pub fn read_mvg(path: impl AsRef<Path>) -> Result<MvgModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_mvg(&bytes, &path.display().to_string())
}
