//! The `CFCK` flow checkpoint format.
//!
//! ```text
//! magic "CFCK", version u16 = 1, K u16
//! K times: D u32, C u32, L u32, clamp f64, permutation seed u64,
//!          encoding base f64, shuffle u8, parameter count u64,
//!          parameters f64 (layer by layer: hidden W, hidden b, out W, out b)
//! ```
//!
//! All little-endian. Permutations are re-derived from the seed on load.

use std::fs;
use std::path::Path;

use super::model::{FlowConfig, FlowModel, FlowScale};
use crate::error::{Error, Result};
use crate::feature_store::ByteReader;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CFCK";
pub const CHECKPOINT_VERSION: u16 = 1;

pub fn encode_checkpoint(model: &FlowModel) -> Vec<u8> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(model.scales.len() as u16).to_le_bytes());
    for scale in &model.scales {
        let c = scale.config();
        out.extend_from_slice(&(c.dim as u32).to_le_bytes());
        out.extend_from_slice(&(c.cond_dim as u32).to_le_bytes());
        out.extend_from_slice(&(c.layers as u32).to_le_bytes());
        out.extend_from_slice(&c.clamp.to_le_bytes());
        out.extend_from_slice(&c.seed.to_le_bytes());
        out.extend_from_slice(&c.pe_base.to_le_bytes());
        out.push(c.shuffle as u8);
        let params = scale.flat_parameters();
        out.extend_from_slice(&(params.len() as u64).to_le_bytes());
        for p in params {
            out.extend_from_slice(&p.to_le_bytes());
        }
    }
    out
}

pub fn decode_checkpoint(bytes: &[u8], source: &str) -> Result<FlowModel> {
    let mut r = ByteReader::new(bytes, source);
    if r.take(4, "magic")? != CHECKPOINT_MAGIC {
        return Err(r.error_at(0, "bad checkpoint magic".into()));
    }
    let version = r.u16("version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::UnsupportedVersion {
            path: source.into(),
            found: version,
            expected: CHECKPOINT_VERSION,
        });
    }
    let k = r.u16("scale count")? as usize;
    if k == 0 {
        return Err(r.error_at(6, "checkpoint has no scales".into()));
    }
    let mut scales = Vec::with_capacity(k);
    for s in 0..k {
        let at = r.offset();
        let dim = r.u32("dim")? as usize;
        let cond_dim = r.u32("condition dim")? as usize;
        let layers = r.u32("layers")? as usize;
        let clamp = r.f64("clamp")?;
        let seed = r.u64("seed")?;
        let pe_base = r.f64("encoding base")?;
        let shuffle = match r.take(1, "shuffle flag")?[0] {
            0 => false,
            1 => true,
            other => return Err(r.error_at(r.offset() - 1, format!("bad shuffle flag {other}"))),
        };
        let config = FlowConfig {
            dim,
            cond_dim,
            layers,
            clamp,
            seed,
            pe_base,
            shuffle,
        };
        config
            .validate()
            .map_err(|e| r.error_at(at, format!("scale {s}: {e}")))?;
        if dim > 1 << 16 || cond_dim > 1 << 16 || layers > 1 << 10 {
            return Err(r.error_at(
                at,
                format!("scale {s}: implausible dims {dim}/{cond_dim}/{layers}"),
            ));
        }
        let expected = config.parameter_count();
        let count_at = r.offset();
        let count = r.u64("parameter count")? as usize;
        if count != expected {
            return Err(r.error_at(
                count_at,
                format!("scale {s}: {count} parameters, layout needs {expected}"),
            ));
        }
        let params = r.f64_vec(count, "parameters")?;
        if params.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data {
                path: source.into(),
                msg: format!("scale {s}: non-finite parameter"),
            });
        }
        let mut scale = FlowScale::new(config)?;
        scale.set_flat_parameters(&params)?;
        scales.push(scale);
    }
    if r.remaining() != 0 {
        return Err(r.error_at(r.offset(), "trailing bytes".into()));
    }
    Ok(FlowModel { scales })
}

pub fn write_checkpoint(path: impl AsRef<Path>, model: &FlowModel) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_checkpoint(model)).map_err(|e| Error::io(path, e))
}

pub fn read_checkpoint(path: impl AsRef<Path>) -> Result<FlowModel> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_checkpoint(&bytes, &path.display().to_string())
}

/// Bytes spent on parameters (excluding headers).
pub fn parameter_bytes(model: &FlowModel) -> usize {
    8 * model.parameter_count()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn model() -> FlowModel {
        let mut a = FlowConfig::new(5);
        a.cond_dim = 8;
        a.layers = 3;
        a.seed = 9;
        let b = FlowConfig {
            layers: 2,
            ..FlowConfig::new(3).unconditional()
        };
        let mut m = FlowModel::new(&[a, b]).unwrap();
        let n = m.scales[0].parameter_count();
        m.scales[0]
            .set_flat_parameters(&(0..n).map(|i| (i as f64 * 0.37).sin()).collect::<Vec<_>>())
            .unwrap();
        m
    }

    #[test]
    fn roundtrip_is_byte_exact() {
        let m = model();
        let bytes = encode_checkpoint(&m);
        let back = decode_checkpoint(&bytes, "t").unwrap();
        assert_eq!(back, m);
        assert_eq!(encode_checkpoint(&back), bytes);
    }

    #[test]
    fn truncations_error() {
        let bytes = encode_checkpoint(&model());
        for cut in (0..bytes.len()).step_by(7) {
            assert!(decode_checkpoint(&bytes[..cut], "t").is_err());
        }
    }

    #[test]
    fn parameter_count_formula_matches_layers() {
        for s in &model().scales {
            assert_eq!(s.parameter_count(), s.config().parameter_count());
        }
    }
}
