//! Resumable training state (`CFTS`).
//!
//! ```text
//! magic "CFTS", version u16 = 1, K u16
//! K times: epochs_done u32, adam step u64, n u64, m f64[n], v f64[n],
//!          loss count u32, per-epoch mean losses f64[]
//! ```

use std::fs;
use std::path::Path;

use super::optim::AdamState;
use crate::error::{Error, Result};
use crate::feature_store::ByteReader;

pub const STATE_MAGIC: &[u8; 4] = b"CFTS";
pub const STATE_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct ScaleState {
    pub epochs_done: usize,
    pub adam: AdamState,
    pub epoch_losses: Vec<f64>,
}

impl ScaleState {
    pub fn new(params: usize) -> Self {
        ScaleState {
            epochs_done: 0,
            adam: AdamState::new(params),
            epoch_losses: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub scales: Vec<ScaleState>,
}

impl TrainState {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(STATE_MAGIC);
        out.extend_from_slice(&STATE_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.scales.len() as u16).to_le_bytes());
        for s in &self.scales {
            out.extend_from_slice(&(s.epochs_done as u32).to_le_bytes());
            out.extend_from_slice(&s.adam.step.to_le_bytes());
            out.extend_from_slice(&(s.adam.m.len() as u64).to_le_bytes());
            for v in s.adam.m.iter().chain(&s.adam.v) {
                out.extend_from_slice(&v.to_le_bytes());
            }
            out.extend_from_slice(&(s.epoch_losses.len() as u32).to_le_bytes());
            for v in &s.epoch_losses {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, source);
        if r.take(4, "magic")? != STATE_MAGIC {
            return Err(r.error_at(0, "bad train-state magic".into()));
        }
        let version = r.u16("version")?;
        if version != STATE_VERSION {
            return Err(Error::UnsupportedVersion {
                path: source.into(),
                found: version,
                expected: STATE_VERSION,
            });
        }
        let k = r.u16("scale count")? as usize;
        let mut scales = Vec::with_capacity(k.min(64));
        for _ in 0..k {
            let epochs_done = r.u32("epochs done")? as usize;
            let step = r.u64("adam step")?;
            let n = r.u64("moment length")? as usize;
            let m = r.f64_vec(n, "first moments")?;
            let v = r.f64_vec(n, "second moments")?;
            let nl = r.u32("loss count")? as usize;
            let epoch_losses = r.f64_vec(nl, "losses")?;
            scales.push(ScaleState {
                epochs_done,
                adam: AdamState { step, m, v },
                epoch_losses,
            });
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.offset(), "trailing bytes".into()));
        }
        Ok(TrainState { scales })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.encode()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, &path.display().to_string())
    }
}
