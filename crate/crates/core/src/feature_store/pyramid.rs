//! The `CFPD` feature-pyramid file format.
//!
//! Layout (little-endian, no padding):
//!
//! ```text
//! magic      "CFPD"                4 bytes
//! version    u16 = 1
//! id_len     u16, then id_len bytes of UTF-8 image id
//! K          u16 (number of scales, >= 1)
//! K times:   H u32, W u32, D u32, then H*W*D f32 (h, then w, then channel)
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub const PYRAMID_MAGIC: &[u8; 4] = b"CFPD";
pub const PYRAMID_VERSION: u16 = 1;

/// One scale of a feature pyramid: an `H×W` grid of `D`-dimensional vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    depth: usize,
    data: Vec<f32>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, depth: usize, data: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 || depth == 0 {
            return Err(Error::Validation(format!(
                "feature map dims must be positive, got {height}x{width}x{depth}"
            )));
        }
        if data.len() != height * width * depth {
            return Err(Error::Dimension {
                op: "feature_map",
                left: vec![height, width, depth],
                right: vec![data.len()],
            });
        }
        Ok(FeatureMap {
            height,
            width,
            depth,
            data,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn positions(&self) -> usize {
        self.height * self.width
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector at `(h, w)`.
    pub fn vector(&self, h: usize, w: usize) -> &[f32] {
        let start = (h * self.width + w) * self.depth;
        &self.data[start..start + self.depth]
    }

    /// Feature vector at raster position `i`, widened to 64 bits.
    pub fn vector_f64(&self, i: usize) -> Vec<f64> {
        let start = i * self.depth;
        self.data[start..start + self.depth]
            .iter()
            .map(|&v| v as f64)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeaturePyramid {
    pub image_id: String,
    pub scales: Vec<FeatureMap>,
}

impl FeaturePyramid {
    pub fn new(image_id: impl Into<String>, scales: Vec<FeatureMap>) -> Result<Self> {
        let image_id = image_id.into();
        if scales.is_empty() {
            return Err(Error::Validation(format!(
                "pyramid {image_id} has no scales"
            )));
        }
        if image_id.len() > u16::MAX as usize {
            return Err(Error::Validation("image id longer than 65535 bytes".into()));
        }
        let p = FeaturePyramid { image_id, scales };
        p.warn_if_unordered();
        Ok(p)
    }

    fn warn_if_unordered(&self) {
        let ordered = self
            .scales
            .windows(2)
            .all(|w| w[0].height <= w[1].height && w[0].width <= w[1].width);
        if !ordered {
            log::warn!(
                "pyramid {}: scales are not ordered from coarsest to finest",
                self.image_id
            );
        }
    }

    pub fn num_scales(&self) -> usize {
        self.scales.len()
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload: usize = self.scales.iter().map(|s| 12 + 4 * s.data.len()).sum();
        let mut out = Vec::with_capacity(10 + self.image_id.len() + payload);
        out.extend_from_slice(PYRAMID_MAGIC);
        out.extend_from_slice(&PYRAMID_VERSION.to_le_bytes());
        out.extend_from_slice(&(self.image_id.len() as u16).to_le_bytes());
        out.extend_from_slice(self.image_id.as_bytes());
        out.extend_from_slice(&(self.scales.len() as u16).to_le_bytes());
        for s in &self.scales {
            for dim in [s.height, s.width, s.depth] {
                out.extend_from_slice(&(dim as u32).to_le_bytes());
            }
            for v in &s.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    /// Parses a `CFPD` byte buffer; `source` names it in error messages.
    pub fn decode(bytes: &[u8], source: &str) -> Result<Self> {
        let mut r = ByteReader::new(bytes, source);
        let magic = r.take(4, "magic")?;
        if magic != PYRAMID_MAGIC {
            return Err(r.error_at(0, format!("bad magic {magic:?}")));
        }
        let version = r.u16("version")?;
        if version != PYRAMID_VERSION {
            return Err(Error::UnsupportedVersion {
                path: source.to_string(),
                found: version,
                expected: PYRAMID_VERSION,
            });
        }
        let id_len = r.u16("image id length")? as usize;
        let id_off = r.offset();
        let image_id = String::from_utf8(r.take(id_len, "image id")?.to_vec())
            .map_err(|_| r.error_at(id_off, "image id is not UTF-8".into()))?;
        let k_off = r.offset();
        let k = r.u16("scale count")? as usize;
        if k == 0 {
            return Err(r.error_at(k_off, "scale count is zero".into()));
        }
        let mut scales = Vec::with_capacity(k);
        for scale in 0..k {
            let dims_off = r.offset();
            let h = r.u32("height")? as usize;
            let w = r.u32("width")? as usize;
            let d = r.u32("depth")? as usize;
            if h == 0 || w == 0 || d == 0 {
                return Err(r.error_at(
                    dims_off,
                    format!("scale {scale} has a zero dimension {h}x{w}x{d}"),
                ));
            }
            let count = h
                .checked_mul(w)
                .and_then(|v| v.checked_mul(d))
                .filter(|&c| c.checked_mul(4).is_some_and(|b| b <= r.remaining()))
                .ok_or_else(|| {
                    r.error_at(
                        r.offset(),
                        format!(
                            "scale {scale} payload {h}x{w}x{d} exceeds remaining {} bytes",
                            r.remaining()
                        ),
                    )
                })?;
            let raw = r.take(count * 4, "payload")?;
            let mut data = Vec::with_capacity(count);
            for (i, chunk) in raw.chunks_exact(4).enumerate() {
                let v = f32::from_le_bytes(chunk.try_into().expect("4-byte chunk"));
                if v.is_nan() {
                    return Err(Error::Data {
                        path: source.to_string(),
                        msg: format!("NaN in scale {scale} at element {i}"),
                    });
                }
                data.push(v);
            }
            scales.push(FeatureMap {
                height: h,
                width: w,
                depth: d,
                data,
            });
        }
        if r.remaining() != 0 {
            return Err(r.error_at(r.offset(), format!("{} trailing bytes", r.remaining())));
        }
        FeaturePyramid::new(image_id, scales)
    }
}

pub fn write_pyramid(path: impl AsRef<Path>, pyramid: &FeaturePyramid) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, pyramid.encode()).map_err(|e| Error::io(path, e))
}

pub fn read_pyramid(path: impl AsRef<Path>) -> Result<FeaturePyramid> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    FeaturePyramid::decode(&bytes, &path.display().to_string())
}

/// Bounds-checked little-endian cursor shared by the binary readers.
pub(crate) struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
    source: &'a str,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(bytes: &'a [u8], source: &'a str) -> Self {
        ByteReader {
            bytes,
            pos: 0,
            source,
        }
    }

    pub(crate) fn offset(&self) -> usize {
        self.pos
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn error_at(&self, offset: usize, msg: String) -> Error {
        Error::Format {
            path: self.source.to_string(),
            offset: offset as u64,
            msg,
        }
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if n > self.remaining() {
            return Err(self.error_at(
                self.pos,
                format!(
                    "truncated reading {what}: need {n} bytes, have {}",
                    self.remaining()
                ),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(
            self.take(2, what)?.try_into().expect("2 bytes"),
        ))
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(
            self.take(4, what)?.try_into().expect("4 bytes"),
        ))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64(&mut self, what: &str) -> Result<f64> {
        Ok(f64::from_le_bytes(
            self.take(8, what)?.try_into().expect("8 bytes"),
        ))
    }

    pub(crate) fn f64_vec(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        if n.checked_mul(8).is_none_or(|b| b > self.remaining()) {
            return Err(self.error_at(
                self.pos,
                format!("truncated reading {what}: need {n} floats"),
            ));
        }
        let raw = self.take(n * 8, what)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn sample() -> FeaturePyramid {
        let map = FeatureMap::new(1, 1, 2, vec![0.5, -0.5]).unwrap();
        FeaturePyramid::new("img_001", vec![map]).unwrap()
    }

    #[test]
    fn encoded_size_matches_layout() {
        let p = sample();
        let bytes = p.encode();
        assert_eq!(bytes.len(), 4 + 2 + (2 + 7) + 2 + 12 + 8);
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.cfpd");
        write_pyramid(&path, &sample()).unwrap();
        assert_eq!(read_pyramid(&path).unwrap(), sample());
    }

    #[test]
    fn corrupt_magic_rejected() {
        let mut bytes = sample().encode();
        bytes[0] = b'X';
        assert!(matches!(
            FeaturePyramid::decode(&bytes, "t"),
            Err(Error::Format { offset: 0, .. })
        ));
    }

    #[test]
    fn version_two_rejected() {
        let mut bytes = sample().encode();
        bytes[4] = 2;
        assert!(matches!(
            FeaturePyramid::decode(&bytes, "t"),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn zero_height_rejected() {
        let mut bytes = sample().encode();
        let dims = 4 + 2 + 2 + 7 + 2;
        bytes[dims..dims + 4].copy_from_slice(&0u32.to_le_bytes());
        assert!(matches!(
            FeaturePyramid::decode(&bytes, "t"),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn nan_payload_rejected() {
        let mut bytes = sample().encode();
        let n = bytes.len();
        bytes[n - 4..].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            FeaturePyramid::decode(&bytes, "t"),
            Err(Error::Data { .. })
        ));
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = sample().encode();
        let err = FeaturePyramid::decode(&bytes[..bytes.len() - 3], "t").unwrap_err();
        assert!(matches!(err, Error::Format { .. }), "{err}");
    }

    #[test]
    fn huge_declared_dims_do_not_allocate() {
        let mut bytes = sample().encode();
        let dims = 4 + 2 + 2 + 7 + 2;
        for i in 0..3 {
            bytes[dims + 4 * i..dims + 4 * i + 4].copy_from_slice(&u32::MAX.to_le_bytes());
        }
        assert!(FeaturePyramid::decode(&bytes, "t").is_err());
    }

    fn pyramid_strategy() -> impl Strategy<Value = FeaturePyramid> {
        let scale = (1usize..=16, 1usize..=16, 1usize..=16).prop_flat_map(|(h, w, d)| {
            proptest::collection::vec(
                any::<f32>().prop_filter("not NaN", |v| !v.is_nan()),
                h * w * d,
            )
            .prop_map(move |data| FeatureMap::new(h, w, d, data).unwrap())
        });
        ("[a-z0-9_]{0,12}", proptest::collection::vec(scale, 1..=4))
            .prop_map(|(id, scales)| FeaturePyramid::new(id, scales).unwrap())
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn roundtrip_is_identity(p in pyramid_strategy()) {
            let bytes = p.encode();
            let back = FeaturePyramid::decode(&bytes, "prop").unwrap();
            prop_assert_eq!(back.encode(), bytes);
            prop_assert_eq!(back, p);
        }

        #[test]
        fn truncations_always_error(p in pyramid_strategy(), frac in 0.0f64..1.0) {
            let bytes = p.encode();
            let cut = ((bytes.len() as f64) * frac) as usize;
            prop_assert!(FeaturePyramid::decode(&bytes[..cut.min(bytes.len() - 1)], "prop").is_err());
        }
    }
}
