//! Binary PGM (`P5`) images: 8-bit masks and 16-bit score maps.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// A grayscale image with samples widened to `u16`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub maxval: u16,
    pub pixels: Vec<u16>,
}

impl GrayImage {
    /// Binary mask: nonzero pixels are anomalous.
    pub fn to_mask(&self) -> Vec<bool> {
        self.pixels.iter().map(|&p| p != 0).collect()
    }
}

pub fn encode_pgm(img: &GrayImage, comment: Option<&str>) -> Vec<u8> {
    let mut out = b"P5\n".to_vec();
    if let Some(c) = comment {
        for line in c.lines() {
            out.extend_from_slice(format!("# {line}\n").as_bytes());
        }
    }
    out.extend_from_slice(format!("{} {}\n{}\n", img.width, img.height, img.maxval).as_bytes());
    if img.maxval < 256 {
        out.extend(img.pixels.iter().map(|&p| p as u8));
    } else {
        for p in &img.pixels {
            out.extend_from_slice(&p.to_be_bytes());
        }
    }
    out
}

pub fn decode_pgm(bytes: &[u8], source: &str) -> Result<GrayImage> {
    let err = |offset: usize, msg: &str| Error::Format {
        path: source.to_string(),
        offset: offset as u64,
        msg: msg.to_string(),
    };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(err(0, "not a binary PGM (P5)"));
    }
    let mut pos = 2;
    let mut header = [0usize; 3];
    for slot in header.iter_mut() {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(err(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *slot = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| err(start, "bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(err(pos, "missing whitespace after header"));
    }
    pos += 1;
    let [width, height, maxval] = header;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(err(0, "bad dimensions or maxval"));
    }
    let sample_bytes = if maxval < 256 { 1 } else { 2 };
    let n = width
        .checked_mul(height)
        .filter(|n| {
            n.checked_mul(sample_bytes)
                .is_some_and(|b| b == bytes.len() - pos)
        })
        .ok_or_else(|| err(pos, "payload size does not match header"))?;
    let raw = &bytes[pos..];
    let pixels = if sample_bytes == 1 {
        raw.iter().map(|&b| b as u16).collect()
    } else {
        raw.chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]))
            .collect()
    };
    debug_assert_eq!(n, width * height);
    Ok(GrayImage {
        height,
        width,
        maxval: maxval as u16,
        pixels,
    })
}

pub fn write_pgm(path: impl AsRef<Path>, img: &GrayImage, comment: Option<&str>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_pgm(img, comment)).map_err(|e| Error::io(path, e))
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<GrayImage> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_pgm(&bytes, &path.display().to_string())
}

pub fn write_mask(
    path: impl AsRef<Path>,
    height: usize,
    width: usize,
    mask: &[bool],
) -> Result<()> {
    let img = GrayImage {
        height,
        width,
        maxval: 255,
        pixels: mask.iter().map(|&m| if m { 255 } else { 0 }).collect(),
    };
    write_pgm(path, &img, None)
}
