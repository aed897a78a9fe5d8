//! 16-bit binary PGM previews.
//!
//! Pixels map linearly from `[lo, hi]` onto `0..=65535` and are rounded.
//! A degenerate range (`hi <= lo`) maps every pixel to 0. The range used is
//! written to `<path>.norm.txt` so previews can be mapped back.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::transforms::RealImage;

pub const MAXVAL: u16 = u16::MAX;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum PgmNormalization {
    /// The image's own minimum and maximum.
    #[default]
    MinMax,
    Fixed {
        lo: f64,
        hi: f64,
    },
}

/// The range a preview was quantized with.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgmScale {
    pub lo: f64,
    pub hi: f64,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".norm.txt");
    PathBuf::from(s)
}

pub fn quantize(img: &RealImage, norm: PgmNormalization) -> (Vec<u16>, PgmScale) {
    let (lo, hi) = match norm {
        PgmNormalization::MinMax => (img.min(), img.max()),
        PgmNormalization::Fixed { lo, hi } => (lo, hi),
    };
    let span = hi - lo;
    let q = img
        .data()
        .iter()
        .map(|&v| {
            if !(span > 0.0) {
                0
            } else {
                ((v - lo) / span * MAXVAL as f64).round().clamp(0.0, MAXVAL as f64) as u16
            }
        })
        .collect();
    (q, PgmScale { lo, hi })
}

pub fn write_pgm(img: &RealImage, path: impl AsRef<Path>, norm: PgmNormalization) -> Result<PgmScale> {
    let path = path.as_ref();
    let (q, scale) = quantize(img, norm);
    let mut out = format!("P5\n{} {}\n{}\n", img.width(), img.height(), MAXVAL).into_bytes();
    out.reserve(q.len() * 2);
    for v in q {
        out.extend_from_slice(&v.to_be_bytes());
    }
    fs::write(path, out)?;

    let mode = match norm {
        PgmNormalization::MinMax => "minmax",
        PgmNormalization::Fixed { .. } => "fixed-range",
    };
    let mut side = fs::File::create(sidecar_path(path))?;
    writeln!(side, "normalization {mode}")?;
    writeln!(side, "lo {:?}", scale.lo)?;
    writeln!(side, "hi {:?}", scale.hi)?;
    writeln!(side, "maxval {MAXVAL}")?;
    Ok(scale)
}

/// A decoded 16-bit PGM: `(width, height, pixels)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u16>,
}

/// Parses a binary PGM with maxval 65535.
pub fn decode_pgm(bytes: &[u8]) -> Result<Pgm> {
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(Error::format(pos as u64, "truncated PGM header"));
        }
        fields.push((start, String::from_utf8_lossy(&bytes[start..pos]).into_owned()));
    }
    if fields[0].1 != "P5" {
        return Err(Error::format(0, format!("expected P5, found {:?}", fields[0].1)));
    }
    let num = |i: usize| -> Result<usize> {
        fields[i]
            .1
            .parse()
            .map_err(|_| Error::format(fields[i].0 as u64, format!("bad PGM field {:?}", fields[i].1)))
    };
    let (width, height, maxval) = (num(1)?, num(2)?, num(3)?);
    if maxval != MAXVAL as usize {
        return Err(Error::format(
            fields[3].0 as u64,
            format!("expected maxval 65535, found {maxval}"),
        ));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let need = width
        .checked_mul(height)
        .and_then(|n| n.checked_mul(2))
        .ok_or_else(|| Error::format(fields[1].0 as u64, "PGM dimensions overflow"))?;
    if bytes.len() < pos || bytes.len() - pos != need {
        return Err(Error::format(
            pos as u64,
            format!("raster needs {need} bytes, found {}", bytes.len().saturating_sub(pos)),
        ));
    }
    let pixels = bytes[pos..]
        .chunks_exact(2)
        .map(|b| u16::from_be_bytes([b[0], b[1]]))
        .collect();
    Ok(Pgm { width, height, pixels })
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Pgm> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_image_minmax_is_all_zero() {
        let (q, _) = quantize(&RealImage::filled(3, 4, 0.7), PgmNormalization::MinMax);
        assert!(q.iter().all(|&v| v == 0));
    }

    #[test]
    fn ramp_is_nondecreasing_along_rows() {
        let img = RealImage::from_fn(4, 50, |r, c| c as f64 * 0.1 + r as f64);
        let (q, _) = quantize(&img, PgmNormalization::MinMax);
        for row in q.chunks(50) {
            assert!(row.windows(2).all(|w| w[0] <= w[1]));
        }
        assert_eq!(*q.iter().min().unwrap(), 0);
        assert_eq!(*q.iter().max().unwrap(), MAXVAL);
    }

    #[test]
    fn fixed_range_clamps() {
        let img = RealImage::new(1, 3, vec![-1.0, 0.5, 2.0]).unwrap();
        let (q, _) = quantize(&img, PgmNormalization::Fixed { lo: 0.0, hi: 1.0 });
        assert_eq!(q, vec![0, 32768, MAXVAL]);
    }

    #[test]
    fn written_file_reads_back_quantized_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("img.pgm");
        let img = RealImage::from_fn(5, 7, |r, c| ((r * 7 + c) as f64).sin());
        write_pgm(&img, &path, PgmNormalization::MinMax).unwrap();
        let back = read_pgm(&path).unwrap();
        assert_eq!((back.width, back.height), (7, 5));
        // Independent quantization oracle.
        let (lo, hi) = (img.min(), img.max());
        let expected: Vec<u16> = img
            .data()
            .iter()
            .map(|v| ((v - lo) / (hi - lo) * 65535.0).round() as u16)
            .collect();
        assert_eq!(back.pixels, expected);
        let side = fs::read_to_string(sidecar_path(&path)).unwrap();
        assert!(side.starts_with("normalization minmax\n"));
    }

    #[test]
    fn rejects_malformed_pgm() {
        assert!(decode_pgm(b"P2\n1 1\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n65535\n\0\0").is_err());
        assert!(decode_pgm(b"P5\n1 1\n255\n\0").is_err());
        assert!(decode_pgm(b"P5\n# comment\n1 1\n65535\n\x01\x02").unwrap().pixels == vec![258]);
    }
}
