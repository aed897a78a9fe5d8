//! The `KSPLAB01` k-space container.
//!
//! ```text
//! offset 0   8 bytes   magic "KSPLAB01"
//! offset 8   u32 LE    header length L
//! offset 12  L bytes   UTF-8 JSON header
//! offset 12+L          samples, little-endian interleaved (re, im),
//!                      frame-major, then coil, row, column
//! ```
//!
//! The header is `{version, dtype, shape, mask?, meta}` where `dtype` is
//! `"c64"` (two f32) or `"c128"` (two f64) and `shape` is
//! `[coils, height, width]` or `[frames, coils, height, width]`. Every size
//! is checked against the actual byte count before the payload is read.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sampling::{MaskKind, PhaseAxis, SamplingMask};
use crate::transforms::{CoilStack, ComplexImage, RealImage};

pub const MAGIC: &[u8; 8] = b"KSPLAB01";
pub const VERSION: u32 = 1;
/// Headers larger than this are rejected before allocation.
pub const MAX_HEADER_LEN: u32 = 16 << 20;
const PREFIX_LEN: u64 = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    C64,
    #[default]
    C128,
}

impl Dtype {
    pub fn sample_bytes(self) -> u64 {
        match self {
            Dtype::C64 => 8,
            Dtype::C128 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskHeader {
    pub kind: MaskKind,
    #[serde(rename = "R")]
    pub acceleration: usize,
    pub acs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default)]
    pub phase_axis: PhaseAxis,
    #[serde(default)]
    pub offset: usize,
    pub pattern: Vec<u8>,
}

impl MaskHeader {
    pub fn from_mask(mask: &SamplingMask) -> Self {
        Self {
            kind: mask.kind(),
            acceleration: mask.acceleration(),
            acs: mask.acs_lines(),
            seed: mask.seed(),
            phase_axis: mask.phase_axis(),
            offset: mask.offset(),
            pattern: mask.pattern().to_vec(),
        }
    }

    pub fn to_mask(&self, height: usize, width: usize) -> Result<SamplingMask> {
        SamplingMask::from_parts(
            height,
            width,
            self.kind,
            self.acceleration,
            self.acs,
            self.phase_axis,
            self.offset,
            self.seed,
            self.pattern.clone(),
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KspHeader {
    pub version: u32,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mask: Option<MaskHeader>,
    #[serde(default)]
    pub meta: serde_json::Value,
}

impl KspHeader {
    /// `(frames, coils, height, width)`.
    fn dims(&self) -> Result<(usize, usize, usize, usize)> {
        let d = match self.shape[..] {
            [c, h, w] => (1, c, h, w),
            [f, c, h, w] => (f, c, h, w),
            _ => {
                return Err(Error::format(
                    PREFIX_LEN,
                    format!("shape must have 3 or 4 dimensions, got {:?}", self.shape),
                ))
            }
        };
        if [d.0, d.1, d.2, d.3].contains(&0) {
            return Err(Error::format(
                PREFIX_LEN,
                format!("shape {:?} has a zero dimension", self.shape),
            ));
        }
        Ok(d)
    }

    fn payload_len(&self) -> Result<u64> {
        let (f, c, h, w) = self.dims()?;
        [f, c, h, w]
            .iter()
            .try_fold(self.dtype.sample_bytes(), |acc, &d| acc.checked_mul(d as u64))
            .ok_or_else(|| Error::format(PREFIX_LEN, format!("shape {:?} overflows", self.shape)))
    }
}

/// A decoded container. Single-frame files hold one stack.
#[derive(Debug, Clone, PartialEq)]
pub struct KspData {
    pub frames: Vec<CoilStack>,
    /// True when the shape has an explicit frame axis.
    pub framed: bool,
    pub dtype: Dtype,
    pub mask: Option<SamplingMask>,
    pub meta: serde_json::Value,
}

impl KspData {
    pub fn single(stack: CoilStack) -> Self {
        Self {
            frames: vec![stack],
            framed: false,
            dtype: Dtype::C128,
            mask: None,
            meta: serde_json::Value::Null,
        }
    }

    fn header(&self) -> Result<KspHeader> {
        let first = self
            .frames
            .first()
            .ok_or_else(|| Error::invalid("container needs at least one frame"))?;
        if self.frames.iter().any(|f| f.shape() != first.shape()) {
            return Err(Error::invalid("all frames must share a shape"));
        }
        if !self.framed && self.frames.len() != 1 {
            return Err(Error::invalid("multiple frames require a framed container"));
        }
        let (c, h, w) = first.shape();
        if let Some(mask) = &self.mask {
            mask.check_stack(first)?;
        }
        let shape = if self.framed {
            vec![self.frames.len(), c, h, w]
        } else {
            vec![c, h, w]
        };
        Ok(KspHeader {
            version: VERSION,
            dtype: self.dtype,
            shape,
            mask: self.mask.as_ref().map(MaskHeader::from_mask),
            meta: self.meta.clone(),
        })
    }
}

/// Stores real images as single-coil frames; more than one image gives a
/// framed container.
pub fn images_to_ksp(images: &[RealImage]) -> Result<KspData> {
    let frames = images
        .iter()
        .map(|img| CoilStack::from_images(&[ComplexImage::from_real(img)]))
        .collect::<Result<Vec<_>>>()?;
    if frames.is_empty() {
        return Err(Error::invalid("no images to store"));
    }
    Ok(KspData {
        framed: frames.len() > 1,
        frames,
        dtype: Dtype::C128,
        mask: None,
        meta: serde_json::Value::Null,
    })
}

/// Magnitudes of the frames of a single-coil container.
pub fn ksp_to_images(data: &KspData) -> Result<Vec<RealImage>> {
    data.frames
        .iter()
        .map(|f| {
            if f.coils() != 1 {
                return Err(Error::invalid(format!(
                    "expected a single-coil image container, found {} coils",
                    f.coils()
                )));
            }
            Ok(f.coil_image(0).magnitude())
        })
        .collect()
}

pub fn encode_ksp(data: &KspData) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    write_to(data, &mut out)?;
    Ok(out)
}

fn write_to(data: &KspData, out: &mut impl Write) -> Result<()> {
    let header = serde_json::to_vec(&data.header()?)?;
    let len = u32::try_from(header.len())
        .ok()
        .filter(|&l| l <= MAX_HEADER_LEN)
        .ok_or_else(|| Error::invalid("container header too large"))?;
    out.write_all(MAGIC)?;
    out.write_all(&len.to_le_bytes())?;
    out.write_all(&header)?;
    for frame in &data.frames {
        for z in frame.data() {
            match data.dtype {
                Dtype::C128 => {
                    out.write_all(&z.re.to_le_bytes())?;
                    out.write_all(&z.im.to_le_bytes())?;
                }
                Dtype::C64 => {
                    out.write_all(&(z.re as f32).to_le_bytes())?;
                    out.write_all(&(z.im as f32).to_le_bytes())?;
                }
            }
        }
    }
    Ok(())
}

pub fn write_ksp(data: &KspData, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_to(data, &mut w)?;
    w.flush()?;
    Ok(())
}

fn read_exact_at(r: &mut impl Read, buf: &mut [u8], offset: u64, what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::format(offset, format!("truncated while reading {what}")),
        _ => Error::Io(e),
    })
}

/// Reads and validates magic, length prefix and header. `total` is the full
/// container length in bytes.
fn read_header(r: &mut impl Read, total: u64) -> Result<KspHeader> {
    let mut prefix = [0u8; 12];
    if total < PREFIX_LEN {
        return Err(Error::format(
            total,
            format!("file is {total} bytes, shorter than the 12-byte prefix"),
        ));
    }
    read_exact_at(r, &mut prefix, 0, "prefix")?;
    if &prefix[..8] != MAGIC {
        return Err(Error::format(
            0,
            format!("bad magic {:?}", String::from_utf8_lossy(&prefix[..8])),
        ));
    }
    let len = u32::from_le_bytes(prefix[8..12].try_into().expect("4 bytes"));
    if len > MAX_HEADER_LEN {
        return Err(Error::format(
            8,
            format!("header length {len} exceeds limit {MAX_HEADER_LEN}"),
        ));
    }
    if PREFIX_LEN + len as u64 > total {
        return Err(Error::format(
            8,
            format!("header length {len} runs past end of file ({total} bytes)"),
        ));
    }
    let mut raw = vec![0u8; len as usize];
    read_exact_at(r, &mut raw, PREFIX_LEN, "header")?;
    let header: KspHeader = serde_json::from_slice(&raw)
        .map_err(|e| Error::format(PREFIX_LEN + e.column() as u64, format!("invalid header JSON: {e}")))?;
    if header.version != VERSION {
        return Err(Error::format(
            PREFIX_LEN,
            format!("unsupported version {}", header.version),
        ));
    }
    let body = header.payload_len()?;
    let start = PREFIX_LEN + len as u64;
    if total - start != body {
        return Err(Error::format(
            start,
            format!(
                "shape {:?} ({:?}) needs {body} payload bytes, found {}",
                header.shape,
                header.dtype,
                total - start
            ),
        ));
    }
    Ok(header)
}

fn read_body(r: &mut impl Read, header: KspHeader, start: u64) -> Result<KspData> {
    let (f, c, h, w) = header.dims()?;
    let sb = header.dtype.sample_bytes() as usize;
    let per_frame = c * h * w;
    let mut buf = vec![0u8; per_frame * sb];
    let mut frames = Vec::with_capacity(f);
    for fi in 0..f {
        let offset = start + (fi * per_frame * sb) as u64;
        read_exact_at(r, &mut buf, offset, "samples")?;
        let data: Vec<Complex64> = buf
            .chunks_exact(sb)
            .map(|s| match header.dtype {
                Dtype::C128 => Complex64::new(
                    f64::from_le_bytes(s[..8].try_into().expect("8 bytes")),
                    f64::from_le_bytes(s[8..].try_into().expect("8 bytes")),
                ),
                Dtype::C64 => Complex64::new(
                    f32::from_le_bytes(s[..4].try_into().expect("4 bytes")) as f64,
                    f32::from_le_bytes(s[4..].try_into().expect("4 bytes")) as f64,
                ),
            })
            .collect();
        if let Some(i) = data.iter().position(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(Error::format(offset + (i * sb) as u64, "non-finite sample"));
        }
        frames.push(CoilStack::new(c, h, w, data)?);
    }
    let mask = header
        .mask
        .as_ref()
        .map(|m| m.to_mask(h, w))
        .transpose()
        .map_err(|e| Error::format(PREFIX_LEN, format!("invalid mask in header: {e}")))?;
    Ok(KspData {
        frames,
        framed: header.shape.len() == 4,
        dtype: header.dtype,
        mask,
        meta: header.meta,
    })
}

pub fn decode_ksp(bytes: &[u8]) -> Result<KspData> {
    let mut r = bytes;
    let header = read_header(&mut r, bytes.len() as u64)?;
    let start = bytes.len() as u64 - header.payload_len()?;
    read_body(&mut r, header, start)
}

pub fn read_ksp(path: impl AsRef<Path>) -> Result<KspData> {
    let file = File::open(path)?;
    let total = file.metadata()?.len();
    let mut r = BufReader::new(file);
    let header = read_header(&mut r, total)?;
    let start = total - header.payload_len()?;
    read_body(&mut r, header, start)
}

/// Reads only the header, after checking it against the file size.
pub fn read_ksp_header(path: impl AsRef<Path>) -> Result<KspHeader> {
    let file = File::open(path)?;
    let total = file.metadata()?.len();
    read_header(&mut BufReader::new(file), total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampling::make_random_mask;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_stack(c: usize, h: usize, w: usize, seed: u64) -> CoilStack {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = (0..c * h * w)
            .map(|_| Complex64::new(rng.gen_range(-1e3..1e3), rng.gen_range(-1e-3..1e-3)))
            .collect();
        CoilStack::new(c, h, w, d).unwrap()
    }

    #[test]
    fn c128_round_trip_is_bit_exact() {
        let mut data = KspData::single(random_stack(2, 8, 8, 1));
        data.mask = Some(make_random_mask(8, 8, 4, 2, 9, PhaseAxis::Cols).unwrap());
        data.meta = serde_json::json!({"group": "cine_sax"});
        let back = decode_ksp(&encode_ksp(&data).unwrap()).unwrap();
        assert_eq!(back, data);
        for (a, b) in back.frames[0].data().iter().zip(data.frames[0].data()) {
            assert_eq!(a.re.to_bits(), b.re.to_bits());
            assert_eq!(a.im.to_bits(), b.im.to_bits());
        }
    }

    #[test]
    fn c64_round_trip_within_f32_quantization() {
        let mut data = KspData::single(random_stack(3, 5, 7, 2));
        data.dtype = Dtype::C64;
        let back = decode_ksp(&encode_ksp(&data).unwrap()).unwrap();
        for (a, b) in back.frames[0].data().iter().zip(data.frames[0].data()) {
            assert!((a.re - b.re).abs() <= 1e-6 * b.re.abs().max(f64::MIN_POSITIVE));
            assert!((a.im - b.im).abs() <= 1e-6 * b.im.abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn framed_round_trip() {
        let data = KspData {
            frames: vec![random_stack(2, 4, 6, 3), random_stack(2, 4, 6, 4)],
            framed: true,
            ..KspData::single(random_stack(2, 4, 6, 3))
        };
        let bytes = encode_ksp(&data).unwrap();
        assert_eq!(decode_ksp(&bytes).unwrap(), data);
    }

    #[test]
    fn layout_is_pinned() {
        let stack = CoilStack::new(1, 1, 1, vec![Complex64::new(1.5, -2.0)]).unwrap();
        let bytes = encode_ksp(&KspData::single(stack)).unwrap();
        assert_eq!(&bytes[..8], b"KSPLAB01");
        let len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        let header: serde_json::Value = serde_json::from_slice(&bytes[12..12 + len]).unwrap();
        assert_eq!(header["dtype"], "c128");
        assert_eq!(header["shape"], serde_json::json!([1, 1, 1]));
        assert_eq!(&bytes[12 + len..12 + len + 8], &1.5f64.to_le_bytes());
        assert_eq!(&bytes[12 + len + 8..], &(-2.0f64).to_le_bytes());
    }

    #[test]
    fn every_truncation_is_a_format_error() {
        let bytes = encode_ksp(&KspData::single(random_stack(1, 3, 3, 5))).unwrap();
        for cut in 0..bytes.len() {
            match decode_ksp(&bytes[..cut]) {
                Err(Error::Format { offset, .. }) => assert!(offset <= bytes.len() as u64),
                other => panic!("cut {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn bad_magic_reports_offset_zero() {
        let mut bytes = encode_ksp(&KspData::single(random_stack(1, 2, 2, 6))).unwrap();
        bytes[0] = b'X';
        assert!(matches!(decode_ksp(&bytes), Err(Error::Format { offset: 0, .. })));
    }

    #[test]
    fn huge_shape_rejected_before_allocation() {
        let header = br#"{"version":1,"dtype":"c128","shape":[4294967295,4294967295,4294967295],"meta":null}"#;
        let mut bytes = MAGIC.to_vec();
        bytes.extend_from_slice(&(header.len() as u32).to_le_bytes());
        bytes.extend_from_slice(header);
        assert!(matches!(decode_ksp(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn trailing_bytes_rejected() {
        let mut bytes = encode_ksp(&KspData::single(random_stack(1, 2, 2, 7))).unwrap();
        bytes.push(0);
        assert!(matches!(decode_ksp(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn non_finite_sample_rejected() {
        let mut bytes = encode_ksp(&KspData::single(random_stack(1, 2, 2, 8))).unwrap();
        let n = bytes.len();
        bytes[n - 8..].copy_from_slice(&f64::NAN.to_le_bytes());
        assert!(matches!(decode_ksp(&bytes), Err(Error::Format { .. })));
    }

    #[test]
    fn image_containers() {
        let imgs = vec![
            RealImage::from_fn(3, 4, |r, c| (r + c) as f64),
            RealImage::from_fn(3, 4, |r, c| (r * c) as f64),
        ];
        let data = images_to_ksp(&imgs).unwrap();
        assert!(data.framed);
        let back = ksp_to_images(&decode_ksp(&encode_ksp(&data).unwrap()).unwrap()).unwrap();
        assert_eq!(back, imgs);
        assert!(ksp_to_images(&KspData::single(random_stack(2, 2, 2, 1))).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("k.ksp");
        let data = KspData::single(random_stack(2, 3, 4, 9));
        write_ksp(&data, &path).unwrap();
        assert_eq!(read_ksp(&path).unwrap(), data);
        assert_eq!(read_ksp_header(&path).unwrap().shape, vec![2, 3, 4]);
    }
}
