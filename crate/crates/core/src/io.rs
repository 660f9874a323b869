//! Bit-exact file formats: the "CWT1" tensor container and binary PPM/PGM.
//!
//! CWT1 layout: 4-byte ASCII magic `CWT1`; `ndim` as u8; `ndim` little-endian
//! u32 extents; a dtype code u8 (1 = f32 LE, 2 = u8); then the row-major
//! payload. Probability maps are `ndim=3 (C,H,W)` dtype 1, label maps
//! `ndim=2 (H,W)` dtype 2.
//!
//! Images are binary PPM `P6` (3 channels) or PGM `P5` (1 channel) with
//! maxval 255 only; ASCII variants are rejected.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{LabelMap, ProbabilityMap, Raster, TensorF32};

pub const CWT_MAGIC: &[u8; 4] = b"CWT1";
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_U8: u8 = 2;

struct CwtHeader {
    dims: Vec<usize>,
    dtype: u8,
    payload_offset: usize,
    len: usize,
}

fn parse_cwt_header(bytes: &[u8]) -> Result<CwtHeader> {
    if bytes.len() < 4 || &bytes[0..4] != CWT_MAGIC {
        return Err(Error::format(0, "bad magic, expected \"CWT1\""));
    }
    let ndim = *bytes
        .get(4)
        .ok_or_else(|| Error::format(4, "truncated header: missing ndim"))? as usize;
    let mut dims = Vec::with_capacity(ndim);
    let mut offset = 5usize;
    for i in 0..ndim {
        let end = offset + 4;
        let raw = bytes
            .get(offset..end)
            .ok_or_else(|| Error::format(offset as u64, format!("truncated extent {i}")))?;
        dims.push(u32::from_le_bytes(raw.try_into().unwrap()) as usize);
        offset = end;
    }
    let dtype = *bytes
        .get(offset)
        .ok_or_else(|| Error::format(offset as u64, "truncated header: missing dtype"))?;
    if dtype != DTYPE_F32 && dtype != DTYPE_U8 {
        return Err(Error::format(
            offset as u64,
            format!("unknown dtype code {dtype}"),
        ));
    }
    offset += 1;

    let mut len: u64 = 1;
    for (i, d) in dims.iter().enumerate() {
        len = len
            .checked_mul(*d as u64)
            .ok_or_else(|| Error::format(5 + 4 * i as u64, "dimension overflow"))?;
    }
    let elem = if dtype == DTYPE_F32 { 4u64 } else { 1u64 };
    let payload_bytes = len
        .checked_mul(elem)
        .ok_or_else(|| Error::format(5, "dimension overflow"))?;
    if payload_bytes > usize::MAX as u64 {
        return Err(Error::format(5, "dimension overflow"));
    }
    let expected = offset as u64 + payload_bytes;
    if (bytes.len() as u64) < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated payload: expected {expected} bytes"),
        ));
    }
    if (bytes.len() as u64) > expected {
        return Err(Error::format(expected, "trailing bytes after payload"));
    }
    Ok(CwtHeader {
        dims,
        dtype,
        payload_offset: offset,
        len: len as usize,
    })
}

/// Reads a dtype-1 (f32) CWT1 tensor.
pub fn read_tensor(path: &Path) -> Result<TensorF32> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_cwt_header(&bytes)?;
    if header.dtype != DTYPE_F32 {
        return Err(Error::format(
            header.payload_offset as u64 - 1,
            format!("expected dtype 1 (f32), got {}", header.dtype),
        ));
    }
    let mut data = Vec::with_capacity(header.len);
    for i in 0..header.len {
        let at = header.payload_offset + 4 * i;
        let v = f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap());
        if !v.is_finite() {
            return Err(Error::format(at as u64, format!("non-finite value {v}")));
        }
        data.push(v);
    }
    Ok(TensorF32::from_raw_unchecked(header.dims, data))
}

pub fn write_tensor(path: &Path, tensor: &TensorF32) -> Result<()> {
    let dims = tensor.dims();
    if dims.len() > u8::MAX as usize {
        return Err(Error::argument(format!("too many dims: {}", dims.len())));
    }
    let mut bytes = Vec::with_capacity(6 + 4 * dims.len() + 4 * tensor.data().len());
    bytes.extend_from_slice(CWT_MAGIC);
    bytes.push(dims.len() as u8);
    for d in dims {
        let extent = u32::try_from(*d)
            .map_err(|_| Error::argument(format!("extent {d} exceeds u32")))?;
        bytes.extend_from_slice(&extent.to_le_bytes());
    }
    bytes.push(DTYPE_F32);
    for v in tensor.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads a dtype-2 (u8) `H x W` CWT1 tensor as a label map.
pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let header = parse_cwt_header(&bytes)?;
    if header.dtype != DTYPE_U8 {
        return Err(Error::format(
            header.payload_offset as u64 - 1,
            format!("expected dtype 2 (u8), got {}", header.dtype),
        ));
    }
    if header.dims.len() != 2 {
        return Err(Error::format(
            4,
            format!("label tensors need 2 dims, got {}", header.dims.len()),
        ));
    }
    let data = bytes[header.payload_offset..].to_vec();
    LabelMap::new(header.dims[0], header.dims[1], data)
}

pub fn write_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    let mut bytes = Vec::with_capacity(14 + labels.labels().len());
    bytes.extend_from_slice(CWT_MAGIC);
    bytes.push(2u8);
    for d in [labels.height(), labels.width()] {
        let extent =
            u32::try_from(d).map_err(|_| Error::argument(format!("extent {d} exceeds u32")))?;
        bytes.extend_from_slice(&extent.to_le_bytes());
    }
    bytes.push(DTYPE_U8);
    bytes.extend_from_slice(labels.labels());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Reads and validates a probability map stored as a CWT1 tensor.
pub fn read_probability_map(path: &Path) -> Result<ProbabilityMap> {
    crate::tensor::validate_probability_map(read_tensor(path)?)
}

pub fn write_probability_map(path: &Path, map: &ProbabilityMap) -> Result<()> {
    write_tensor(path, &map.to_tensor())
}

// ---------------------------------------------------------------------------
// PPM / PGM
// ---------------------------------------------------------------------------

struct PnmParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PnmParser<'a> {
    fn skip_whitespace_and_comments(&mut self) {
        while self.pos < self.bytes.len() {
            let b = self.bytes[self.pos];
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else {
                break;
            }
        }
    }

    fn read_number(&mut self) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if self.pos == start {
            return Err(Error::format(start as u64, "expected integer in header"));
        }
        let text = std::str::from_utf8(&self.bytes[start..self.pos]).unwrap();
        text.parse::<usize>()
            .map_err(|_| Error::format(start as u64, "header integer out of range"))
    }
}

/// Reads a binary PGM (P5, 1 channel) or PPM (P6, 3 channels) image.
pub fn read_pnm(path: &Path) -> Result<Raster> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 2 {
        return Err(Error::format(0, "truncated header"));
    }
    let channels = match &bytes[0..2] {
        b"P5" => 1usize,
        b"P6" => 3usize,
        b"P2" | b"P3" => {
            return Err(Error::format(0, "ASCII PNM variants are unsupported"));
        }
        _ => return Err(Error::format(0, "bad magic, expected P5 or P6")),
    };
    let mut parser = PnmParser {
        bytes: &bytes,
        pos: 2,
    };
    let width = parser.read_number()?;
    let height = parser.read_number()?;
    let maxval_at = parser.pos;
    let maxval = parser.read_number()?;
    if maxval != 255 {
        return Err(Error::format(
            maxval_at as u64,
            format!("unsupported maxval {maxval}, only 255"),
        ));
    }
    // exactly one whitespace byte separates the header from the samples
    if parser.pos >= bytes.len() || !bytes[parser.pos].is_ascii_whitespace() {
        return Err(Error::format(
            parser.pos as u64,
            "expected whitespace before samples",
        ));
    }
    let start = parser.pos + 1;
    let expected = height * width * channels;
    let available = bytes.len() - start;
    if available < expected {
        return Err(Error::format(
            bytes.len() as u64,
            format!("truncated samples: expected {expected}, got {available}"),
        ));
    }
    if available > expected {
        return Err(Error::format(
            (start + expected) as u64,
            "trailing bytes after samples",
        ));
    }
    Raster::new(height, width, channels, bytes[start..].to_vec())
}

fn write_pnm(path: &Path, magic: &str, raster: &Raster) -> Result<()> {
    let mut bytes = Vec::with_capacity(32 + raster.samples().len());
    bytes.extend_from_slice(
        format!("{magic}\n{} {}\n255\n", raster.width(), raster.height()).as_bytes(),
    );
    bytes.extend_from_slice(raster.samples());
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Writes a 1-channel raster as binary PGM.
pub fn write_pgm(path: &Path, raster: &Raster) -> Result<()> {
    if raster.channels() != 1 {
        return Err(Error::argument(format!(
            "PGM needs a 1-channel raster, got {}",
            raster.channels()
        )));
    }
    write_pnm(path, "P5", raster)
}

/// Writes a label map as binary PGM (labels become gray levels).
pub fn write_pgm_labels(path: &Path, labels: &LabelMap) -> Result<()> {
    write_pnm(path, "P5", &labels.to_raster())
}

/// Writes a 3-channel raster as binary PPM.
pub fn write_ppm(path: &Path, raster: &Raster) -> Result<()> {
    if raster.channels() != 3 {
        return Err(Error::argument(format!(
            "PPM needs a 3-channel raster, got {}",
            raster.channels()
        )));
    }
    write_pnm(path, "P6", raster)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::fs;

    fn tmpdir() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn cwt_round_trip_small() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        let t = TensorF32::new(vec![2, 2, 2], vec![0.25; 8]).unwrap();
        write_tensor(&path, &t).unwrap();
        assert_eq!(read_tensor(&path).unwrap(), t);
    }

    #[test]
    fn cwt_round_trip_is_byte_stable() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        // seeded pseudo-random payload for a C=7,H=4,W=4 map
        let mut state = 0x9e3779b97f4a7c15u64;
        let data: Vec<f32> = (0..7 * 4 * 4)
            .map(|_| {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((state >> 40) as f32) / (1u32 << 24) as f32
            })
            .collect();
        let t = TensorF32::new(vec![7, 4, 4], data).unwrap();
        write_tensor(&path, &t).unwrap();
        let first = fs::read(&path).unwrap();
        let read_back = read_tensor(&path).unwrap();
        assert_eq!(read_back.data(), t.data());
        let path2 = dir.path().join("t2.cwt");
        write_tensor(&path2, &read_back).unwrap();
        assert_eq!(fs::read(&path2).unwrap(), first);
    }

    #[test]
    fn cwt_bad_magic() {
        let dir = tmpdir();
        let path = dir.path().join("bad.cwt");
        fs::write(&path, b"XXXX\x01\x01\x00\x00\x00\x01\x00\x00\x00\x00").unwrap();
        match read_tensor(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 0),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn cwt_truncated_payload() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        let t = TensorF32::new(vec![2, 2], vec![1.0; 4]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_tensor(&path),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn cwt_trailing_bytes() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        let t = TensorF32::new(vec![1], vec![1.0]).unwrap();
        write_tensor(&path, &t).unwrap();
        let mut bytes = fs::read(&path).unwrap();
        bytes.push(0);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn cwt_non_finite_value_reports_offset() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CWT1");
        bytes.push(1);
        bytes.extend_from_slice(&2u32.to_le_bytes());
        bytes.push(DTYPE_F32);
        bytes.extend_from_slice(&1.0f32.to_le_bytes());
        bytes.extend_from_slice(&f32::INFINITY.to_le_bytes());
        fs::write(&path, &bytes).unwrap();
        match read_tensor(&path).unwrap_err() {
            Error::Format { offset, .. } => assert_eq!(offset, 14),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn cwt_dimension_overflow() {
        let dir = tmpdir();
        let path = dir.path().join("t.cwt");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"CWT1");
        bytes.push(4);
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        bytes.push(DTYPE_F32);
        fs::write(&path, &bytes).unwrap();
        assert!(matches!(read_tensor(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn label_tensor_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("l.cwt");
        let labels = LabelMap::new(2, 3, vec![0, 1, 2, 3, 4, 5]).unwrap();
        write_labels(&path, &labels).unwrap();
        assert_eq!(read_labels(&path).unwrap(), labels);
    }

    #[test]
    fn ppm_single_pixel() {
        let dir = tmpdir();
        let path = dir.path().join("p.ppm");
        let raster = Raster::new(1, 1, 3, vec![10, 20, 30]).unwrap();
        write_ppm(&path, &raster).unwrap();
        assert_eq!(read_pnm(&path).unwrap().samples(), &[10, 20, 30]);
    }

    #[test]
    fn pgm_label_round_trip() {
        let dir = tmpdir();
        let path = dir.path().join("l.pgm");
        let labels = LabelMap::new(3, 3, vec![0, 1, 2, 2, 1, 0, 1, 1, 0]).unwrap();
        write_pgm_labels(&path, &labels).unwrap();
        let raster = read_pnm(&path).unwrap();
        assert_eq!(LabelMap::from_raster(&raster).unwrap(), labels);
    }

    #[test]
    fn pgm_rejects_wide_maxval() {
        let dir = tmpdir();
        let path = dir.path().join("wide.pgm");
        fs::write(&path, b"P5\n2 2\n65535\n\x00\x00\x00\x00\x00\x00\x00\x00").unwrap();
        match read_pnm(&path).unwrap_err() {
            Error::Format { message, .. } => assert!(message.contains("maxval"), "{message}"),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn pnm_rejects_ascii_variants() {
        let dir = tmpdir();
        let path = dir.path().join("a.pgm");
        fs::write(&path, b"P2\n1 1\n255\n7\n").unwrap();
        assert!(matches!(read_pnm(&path), Err(Error::Format { .. })));
    }

    #[test]
    fn pnm_handles_comments() {
        let dir = tmpdir();
        let path = dir.path().join("c.pgm");
        fs::write(&path, b"P5\n# a comment\n2 1\n255\n\x07\x09").unwrap();
        let raster = read_pnm(&path).unwrap();
        assert_eq!(raster.samples(), &[7, 9]);
    }
}
