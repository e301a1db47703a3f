//! On-disk formats: the `RCMT` tensor container and binary PPM frames.
//!
//! RCMT layout (all integers little-endian):
//!
//! ```text
//! b"RCMT" | version: u32 | dtype: u8 (0 = f32, 1 = f64) | ndim: u8 | dims: ndim x u64 | payload
//! ```
//!
//! The payload is the row-major element array. One tensor per file.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Frame, Tensor};

pub const RCMT_MAGIC: &[u8; 4] = b"RCMT";
pub const RCMT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32,
    F64,
}

impl DType {
    fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::F64 => 1,
        }
    }

    fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
        }
    }
}

pub fn encode_rcmt(tensor: &Tensor, dtype: DType) -> Vec<u8> {
    let shape = tensor.shape();
    let mut out = Vec::with_capacity(10 + 8 * shape.len() + dtype.width() * tensor.len());
    out.extend_from_slice(RCMT_MAGIC);
    out.extend_from_slice(&RCMT_VERSION.to_le_bytes());
    out.push(dtype.code());
    out.push(shape.len() as u8);
    for &d in shape {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    match dtype {
        DType::F64 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&v.to_le_bytes())),
        DType::F32 => tensor
            .data()
            .iter()
            .for_each(|v| out.extend_from_slice(&(*v as f32).to_le_bytes())),
    }
    out
}

/// Decodes a container, returning the tensor (widened to f64) and its stored dtype.
pub fn decode_rcmt(bytes: &[u8]) -> Result<(Tensor, DType)> {
    let bad = |msg: &str| Error::FormatViolation(msg.to_string());
    if bytes.len() < 10 {
        return Err(bad("truncated header"));
    }
    if &bytes[0..4] != RCMT_MAGIC {
        return Err(bad("bad magic"));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != RCMT_VERSION {
        return Err(Error::FormatViolation(format!("unsupported version {version}")));
    }
    let dtype = match bytes[8] {
        0 => DType::F32,
        1 => DType::F64,
        c => return Err(Error::FormatViolation(format!("unknown dtype code {c}"))),
    };
    let ndim = bytes[9] as usize;
    let header = 10 + 8 * ndim;
    if bytes.len() < header {
        return Err(bad("truncated dims"));
    }
    let shape: Vec<usize> = (0..ndim)
        .map(|k| {
            let at = 10 + 8 * k;
            u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize
        })
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| bad("element count overflows"))?;
    let payload = &bytes[header..];
    if Some(payload.len()) != count.checked_mul(dtype.width()) {
        return Err(Error::FormatViolation(format!(
            "payload holds {} bytes, shape {:?} needs {}",
            payload.len(),
            shape,
            count.saturating_mul(dtype.width())
        )));
    }
    let data = match dtype {
        DType::F64 => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
        DType::F32 => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
    };
    Ok((Tensor::from_vec(&shape, data)?, dtype))
}

pub fn write_rcmt(path: &Path, tensor: &Tensor) -> Result<()> {
    fs::write(path, encode_rcmt(tensor, DType::F64)).map_err(|e| Error::io(path, e))
}

pub fn read_rcmt(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_rcmt(&bytes).map(|(t, _)| t)
}

fn to_u8(v: f64) -> u8 {
    (255.0 * v.clamp(0.0, 1.0)).round() as u8
}

/// Binary P6, maxval 255, row-major RGB8.
pub fn encode_ppm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(frame.pixels().iter().map(|&v| to_u8(v)));
    out
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Frame> {
    let bad = |msg: &str| Error::BadImage(msg.to_string());
    // Header: magic, width, height, maxval as whitespace-separated tokens,
    // with '#' comments, followed by exactly one whitespace byte.
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated PPM header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ascii header"))?);
    }
    if fields[0] != "P6" {
        return Err(bad("only binary P6 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (width, height, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    pos += 1;
    let body = bytes.get(pos..).unwrap_or(&[]);
    if body.len() != width * height * 3 {
        return Err(bad("pixel payload has the wrong length"));
    }
    let pixels = body.iter().map(|&b| b as f64 / 255.0).collect();
    Frame::from_pixels(height, width, pixels)
}

pub fn write_ppm(path: &Path, frame: &Frame) -> Result<()> {
    fs::write(path, encode_ppm(frame)).map_err(|e| Error::io(path, e))
}

pub fn read_ppm(path: &Path) -> Result<Frame> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_ppm(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn header_layout_is_bit_exact() {
        let t = Tensor::from_vec(&[2, 1], vec![1.0, -2.0]).unwrap();
        let bytes = encode_rcmt(&t, DType::F64);
        assert_eq!(&bytes[..4], b"RCMT");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(bytes[8], 1);
        assert_eq!(bytes[9], 2);
        assert_eq!(&bytes[10..18], &2u64.to_le_bytes());
        assert_eq!(&bytes[18..26], &1u64.to_le_bytes());
        assert_eq!(&bytes[26..34], &1.0f64.to_le_bytes());
        assert_eq!(bytes.len(), 42);
    }

    #[test]
    fn f32_payload_decodes() {
        let t = Tensor::from_vec(&[3], vec![0.5, 1.25, -4.0]).unwrap();
        let (back, dtype) = decode_rcmt(&encode_rcmt(&t, DType::F32)).unwrap();
        assert_eq!(dtype, DType::F32);
        assert_eq!(back, t);
    }

    #[test]
    fn truncation_and_bad_magic_are_format_violations() {
        let t = Tensor::filled(&[4, 4], 0.25);
        let bytes = encode_rcmt(&t, DType::F64);
        for cut in [0, 5, 12, bytes.len() - 1] {
            assert!(matches!(
                decode_rcmt(&bytes[..cut]),
                Err(Error::FormatViolation(_))
            ));
        }
        let mut wrong = bytes.clone();
        wrong[0] = b'X';
        assert!(matches!(decode_rcmt(&wrong), Err(Error::FormatViolation(_))));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(decode_rcmt(&version), Err(Error::FormatViolation(_))));
    }

    #[test]
    fn ppm_rounds_and_clamps() {
        let mut f = Frame::filled(1, 2, [0.0, 0.5, 1.0]);
        f.set_rgb(0, 1, [-1.0, 2.0, 0.2]);
        let bytes = encode_ppm(&f);
        assert!(bytes.starts_with(b"P6\n2 1\n255\n"));
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 128, 255, 0, 255, 51]);
        let back = decode_ppm(&bytes).unwrap();
        assert_eq!(back.rgb(0, 0), [0.0, 128.0 / 255.0, 1.0]);
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n"), Err(Error::BadImage(_))));
        assert!(matches!(decode_ppm(&bytes[..bytes.len() - 1]), Err(Error::BadImage(_))));
    }

    proptest! {
        #[test]
        fn rcmt_round_trip_is_byte_identical(
            dims in proptest::collection::vec(1usize..5, 0..4),
            seed in any::<u64>(),
        ) {
            use rand::SeedableRng;
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let t = Tensor::randn(&dims, 3.0, &mut rng);
            let bytes = encode_rcmt(&t, DType::F64);
            let (back, _) = decode_rcmt(&bytes).unwrap();
            prop_assert_eq!(&back, &t);
            prop_assert_eq!(encode_rcmt(&back, DType::F64), bytes);
        }

        #[test]
        fn ppm_round_trip_is_exact_on_the_8bit_lattice(
            pix in proptest::collection::vec(0u8..=255, 12),
        ) {
            let f = Frame::from_pixels(2, 2, pix.iter().map(|&b| b as f64 / 255.0).collect()).unwrap();
            let bytes = encode_ppm(&f);
            prop_assert_eq!(encode_ppm(&decode_ppm(&bytes).unwrap()), bytes);
        }
    }
}
