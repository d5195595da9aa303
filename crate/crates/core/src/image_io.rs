//! Grayscale images and binary PGM (P5) I/O.

use std::path::Path;

use crate::error::{Error, Result};
use crate::matrix::Matrix;

/// Real-valued grayscale image with even, nonzero dimensions.
///
/// Samples are nominally in `[0, 255]` but are never clamped until the image
/// is serialized.
#[derive(Debug, Clone, PartialEq)]
pub struct Image(Matrix);

impl Image {
    pub fn new(samples: Matrix) -> Result<Self> {
        let (rows, cols) = samples.shape();
        if rows < 2 || cols < 2 || rows % 2 != 0 || cols % 2 != 0 {
            return Err(Error::dim(format!(
                "image must have even dimensions >= 2, got {rows}x{cols}"
            )));
        }
        if !samples.all_finite() {
            return Err(Error::arg("image samples must be finite"));
        }
        Ok(Image(samples))
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl FnMut(usize, usize) -> f64) -> Result<Self> {
        Image::new(Matrix::from_fn(rows, cols, f))
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Result<Self> {
        Image::from_fn(rows, cols, |_, _| value)
    }

    pub fn rows(&self) -> usize {
        self.0.rows()
    }

    pub fn cols(&self) -> usize {
        self.0.cols()
    }

    pub fn shape(&self) -> (usize, usize) {
        self.0.shape()
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.0.get(r, c)
    }

    pub fn samples(&self) -> &Matrix {
        &self.0
    }

    pub fn into_samples(self) -> Matrix {
        self.0
    }

    /// Clamp to `[0, 255]` and round half away from zero, as stored on disk.
    pub fn quantized(&self) -> Image {
        Image(self.0.map(quantize_sample_f64))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        self.0.as_slice().iter().map(|&v| quantize_sample(v)).collect()
    }
}

impl AsRef<Matrix> for Image {
    fn as_ref(&self) -> &Matrix {
        &self.0
    }
}

pub fn quantize_sample(v: f64) -> u8 {
    // f64::round is half-away-from-zero.
    v.clamp(0.0, 255.0).round() as u8
}

fn quantize_sample_f64(v: f64) -> f64 {
    f64::from(quantize_sample(v))
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn error(&self, message: impl Into<String>) -> Error {
        Error::Parse {
            offset: self.pos,
            message: message.into(),
        }
    }

    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn read_uint(&mut self, what: &str) -> Result<usize> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.error(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Parse {
                offset: start,
                message: format!("{what} out of range"),
            })
    }
}

/// Decode a binary PGM.
pub fn read_pgm(bytes: &[u8]) -> Result<Image> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        if bytes.len() >= 2 && bytes[0] == b'P' && bytes[1].is_ascii_digit() {
            return Err(Error::UnsupportedFormat(format!(
                "netpbm variant P{} (only binary P5 is supported)",
                bytes[1] as char
            )));
        }
        return Err(cur.error("missing P5 magic"));
    }
    cur.pos = 2;
    let cols = cur.read_uint("width")?;
    let rows = cur.read_uint("height")?;
    let maxval = cur.read_uint("maxval")?;
    if maxval == 0 {
        return Err(cur.error("maxval must be positive"));
    }
    if maxval > 255 {
        return Err(Error::UnsupportedFormat(format!(
            "maxval {maxval} needs 16-bit samples"
        )));
    }
    // Exactly one whitespace byte separates the header from the raster.
    match bytes.get(cur.pos) {
        Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
        _ => return Err(cur.error("expected whitespace before raster")),
    }
    if rows == 0 || cols == 0 || rows % 2 != 0 || cols % 2 != 0 {
        return Err(Error::dim(format!(
            "image must have even dimensions >= 2, got {rows}x{cols}"
        )));
    }
    let n = rows
        .checked_mul(cols)
        .ok_or_else(|| cur.error("dimensions overflow"))?;
    let raster = &bytes[cur.pos..];
    if raster.len() < n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("raster truncated: expected {n} bytes, found {}", raster.len()),
        });
    }
    let data = raster[..n].iter().map(|&b| f64::from(b)).collect();
    Image::new(Matrix::from_vec(rows, cols, data)?)
}

/// Encode as binary PGM, maxval 255.
pub fn write_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.cols(), img.rows()).into_bytes();
    out.extend(img.to_bytes());
    out
}

fn with_path(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

pub fn load_pgm(path: impl AsRef<Path>) -> Result<Image> {
    let bytes = std::fs::read(path.as_ref()).map_err(|e| with_path(path.as_ref(), e))?;
    read_pgm(&bytes)
}

pub fn save_pgm(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path.as_ref(), write_pgm(img)).map_err(|e| with_path(path.as_ref(), e))
}

/// Affinely map a matrix onto `[0, 255]` for viewing; a constant matrix maps to 0.
pub fn rescale_for_view(m: &Matrix) -> Matrix {
    let (lo, hi) = m.min_max();
    let span = hi - lo;
    if !(span > 0.0) {
        return Matrix::zeros(m.rows(), m.cols());
    }
    m.map(|v| (v - lo) / span * 255.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm(header: &str, raster: &[u8]) -> Vec<u8> {
        let mut v = header.as_bytes().to_vec();
        v.extend_from_slice(raster);
        v
    }

    #[test]
    fn reads_two_by_two() {
        let img = read_pgm(&pgm("P5\n2 2\n255\n", &[0, 255, 128, 64])).unwrap();
        assert_eq!(img.samples().as_slice(), &[0.0, 255.0, 128.0, 64.0]);
        assert_eq!(img.get(1, 0), 128.0);
    }

    #[test]
    fn comments_are_whitespace() {
        let plain = read_pgm(&pgm("P5\n2 2\n255\n", &[1, 2, 3, 4])).unwrap();
        let commented =
            read_pgm(&pgm("P5\n# made by hand\n2 # width\n2\n#x\n255\n", &[1, 2, 3, 4])).unwrap();
        assert_eq!(plain, commented);
    }

    #[test]
    fn odd_dimensions_rejected() {
        let err = read_pgm(&pgm("P5\n3 3\n255\n", &[0; 9])).unwrap_err();
        assert!(matches!(err, Error::Dimension(_)), "{err}");
    }

    #[test]
    fn sixteen_bit_rejected() {
        let err = read_pgm(&pgm("P5\n2 2\n65535\n", &[0; 8])).unwrap_err();
        assert!(matches!(err, Error::UnsupportedFormat(_)));
    }

    #[test]
    fn parse_errors_carry_offset() {
        let err = read_pgm(b"P5\n2 x\n255\n").unwrap_err();
        match err {
            Error::Parse { offset, .. } => assert_eq!(offset, 5),
            other => panic!("unexpected {other}"),
        }
        let err = read_pgm(&pgm("P5\n2 2\n255\n", &[1, 2])).unwrap_err();
        assert!(matches!(err, Error::Parse { offset: 13, .. }));
        assert!(matches!(read_pgm(b"GIF89a").unwrap_err(), Error::Parse { offset: 0, .. }));
        assert!(matches!(read_pgm(b"P2\n2 2\n255\n").unwrap_err(), Error::UnsupportedFormat(_)));
    }

    #[test]
    fn write_known_bytes() {
        let img = Image::from_fn(2, 2, |r, c| [[0.0, 255.0], [128.0, 64.0]][r][c]).unwrap();
        let bytes = write_pgm(&img);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 255, 128, 64]);
    }

    #[test]
    fn write_clamps_and_rounds_half_away() {
        let img = Image::from_fn(2, 2, |r, c| [[-3.2, 127.5], [300.0, 0.49]][r][c]).unwrap();
        let bytes = write_pgm(&img);
        assert_eq!(&bytes[bytes.len() - 4..], &[0, 128, 255, 0]);
    }

    #[test]
    fn image_rejects_non_finite() {
        let m = Matrix::from_vec(2, 2, vec![0.0, f64::NAN, 1.0, 2.0]).unwrap();
        assert!(Image::new(m).is_err());
    }

    #[test]
    fn rescale_constant_is_zero() {
        let m = Matrix::from_fn(2, 2, |_, _| 7.0);
        assert_eq!(rescale_for_view(&m).as_slice(), &[0.0; 4]);
    }
}
