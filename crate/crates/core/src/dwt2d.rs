//! Single-level separable 2-D DWT with periodic extension.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::filterbank::WaveletSpec;
use crate::image_io::Image;
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Subband {
    LL,
    LH,
    HL,
    HH,
}

impl Subband {
    pub const ALL: [Subband; 4] = [Subband::LL, Subband::LH, Subband::HL, Subband::HH];

    fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Subband::LL => "LL",
            Subband::LH => "LH",
            Subband::HL => "HL",
            Subband::HH => "HH",
        }
    }
}

impl fmt::Display for Subband {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Subband {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "ll" => Ok(Subband::LL),
            "lh" => Ok(Subband::LH),
            "hl" => Ok(Subband::HL),
            "hh" => Ok(Subband::HH),
            other => Err(Error::arg(format!("unknown subband '{other}'"))),
        }
    }
}

/// Nonempty subset of the four subbands.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SubbandMask(u8);

impl SubbandMask {
    pub const ALL: SubbandMask = SubbandMask(0b1111);
    /// The three detail subbands.
    pub const HIGH: SubbandMask = SubbandMask(0b1110);

    pub fn new(bands: &[Subband]) -> Result<Self> {
        let bits = bands.iter().fold(0u8, |acc, b| acc | 1 << b.index());
        if bits == 0 {
            return Err(Error::arg("subband mask must be nonempty"));
        }
        Ok(SubbandMask(bits))
    }

    pub fn single(band: Subband) -> Self {
        SubbandMask(1 << band.index())
    }

    pub fn contains(self, band: Subband) -> bool {
        self.0 & (1 << band.index()) != 0
    }

    pub fn bands(self) -> impl Iterator<Item = Subband> {
        Subband::ALL.into_iter().filter(move |&b| self.contains(b))
    }

    pub fn count(self) -> usize {
        self.0.count_ones() as usize
    }
}

impl fmt::Display for SubbandMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match *self {
            SubbandMask::ALL => f.write_str("all"),
            SubbandMask::HIGH => f.write_str("high"),
            _ => {
                let names: Vec<String> = self.bands().map(|b| b.as_str().to_ascii_lowercase()).collect();
                f.write_str(&names.join("+"))
            }
        }
    }
}

impl FromStr for SubbandMask {
    type Err = Error;

    /// Accepts `all`, `high`, or a list like `ll,hh` (`+` also separates).
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "all" => return Ok(SubbandMask::ALL),
            "high" => return Ok(SubbandMask::HIGH),
            _ => {}
        }
        let bands = s
            .split([',', '+'])
            .filter(|p| !p.trim().is_empty())
            .map(str::parse)
            .collect::<Result<Vec<Subband>>>()?;
        SubbandMask::new(&bands)
    }
}

/// The four quarter-size outputs of one decomposition level.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSet {
    bands: [Matrix; 4],
    spec_name: String,
}

impl SubbandSet {
    pub fn new(ll: Matrix, lh: Matrix, hl: Matrix, hh: Matrix, spec_name: impl Into<String>) -> Result<Self> {
        let shape = ll.shape();
        if [&lh, &hl, &hh].iter().any(|m| m.shape() != shape) {
            return Err(Error::arg("subband shapes differ"));
        }
        if shape.0 == 0 || shape.1 == 0 {
            return Err(Error::arg("subbands must be nonempty"));
        }
        let bands = [ll, lh, hl, hh];
        if bands.iter().any(|m| !m.all_finite()) {
            return Err(Error::arg("subband entries must be finite"));
        }
        Ok(SubbandSet {
            bands,
            spec_name: spec_name.into(),
        })
    }

    pub fn zeros(rows: usize, cols: usize, spec_name: impl Into<String>) -> Self {
        SubbandSet {
            bands: std::array::from_fn(|_| Matrix::zeros(rows, cols)),
            spec_name: spec_name.into(),
        }
    }

    pub fn band(&self, b: Subband) -> &Matrix {
        &self.bands[b.index()]
    }

    pub fn band_mut(&mut self, b: Subband) -> &mut Matrix {
        &mut self.bands[b.index()]
    }

    pub fn spec_name(&self) -> &str {
        &self.spec_name
    }

    /// Shape of one subband.
    pub fn band_shape(&self) -> (usize, usize) {
        self.bands[0].shape()
    }

    pub fn sum_squares(&self) -> f64 {
        self.bands.iter().map(Matrix::sum_squares).sum()
    }

    /// Element-wise difference, band by band.
    pub fn difference(&self, other: &SubbandSet) -> Result<SubbandSet> {
        if self.band_shape() != other.band_shape() {
            return Err(Error::arg("subband sets have different shapes"));
        }
        let mut out = self.clone();
        for b in Subband::ALL {
            *out.band_mut(b) = self.band(b).zip_map(other.band(b), |x, y| x - y)?;
        }
        Ok(out)
    }

    /// Tile as `[LL LH; HL HH]`.
    pub fn mosaic(&self) -> Matrix {
        let (r, c) = self.band_shape();
        Matrix::from_fn(2 * r, 2 * c, |i, j| {
            let band = match (i < r, j < c) {
                (true, true) => Subband::LL,
                (true, false) => Subband::LH,
                (false, true) => Subband::HL,
                (false, false) => Subband::HH,
            };
            self.band(band).get(i % r, j % c)
        })
    }

    pub fn from_mosaic(m: &Matrix, spec_name: impl Into<String>) -> Result<Self> {
        let (rows, cols) = m.shape();
        if rows < 2 || cols < 2 || rows % 2 != 0 || cols % 2 != 0 {
            return Err(Error::dim(format!("mosaic must have even dimensions, got {rows}x{cols}")));
        }
        let (r, c) = (rows / 2, cols / 2);
        let tile = |r0: usize, c0: usize| Matrix::from_fn(r, c, |i, j| m.get(r0 + i, c0 + j));
        SubbandSet::new(tile(0, 0), tile(0, c), tile(r, 0), tile(r, c), spec_name)
    }
}

/// Periodic analysis of one line: `lo[m] = sum_k h0[k] x[(2m - k) mod n]`.
///
/// `ext` is scratch space for the periodically extended input.
fn analyze_line(x: &[f64], h0: &[f64], h1: &[f64], ext: &mut Vec<f64>, lo: &mut [f64], hi: &mut [f64]) {
    let n = x.len();
    let pad = h0.len().max(h1.len()) - 1;
    ext.clear();
    ext.extend((0..pad).map(|j| x[(n * pad + j - pad) % n]));
    ext.extend_from_slice(x);
    // ext[j + pad] == x[j], so x[2m - k] == ext[2m + pad - k].
    for m in 0..n / 2 {
        let base = 2 * m + pad;
        lo[m] = h0.iter().enumerate().map(|(k, &c)| c * ext[base - k]).sum();
        hi[m] = h1.iter().enumerate().map(|(k, &c)| c * ext[base - k]).sum();
    }
}

/// Inverse of [`analyze_line`]: upsample, filter, and undo the bank delay.
fn synthesize_line(lo: &[f64], hi: &[f64], spec: &WaveletSpec, acc: &mut Vec<f64>, out: &mut [f64]) {
    let n = out.len();
    let (g0, g1) = (spec.g0(), spec.g1());
    acc.clear();
    acc.resize(n + g0.len().max(g1.len()), 0.0);
    for m in 0..n / 2 {
        let (a, d) = (lo[m], hi[m]);
        for (k, &c) in g0.iter().enumerate() {
            acc[2 * m + k] += a * c;
        }
        for (k, &c) in g1.iter().enumerate() {
            acc[2 * m + k] += d * c;
        }
    }
    let delay = spec.delay() % n;
    for (i, o) in out.iter_mut().enumerate() {
        // Fold the linear-convolution tail back onto the period.
        let j = (i + delay) % n;
        let mut v = 0.0;
        let mut k = j;
        while k < acc.len() {
            v += acc[k];
            k += n;
        }
        *o = v;
    }
}

fn check_size(rows: usize, cols: usize, spec: &WaveletSpec) -> Result<()> {
    let taps = spec.max_len();
    if rows < taps || cols < taps {
        return Err(Error::dim(format!(
            "{rows}x{cols} is smaller than the {taps}-tap filters of {}",
            spec.name()
        )));
    }
    Ok(())
}

/// Forward transform: rows first, then columns, keeping even phases.
pub fn dwt2(img: &Image, spec: &WaveletSpec) -> Result<SubbandSet> {
    let (rows, cols) = img.shape();
    check_size(rows, cols, spec)?;
    let (hr, hc) = (rows / 2, cols / 2);
    let x = img.samples();
    let mut ext = Vec::with_capacity(rows.max(cols) + spec.max_len());

    let mut row_lo = Matrix::zeros(rows, hc);
    let mut row_hi = Matrix::zeros(rows, hc);
    let mut lo = vec![0.0; hc];
    let mut hi = vec![0.0; hc];
    for r in 0..rows {
        analyze_line(x.row(r), spec.h0(), spec.h1(), &mut ext, &mut lo, &mut hi);
        row_lo.row_mut(r).copy_from_slice(&lo);
        row_hi.row_mut(r).copy_from_slice(&hi);
    }

    let mut out = SubbandSet::zeros(hr, hc, spec.name());
    let mut col = vec![0.0; rows];
    let mut lo = vec![0.0; hr];
    let mut hi = vec![0.0; hr];
    for (src, low_band, high_band) in [
        (&row_lo, Subband::LL, Subband::LH),
        (&row_hi, Subband::HL, Subband::HH),
    ] {
        for c in 0..hc {
            for (r, v) in col.iter_mut().enumerate() {
                *v = src.get(r, c);
            }
            analyze_line(&col, spec.h0(), spec.h1(), &mut ext, &mut lo, &mut hi);
            out.band_mut(low_band).set_column(c, &lo);
            out.band_mut(high_band).set_column(c, &hi);
        }
    }
    Ok(out)
}

/// Inverse transform; the subbands must come from the same spec.
pub fn idwt2(subbands: &SubbandSet, spec: &WaveletSpec) -> Result<Image> {
    if subbands.spec_name() != spec.name() {
        return Err(Error::arg(format!(
            "subbands were produced by '{}', not '{}'",
            subbands.spec_name(),
            spec.name()
        )));
    }
    let (hr, hc) = subbands.band_shape();
    let (rows, cols) = (2 * hr, 2 * hc);
    check_size(rows, cols, spec)?;
    let mut acc = Vec::with_capacity(rows.max(cols) + spec.max_len());

    let mut row_lo = Matrix::zeros(rows, hc);
    let mut row_hi = Matrix::zeros(rows, hc);
    let mut line = vec![0.0; rows];
    let mut lo = vec![0.0; hr];
    let mut hi = vec![0.0; hr];
    for (dst, low_band, high_band) in [
        (&mut row_lo, Subband::LL, Subband::LH),
        (&mut row_hi, Subband::HL, Subband::HH),
    ] {
        for c in 0..hc {
            for r in 0..hr {
                lo[r] = subbands.band(low_band).get(r, c);
                hi[r] = subbands.band(high_band).get(r, c);
            }
            synthesize_line(&lo, &hi, spec, &mut acc, &mut line);
            dst.set_column(c, &line);
        }
    }

    let mut out = Matrix::zeros(rows, cols);
    for r in 0..rows {
        synthesize_line(row_lo.row(r), row_hi.row(r), spec, &mut acc, out.row_mut(r));
    }
    Image::new(out)
}

const SIDECAR_MAGIC: &[u8; 8] = b"SUBBAND1";

/// Raw sidecar: 8-byte magic, rows and cols as little-endian u32, then the
/// `[LL LH; HL HH]` mosaic as little-endian f64, row-major.
pub fn write_sidecar(subbands: &SubbandSet) -> Vec<u8> {
    let m = subbands.mosaic();
    let mut out = Vec::with_capacity(16 + 8 * m.len());
    out.extend_from_slice(SIDECAR_MAGIC);
    out.extend_from_slice(&(m.rows() as u32).to_le_bytes());
    out.extend_from_slice(&(m.cols() as u32).to_le_bytes());
    for v in m.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_sidecar(bytes: &[u8], spec_name: &str) -> Result<SubbandSet> {
    if bytes.len() < 16 || &bytes[..8] != SIDECAR_MAGIC {
        return Err(Error::Parse {
            offset: 0,
            message: "missing subband sidecar magic".into(),
        });
    }
    let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as usize;
    let (rows, cols) = (word(8), word(12));
    let n = rows * cols;
    if bytes.len() != 16 + 8 * n {
        return Err(Error::Parse {
            offset: bytes.len(),
            message: format!("expected {} payload bytes for {rows}x{cols}", 8 * n),
        });
    }
    let data = bytes[16..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    SubbandSet::from_mosaic(&Matrix::from_vec(rows, cols, data)?, spec_name)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::filterbank::{standard_wavelet, STANDARD_WAVELETS};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(rows: usize, cols: usize, seed: u64) -> Image {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Image::from_fn(rows, cols, |_, _| rng.random_range(0.0..255.0)).unwrap()
    }

    /// Reference analysis through an explicit dense operator matrix.
    fn dense_analysis(n: usize, h: &[f64]) -> Vec<Vec<f64>> {
        (0..n / 2)
            .map(|m| {
                let mut row = vec![0.0; n];
                for (k, &c) in h.iter().enumerate() {
                    let idx = ((2 * m) as isize - k as isize).rem_euclid(n as isize) as usize;
                    row[idx] += c;
                }
                row
            })
            .collect()
    }

    #[test]
    fn matches_dense_operator() {
        let spec = standard_wavelet("daubechies8").unwrap();
        let img = random_image(16, 12, 3);
        let sb = dwt2(&img, &spec).unwrap();
        let rl = dense_analysis(12, spec.h0());
        let rh = dense_analysis(12, spec.h1());
        let cl = dense_analysis(16, spec.h0());
        let ch = dense_analysis(16, spec.h1());
        let apply = |vert: &Vec<Vec<f64>>, horiz: &Vec<Vec<f64>>| {
            Matrix::from_fn(8, 6, |i, j| {
                let mut s = 0.0;
                for r in 0..16 {
                    for c in 0..12 {
                        s += vert[i][r] * horiz[j][c] * img.get(r, c);
                    }
                }
                s
            })
        };
        let expected = [apply(&cl, &rl), apply(&ch, &rl), apply(&cl, &rh), apply(&ch, &rh)];
        for (b, e) in Subband::ALL.iter().zip(&expected) {
            assert!(sb.band(*b).max_abs_diff(e) < 1e-9, "{b}");
        }
    }

    #[test]
    fn perfect_reconstruction_all_specs() {
        for name in STANDARD_WAVELETS {
            let spec = standard_wavelet(name).unwrap();
            let img = random_image(16, 16, 11);
            let back = idwt2(&dwt2(&img, &spec).unwrap(), &spec).unwrap();
            assert!(back.samples().max_abs_diff(img.samples()) <= 1e-9, "{name}");
        }
    }

    #[test]
    fn orthogonal_energy_preserved() {
        for name in ["daubechies4", "daubechies8", "coiflet6", "grs4"] {
            let spec = standard_wavelet(name).unwrap();
            let img = random_image(16, 16, 5);
            let e_img = img.samples().sum_squares();
            let e_sb = dwt2(&img, &spec).unwrap().sum_squares();
            assert!(((e_sb - e_img) / e_img).abs() <= 1e-9, "{name}");
        }
    }

    #[test]
    fn constant_image_detail_bands() {
        let img = Image::filled(16, 16, 100.0).unwrap();
        let db4 = dwt2(&img, &standard_wavelet("daubechies4").unwrap()).unwrap();
        for b in [Subband::LH, Subband::HL, Subband::HH] {
            assert!(db4.band(b).as_slice().iter().all(|v| v.abs() < 1e-10), "{b}");
        }
        let grs = dwt2(&img, &standard_wavelet("grs4").unwrap()).unwrap();
        assert!(grs.band(Subband::HH).frobenius_norm() > 1.0);
    }

    #[test]
    fn zero_subbands_give_zero_image() {
        let spec = standard_wavelet("coiflet6").unwrap();
        let img = idwt2(&SubbandSet::zeros(4, 4, spec.name()), &spec).unwrap();
        assert!(img.samples().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let spec = standard_wavelet("daubechies8").unwrap();
        let small = Image::filled(4, 4, 1.0).unwrap();
        assert!(matches!(dwt2(&small, &spec), Err(Error::Dimension(_))));
        let other = standard_wavelet("grs4").unwrap();
        let sb = dwt2(&Image::filled(8, 8, 1.0).unwrap(), &other).unwrap();
        assert!(matches!(idwt2(&sb, &spec), Err(Error::Argument(_))));
        assert!(SubbandSet::new(
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 2),
            Matrix::zeros(2, 3),
            Matrix::zeros(2, 2),
            "x"
        )
        .is_err());
    }

    #[test]
    fn deterministic() {
        let spec = standard_wavelet("biorthogonal6.2").unwrap();
        let img = random_image(32, 32, 9);
        let a = dwt2(&img, &spec).unwrap();
        let b = dwt2(&img, &spec).unwrap();
        let bits = |s: &SubbandSet| s.mosaic().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn sidecar_round_trip() {
        let spec = standard_wavelet("grs4").unwrap();
        let sb = dwt2(&random_image(8, 12, 1), &spec).unwrap();
        let bytes = write_sidecar(&sb);
        assert_eq!(&bytes[..8], b"SUBBAND1");
        assert_eq!(bytes.len(), 16 + 8 * 96);
        assert_eq!(read_sidecar(&bytes, spec.name()).unwrap(), sb);
        assert!(read_sidecar(&bytes[..20], spec.name()).is_err());
    }

    #[test]
    fn mask_parsing() {
        assert_eq!("all".parse::<SubbandMask>().unwrap(), SubbandMask::ALL);
        assert_eq!("lh,hl,hh".parse::<SubbandMask>().unwrap(), SubbandMask::HIGH);
        assert_eq!("LL+hh".parse::<SubbandMask>().unwrap().count(), 2);
        assert!("".parse::<SubbandMask>().is_err());
        assert!("xx".parse::<SubbandMask>().is_err());
        assert_eq!(SubbandMask::HIGH.to_string(), "high");
        assert_eq!(SubbandMask::new(&[Subband::LL, Subband::HH]).unwrap().to_string(), "ll+hh");
    }

    proptest! {
        #[test]
        fn idwt_is_linear(seed in any::<u64>(), name in prop::sample::select(STANDARD_WAVELETS.to_vec())) {
            let spec = standard_wavelet(name).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rand_set = || {
                let mut s = SubbandSet::zeros(4, 4, spec.name());
                for b in Subband::ALL {
                    s.band_mut(b).as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(-10.0..10.0));
                }
                s
            };
            let a = rand_set();
            let b = rand_set();
            let mut sum = a.clone();
            for band in Subband::ALL {
                *sum.band_mut(band) = a.band(band).zip_map(b.band(band), |x, y| x + y).unwrap();
            }
            let ia = idwt2(&a, &spec).unwrap();
            let ib = idwt2(&b, &spec).unwrap();
            let is = idwt2(&sum, &spec).unwrap();
            let lhs = ia.samples().zip_map(ib.samples(), |x, y| x + y).unwrap();
            prop_assert!(lhs.max_abs_diff(is.samples()) < 1e-10);
        }

        #[test]
        fn round_trip_random_sizes(seed in any::<u64>(), hr in 4usize..20, hc in 4usize..20, name in prop::sample::select(STANDARD_WAVELETS.to_vec())) {
            let spec = standard_wavelet(name).unwrap();
            let img = random_image(2 * hr, 2 * hc, seed);
            let back = idwt2(&dwt2(&img, &spec).unwrap(), &spec).unwrap();
            prop_assert!(back.samples().max_abs_diff(img.samples()) <= 1e-9);
        }
    }
}
