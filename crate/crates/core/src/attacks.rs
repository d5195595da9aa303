//! Deterministic lossy-compression attacks: a block-DCT codec in the style of
//! baseline JPEG and a wavelet deadzone codec in the style of JPEG2000.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::matrix::Matrix;

/// Luminance quantization table, row-major.
const LUMA_TABLE: [u32; 64] = [
    16, 11, 10, 16, 24, 40, 51, 61, //
    12, 12, 14, 19, 26, 58, 60, 55, //
    14, 13, 16, 24, 40, 57, 69, 56, //
    14, 17, 22, 29, 51, 87, 80, 62, //
    18, 22, 37, 56, 68, 109, 103, 77, //
    24, 35, 55, 64, 81, 104, 113, 92, //
    49, 64, 78, 87, 103, 121, 120, 101, //
    72, 92, 95, 98, 112, 100, 103, 99,
];

/// An attack channel and its strength.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum AttackSpec {
    None,
    Jpeg { quality: u8 },
    Jpeg2000 { bpp: f64 },
}

impl AttackSpec {
    pub fn jpeg(quality: u32) -> Result<Self> {
        if !(1..=100).contains(&quality) {
            return Err(Error::arg(format!("JPEG quality must be in 1..=100, got {quality}")));
        }
        Ok(AttackSpec::Jpeg {
            quality: quality as u8,
        })
    }

    pub fn jpeg2000(bpp: f64) -> Result<Self> {
        if !(bpp > 0.0) || !bpp.is_finite() {
            return Err(Error::arg(format!("bitrate must be positive, got {bpp}")));
        }
        Ok(AttackSpec::Jpeg2000 { bpp })
    }

    pub fn kind(&self) -> &'static str {
        match self {
            AttackSpec::None => "none",
            AttackSpec::Jpeg { .. } => "jpeg",
            AttackSpec::Jpeg2000 { .. } => "jpeg2000",
        }
    }

    /// The quality factor or bitrate; 0 for no attack.
    pub fn strength(&self) -> f64 {
        match *self {
            AttackSpec::None => 0.0,
            AttackSpec::Jpeg { quality } => f64::from(quality),
            AttackSpec::Jpeg2000 { bpp } => bpp,
        }
    }

    pub fn apply(&self, img: &Image) -> Result<Image> {
        match *self {
            AttackSpec::None => Ok(img.clone()),
            AttackSpec::Jpeg { quality } => jpeg_like_attack(img, u32::from(quality)),
            AttackSpec::Jpeg2000 { bpp } => jpeg2000_like_attack(img, bpp),
        }
    }
}

impl fmt::Display for AttackSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AttackSpec::None => f.write_str("none"),
            AttackSpec::Jpeg { quality } => write!(f, "jpeg:{quality}"),
            AttackSpec::Jpeg2000 { bpp } => write!(f, "jpeg2000:{bpp}"),
        }
    }
}

impl FromStr for AttackSpec {
    type Err = Error;

    /// `none`, `jpeg:Q` or `jpeg2000:BPP`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        if s == "none" {
            return Ok(AttackSpec::None);
        }
        let (kind, value) = s
            .split_once(':')
            .ok_or_else(|| Error::arg(format!("attack '{s}' should look like jpeg:10 or jpeg2000:0.25")))?;
        match kind {
            "jpeg" => {
                let q = value
                    .parse()
                    .map_err(|_| Error::arg(format!("bad JPEG quality '{value}'")))?;
                AttackSpec::jpeg(q)
            }
            "jpeg2000" | "j2k" => {
                let bpp = value
                    .parse()
                    .map_err(|_| Error::arg(format!("bad bitrate '{value}'")))?;
                AttackSpec::jpeg2000(bpp)
            }
            other => Err(Error::arg(format!("unknown attack kind '{other}'"))),
        }
    }
}

/// Quantizer steps for quality `q`, using the usual integer scaling.
pub fn jpeg_quant_table(quality: u32) -> Result<[f64; 64]> {
    if !(1..=100).contains(&quality) {
        return Err(Error::arg(format!("JPEG quality must be in 1..=100, got {quality}")));
    }
    let scale = if quality < 50 { 5000 / quality } else { 200 - 2 * quality };
    Ok(LUMA_TABLE.map(|t| f64::from(((t * scale + 50) / 100).clamp(1, 255))))
}

/// Orthonormal 8-point DCT-II basis, `basis[u][x]`.
fn dct_basis() -> &'static [[f64; 8]; 8] {
    static BASIS: OnceLock<[[f64; 8]; 8]> = OnceLock::new();
    BASIS.get_or_init(|| {
        let mut b = [[0.0; 8]; 8];
        for (u, row) in b.iter_mut().enumerate() {
            let c = if u == 0 { (1.0f64 / 8.0).sqrt() } else { (2.0f64 / 8.0).sqrt() };
            for (x, v) in row.iter_mut().enumerate() {
                *v = c * ((2 * x + 1) as f64 * u as f64 * PI / 16.0).cos();
            }
        }
        b
    })
}

fn dct8x8(block: &[f64; 64], inverse: bool) -> [f64; 64] {
    let b = dct_basis();
    let coef = |u: usize, x: usize| if inverse { b[x][u] } else { b[u][x] };
    let mut tmp = [0.0; 64];
    for r in 0..8 {
        for u in 0..8 {
            tmp[r * 8 + u] = (0..8).map(|x| coef(u, x) * block[r * 8 + x]).sum();
        }
    }
    let mut out = [0.0; 64];
    for c in 0..8 {
        for v in 0..8 {
            out[v * 8 + c] = (0..8).map(|y| coef(v, y) * tmp[y * 8 + c]).sum();
        }
    }
    out
}

/// Half-sample symmetric index into `0..n`.
fn reflect(i: usize, n: usize) -> usize {
    let period = 2 * n;
    let k = i % period;
    if k < n {
        k
    } else {
        period - 1 - k
    }
}

/// Block-DCT quantization at quality `quality` (1 = harshest, 100 = mildest).
///
/// Input and output are 8-bit, as for a real encode/decode pair. Sizes that
/// are not multiples of 8 are reflect-padded and cropped back.
pub fn jpeg_like_attack(img: &Image, quality: u32) -> Result<Image> {
    let steps = jpeg_quant_table(quality)?;
    let (rows, cols) = img.shape();
    let (pr, pc) = (rows.div_ceil(8) * 8, cols.div_ceil(8) * 8);
    let src = img.quantized();
    let shifted = Matrix::from_fn(pr, pc, |r, c| src.get(reflect(r, rows), reflect(c, cols)) - 128.0);
    let mut out = Matrix::zeros(rows, cols);
    let mut block = [0.0; 64];
    for br in (0..pr).step_by(8) {
        for bc in (0..pc).step_by(8) {
            for i in 0..8 {
                for j in 0..8 {
                    block[i * 8 + j] = shifted.get(br + i, bc + j);
                }
            }
            let mut coef = dct8x8(&block, false);
            for (c, s) in coef.iter_mut().zip(&steps) {
                *c = (*c / s).round() * s;
            }
            let rec = dct8x8(&coef, true);
            for i in 0..8 {
                for j in 0..8 {
                    let (r, c) = (br + i, bc + j);
                    if r < rows && c < cols {
                        out.set(r, c, rec[i * 8 + j] + 128.0);
                    }
                }
            }
        }
    }
    Ok(Image::new(out)?.quantized())
}

// CDF 9/7 lifting constants.
const LIFT_ALPHA: f64 = -1.586134342059924;
const LIFT_BETA: f64 = -0.052980118572961;
const LIFT_GAMMA: f64 = 0.882911075530934;
const LIFT_DELTA: f64 = 0.443506852043971;
const LIFT_K: f64 = 1.230174104914001;

/// Whole-sample symmetric neighbour access.
#[inline]
fn sym(x: &[f64], i: isize) -> f64 {
    let n = x.len() as isize;
    let j = if i < 0 {
        -i
    } else if i >= n {
        2 * (n - 1) - i
    } else {
        i
    };
    x[j.clamp(0, n - 1) as usize]
}

fn lift(x: &mut [f64], parity: usize, c: f64) {
    for i in (parity..x.len()).step_by(2) {
        let i = i as isize;
        let v = c * (sym(x, i - 1) + sym(x, i + 1));
        x[i as usize] += v;
    }
}

/// One 9/7 analysis step; the output holds lows then highs.
fn fwd97(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    lift(x, 1, LIFT_ALPHA);
    lift(x, 0, LIFT_BETA);
    lift(x, 1, LIFT_GAMMA);
    lift(x, 0, LIFT_DELTA);
    scratch.clear();
    scratch.extend(x.iter().step_by(2).map(|v| v * LIFT_K));
    scratch.extend(x.iter().skip(1).step_by(2).map(|v| v / LIFT_K));
    x.copy_from_slice(scratch);
}

fn inv97(x: &mut [f64], scratch: &mut Vec<f64>) {
    let n = x.len();
    if n < 2 {
        return;
    }
    let lows = n.div_ceil(2);
    scratch.clear();
    scratch.resize(n, 0.0);
    for (i, v) in x[..lows].iter().enumerate() {
        scratch[2 * i] = v / LIFT_K;
    }
    for (i, v) in x[lows..].iter().enumerate() {
        scratch[2 * i + 1] = v * LIFT_K;
    }
    lift(scratch, 0, -LIFT_DELTA);
    lift(scratch, 1, -LIFT_GAMMA);
    lift(scratch, 0, -LIFT_BETA);
    lift(scratch, 1, -LIFT_ALPHA);
    x.copy_from_slice(scratch);
}

/// Apply a 1-D step to every row, then every column, of the top-left region.
fn transform_region(m: &mut Matrix, rows: usize, cols: usize, step: fn(&mut [f64], &mut Vec<f64>)) {
    let mut scratch = Vec::with_capacity(rows.max(cols));
    let mut line = vec![0.0; rows.max(cols)];
    for r in 0..rows {
        let row = &mut m.row_mut(r)[..cols];
        step(row, &mut scratch);
    }
    for c in 0..cols {
        for r in 0..rows {
            line[r] = m.get(r, c);
        }
        step(&mut line[..rows], &mut scratch);
        for r in 0..rows {
            m.set(r, c, line[r]);
        }
    }
}

fn inverse_region(m: &mut Matrix, rows: usize, cols: usize) {
    let mut scratch = Vec::with_capacity(rows.max(cols));
    let mut line = vec![0.0; rows.max(cols)];
    for c in 0..cols {
        for r in 0..rows {
            line[r] = m.get(r, c);
        }
        inv97(&mut line[..rows], &mut scratch);
        for r in 0..rows {
            m.set(r, c, line[r]);
        }
    }
    for r in 0..rows {
        inv97(&mut m.row_mut(r)[..cols], &mut scratch);
    }
}

/// Settings for [`jpeg2000_like_attack_with`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Jpeg2000Params {
    pub levels: usize,
    pub delta_min: f64,
    pub delta_max: f64,
    /// Accepted distance between achieved and target rate, in bpp.
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for Jpeg2000Params {
    fn default() -> Self {
        Jpeg2000Params {
            levels: 3,
            delta_min: 0.25,
            delta_max: 4096.0,
            tolerance: 0.02,
            max_iterations: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Jpeg2000Report {
    pub image: Image,
    pub delta: f64,
    pub achieved_bpp: f64,
}

/// Coefficients of one subband split by sign, magnitudes ascending.
struct BandMagnitudes {
    positive: Vec<f64>,
    negative: Vec<f64>,
    zeros: usize,
}

impl BandMagnitudes {
    fn new(values: impl Iterator<Item = f64>) -> Self {
        let (mut positive, mut negative, mut zeros) = (Vec::new(), Vec::new(), 0);
        for v in values {
            if v > 0.0 {
                positive.push(v);
            } else if v < 0.0 {
                negative.push(-v);
            } else {
                zeros += 1;
            }
        }
        positive.sort_by(f64::total_cmp);
        negative.sort_by(f64::total_cmp);
        BandMagnitudes {
            positive,
            negative,
            zeros,
        }
    }

    fn len(&self) -> usize {
        self.positive.len() + self.negative.len() + self.zeros
    }

    /// Total self-information in bits of the deadzone indices at step `delta`.
    fn bits(&self, delta: f64) -> f64 {
        let n = self.len() as f64;
        let mut counts = Vec::new();
        let mut zero_bin = self.zeros;
        for side in [&self.positive, &self.negative] {
            let mut run = 0usize;
            let mut current = 0u64;
            for &m in side.iter() {
                let q = (m / delta).floor() as u64;
                if q == 0 {
                    zero_bin += 1;
                    continue;
                }
                if q != current && run > 0 {
                    counts.push(run);
                    run = 0;
                }
                current = q;
                run += 1;
            }
            if run > 0 {
                counts.push(run);
            }
        }
        counts.push(zero_bin);
        counts
            .into_iter()
            .filter(|&c| c > 0)
            .map(|c| {
                let c = c as f64;
                -c * (c / n).log2()
            })
            .sum()
    }
}

/// Per-band rectangles `(r0, c0, rows, cols)` of a `levels`-deep pyramid.
fn band_layout(rows: usize, cols: usize, levels: usize) -> Vec<(usize, usize, usize, usize)> {
    let mut out = Vec::new();
    let (mut r, mut c) = (rows, cols);
    for _ in 0..levels {
        let (lr, lc) = (r.div_ceil(2), c.div_ceil(2));
        out.push((0, lc, lr, c - lc));
        out.push((lr, 0, r - lr, lc));
        out.push((lr, lc, r - lr, c - lc));
        r = lr;
        c = lc;
    }
    out.push((0, 0, r, c));
    out
}

/// Wavelet deadzone codec at roughly `bpp` bits per pixel.
pub fn jpeg2000_like_attack(img: &Image, bpp: f64) -> Result<Image> {
    Ok(jpeg2000_like_attack_with(img, bpp, &Jpeg2000Params::default())?.image)
}

/// As [`jpeg2000_like_attack`], also reporting the chosen step and rate.
///
/// The rate proxy is the first-order entropy of the quantizer indices,
/// computed per subband and weighted by subband size. When even the smallest
/// step cannot reach the target, the smallest step is used.
pub fn jpeg2000_like_attack_with(img: &Image, bpp: f64, params: &Jpeg2000Params) -> Result<Jpeg2000Report> {
    if !(bpp > 0.0) || !bpp.is_finite() {
        return Err(Error::arg(format!("bitrate must be positive, got {bpp}")));
    }
    if !(params.delta_min > 0.0 && params.delta_max > params.delta_min) {
        return Err(Error::arg("quantizer step range must satisfy 0 < min < max"));
    }
    let (rows, cols) = img.shape();
    if rows < 32 || cols < 32 {
        return Err(Error::dim(format!("wavelet codec needs at least 32x32, got {rows}x{cols}")));
    }

    let mut coef = img.quantized().into_samples().map(|v| v - 128.0);
    let mut sizes = vec![(rows, cols)];
    for _ in 1..params.levels {
        let (r, c) = *sizes.last().unwrap();
        sizes.push((r.div_ceil(2), c.div_ceil(2)));
    }
    for &(r, c) in &sizes {
        transform_region(&mut coef, r, c, fwd97);
    }

    let bands: Vec<BandMagnitudes> = band_layout(rows, cols, params.levels)
        .into_iter()
        .map(|(r0, c0, nr, nc)| {
            BandMagnitudes::new((r0..r0 + nr).flat_map(|r| (c0..c0 + nc).map(move |c| (r, c))).map(|(r, c)| coef.get(r, c)))
        })
        .collect();
    let total = (rows * cols) as f64;
    let rate = |delta: f64| bands.iter().map(|b| b.bits(delta)).sum::<f64>() / total;

    let delta = if rate(params.delta_min) <= bpp {
        params.delta_min
    } else {
        let floor_rate = rate(params.delta_max);
        if floor_rate > bpp + params.tolerance {
            return Err(Error::Calibration(format!(
                "target {bpp} bpp is below the reachable range [{floor_rate:.4}, {:.4}] bpp",
                rate(params.delta_min)
            )));
        }
        let (mut lo, mut hi) = (params.delta_min.ln(), params.delta_max.ln());
        let mut chosen = None;
        for _ in 0..params.max_iterations {
            let mid = 0.5 * (lo + hi);
            let r = rate(mid.exp());
            if (r - bpp).abs() <= params.tolerance {
                chosen = Some(mid.exp());
                break;
            }
            if r > bpp {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        chosen.unwrap_or(hi.exp())
    };
    let achieved_bpp = rate(delta);

    for v in coef.as_mut_slice() {
        let q = (v.abs() / delta).floor();
        *v = if q == 0.0 { 0.0 } else { v.signum() * (q + 0.5) * delta };
    }
    for &(r, c) in sizes.iter().rev() {
        inverse_region(&mut coef, r, c);
    }
    let image = Image::new(coef.map(|v| v + 128.0))?.quantized();
    Ok(Jpeg2000Report {
        image,
        delta,
        achieved_bpp,
    })
}
