//! Spread-spectrum watermark generation, embedding, estimation and correlation.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::dwt2d::{dwt2, idwt2, Subband, SubbandMask, SubbandSet};
use crate::error::{Error, Result};
use crate::filterbank::WaveletSpec;
use crate::image_io::Image;
use crate::matrix::Matrix;

/// Default embedding strength.
pub const DEFAULT_ALPHA: f64 = 3.0;

/// A quarter-size ±1 message and the subbands it is added to.
#[derive(Debug, Clone, PartialEq)]
pub struct Watermark {
    message: Matrix,
    seed: u64,
    mask: SubbandMask,
}

impl Watermark {
    pub fn message(&self) -> &Matrix {
        &self.message
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn mask(&self) -> SubbandMask {
        self.mask
    }
}

/// Draw a ±1 message of size `(rows/2) x (cols/2)` for an image of `rows x cols`.
///
/// The stream is ChaCha8 seeded with `seed` via `seed_from_u64`; each `u64`
/// supplies 64 entries, least significant bit first, with bit 1 mapping to +1.
pub fn generate_watermark(seed: u64, rows: usize, cols: usize, mask: SubbandMask) -> Result<Watermark> {
    if rows < 2 || cols < 2 || !rows.is_multiple_of(2) || !cols.is_multiple_of(2) {
        return Err(Error::dim(format!(
            "image dimensions must be even and >= 2, got {rows}x{cols}"
        )));
    }
    let (r, c) = (rows / 2, cols / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut data = Vec::with_capacity(r * c);
    while data.len() < r * c {
        let word = rng.next_u64();
        let take = (r * c - data.len()).min(64);
        data.extend((0..take).map(|i| if word >> i & 1 == 1 { 1.0 } else { -1.0 }));
    }
    Ok(Watermark {
        message: Matrix::from_vec(r, c, data)?,
        seed,
        mask,
    })
}

/// Mix a master seed with a stage tag into an independent stream seed.
pub fn stream_seed(master: u64, tag: &str) -> u64 {
    // FNV-1a over the tag, then a splitmix64 finalizer.
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in tag.bytes() {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    let mut z = master ^ h;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingParams {
    alpha: f64,
    spec: WaveletSpec,
    mask: SubbandMask,
}

impl EmbeddingParams {
    /// `alpha` may be zero for the identity embedding; estimation needs it positive.
    pub fn new(alpha: f64, spec: WaveletSpec, mask: SubbandMask) -> Result<Self> {
        if !alpha.is_finite() || alpha < 0.0 {
            return Err(Error::arg(format!("alpha must be finite and >= 0, got {alpha}")));
        }
        Ok(EmbeddingParams { alpha, spec, mask })
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn spec(&self) -> &WaveletSpec {
        &self.spec
    }

    pub fn mask(&self) -> SubbandMask {
        self.mask
    }
}

fn check_message_shape(img: &Image, message: &Matrix) -> Result<()> {
    let (r, c) = img.shape();
    if message.shape() != (r / 2, c / 2) {
        return Err(Error::arg(format!(
            "message is {:?} but a {r}x{c} image needs {:?}",
            message.shape(),
            (r / 2, c / 2)
        )));
    }
    Ok(())
}

/// `Y = X + alpha W` on every masked subband, then inverse transform.
pub fn embed(img: &Image, wm: &Watermark, params: &EmbeddingParams) -> Result<Image> {
    check_message_shape(img, wm.message())?;
    embed_with_subbands(&dwt2(img, params.spec())?, wm, params)
}

/// [`embed`] starting from the already transformed original.
pub fn embed_with_subbands(original: &SubbandSet, wm: &Watermark, params: &EmbeddingParams) -> Result<Image> {
    if original.spec_name() != params.spec().name() {
        return Err(Error::arg(format!(
            "subbands come from {}, embedding uses {}",
            original.spec_name(),
            params.spec().name()
        )));
    }
    if original.band_shape() != wm.message().shape() {
        return Err(Error::arg(format!(
            "message is {:?} but the subbands are {:?}",
            wm.message().shape(),
            original.band_shape()
        )));
    }
    if wm.mask() != params.mask() {
        return Err(Error::arg(format!(
            "watermark mask {} differs from embedding mask {}",
            wm.mask(),
            params.mask()
        )));
    }
    let mut bands = original.clone();
    for b in params.mask().bands() {
        let band = bands.band_mut(b);
        for (y, w) in band.as_mut_slice().iter_mut().zip(wm.message().as_slice()) {
            *y += params.alpha() * w;
        }
    }
    idwt2(&bands, params.spec())
}

/// Per-subband estimates of the embedded message.
#[derive(Debug, Clone, PartialEq)]
pub struct WatermarkEstimate {
    mask: SubbandMask,
    bands: Vec<(Subband, Matrix)>,
}

impl WatermarkEstimate {
    pub fn mask(&self) -> SubbandMask {
        self.mask
    }

    pub fn band(&self, b: Subband) -> Option<&Matrix> {
        self.bands.iter().find(|(s, _)| *s == b).map(|(_, m)| m)
    }

    pub fn bands(&self) -> impl Iterator<Item = (Subband, &Matrix)> {
        self.bands.iter().map(|(s, m)| (*s, m))
    }

    /// Masked estimates concatenated in LL, LH, HL, HH order.
    pub fn stacked(&self) -> Vec<f64> {
        self.bands
            .iter()
            .flat_map(|(_, m)| m.as_slice().iter().copied())
            .collect()
    }
}

/// `W_hat = (dwt2(attacked) - dwt2(original)) / alpha` on the masked subbands.
pub fn estimate_watermark(
    attacked: &Image,
    original: &Image,
    params: &EmbeddingParams,
) -> Result<WatermarkEstimate> {
    if attacked.shape() != original.shape() {
        return Err(Error::arg(format!(
            "attacked image is {:?}, original is {:?}",
            attacked.shape(),
            original.shape()
        )));
    }
    estimate_from_subbands(attacked, &dwt2(original, params.spec())?, params)
}

/// [`estimate_watermark`] against the already transformed original.
pub fn estimate_from_subbands(
    attacked: &Image,
    original: &SubbandSet,
    params: &EmbeddingParams,
) -> Result<WatermarkEstimate> {
    if !(params.alpha() > 0.0) {
        return Err(Error::arg("estimation needs alpha > 0"));
    }
    let (r, c) = attacked.shape();
    if original.band_shape() != (r / 2, c / 2) {
        return Err(Error::arg(format!(
            "attacked image is {r}x{c}, original subbands are {:?}",
            original.band_shape()
        )));
    }
    let y = dwt2(attacked, params.spec())?;
    let inv = 1.0 / params.alpha();
    let bands = params
        .mask()
        .bands()
        .map(|b| {
            let est = y.band(b).zip_map(original.band(b), |a, o| (a - o) * inv)?;
            Ok((b, est))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(WatermarkEstimate {
        mask: params.mask(),
        bands,
    })
}

/// Which part of an estimate to correlate against the message.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrelationScope {
    /// All masked subbands, stacked against replicas of the message.
    Stacked,
    Single(Subband),
}

/// Cosine similarity of two equal-length vectors, clamped to `[-1, 1]`.
///
/// A zero-energy `estimate` has no defined correlation and yields
/// [`Error::DegenerateEstimate`].
pub fn cosine_similarity(reference: &[f64], estimate: &[f64]) -> Result<f64> {
    if reference.len() != estimate.len() {
        return Err(Error::arg(format!(
            "length mismatch: {} vs {}",
            reference.len(),
            estimate.len()
        )));
    }
    let (mut dot, mut rr, mut ee) = (0.0, 0.0, 0.0);
    for (&r, &e) in reference.iter().zip(estimate) {
        dot += r * e;
        rr += r * r;
        ee += e * e;
    }
    if !(ee > 0.0) || !ee.is_finite() {
        return Err(Error::DegenerateEstimate);
    }
    if !(rr > 0.0) {
        return Err(Error::arg("reference message has zero energy"));
    }
    Ok((dot / (rr.sqrt() * ee.sqrt())).clamp(-1.0, 1.0))
}

/// Correlation coefficient between a message and its estimate.
pub fn correlation(message: &Matrix, estimate: &WatermarkEstimate, scope: CorrelationScope) -> Result<f64> {
    match scope {
        CorrelationScope::Single(b) => {
            let est = estimate
                .band(b)
                .ok_or_else(|| Error::arg(format!("subband {b} was not estimated")))?;
            if est.shape() != message.shape() {
                return Err(Error::arg("message and estimate shapes differ"));
            }
            cosine_similarity(message.as_slice(), est.as_slice())
        }
        CorrelationScope::Stacked => {
            let n = estimate.mask().count();
            let reference: Vec<f64> = (0..n).flat_map(|_| message.as_slice().iter().copied()).collect();
            cosine_similarity(&reference, &estimate.stacked())
        }
    }
}

/// [`correlation`] with a zero-energy estimate mapped to 0, the null-case convention.
pub fn correlation_or_zero(message: &Matrix, estimate: &WatermarkEstimate, scope: CorrelationScope) -> Result<f64> {
    match correlation(message, estimate, scope) {
        Err(Error::DegenerateEstimate) => Ok(0.0),
        other => other,
    }
}
