//! Histograms, divergences and the universal quality index.

use crate::dwt2d::{dwt2, Subband};
use crate::error::{Error, Result};
use crate::filterbank::WaveletSpec;
use crate::image_io::{rescale_for_view, Image};
use crate::matrix::Matrix;

/// Uniform binning of a real interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Bins {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

impl Bins {
    /// 256 unit-wide bins centred on the 8-bit levels.
    pub const PIXEL: Bins = Bins {
        lo: -0.5,
        hi: 255.5,
        count: 256,
    };

    pub fn new(lo: f64, hi: f64, count: usize) -> Result<Self> {
        if count < 2 || !(hi > lo) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::arg(format!("invalid bins [{lo}, {hi}) x {count}")));
        }
        Ok(Bins { lo, hi, count })
    }

    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.count as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.count)
            .map(|i| self.lo + self.width() * i as f64)
            .collect()
    }

    /// Bin of `v`; values outside the range land in the end bins.
    pub fn index(&self, v: f64) -> usize {
        let i = ((v - self.lo) / self.width()).floor();
        if i <= 0.0 {
            0
        } else {
            (i as usize).min(self.count - 1)
        }
    }
}

impl Default for Bins {
    fn default() -> Self {
        Bins::PIXEL
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    bins: Bins,
    probabilities: Vec<f64>,
}

impl Histogram {
    pub fn bins(&self) -> Bins {
        self.bins
    }

    pub fn probabilities(&self) -> &[f64] {
        &self.probabilities
    }
}

/// Normalized frequencies of `data` over `bins`.
pub fn histogram(data: &[f64], bins: Bins) -> Result<Histogram> {
    if data.is_empty() {
        return Err(Error::arg("histogram of empty data"));
    }
    if data.iter().any(|v| v.is_nan()) {
        return Err(Error::arg("histogram data contains NaN"));
    }
    let mut counts = vec![0u64; bins.count];
    for &v in data {
        counts[bins.index(v)] += 1;
    }
    let n = data.len() as f64;
    Ok(Histogram {
        bins,
        probabilities: counts.into_iter().map(|c| c as f64 / n).collect(),
    })
}

/// Histogram of a subband after mapping its range onto `[0, 255]`.
pub fn subband_histogram(band: &Matrix) -> Result<Histogram> {
    histogram(rescale_for_view(band).as_slice(), Bins::PIXEL)
}

fn check_bins(p: &Histogram, q: &Histogram) -> Result<()> {
    if p.bins != q.bins {
        return Err(Error::arg("histograms use different bins"));
    }
    Ok(())
}

/// `sum p log2(p/q)`; infinite when `q` misses mass that `p` has.
pub fn kl_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_bins(p, q)?;
    Ok(kl_raw(&p.probabilities, &q.probabilities))
}

fn kl_raw(p: &[f64], q: &[f64]) -> f64 {
    let mut total = 0.0;
    for (&pi, &qi) in p.iter().zip(q) {
        if pi > 0.0 {
            if qi <= 0.0 {
                return f64::INFINITY;
            }
            total += pi * (pi / qi).log2();
        }
    }
    total
}

/// Jensen-Shannon divergence in bits; always finite and within `[0, 1]`.
pub fn js_divergence(p: &Histogram, q: &Histogram) -> Result<f64> {
    check_bins(p, q)?;
    let m: Vec<f64> = p
        .probabilities
        .iter()
        .zip(&q.probabilities)
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    let v = 0.5 * kl_raw(&p.probabilities, &m) + 0.5 * kl_raw(&q.probabilities, &m);
    Ok(v.clamp(0.0, 1.0))
}

/// Row and column labels of [`jsd_table`].
pub const JSD_LABELS: [&str; 5] = ["original", "LL", "LH", "HL", "HH"];

/// Pairwise JSD among the image histogram and its four rescaled subband
/// histograms, in the order of [`JSD_LABELS`].
pub fn jsd_table(img: &Image, spec: &WaveletSpec) -> Result<Matrix> {
    let bands = dwt2(img, spec)?;
    let mut hists = vec![histogram(img.samples().as_slice(), Bins::PIXEL)?];
    for b in Subband::ALL {
        hists.push(subband_histogram(bands.band(b))?);
    }
    let mut table = Matrix::zeros(5, 5);
    for i in 0..5 {
        for j in i + 1..5 {
            let v = js_divergence(&hists[i], &hists[j])?;
            table.set(i, j, v);
            table.set(j, i, v);
        }
    }
    Ok(table)
}

/// Mean JSD between the image and its three detail subbands.
pub fn detail_jsd_mean(table: &Matrix) -> f64 {
    (table.get(0, 2) + table.get(0, 3) + table.get(0, 4)) / 3.0
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UqiReport {
    pub value: f64,
    pub windows_used: usize,
    /// Windows whose index is undefined (zero denominator, not both flat and equal).
    pub windows_skipped: usize,
}

/// Universal quality index with 8x8 windows at stride 1.
pub fn uqi(a: &Image, b: &Image) -> Result<f64> {
    Ok(uqi_windowed(a.samples(), b.samples(), 8, 1)?.value)
}

/// Mean of `4 s_ab m_a m_b / ((s_a^2 + s_b^2)(m_a^2 + m_b^2))` over sliding windows.
///
/// A window where both inputs are flat with equal means scores 1. Other
/// windows with a zero denominator are skipped; if every window is skipped
/// the value is 0.
pub fn uqi_windowed(a: &Matrix, b: &Matrix, window: usize, stride: usize) -> Result<UqiReport> {
    if a.shape() != b.shape() {
        return Err(Error::arg(format!(
            "UQI inputs differ in shape: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    if window == 0 || stride == 0 {
        return Err(Error::arg("UQI window and stride must be positive"));
    }
    let (rows, cols) = a.shape();
    if rows < window || cols < window {
        return Err(Error::dim(format!("{rows}x{cols} is smaller than the {window}x{window} window")));
    }
    let n = (window * window) as f64;
    let (mut total, mut used, mut skipped) = (0.0, 0usize, 0usize);
    for r0 in (0..=rows - window).step_by(stride) {
        for c0 in (0..=cols - window).step_by(stride) {
            let (mut sa, mut sb) = (0.0, 0.0);
            for r in r0..r0 + window {
                for c in c0..c0 + window {
                    sa += a.get(r, c);
                    sb += b.get(r, c);
                }
            }
            let (ma, mb) = (sa / n, sb / n);
            let (mut vaa, mut vbb, mut vab) = (0.0, 0.0, 0.0);
            for r in r0..r0 + window {
                for c in c0..c0 + window {
                    let (da, db) = (a.get(r, c) - ma, b.get(r, c) - mb);
                    vaa += da * da;
                    vbb += db * db;
                    vab += da * db;
                }
            }
            let denom = (vaa + vbb) * (ma * ma + mb * mb);
            if denom > 0.0 {
                total += 4.0 * vab * ma * mb / denom;
                used += 1;
            } else if vaa == 0.0 && vbb == 0.0 && ma == mb {
                total += 1.0;
                used += 1;
            } else {
                skipped += 1;
            }
        }
    }
    let value = if used == 0 { 0.0 } else { total / used as f64 };
    Ok(UqiReport {
        value: value.clamp(-1.0, 1.0),
        windows_used: used,
        windows_skipped: skipped,
    })
}
