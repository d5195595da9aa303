//! Two-channel filter banks: GRS construction from complementary pairs and the
//! fixed tables of the classical wavelets.

use std::f64::consts::{PI, SQRT_2};
use std::fmt;

use crate::error::{Error, Result};

/// Absolute tolerance for algebraic filter identities.
pub const FILTER_TOL: f64 = 1e-10;

/// Names accepted by [`standard_wavelet`].
pub const STANDARD_WAVELETS: [&str; 5] = [
    "daubechies4",
    "daubechies8",
    "coiflet6",
    "biorthogonal6.2",
    "grs4",
];

/// Two equal-length sequences whose autocorrelations are tested for
/// complementarity. For GRS pairs these are the polyphase components of the
/// lowpass filter.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterPair {
    pub h00: Vec<f64>,
    pub h01: Vec<f64>,
}

impl FilterPair {
    pub fn len(&self) -> usize {
        self.h00.len()
    }

    pub fn is_empty(&self) -> bool {
        self.h00.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Complementarity {
    pub complementary: bool,
    /// Largest absolute off-lag term of the summed autocorrelations.
    pub residual: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FilterClass {
    Orthogonal,
    Biorthogonal,
}

impl fmt::Display for FilterClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FilterClass::Orthogonal => "orthogonal",
            FilterClass::Biorthogonal => "biorthogonal",
        })
    }
}

/// A named analysis/synthesis filter quadruple.
///
/// Sequences are polynomial coefficients in `z^-1`. The synthesis bank
/// reconstructs the input delayed by `delay` samples.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveletSpec {
    name: String,
    class: FilterClass,
    raw_h0: Vec<f64>,
    raw_h1: Vec<f64>,
    normalization: f64,
    h0: Vec<f64>,
    h1: Vec<f64>,
    g0: Vec<f64>,
    g1: Vec<f64>,
    delay: usize,
}

impl WaveletSpec {
    /// Build a spec from analysis filters, deriving the synthesis pair.
    ///
    /// The synthesis filters are `G0(z) = s H1(-z)` and `G1(z) = -s H0(-z)`,
    /// which cancels aliasing for any analysis pair; `s` and the delay are
    /// read off the distortion product, which must be a single monomial.
    pub fn from_analysis(
        name: impl Into<String>,
        class: FilterClass,
        raw_h0: Vec<f64>,
        raw_h1: Vec<f64>,
        normalization: f64,
    ) -> Result<Self> {
        if raw_h0.is_empty() || raw_h1.is_empty() {
            return Err(Error::arg("analysis filters must be nonempty"));
        }
        let h0: Vec<f64> = raw_h0.iter().map(|c| c * normalization).collect();
        let mut h1: Vec<f64> = raw_h1.iter().map(|c| c * normalization).collect();
        // Keep the detail filter's DC gain non-negative. Regular highpass
        // filters have zero DC gain and are left alone.
        if h1.iter().sum::<f64>() < -FILTER_TOL {
            h1.iter_mut().for_each(|c| *c = -*c);
        }

        let product = poly_sub(
            &poly_mul(&h0, &alternate(&h1)),
            &poly_mul(&alternate(&h0), &h1),
        );
        let (delay, lead) = product
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()))
            .map(|(i, &c)| (i, c))
            .unwrap_or((0, 0.0));
        let off_delay = product
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != delay)
            .map(|(_, c)| c.abs())
            .fold(0.0, f64::max);
        if lead.abs() < FILTER_TOL || off_delay > FILTER_TOL * lead.abs().max(1.0) {
            return Err(Error::arg(
                "analysis filters admit no FIR perfect-reconstruction synthesis",
            ));
        }
        let s = 2.0 / lead;
        let g0 = alternate(&h1).into_iter().map(|c| s * c).collect();
        let g1 = alternate(&h0).into_iter().map(|c| -s * c).collect();

        Ok(WaveletSpec {
            name: name.into(),
            class,
            raw_h0,
            raw_h1,
            normalization,
            h0,
            h1,
            g0,
            g1,
            delay,
        })
    }

    /// Assemble a spec from an explicit quadruple without any validation.
    pub fn from_filters(
        name: impl Into<String>,
        class: FilterClass,
        h0: Vec<f64>,
        h1: Vec<f64>,
        g0: Vec<f64>,
        g1: Vec<f64>,
        delay: usize,
    ) -> Self {
        WaveletSpec {
            name: name.into(),
            class,
            raw_h0: h0.clone(),
            raw_h1: h1.clone(),
            normalization: 1.0,
            h0,
            h1,
            g0,
            g1,
            delay,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn class(&self) -> FilterClass {
        self.class
    }

    /// Coefficients before normalization; for GRS specs these are ±1.
    pub fn raw_h0(&self) -> &[f64] {
        &self.raw_h0
    }

    pub fn raw_h1(&self) -> &[f64] {
        &self.raw_h1
    }

    pub fn normalization(&self) -> f64 {
        self.normalization
    }

    pub fn h0(&self) -> &[f64] {
        &self.h0
    }

    pub fn h1(&self) -> &[f64] {
        &self.h1
    }

    pub fn g0(&self) -> &[f64] {
        &self.g0
    }

    pub fn g1(&self) -> &[f64] {
        &self.g1
    }

    pub fn delay(&self) -> usize {
        self.delay
    }

    /// Longest filter in the quadruple.
    pub fn max_len(&self) -> usize {
        [&self.h0, &self.h1, &self.g0, &self.g1]
            .iter()
            .map(|f| f.len())
            .max()
            .unwrap_or(0)
    }

    /// Whether the highpass used by the transform is the sign-flipped form
    /// of the raw detail filter.
    pub fn highpass_flipped(&self) -> bool {
        self.h1
            .iter()
            .zip(&self.raw_h1)
            .any(|(h, r)| (h - r * self.normalization).abs() > FILTER_TOL)
    }

    /// `|H0(e^{i pi})|`, zero for regular lowpass filters.
    pub fn lowpass_at_nyquist(&self) -> f64 {
        alternate(&self.h0).iter().sum::<f64>().abs()
    }

    pub fn is_regular(&self) -> bool {
        self.lowpass_at_nyquist() <= FILTER_TOL
    }
}

/// Multiply coefficient `k` by `(-1)^k`, i.e. substitute `z -> -z`.
fn alternate(h: &[f64]) -> Vec<f64> {
    h.iter()
        .enumerate()
        .map(|(k, &c)| if k % 2 == 0 { c } else { -c })
        .collect()
}

fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, &x) in a.iter().enumerate() {
        for (j, &y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

fn poly_add(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a.len().max(b.len())];
    for (i, &x) in a.iter().enumerate() {
        out[i] += x;
    }
    for (i, &y) in b.iter().enumerate() {
        out[i] += y;
    }
    out
}

fn poly_sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let neg: Vec<f64> = b.iter().map(|c| -c).collect();
    poly_add(a, &neg)
}

/// Aperiodic autocorrelation for lags `0..len`.
fn autocorrelation(h: &[f64]) -> Vec<f64> {
    (0..h.len())
        .map(|lag| h.iter().zip(&h[lag..]).map(|(a, b)| a * b).sum())
        .collect()
}

/// Check `H00(z)H00(1/z) + H01(z)H01(1/z) = 2l`.
///
/// The lag-0 term must equal `2l` and every other lag must vanish.
pub fn is_complementary(pair: &FilterPair) -> Result<Complementarity> {
    let l = pair.h00.len();
    if l != pair.h01.len() {
        return Err(Error::arg(format!(
            "pair lengths differ: {} vs {}",
            l,
            pair.h01.len()
        )));
    }
    if l == 0 {
        return Err(Error::arg("pair must be nonempty"));
    }
    let sum = poly_add(&autocorrelation(&pair.h00), &autocorrelation(&pair.h01));
    let residual = sum[1..].iter().map(|c| c.abs()).fold(0.0, f64::max);
    let centre_ok = (sum[0] - 2.0 * l as f64).abs() <= FILTER_TOL;
    Ok(Complementarity {
        complementary: centre_ok && residual <= FILTER_TOL,
        residual,
    })
}

/// Rudin-Shapiro doubling: `(A, B) -> (A ++ B, A ++ -B)` starting from
/// `([1, 1], [1, -1])`. Level `k` has length `2^k`.
pub fn grs_kernel(level: u32) -> Result<FilterPair> {
    if level == 0 {
        return Err(Error::arg("GRS level must be at least 1"));
    }
    if level > 24 {
        return Err(Error::arg(format!("GRS level {level} is too large")));
    }
    let mut a = vec![1.0, 1.0];
    let mut b = vec![1.0, -1.0];
    for _ in 1..level {
        let next_a: Vec<f64> = a.iter().chain(&b).copied().collect();
        let next_b: Vec<f64> = a.iter().copied().chain(b.iter().map(|c| -c)).collect();
        a = next_a;
        b = next_b;
    }
    Ok(FilterPair { h00: a, h01: b })
}

/// `h1[n] = -(-1)^(N-n) h0[N-n]`, the coefficients of `-z^-N H0(-1/z)`.
pub fn derive_highpass(h0: &[f64], order: usize) -> Result<Vec<f64>> {
    if h0.is_empty() || order != h0.len() - 1 {
        return Err(Error::arg(format!(
            "filter order {order} does not match {} coefficients",
            h0.len()
        )));
    }
    Ok((0..=order)
        .map(|n| {
            let k = order - n;
            let sign = if k.is_multiple_of(2) { -1.0 } else { 1.0 };
            sign * h0[k]
        })
        .collect())
}

/// Orthogonal GRS wavelet from the level-`level` kernel.
///
/// The kernel pair becomes the polyphase components of the lowpass filter,
/// `H0(z) = H00(z^2) + z^-1 H01(z^2)`.
pub fn grs_wavelet(level: u32) -> Result<WaveletSpec> {
    let pair = grs_kernel(level)?;
    let mut raw_h0 = Vec::with_capacity(2 * pair.len());
    for (a, b) in pair.h00.iter().zip(&pair.h01) {
        raw_h0.push(*a);
        raw_h0.push(*b);
    }
    let raw_h1 = derive_highpass(&raw_h0, raw_h0.len() - 1)?;
    let norm = 1.0 / (raw_h0.len() as f64).sqrt();
    WaveletSpec::from_analysis(
        format!("GRS{}", raw_h0.len()),
        FilterClass::Orthogonal,
        raw_h0,
        raw_h1,
        norm,
    )
}

fn daubechies4() -> Vec<f64> {
    let s3 = 3f64.sqrt();
    let d = 4.0 * SQRT_2;
    vec![(1.0 + s3) / d, (3.0 + s3) / d, (3.0 - s3) / d, (1.0 - s3) / d]
}

const DAUBECHIES8: [f64; 8] = [
    0.2303778133088964,
    0.7148465705529154,
    0.6308807679298587,
    -0.02798376941685985,
    -0.18703481171909309,
    0.030841381835560764,
    0.032883011666885,
    -0.010597401785069032,
];

const COIFLET6: [f64; 6] = [
    -0.07273261951252645,
    0.33789766245748937,
    0.8525720202116004,
    0.38486484686485784,
    -0.07273261951252645,
    -0.015655728135791993,
];

fn orthogonal_from_lowpass(name: &str, h0: Vec<f64>) -> Result<WaveletSpec> {
    let h1 = derive_highpass(&h0, h0.len() - 1)?;
    WaveletSpec::from_analysis(name, FilterClass::Orthogonal, h0, h1, 1.0)
}

/// Look up one of the named wavelets (case-insensitive).
///
/// `grsN` for `N = 4, 8, 16, ...` selects the GRS level with `N` taps.
pub fn standard_wavelet(name: &str) -> Result<WaveletSpec> {
    let key = name.trim().to_ascii_lowercase();
    match key.as_str() {
        "daubechies4" => orthogonal_from_lowpass("daubechies4", daubechies4()),
        "daubechies8" => orthogonal_from_lowpass("daubechies8", DAUBECHIES8.to_vec()),
        "coiflet6" => orthogonal_from_lowpass("coiflet6", COIFLET6.to_vec()),
        "biorthogonal6.2" => {
            // Spline family: 6-tap analysis lowpass, Haar analysis highpass.
            let c = SQRT_2 / 16.0;
            let h0 = [-1.0, 1.0, 8.0, 8.0, 1.0, -1.0].map(|v| v * c).to_vec();
            let h1 = vec![-1.0 / SQRT_2, 1.0 / SQRT_2];
            WaveletSpec::from_analysis("biorthogonal6.2", FilterClass::Biorthogonal, h0, h1, 1.0)
        }
        _ => match key.strip_prefix("grs").and_then(|n| n.parse::<u64>().ok()) {
            Some(taps) if taps >= 4 && taps.is_power_of_two() => {
                grs_wavelet(taps.trailing_zeros() - 1)
            }
            _ => Err(Error::UnknownWavelet {
                name: name.to_string(),
                valid: format!("{}, grsN for N = 8, 16, ...", STANDARD_WAVELETS.join(", ")),
            }),
        },
    }
}

/// Largest deviation from the two-channel perfect-reconstruction conditions:
/// distortion `G0 H0 + G1 H1 = 2 z^-delay` and aliasing
/// `G0 H0(-z) + G1 H1(-z) = 0`.
pub fn verify_perfect_reconstruction(spec: &WaveletSpec) -> f64 {
    let distortion = poly_add(&poly_mul(spec.g0(), spec.h0()), &poly_mul(spec.g1(), spec.h1()));
    let aliasing = poly_add(
        &poly_mul(spec.g0(), &alternate(spec.h0())),
        &poly_mul(spec.g1(), &alternate(spec.h1())),
    );
    let mut residual = aliasing.iter().map(|c| c.abs()).fold(0.0, f64::max);
    for (i, &c) in distortion.iter().enumerate() {
        let target = if i == spec.delay() { 2.0 } else { 0.0 };
        residual = residual.max((c - target).abs());
    }
    if spec.delay() >= distortion.len() {
        residual = residual.max(2.0);
    }
    residual
}

/// Magnitude response `|sum_k h[k] e^{-i w k}|` at `n_points` uniform
/// frequencies from 0 to pi inclusive.
pub fn frequency_response(filter: &[f64], n_points: usize) -> Result<Vec<f64>> {
    if n_points < 2 {
        return Err(Error::arg("frequency response needs at least 2 points"));
    }
    Ok((0..n_points)
        .map(|i| {
            let w = PI * i as f64 / (n_points - 1) as f64;
            let (re, im) = filter.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &h)| {
                let (s, c) = (w * k as f64).sin_cos();
                (re + h * c, im - h * s)
            });
            re.hypot(im)
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute-force oracle: evaluate the summed autocorrelation polynomial at
    /// points on the unit circle and compare with the constant 2l.
    fn complementary_on_circle(pair: &FilterPair) -> f64 {
        let l = pair.len() as f64;
        (0..64)
            .map(|i| {
                let w = 2.0 * PI * i as f64 / 64.0;
                let power = |h: &[f64]| {
                    let (re, im) = h.iter().enumerate().fold((0.0, 0.0), |(re, im), (k, &c)| {
                        (re + c * (w * k as f64).cos(), im - c * (w * k as f64).sin())
                    });
                    re * re + im * im
                };
                (power(&pair.h00) + power(&pair.h01) - 2.0 * l).abs()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn base_pair_is_complementary() {
        let c = is_complementary(&FilterPair {
            h00: vec![1.0, 1.0],
            h01: vec![1.0, -1.0],
        })
        .unwrap();
        assert!(c.complementary);
        assert_eq!(c.residual, 0.0);
    }

    #[test]
    fn identical_pair_is_not_complementary() {
        let c = is_complementary(&FilterPair {
            h00: vec![1.0, 1.0],
            h01: vec![1.0, 1.0],
        })
        .unwrap();
        assert!(!c.complementary);
        assert_eq!(c.residual, 2.0);
    }

    #[test]
    fn length_one_pair() {
        let c = is_complementary(&FilterPair {
            h00: vec![1.0],
            h01: vec![1.0],
        })
        .unwrap();
        assert!(c.complementary);
    }

    #[test]
    fn length_mismatch_is_an_error() {
        let err = is_complementary(&FilterPair {
            h00: vec![1.0, 1.0],
            h01: vec![1.0],
        });
        assert!(matches!(err, Err(Error::Argument(_))));
    }

    #[test]
    fn kernels_match_hand_expansion() {
        let k1 = grs_kernel(1).unwrap();
        assert_eq!(k1.h00, vec![1.0, 1.0]);
        assert_eq!(k1.h01, vec![1.0, -1.0]);
        let k2 = grs_kernel(2).unwrap();
        assert_eq!(k2.h00, vec![1.0, 1.0, 1.0, -1.0]);
        assert_eq!(k2.h01, vec![1.0, 1.0, -1.0, 1.0]);
        assert!(matches!(grs_kernel(0), Err(Error::Argument(_))));
    }

    #[test]
    fn kernels_complementary_up_to_level_six() {
        for level in 1..=6 {
            let pair = grs_kernel(level).unwrap();
            assert_eq!(pair.len(), 1 << level);
            assert!(pair.h00.iter().chain(&pair.h01).all(|c| c.abs() == 1.0));
            let c = is_complementary(&pair).unwrap();
            assert!(c.complementary && c.residual <= 1e-12, "level {level}");
            assert!(complementary_on_circle(&pair) < 1e-9, "level {level}");
        }
    }

    #[test]
    fn grs4_raw_coefficients() {
        let spec = grs_wavelet(1).unwrap();
        assert_eq!(spec.name(), "GRS4");
        assert_eq!(spec.raw_h0(), &[1.0, 1.0, 1.0, -1.0]);
        assert_eq!(spec.raw_h1(), &[-1.0, -1.0, 1.0, -1.0]);
        assert_eq!(spec.normalization(), 0.5);
        let norm: f64 = spec.h0().iter().map(|c| c * c).sum();
        assert!((norm - 1.0).abs() < 1e-15);
        assert!(spec.highpass_flipped());
    }

    #[test]
    fn derive_highpass_cases() {
        assert_eq!(derive_highpass(&[1.0], 0).unwrap(), vec![-1.0]);
        assert!(derive_highpass(&[1.0, 1.0], 0).is_err());
        let h0 = daubechies4();
        let h1 = derive_highpass(&h0, 3).unwrap();
        assert!(h1.iter().sum::<f64>().abs() < 1e-12);
        let inner: f64 = h0.iter().zip(&h1).map(|(a, b)| a * b).sum();
        assert!(inner.abs() < 1e-12);
    }

    #[test]
    fn standard_tables() {
        for name in ["daubechies4", "daubechies8", "coiflet6"] {
            let spec = standard_wavelet(name).unwrap();
            assert_eq!(spec.class(), FilterClass::Orthogonal);
            assert!((spec.h0().iter().sum::<f64>() - SQRT_2).abs() < 1e-10, "{name}");
            assert!(verify_perfect_reconstruction(&spec) < 1e-10, "{name}");
            assert!(spec.is_regular(), "{name}");
            assert!(!spec.highpass_flipped());
        }
        let bior = standard_wavelet("Biorthogonal6.2").unwrap();
        assert_eq!(bior.class(), FilterClass::Biorthogonal);
        assert_eq!(bior.h0().len(), 6);
        assert_eq!(bior.h1().len(), 2);
        assert!(verify_perfect_reconstruction(&bior) < 1e-10);
        assert!(bior.is_regular());
        assert_eq!(standard_wavelet("grs4").unwrap(), grs_wavelet(1).unwrap());
        assert_eq!(standard_wavelet("GRS16").unwrap(), grs_wavelet(3).unwrap());
        match standard_wavelet("haar") {
            Err(Error::UnknownWavelet { valid, .. }) => assert!(valid.contains("coiflet6")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn orthogonal_synthesis_is_time_reverse() {
        for name in ["daubechies4", "daubechies8", "coiflet6", "grs4", "grs8"] {
            let spec = standard_wavelet(name).unwrap();
            let rev = |h: &[f64]| h.iter().rev().copied().collect::<Vec<_>>();
            for (g, h) in [(spec.g0(), spec.h0()), (spec.g1(), spec.h1())] {
                let r = rev(h);
                assert!(g.iter().zip(&r).all(|(a, b)| (a - b).abs() < 1e-12), "{name}");
            }
            assert_eq!(spec.delay(), spec.h0().len() - 1);
        }
    }

    #[test]
    fn degenerate_spec_fails_pr() {
        let h = vec![0.5; 4];
        let spec = WaveletSpec::from_filters(
            "dup",
            FilterClass::Orthogonal,
            h.clone(),
            h.clone(),
            h.clone(),
            h,
            3,
        );
        assert!(verify_perfect_reconstruction(&spec) >= 1.0);
    }

    #[test]
    fn grs_pr_residual() {
        assert!(verify_perfect_reconstruction(&grs_wavelet(1).unwrap()) <= 1e-12);
        for level in 2..=5 {
            assert!(verify_perfect_reconstruction(&grs_wavelet(level).unwrap()) <= 1e-10);
        }
    }

    #[test]
    fn frequency_response_cases() {
        assert_eq!(frequency_response(&[1.0], 5).unwrap(), vec![1.0; 5]);
        assert!(frequency_response(&[1.0], 1).is_err());
        let spec = grs_wavelet(1).unwrap();
        let h0 = frequency_response(spec.h0(), 65).unwrap();
        assert!((h0[0] - 1.0).abs() < 1e-12);
        let raw0 = frequency_response(spec.raw_h0(), 65).unwrap();
        let raw1 = frequency_response(spec.raw_h1(), 65).unwrap();
        for (a, b) in raw0.iter().zip(&raw1) {
            assert!((a * a + b * b - 8.0).abs() < 1e-10);
        }
    }

    #[test]
    fn regularity_marker() {
        // Odd GRS levels keep |H0(pi)| away from zero; even levels land on a
        // zero at pi, so only odd levels are non-regular in this sense.
        for level in [1, 3, 5] {
            let spec = grs_wavelet(level).unwrap();
            assert!(spec.lowpass_at_nyquist() >= 0.1, "level {level}");
        }
        assert!(grs_wavelet(2).unwrap().is_regular());
        assert!((grs_wavelet(1).unwrap().lowpass_at_nyquist() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn grs_spec_invariants() {
        for level in 1..=6 {
            let spec = grs_wavelet(level).unwrap();
            assert!(spec.raw_h0().iter().chain(spec.raw_h1()).all(|c| c.abs() == 1.0));
            let n0: f64 = spec.h0().iter().map(|c| c * c).sum();
            let n1: f64 = spec.h1().iter().map(|c| c * c).sum();
            let inner: f64 = spec.h0().iter().zip(spec.h1()).map(|(a, b)| a * b).sum();
            assert!((n0 - 1.0).abs() < 1e-12 && (n1 - 1.0).abs() < 1e-12);
            assert!(inner.abs() < 1e-12);
            assert!(spec.h1().iter().sum::<f64>() >= -1e-12);
        }
    }

    proptest! {
        #[test]
        fn power_complementary(name in prop::sample::select(vec!["daubechies4", "daubechies8", "coiflet6", "grs4", "grs8", "grs16"]), n in 2usize..200) {
            let spec = standard_wavelet(name).unwrap();
            let a = frequency_response(spec.h0(), n).unwrap();
            let b = frequency_response(spec.h1(), n).unwrap();
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x * x + y * y - 2.0).abs() < 1e-10);
            }
        }

        #[test]
        fn response_matches_cosine_expansion(h in prop::collection::vec(-2.0f64..2.0, 1..10), n in 2usize..40) {
            let got = frequency_response(&h, n).unwrap();
            for (i, g) in got.iter().enumerate() {
                let w = PI * i as f64 / (n - 1) as f64;
                let mut sq = 0.0;
                for (j, a) in h.iter().enumerate() {
                    for (k, b) in h.iter().enumerate() {
                        sq += a * b * (w * (j as f64 - k as f64)).cos();
                    }
                }
                prop_assert!((g * g - sq).abs() < 1e-9);
            }
        }
    }
}
