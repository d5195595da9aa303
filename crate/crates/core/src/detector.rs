//! Empirical pdfs of the correlation statistic, Neyman-Pearson thresholds,
//! decisions, the Lilliefors normality test, and Monte-Carlo calibration.

use std::collections::BTreeMap;
use std::fmt;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::attacks::AttackSpec;
use crate::csv_util::{field, fmt_f64};
use crate::dwt2d::{dwt2, SubbandMask, SubbandSet};
use crate::error::{Error, Result};
use crate::filterbank::WaveletSpec;
use crate::image_io::Image;
use crate::watermark::{
    correlation_or_zero, generate_watermark, stream_seed, CorrelationScope, EmbeddingParams, WatermarkEstimate,
};

/// Points in the uniform density grid over `[-1, 1]`.
pub const GRID_POINTS: usize = 2048;
/// Fewest samples accepted by [`build_empirical_pdf`].
pub const MIN_PDF_SAMPLES: usize = 30;

const GAMMA_RANGE: (f64, f64) = (1e-6, 1e6);
const GAMMA_ITERATIONS: usize = 60;
const PFA_TOLERANCE: f64 = 1e-4;
/// Kernel support in bandwidths beyond the nearest sample.
const KERNEL_REACH: f64 = 8.0;

fn grid() -> Vec<f64> {
    (0..GRID_POINTS)
        .map(|i| -1.0 + 2.0 * i as f64 / (GRID_POINTS - 1) as f64)
        .collect()
}

fn grid_step() -> f64 {
    2.0 / (GRID_POINTS - 1) as f64
}

/// A density sampled on a uniform grid over `[-1, 1]`.
///
/// The log density is kept alongside so likelihood ratios stay finite deep
/// in the tails where the density itself underflows.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalPdf {
    grid: Vec<f64>,
    density: Vec<f64>,
    log_density: Vec<f64>,
    bandwidth: f64,
    samples: usize,
}

impl EmpiricalPdf {
    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    pub fn density(&self) -> &[f64] {
        &self.density
    }

    pub fn log_density(&self) -> &[f64] {
        &self.log_density
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn sample_count(&self) -> usize {
        self.samples
    }

    /// Trapezoidal integral of the density.
    pub fn integral(&self) -> f64 {
        trapezoid(&self.density, grid_step())
    }

    pub fn mean(&self) -> f64 {
        let weighted: Vec<f64> = self.grid.iter().zip(&self.density).map(|(x, p)| x * p).collect();
        trapezoid(&weighted, grid_step())
    }

    /// Cumulative integral at every grid point.
    fn cdf(&self) -> Vec<f64> {
        let h = grid_step();
        let mut acc = 0.0;
        let mut out = Vec::with_capacity(self.density.len());
        out.push(0.0);
        for w in self.density.windows(2) {
            acc += 0.5 * h * (w[0] + w[1]);
            out.push(acc);
        }
        out
    }

    /// Smallest `x` with `CDF(x) >= p`, linear between grid points.
    pub fn quantile(&self, p: f64) -> f64 {
        let cdf = self.cdf();
        let total = *cdf.last().unwrap_or(&1.0);
        let target = p.clamp(0.0, 1.0) * total;
        let i = cdf.partition_point(|&c| c < target);
        if i == 0 {
            return self.grid[0];
        }
        if i >= cdf.len() {
            return *self.grid.last().unwrap();
        }
        let (c0, c1) = (cdf[i - 1], cdf[i]);
        let t = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
        self.grid[i - 1] + t * (self.grid[i] - self.grid[i - 1])
    }

    /// Log density at `x`, linear between grid points.
    pub fn log_density_at(&self, x: f64) -> f64 {
        interpolate(&self.log_density, x)
    }
}

fn trapezoid(v: &[f64], h: f64) -> f64 {
    v.windows(2).map(|w| 0.5 * h * (w[0] + w[1])).sum()
}

fn interpolate(values: &[f64], x: f64) -> f64 {
    let pos = (x.clamp(-1.0, 1.0) + 1.0) / grid_step();
    let i = (pos.floor() as usize).min(values.len() - 2);
    let t = pos - i as f64;
    values[i] * (1.0 - t) + values[i + 1] * t
}

fn mean_and_sd(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let var = samples.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Gaussian kernel density estimate on the fixed grid.
///
/// Bandwidth follows the normal reference rule `1.06 sd n^(-1/5)`, never
/// narrower than one grid cell so the grid resolves every kernel.
pub fn build_empirical_pdf(samples: &[f64]) -> Result<EmpiricalPdf> {
    if samples.len() < MIN_PDF_SAMPLES {
        return Err(Error::InsufficientData {
            needed: MIN_PDF_SAMPLES,
            got: samples.len(),
        });
    }
    if samples.iter().any(|v| !v.is_finite()) {
        return Err(Error::arg("pdf samples must be finite"));
    }
    if samples.iter().all(|&v| v == samples[0]) {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let (_, sd) = mean_and_sd(samples);
    let n = samples.len();
    let bandwidth = (1.06 * sd * (n as f64).powf(-0.2)).max(grid_step());
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);

    let grid = grid();
    let inv2h2 = 1.0 / (2.0 * bandwidth * bandwidth);
    let norm = -(n as f64 * bandwidth * (2.0 * std::f64::consts::PI).sqrt()).ln();
    let mut log_density: Vec<f64> = grid
        .iter()
        .map(|&x| {
            let i = sorted.partition_point(|&s| s < x);
            let nearest = [i.checked_sub(1), (i < n).then_some(i)]
                .into_iter()
                .flatten()
                .map(|j| (sorted[j] - x).abs())
                .fold(f64::INFINITY, f64::min);
            // Samples beyond this reach contribute below exp(-32) relative
            // to the nearest one.
            let reach = nearest + KERNEL_REACH * bandwidth;
            let lo = sorted.partition_point(|&s| s < x - reach);
            let hi = sorted.partition_point(|&s| s <= x + reach);
            let peak = -nearest * nearest * inv2h2;
            let sum: f64 = sorted[lo..hi]
                .iter()
                .map(|&s| (-(s - x) * (s - x) * inv2h2 - peak).exp())
                .sum();
            peak + sum.ln() + norm
        })
        .collect();

    let raw: Vec<f64> = log_density.iter().map(|l| l.exp()).collect();
    let mass = trapezoid(&raw, grid_step());
    if !(mass > 0.0) {
        return Err(Error::Degenerate("density has no mass on [-1, 1]".into()));
    }
    let shift = mass.ln();
    log_density.iter_mut().for_each(|l| *l -= shift);
    let density = log_density.iter().map(|l| l.exp()).collect();
    Ok(EmpiricalPdf {
        grid,
        density,
        log_density,
        bandwidth,
        samples: n,
    })
}

/// Result of [`np_threshold`].
#[derive(Debug, Clone, PartialEq)]
pub struct Threshold {
    pub gamma: f64,
    pub rho_threshold: f64,
    pub achieved_pfa: f64,
    /// Set when the false-alarm integral could not be brought within
    /// tolerance of the target.
    pub warning: Option<String>,
}

/// `integral over {x : log L(x) > log_gamma} of p0`, trapezoidal, with the
/// set boundary located inside each grid cell by linear interpolation.
fn false_alarm(log_lr: &[f64], p0: &[f64], log_gamma: f64) -> f64 {
    let h = grid_step();
    let mut total = 0.0;
    for i in 0..log_lr.len() - 1 {
        let (a, b) = (log_lr[i] - log_gamma, log_lr[i + 1] - log_gamma);
        let (pa, pb) = (p0[i], p0[i + 1]);
        if a > 0.0 && b > 0.0 {
            total += 0.5 * h * (pa + pb);
        } else if a > 0.0 || b > 0.0 {
            let t = a / (a - b);
            let pt = pa + t * (pb - pa);
            if a > 0.0 {
                total += 0.5 * h * t * (pa + pt);
            } else {
                total += 0.5 * h * (1.0 - t) * (pt + pb);
            }
        }
    }
    total
}

fn same_grid(a: &EmpiricalPdf, b: &EmpiricalPdf) -> bool {
    a.grid.len() == b.grid.len() && a.grid.first() == b.grid.first() && a.grid.last() == b.grid.last()
}

/// Likelihood-ratio threshold `gamma` whose false-alarm integral under the
/// null density equals `pfa`, found by bisection on `log gamma`.
///
/// The superlevel set of the ratio is taken on the grid as is, without
/// assuming the ratio is monotone. The `(1 - pfa)` quantile of the null
/// density is reported as the equivalent threshold on rho.
pub fn np_threshold(pdf_h0: &EmpiricalPdf, pdf_h1: &EmpiricalPdf, pfa: f64) -> Result<Threshold> {
    if !(pfa > 0.0 && pfa <= 0.5) {
        return Err(Error::arg(format!("pfa must be in (0, 0.5], got {pfa}")));
    }
    if !same_grid(pdf_h0, pdf_h1) {
        return Err(Error::arg("pdfs are sampled on different grids"));
    }
    let log_lr: Vec<f64> = pdf_h1
        .log_density
        .iter()
        .zip(&pdf_h0.log_density)
        .map(|(l1, l0)| l1 - l0)
        .collect();
    let fa = |lg: f64| false_alarm(&log_lr, &pdf_h0.density, lg);

    let (mut lo, mut hi) = (GAMMA_RANGE.0.ln(), GAMMA_RANGE.1.ln());
    let (fa_lo, fa_hi) = (fa(lo), fa(hi));
    let mut warning = None;
    let log_gamma = if fa_lo < pfa - PFA_TOLERANCE {
        warning = Some(format!(
            "false-alarm integral is at most {fa_lo:.6} over the gamma range; target {pfa} not reachable"
        ));
        lo
    } else if fa_hi > pfa + PFA_TOLERANCE {
        warning = Some(format!(
            "false-alarm integral is at least {fa_hi:.6} over the gamma range; target {pfa} not reachable"
        ));
        hi
    } else {
        let mut best = hi;
        for _ in 0..GAMMA_ITERATIONS {
            let mid = 0.5 * (lo + hi);
            let v = fa(mid);
            best = mid;
            if (v - pfa).abs() <= PFA_TOLERANCE {
                break;
            }
            if v > pfa {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        best
    };
    let achieved_pfa = fa(log_gamma);
    if warning.is_none() && (achieved_pfa - pfa).abs() > PFA_TOLERANCE {
        warning = Some(format!(
            "false-alarm integral jumps across the target; achieved {achieved_pfa:.6} for target {pfa}"
        ));
    }
    Ok(Threshold {
        gamma: log_gamma.exp(),
        rho_threshold: pdf_h0.quantile(1.0 - pfa),
        achieved_pfa,
        warning,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Hypothesis {
    /// Watermark absent.
    H0,
    /// Watermark present.
    H1,
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Hypothesis::H0 => "H0",
            Hypothesis::H1 => "H1",
        })
    }
}

/// What a calibrated detector was calibrated for.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelContext {
    pub wavelet: String,
    pub attack: AttackSpec,
    pub alpha: f64,
    pub mask: SubbandMask,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LillieforsResult {
    pub statistic: f64,
    pub critical_value: f64,
    pub reject_at_5pct: bool,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorModel {
    pub pdf_h0: EmpiricalPdf,
    pub pdf_h1: EmpiricalPdf,
    pub gamma: f64,
    pub rho_threshold: f64,
    pub target_pfa: f64,
    pub achieved_pfa: f64,
    pub context: ModelContext,
    pub h0_normality: Option<LillieforsResult>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub hypothesis: Hypothesis,
    pub log_likelihood_ratio: f64,
    /// `exp` of the log ratio; may overflow to infinity.
    pub likelihood_ratio: f64,
    /// The decision the rho threshold alone would make.
    pub by_rho_threshold: Hypothesis,
}

/// Decide H1 iff `L(rho) > gamma`; ties go to H0.
pub fn decide(rho: f64, model: &DetectorModel) -> Decision {
    let llr = model.pdf_h1.log_density_at(rho) - model.pdf_h0.log_density_at(rho);
    let pick = |above: bool| if above { Hypothesis::H1 } else { Hypothesis::H0 };
    Decision {
        hypothesis: pick(llr > model.gamma.ln()),
        log_likelihood_ratio: llr,
        likelihood_ratio: llr.exp(),
        by_rho_threshold: pick(rho > model.rho_threshold),
    }
}

/// Lilliefors 5% critical values for `n = 4..=20`.
const LILLIEFORS_SMALL: [f64; 17] = [
    0.381, 0.337, 0.319, 0.300, 0.285, 0.271, 0.258, 0.249, 0.242, 0.234, 0.227, 0.220, 0.213, 0.206, 0.200, 0.195,
    0.190,
];

/// 5% critical value of the Lilliefors statistic for sample size `n >= 4`.
pub fn lilliefors_critical_value(n: usize) -> f64 {
    match n {
        0..=3 => f64::NAN,
        4..=20 => LILLIEFORS_SMALL[n - 4],
        21..=25 => 0.190 + (0.180 - 0.190) * (n - 20) as f64 / 5.0,
        26..=30 => 0.180 + (0.161 - 0.180) * (n - 25) as f64 / 5.0,
        _ => 0.886 / (n as f64).sqrt(),
    }
}

/// Kolmogorov-Smirnov distance between the standardized sample and the
/// standard normal, with mean and variance estimated from the sample.
pub fn lilliefors(samples: &[f64]) -> Result<LillieforsResult> {
    let n = samples.len();
    if n < 5 {
        return Err(Error::InsufficientData { needed: 5, got: n });
    }
    let (mean, sd) = mean_and_sd(samples);
    if samples.iter().all(|&v| v == samples[0]) || !sd.is_finite() {
        return Err(Error::Degenerate("samples have zero variance".into()));
    }
    let normal = Normal::standard();
    let mut z: Vec<f64> = samples.iter().map(|v| (v - mean) / sd).collect();
    z.sort_by(f64::total_cmp);
    let nf = n as f64;
    let statistic = z
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let f = normal.cdf(v);
            ((i + 1) as f64 / nf - f).max(f - i as f64 / nf)
        })
        .fold(0.0, f64::max);
    let critical_value = lilliefors_critical_value(n);
    Ok(LillieforsResult {
        statistic,
        critical_value,
        reject_at_5pct: statistic > critical_value,
        samples: n,
    })
}

/// Monte-Carlo calibration settings.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub trials: usize,
    pub pfa: f64,
    pub seed: u64,
    /// Share of null trials that use a wrong watermark; the rest use none.
    pub wrong_watermark_fraction: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        CalibrationConfig {
            trials: 100,
            pfa: 0.01,
            seed: 1,
            wrong_watermark_fraction: 0.5,
        }
    }
}

/// Whether null trial `t` uses a wrong watermark rather than none, spreading
/// the wrong-watermark trials evenly at the requested fraction.
pub fn null_uses_wrong_watermark(t: usize, fraction: f64) -> bool {
    let f = fraction.clamp(0.0, 1.0);
    ((t + 1) as f64 * f).floor() > (t as f64 * f).floor()
}

/// One embed/attack/estimate run and its correlations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub rho_h1: f64,
    pub rho_h0: f64,
}

/// Everything about one image that stays fixed across trials.
pub struct PreparedImage {
    pub image: Image,
    pub subbands: SubbandSet,
    /// Estimate from the attacked, never-watermarked image.
    pub unmarked_estimate: WatermarkEstimate,
}

impl PreparedImage {
    pub fn new(image: Image, params: &EmbeddingParams, attack: &AttackSpec) -> Result<Self> {
        let subbands = dwt2(&image, params.spec())?;
        let attacked = attack.apply(&image)?;
        let unmarked_estimate = crate::watermark::estimate_from_subbands(&attacked, &subbands, params)?;
        Ok(PreparedImage {
            image,
            subbands,
            unmarked_estimate,
        })
    }
}

/// Seeds of the true and wrong messages for trial `t` under a master seed.
pub fn trial_seeds(master: u64, t: usize) -> (u64, u64) {
    (
        stream_seed(master, "watermark") ^ t as u64,
        stream_seed(master, "wrong-watermark") ^ t as u64,
    )
}

/// Run trial `t` on one image: the true-message correlation after attack, and
/// a null correlation of the kind selected for this trial.
pub fn run_trial(
    prep: &PreparedImage,
    params: &EmbeddingParams,
    attack: &AttackSpec,
    master_seed: u64,
    t: usize,
    wrong_fraction: f64,
) -> Result<TrialOutcome> {
    let (rows, cols) = prep.image.shape();
    let (seed, wrong_seed) = trial_seeds(master_seed, t);
    let wm = generate_watermark(seed, rows, cols, params.mask())?;
    let marked = crate::watermark::embed_with_subbands(&prep.subbands, &wm, params)?;
    let attacked = attack.apply(&marked)?;
    let est = crate::watermark::estimate_from_subbands(&attacked, &prep.subbands, params)?;
    let rho_h1 = correlation_or_zero(wm.message(), &est, CorrelationScope::Stacked)?;
    let rho_h0 = if null_uses_wrong_watermark(t, wrong_fraction) {
        let wrong = generate_watermark(wrong_seed, rows, cols, params.mask())?;
        correlation_or_zero(wrong.message(), &est, CorrelationScope::Stacked)?
    } else {
        correlation_or_zero(wm.message(), &prep.unmarked_estimate, CorrelationScope::Stacked)?
    };
    Ok(TrialOutcome { rho_h1, rho_h0 })
}

/// Run `f` for every index in order, in parallel when enabled; results keep
/// index order.
pub(crate) fn ordered_map<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        (0..n).into_par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        (0..n).map(f).collect()
    }
}

/// A calibrated model together with the raw samples it came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub model: DetectorModel,
    pub h0_samples: Vec<f64>,
    pub h1_samples: Vec<f64>,
}

/// Estimate both pdfs by simulation over `trials` x `images` and fit the
/// Neyman-Pearson threshold.
pub fn calibrate(
    spec: &WaveletSpec,
    attack: &AttackSpec,
    alpha: f64,
    mask: SubbandMask,
    images: &[Image],
    config: &CalibrationConfig,
) -> Result<Calibration> {
    if config.trials < MIN_PDF_SAMPLES {
        return Err(Error::arg(format!(
            "calibration needs at least {MIN_PDF_SAMPLES} trials, got {}",
            config.trials
        )));
    }
    if images.is_empty() {
        return Err(Error::arg("calibration needs at least one image"));
    }
    let params = EmbeddingParams::new(alpha, spec.clone(), mask)?;
    if !(alpha > 0.0) {
        return Err(Error::arg("calibration needs alpha > 0"));
    }
    let prepared = images
        .iter()
        .map(|img| PreparedImage::new(img.clone(), &params, attack))
        .collect::<Result<Vec<_>>>()?;
    let n_img = prepared.len();
    let outcomes = ordered_map(config.trials * n_img, |k| {
        let (t, i) = (k / n_img, k % n_img);
        run_trial(&prepared[i], &params, attack, config.seed, t, config.wrong_watermark_fraction)
    })?;
    let h1_samples: Vec<f64> = outcomes.iter().map(|o| o.rho_h1).collect();
    let h0_samples: Vec<f64> = outcomes.iter().map(|o| o.rho_h0).collect();

    let fit = |s: &[f64], which: &str| {
        build_empirical_pdf(s).map_err(|e| Error::Calibration(format!("{which} pdf: {e}")))
    };
    let pdf_h0 = fit(&h0_samples, "H0")?;
    let pdf_h1 = fit(&h1_samples, "H1")?;
    let threshold = np_threshold(&pdf_h0, &pdf_h1, config.pfa)?;
    let h0_normality = lilliefors(&h0_samples).ok();
    Ok(Calibration {
        model: DetectorModel {
            pdf_h0,
            pdf_h1,
            gamma: threshold.gamma,
            rho_threshold: threshold.rho_threshold,
            target_pfa: config.pfa,
            achieved_pfa: threshold.achieved_pfa,
            context: ModelContext {
                wavelet: spec.name().to_string(),
                attack: *attack,
                alpha,
                mask,
            },
            h0_normality,
            warning: threshold.warning,
        },
        h0_samples,
        h1_samples,
    })
}

impl DetectorModel {
    /// Serialize as sectioned CSV: `[metadata]`, `[threshold]`, `[grid]`.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("[metadata]\nkey,value\n");
        let mut kv = |k: &str, v: String| {
            s.push_str(&format!("{k},{}\n", field(&v)));
        };
        kv("wavelet", self.context.wavelet.clone());
        kv("attack", self.context.attack.to_string());
        kv("alpha", fmt_f64(self.context.alpha));
        kv("subbands", self.context.mask.to_string());
        kv("grid_points", self.pdf_h0.grid.len().to_string());
        kv("bandwidth_h0", fmt_f64(self.pdf_h0.bandwidth));
        kv("bandwidth_h1", fmt_f64(self.pdf_h1.bandwidth));
        kv("samples_h0", self.pdf_h0.samples.to_string());
        kv("samples_h1", self.pdf_h1.samples.to_string());
        if let Some(l) = &self.h0_normality {
            kv("lilliefors_statistic", fmt_f64(l.statistic));
            kv("lilliefors_critical_5pct", fmt_f64(l.critical_value));
            kv("lilliefors_reject_5pct", l.reject_at_5pct.to_string());
        }
        if let Some(w) = &self.warning {
            kv("warning", w.clone());
        }
        s.push_str("[threshold]\nkey,value\n");
        for (k, v) in [
            ("gamma", self.gamma),
            ("rho_threshold", self.rho_threshold),
            ("target_pfa", self.target_pfa),
            ("achieved_pfa", self.achieved_pfa),
        ] {
            s.push_str(&format!("{k},{}\n", fmt_f64(v)));
        }
        s.push_str("[grid]\nrho,density_h0,density_h1,log_density_h0,log_density_h1\n");
        for i in 0..self.pdf_h0.grid.len() {
            s.push_str(&format!(
                "{},{},{},{},{}\n",
                fmt_f64(self.pdf_h0.grid[i]),
                fmt_f64(self.pdf_h0.density[i]),
                fmt_f64(self.pdf_h1.density[i]),
                fmt_f64(self.pdf_h0.log_density[i]),
                fmt_f64(self.pdf_h1.log_density[i]),
            ));
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let mut section = "";
        let mut meta = BTreeMap::new();
        let mut thresholds = BTreeMap::new();
        let mut rows: Vec<[f64; 5]> = Vec::new();
        let mut offset = 0;
        for line in text.split_inclusive('\n') {
            let start = offset;
            offset += line.len();
            let line = line.trim_end_matches(['\n', '\r']);
            let err = |m: String| Error::Parse {
                offset: start,
                message: m,
            };
            if line.is_empty() {
                continue;
            }
            if line.starts_with('[') {
                section = match line {
                    "[metadata]" => "metadata",
                    "[threshold]" => "threshold",
                    "[grid]" => "grid",
                    other => return Err(err(format!("unknown section {other}"))),
                };
                continue;
            }
            if line == "key,value" || line.starts_with("rho,") {
                continue;
            }
            match section {
                "metadata" | "threshold" => {
                    let (k, v) = line.split_once(',').ok_or_else(|| err("expected key,value".into()))?;
                    let v = v.trim_matches('"').replace("\"\"", "\"");
                    if section == "metadata" {
                        meta.insert(k.to_string(), v);
                    } else {
                        let x = v.parse::<f64>().map_err(|_| err(format!("bad number for {k}")))?;
                        thresholds.insert(k.to_string(), x);
                    }
                }
                "grid" => {
                    let vals = line
                        .split(',')
                        .map(|f| f.parse::<f64>())
                        .collect::<std::result::Result<Vec<_>, _>>()
                        .map_err(|_| err("bad number in grid row".into()))?;
                    let row: [f64; 5] = vals.try_into().map_err(|_| err("grid rows need 5 columns".into()))?;
                    rows.push(row);
                }
                _ => return Err(err("data before any section".into())),
            }
        }
        let need_meta = |k: &str| {
            meta.get(k)
                .cloned()
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!("missing metadata '{k}'"),
                })
        };
        let need_num = |k: &str| -> Result<f64> {
            need_meta(k)?.parse().map_err(|_| Error::Parse {
                offset: 0,
                message: format!("bad number for '{k}'"),
            })
        };
        let threshold = |k: &str| {
            thresholds.get(k).copied().ok_or_else(|| Error::Parse {
                offset: 0,
                message: format!("missing threshold '{k}'"),
            })
        };
        if rows.len() != GRID_POINTS {
            return Err(Error::Parse {
                offset: text.len(),
                message: format!("expected {GRID_POINTS} grid rows, found {}", rows.len()),
            });
        }
        let make_pdf = |col: usize, bw: f64, n: f64| EmpiricalPdf {
            grid: rows.iter().map(|r| r[0]).collect(),
            density: rows.iter().map(|r| r[1 + col]).collect(),
            log_density: rows.iter().map(|r| r[3 + col]).collect(),
            bandwidth: bw,
            samples: n as usize,
        };
        let h0_normality = match meta.get("lilliefors_statistic") {
            Some(_) => Some(LillieforsResult {
                statistic: need_num("lilliefors_statistic")?,
                critical_value: need_num("lilliefors_critical_5pct")?,
                reject_at_5pct: need_meta("lilliefors_reject_5pct")? == "true",
                samples: need_num("samples_h0")? as usize,
            }),
            None => None,
        };
        Ok(DetectorModel {
            pdf_h0: make_pdf(0, need_num("bandwidth_h0")?, need_num("samples_h0")?),
            pdf_h1: make_pdf(1, need_num("bandwidth_h1")?, need_num("samples_h1")?),
            gamma: threshold("gamma")?,
            rho_threshold: threshold("rho_threshold")?,
            target_pfa: threshold("target_pfa")?,
            achieved_pfa: threshold("achieved_pfa")?,
            context: ModelContext {
                wavelet: need_meta("wavelet")?,
                attack: need_meta("attack")?.parse()?,
                alpha: need_num("alpha")?,
                mask: need_meta("subbands")?.parse()?,
            },
            h0_normality,
            warning: meta.get("warning").cloned(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal as NormalDist, Uniform};

    fn gaussian(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let d = NormalDist::new(mean, sd).unwrap();
        (0..n).map(|_| d.sample(&mut rng)).collect()
    }

    #[test]
    fn pdf_normalizes_and_needs_data() {
        let pdf = build_empirical_pdf(&gaussian(500, 0.0, 0.1, 1)).unwrap();
        assert!((pdf.integral() - 1.0).abs() < 1e-6);
        assert!(pdf.density().iter().all(|&p| p >= 0.0));
        assert!(matches!(
            build_empirical_pdf(&gaussian(29, 0.0, 0.1, 1)),
            Err(Error::InsufficientData { needed: 30, got: 29 })
        ));
        assert!(matches!(build_empirical_pdf(&[0.3; 40]), Err(Error::Degenerate(_))));
    }

    #[test]
    fn point_mass_with_jitter_concentrates() {
        let jitter = gaussian(200, 0.4, 1e-6, 2);
        let pdf = build_empirical_pdf(&jitter).unwrap();
        assert!((pdf.integral() - 1.0).abs() < 1e-6);
        assert_eq!(pdf.bandwidth(), grid_step());
        let peak = pdf.grid()[pdf.density().iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap().0];
        assert!((peak - 0.4).abs() <= grid_step());
    }

    #[test]
    fn pdf_mean_tracks_sample_mean() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = NormalDist::new(0.0, 1.0).unwrap();
        let samples: Vec<f64> = (0..10_000)
            .map(|_| loop {
                let v: f64 = d.sample(&mut rng);
                if v.abs() <= 1.0 {
                    break 0.1 * v;
                }
            })
            .collect();
        let mean = samples.iter().sum::<f64>() / samples.len() as f64;
        let pdf = build_empirical_pdf(&samples).unwrap();
        assert!((pdf.mean() - mean).abs() <= 0.01);
    }

    #[test]
    fn kde_matches_direct_sum() {
        // Oracle: plain O(n * grid) Gaussian kernel sum in linear space.
        let s = gaussian(300, 0.1, 0.2, 4);
        let pdf = build_empirical_pdf(&s).unwrap();
        let h = pdf.bandwidth();
        let direct: Vec<f64> = pdf
            .grid()
            .iter()
            .map(|&x| s.iter().map(|&v| (-(x - v).powi(2) / (2.0 * h * h)).exp()).sum::<f64>())
            .collect();
        let mass = trapezoid(&direct, grid_step());
        for (d, p) in direct.iter().zip(pdf.density()) {
            assert!((d / mass - p).abs() < 1e-9);
        }
    }

    #[test]
    fn gaussian_threshold_oracle() {
        let h0 = build_empirical_pdf(&gaussian(20_000, 0.0, 0.1, 5)).unwrap();
        let h1 = build_empirical_pdf(&gaussian(20_000, 0.6, 0.1, 6)).unwrap();
        let th = np_threshold(&h0, &h1, 0.01).unwrap();
        assert!(th.warning.is_none());
        assert!((th.achieved_pfa - 0.01).abs() <= 1e-4);
        assert!((th.rho_threshold - 0.2326).abs() <= 0.015, "{}", th.rho_threshold);
        assert!(th.gamma > 0.0 && th.gamma.is_finite());
        let median = np_threshold(&h0, &h1, 0.5).unwrap().rho_threshold;
        assert!(median.abs() < 0.01);
        assert!(np_threshold(&h0, &h1, 0.0).is_err());
        assert!(np_threshold(&h0, &h1, 0.6).is_err());
    }

    #[test]
    fn false_alarm_is_monotone_in_gamma() {
        let h0 = build_empirical_pdf(&gaussian(2000, 0.0, 0.1, 7)).unwrap();
        let h1 = build_empirical_pdf(&gaussian(2000, 0.3, 0.15, 8)).unwrap();
        let llr: Vec<f64> = h1.log_density().iter().zip(h0.log_density()).map(|(a, b)| a - b).collect();
        let mut prev = f64::INFINITY;
        for i in 0..200 {
            let lg = -14.0 + 28.0 * i as f64 / 199.0;
            let v = false_alarm(&llr, h0.density(), lg);
            assert!(v <= prev + 1e-15);
            prev = v;
        }
    }

    fn synthetic_model() -> DetectorModel {
        let h0s = gaussian(5000, 0.0, 0.1, 9);
        let h1s = gaussian(5000, 0.6, 0.1, 10);
        let pdf_h0 = build_empirical_pdf(&h0s).unwrap();
        let pdf_h1 = build_empirical_pdf(&h1s).unwrap();
        let th = np_threshold(&pdf_h0, &pdf_h1, 0.01).unwrap();
        DetectorModel {
            pdf_h0,
            pdf_h1,
            gamma: th.gamma,
            rho_threshold: th.rho_threshold,
            target_pfa: 0.01,
            achieved_pfa: th.achieved_pfa,
            context: ModelContext {
                wavelet: "GRS4".into(),
                attack: AttackSpec::Jpeg { quality: 10 },
                alpha: 3.0,
                mask: SubbandMask::ALL,
            },
            h0_normality: lilliefors(&h0s).ok(),
            warning: None,
        }
    }

    #[test]
    fn decisions() {
        let m = synthetic_model();
        assert_eq!(decide(1.0, &m).hypothesis, Hypothesis::H1);
        assert_eq!(decide(0.0, &m).hypothesis, Hypothesis::H0);
        assert_eq!(decide(-1.0, &m).hypothesis, Hypothesis::H0);
        assert_eq!(decide(m.rho_threshold, &m).by_rho_threshold, Hypothesis::H0);
        // Agreement of the two rules on the null sample.
        let h0s = gaussian(5000, 0.0, 0.1, 9);
        let disagree = h0s
            .iter()
            .filter(|&&r| {
                let d = decide(r, &m);
                d.hypothesis != d.by_rho_threshold
            })
            .count();
        assert!(disagree <= 10, "{disagree}");
    }

    #[test]
    fn exact_gamma_tie_is_h0() {
        let mut m = synthetic_model();
        m.pdf_h1 = m.pdf_h0.clone();
        m.gamma = 1.0;
        let d = decide(0.3, &m);
        assert_eq!(d.log_likelihood_ratio, 0.0);
        assert_eq!(d.hypothesis, Hypothesis::H0);
    }

    #[test]
    fn lilliefors_cases() {
        assert!(!lilliefors(&gaussian(10_000, 0.0, 1.0, 11)).unwrap().reject_at_5pct);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let u = Uniform::new(0.0, 1.0).unwrap();
        let uni: Vec<f64> = (0..10_000).map(|_| u.sample(&mut rng)).collect();
        assert!(lilliefors(&uni).unwrap().reject_at_5pct);
        assert!(matches!(lilliefors(&[2.0; 10]), Err(Error::Degenerate(_))));
        assert!(matches!(lilliefors(&[1.0, 2.0, 3.0, 4.0]), Err(Error::InsufficientData { .. })));
    }

    #[test]
    fn lilliefors_statistic_matches_brute_force() {
        // Oracle: sup over a fine grid of |F_n(x) - Phi(x)| approaches D from below.
        let s = gaussian(40, 0.0, 1.0, 13);
        let r = lilliefors(&s).unwrap();
        let (m, sd) = mean_and_sd(&s);
        let z: Vec<f64> = s.iter().map(|v| (v - m) / sd).collect();
        let normal = Normal::standard();
        let mut best: f64 = 0.0;
        for i in 0..=200_000 {
            let x = -5.0 + 10.0 * i as f64 / 200_000.0;
            let fn_x = z.iter().filter(|&&v| v <= x).count() as f64 / 40.0;
            best = best.max((fn_x - normal.cdf(x)).abs());
        }
        assert!(best <= r.statistic + 1e-12 && r.statistic - best < 1e-3);
    }

    #[test]
    fn critical_values() {
        assert_eq!(lilliefors_critical_value(4), 0.381);
        assert_eq!(lilliefors_critical_value(20), 0.190);
        assert_eq!(lilliefors_critical_value(30), 0.161);
        assert!((lilliefors_critical_value(500) - 0.886 / 500f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn null_mixture_rule() {
        let wrong: Vec<bool> = (0..6).map(|t| null_uses_wrong_watermark(t, 0.5)).collect();
        assert_eq!(wrong, vec![false, true, false, true, false, true]);
        assert!((0..10).all(|t| !null_uses_wrong_watermark(t, 0.0)));
        assert!((0..10).all(|t| null_uses_wrong_watermark(t, 1.0)));
        let n = (0..1000).filter(|&t| null_uses_wrong_watermark(t, 0.3)).count();
        assert_eq!(n, 300);
    }

    #[test]
    fn model_csv_round_trip() {
        let m = synthetic_model();
        let text = m.to_csv();
        assert!(text.starts_with("[metadata]\nkey,value\nwavelet,GRS4\n"));
        let back = DetectorModel::from_csv(&text).unwrap();
        assert_eq!(back, m);
        assert!(DetectorModel::from_csv("[bogus]\n").is_err());
        assert!(DetectorModel::from_csv("[metadata]\nkey,value\nwavelet,x\n").is_err());
    }
}
