//! Experiment orchestration: JSD tables, quality sweeps, calibration grids,
//! rate estimation and per-subband analysis, written as CSV reports.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use statrs::distribution::{ContinuousCDF, Normal};

use crate::attacks::AttackSpec;
use crate::csv_util::{field, fmt_f64};
use crate::detector::{
    calibrate, decide, ordered_map, trial_seeds, Calibration, CalibrationConfig,
    DetectorModel, Hypothesis, PreparedImage,
};
use crate::dwt2d::{Subband, SubbandMask};
use crate::error::{Error, Result};
use crate::filterbank::{standard_wavelet, WaveletSpec, STANDARD_WAVELETS};
use crate::fixtures::{fixture, FixtureKind, FIXTURE_SIZE};
use crate::image_io::{load_pgm, Image};
use crate::metrics::{jsd_table, uqi_windowed, JSD_LABELS};
use crate::watermark::{
    correlation_or_zero, embed, embed_with_subbands, estimate_from_subbands, generate_watermark, stream_seed,
    CorrelationScope, EmbeddingParams, DEFAULT_ALPHA,
};

/// Where an input image comes from.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    Path(PathBuf),
    Fixture(FixtureKind, char),
}

impl ImageSource {
    pub fn label(&self) -> String {
        match self {
            ImageSource::Path(p) => p.display().to_string(),
            ImageSource::Fixture(k, v) => format!("fixture:{}_{v}", k.name()),
        }
    }

    /// Identity used for the holdout overlap check.
    fn identity(&self) -> String {
        match self {
            ImageSource::Path(p) => fs::canonicalize(p).unwrap_or_else(|_| p.clone()).display().to_string(),
            other => other.label(),
        }
    }

    pub fn load(&self) -> Result<Image> {
        match self {
            ImageSource::Path(p) => {
                if !p.is_file() {
                    return Err(Error::Config(format!("image not found: {}", p.display())));
                }
                load_pgm(p)
            }
            ImageSource::Fixture(k, v) => fixture(*k, *v, FIXTURE_SIZE),
        }
    }
}

fn parse_fixture_name(name: &str) -> Option<(FixtureKind, char)> {
    let (kind, variant) = name.rsplit_once('_')?;
    let kind = FixtureKind::ALL.into_iter().find(|k| k.name() == kind)?;
    let mut chars = variant.chars();
    let v = chars.next()?;
    (chars.next().is_none() && v.is_ascii_lowercase()).then_some((kind, v))
}

/// Expand one list entry: `fixtures:a` (all kinds of a variant),
/// `fixture:gradient_a`, a directory of `.pgm` files, or a file path.
pub fn expand_image_entry(entry: &str) -> Result<Vec<ImageSource>> {
    if let Some(v) = entry.strip_prefix("fixtures:") {
        let mut chars = v.chars();
        return match (chars.next(), chars.next()) {
            (Some(c), None) if c.is_ascii_lowercase() => {
                Ok(FixtureKind::ALL.iter().map(|&k| ImageSource::Fixture(k, c)).collect())
            }
            _ => Err(Error::Config(format!("bad fixture variant in '{entry}'"))),
        };
    }
    if let Some(name) = entry.strip_prefix("fixture:") {
        let (k, v) = parse_fixture_name(name).ok_or_else(|| Error::Config(format!("unknown fixture '{name}'")))?;
        return Ok(vec![ImageSource::Fixture(k, v)]);
    }
    let path = PathBuf::from(entry);
    if path.is_dir() {
        let mut files: Vec<PathBuf> = fs::read_dir(&path)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("pgm")))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Config(format!("no .pgm files in {}", path.display())));
        }
        return Ok(files.into_iter().map(ImageSource::Path).collect());
    }
    Ok(vec![ImageSource::Path(path)])
}

fn expand_images(list: &[String]) -> Result<Vec<ImageSource>> {
    let mut out = Vec::new();
    for e in list {
        out.extend(expand_image_entry(e)?);
    }
    Ok(out)
}

/// Report stages in execution order.
pub const STAGES: [&str; 5] = ["jsd", "quality", "calibration", "rates", "subbands"];

/// Flat key/value experiment description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub calibration_images: Vec<String>,
    pub evaluation_images: Vec<String>,
    pub wavelets: Vec<String>,
    pub attacks: Vec<AttackSpec>,
    pub alpha: f64,
    pub subbands: SubbandMask,
    pub sweep_alphas: Vec<f64>,
    pub calibration_trials: usize,
    pub evaluation_trials: usize,
    pub subband_trials: usize,
    pub seed: u64,
    pub pfa: f64,
    pub wrong_watermark_fraction: f64,
    pub holdout: bool,
    pub uqi_stride: usize,
    pub stages: Vec<String>,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            calibration_images: vec!["fixtures:a".into()],
            evaluation_images: vec!["fixtures:b".into()],
            wavelets: STANDARD_WAVELETS.iter().map(|s| s.to_string()).collect(),
            attacks: vec![AttackSpec::Jpeg { quality: 10 }, AttackSpec::Jpeg2000 { bpp: 0.25 }],
            alpha: DEFAULT_ALPHA,
            subbands: SubbandMask::ALL,
            sweep_alphas: vec![0.5, 1.0, 2.0, 3.0, 3.5, 5.0],
            calibration_trials: 100,
            evaluation_trials: 1000,
            subband_trials: 100,
            seed: 1,
            pfa: 0.01,
            wrong_watermark_fraction: 0.5,
            holdout: false,
            uqi_stride: 1,
            stages: STAGES.iter().map(|s| s.to_string()).collect(),
            output_dir: PathBuf::from("results"),
        }
    }
}

fn list(v: &str) -> Vec<String> {
    v.split(',').map(str::trim).filter(|s| !s.is_empty()).map(String::from).collect()
}

fn num<T: FromStr>(key: &str, v: &str) -> Result<T> {
    v.trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value '{v}' for {key}")))
}

impl ExperimentConfig {
    /// Trial counts used for full-size runs.
    pub fn full_scale(mut self) -> Self {
        self.calibration_trials = 300;
        self.subband_trials = 300;
        self.evaluation_trials = 8000;
        self
    }

    /// Set one key from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key.trim() {
            "calibration_images" => self.calibration_images = list(value),
            "evaluation_images" => self.evaluation_images = list(value),
            "wavelets" => self.wavelets = list(value),
            "attacks" => {
                self.attacks = list(value)
                    .iter()
                    .map(|a| a.parse().map_err(|e: Error| Error::Config(e.to_string())))
                    .collect::<Result<_>>()?
            }
            "alpha" => self.alpha = num(key, value)?,
            "subbands" => self.subbands = value.parse().map_err(|e: Error| Error::Config(e.to_string()))?,
            "sweep_alphas" => {
                self.sweep_alphas = list(value).iter().map(|a| num(key, a)).collect::<Result<_>>()?
            }
            "calibration_trials" => self.calibration_trials = num(key, value)?,
            "evaluation_trials" => self.evaluation_trials = num(key, value)?,
            "subband_trials" => self.subband_trials = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "pfa" => self.pfa = num(key, value)?,
            "wrong_watermark_fraction" => self.wrong_watermark_fraction = num(key, value)?,
            "holdout" => self.holdout = num(key, value)?,
            "uqi_stride" => self.uqi_stride = num(key, value)?,
            "stages" => self.stages = list(value),
            "output_dir" => self.output_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown config key '{other}'"))),
        }
        Ok(())
    }

    /// Parse `key = value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = ExperimentConfig::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(k, v)?;
        }
        Ok(cfg)
    }

    /// Canonical text form; parses back to the same config.
    pub fn to_text(&self) -> String {
        let join = |v: &[String]| v.join(",");
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("calibration_images", join(&self.calibration_images));
        kv("evaluation_images", join(&self.evaluation_images));
        kv("wavelets", join(&self.wavelets));
        kv(
            "attacks",
            self.attacks.iter().map(|a| a.to_string()).collect::<Vec<_>>().join(","),
        );
        kv("alpha", fmt_f64(self.alpha));
        kv("subbands", self.subbands.to_string());
        kv(
            "sweep_alphas",
            self.sweep_alphas.iter().map(|a| fmt_f64(*a)).collect::<Vec<_>>().join(","),
        );
        kv("calibration_trials", self.calibration_trials.to_string());
        kv("evaluation_trials", self.evaluation_trials.to_string());
        kv("subband_trials", self.subband_trials.to_string());
        kv("seed", self.seed.to_string());
        kv("pfa", fmt_f64(self.pfa));
        kv("wrong_watermark_fraction", fmt_f64(self.wrong_watermark_fraction));
        kv("holdout", self.holdout.to_string());
        kv("uqi_stride", self.uqi_stride.to_string());
        kv("stages", join(&self.stages));
        kv("output_dir", self.output_dir.display().to_string());
        s
    }

    fn wants(&self, stage: &str) -> bool {
        self.stages.iter().any(|s| s == stage)
    }

    /// Check everything that can be checked without heavy computation.
    pub fn validate(&self) -> Result<()> {
        for s in &self.stages {
            if !STAGES.contains(&s.as_str()) {
                return Err(Error::Config(format!("unknown stage '{s}', valid: {}", STAGES.join(","))));
            }
        }
        if self.wavelets.is_empty() {
            return Err(Error::Config("no wavelets configured".into()));
        }
        for w in &self.wavelets {
            standard_wavelet(w)?;
        }
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if self.sweep_alphas.iter().any(|a| !(*a >= 0.0) || !a.is_finite())
            || self.sweep_alphas.windows(2).any(|w| w[1] < w[0])
        {
            return Err(Error::Config("sweep_alphas must be nonnegative and ascending".into()));
        }
        if !(self.pfa > 0.0 && self.pfa <= 0.5) {
            return Err(Error::Config(format!("pfa must be in (0, 0.5], got {}", self.pfa)));
        }
        if !(0.0..=1.0).contains(&self.wrong_watermark_fraction) {
            return Err(Error::Config("wrong_watermark_fraction must be in [0, 1]".into()));
        }
        if self.uqi_stride == 0 {
            return Err(Error::Config("uqi_stride must be positive".into()));
        }
        let needs_model = self.wants("calibration") || self.wants("rates");
        if needs_model && self.calibration_trials < crate::detector::MIN_PDF_SAMPLES {
            return Err(Error::Config(format!(
                "calibration_trials must be >= {}",
                crate::detector::MIN_PDF_SAMPLES
            )));
        }
        if (needs_model || self.wants("subbands")) && self.attacks.is_empty() {
            return Err(Error::Config("no attacks configured".into()));
        }
        if self.wants("rates") && self.evaluation_trials == 0 {
            return Err(Error::Config("evaluation_trials must be positive".into()));
        }
        if self.wants("subbands") && self.subband_trials == 0 {
            return Err(Error::Config("subband_trials must be positive".into()));
        }
        Ok(())
    }
}

/// Loaded, validated inputs for an experiment.
pub struct ImageSet {
    pub sources: Vec<ImageSource>,
    pub images: Vec<Image>,
}

impl ImageSet {
    pub fn load(entries: &[String]) -> Result<Self> {
        let sources = expand_images(entries)?;
        if sources.is_empty() {
            return Err(Error::Config("image list is empty".into()));
        }
        let images = sources.iter().map(|s| s.load()).collect::<Result<Vec<_>>>()?;
        Ok(ImageSet { sources, images })
    }

    pub fn from_images(images: Vec<(String, Image)>) -> Self {
        let (labels, images): (Vec<_>, Vec<_>) = images.into_iter().unzip();
        ImageSet {
            sources: labels.into_iter().map(|l| ImageSource::Path(PathBuf::from(l))).collect(),
            images,
        }
    }

    pub fn labels(&self) -> Vec<String> {
        self.sources.iter().map(ImageSource::label).collect()
    }
}

/// Fail if the two sets share any image.
pub fn check_disjoint(calibration: &[ImageSource], evaluation: &[ImageSource]) -> Result<()> {
    let a: BTreeSet<String> = calibration.iter().map(ImageSource::identity).collect();
    let shared: Vec<String> = evaluation
        .iter()
        .map(ImageSource::identity)
        .filter(|id| a.contains(id))
        .collect();
    if shared.is_empty() {
        Ok(())
    } else {
        Err(Error::Config(format!(
            "holdout set shares images with the calibration set: {}",
            shared.join(", ")
        )))
    }
}

fn wavelet_label(spec: &WaveletSpec) -> String {
    spec.name().to_string()
}

fn attack_slug(a: &AttackSpec) -> String {
    a.to_string().replace(':', "_")
}

/// File name of a calibrated model inside `models/`.
pub fn model_file_name(wavelet: &str, attack: &AttackSpec) -> String {
    format!("{}_{}.csv", wavelet.to_ascii_lowercase(), attack_slug(attack))
}

// ---- quality sweep ----

#[derive(Debug, Clone, PartialEq)]
pub struct QualityRow {
    pub wavelet: String,
    pub mask: SubbandMask,
    pub alpha: f64,
    pub mean_uqi: f64,
}

/// Mean UQI between each image and its 8-bit watermarked copy, for every
/// wavelet, mask in {all, high} and alpha.
pub fn quality_sweep(
    images: &[Image],
    wavelets: &[WaveletSpec],
    alphas: &[f64],
    seed: u64,
    uqi_stride: usize,
) -> Result<Vec<QualityRow>> {
    let mut cells = Vec::new();
    for spec in wavelets {
        for mask in [SubbandMask::ALL, SubbandMask::HIGH] {
            for &alpha in alphas {
                cells.push((spec, mask, alpha));
            }
        }
    }
    let wm_seed = stream_seed(seed, "quality");
    ordered_map(cells.len(), |k| {
        let (spec, mask, alpha) = cells[k];
        let params = EmbeddingParams::new(alpha, spec.clone(), mask)?;
        let mut total = 0.0;
        for img in images {
            let (r, c) = img.shape();
            let wm = generate_watermark(wm_seed, r, c, mask)?;
            let marked = embed(img, &wm, &params)?.quantized();
            total += uqi_windowed(img.samples(), marked.samples(), 8, uqi_stride)?.value;
        }
        Ok(QualityRow {
            wavelet: wavelet_label(spec),
            mask,
            alpha,
            mean_uqi: total / images.len() as f64,
        })
    })
}

pub fn quality_csv(rows: &[QualityRow]) -> String {
    let mut s = String::from("wavelet,subbands,alpha,mean_uqi\n");
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            r.wavelet,
            field(&r.mask.to_string()),
            fmt_f64(r.alpha),
            fmt_f64(r.mean_uqi)
        );
    }
    s
}

// ---- JSD tables ----

pub fn jsd_csv(labels: &[String], images: &[Image], wavelets: &[WaveletSpec]) -> Result<String> {
    let mut s = String::from("image,wavelet,from,to,jsd\n");
    for (label, img) in labels.iter().zip(images) {
        for spec in wavelets {
            let t = jsd_table(img, spec)?;
            for i in 0..JSD_LABELS.len() {
                for j in 0..JSD_LABELS.len() {
                    let _ = writeln!(
                        s,
                        "{},{},{},{},{}",
                        field(label),
                        spec.name(),
                        JSD_LABELS[i],
                        JSD_LABELS[j],
                        fmt_f64(t.get(i, j))
                    );
                }
            }
        }
    }
    Ok(s)
}

// ---- calibration ----

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// H1-minus-H0 mean gap in units of the pooled standard error.
pub fn separation_in_se(h1: &[f64], h0: &[f64]) -> f64 {
    let (m1, s1) = mean_sd(h1);
    let (m0, s0) = mean_sd(h0);
    let se = (s1 * s1 / h1.len() as f64 + s0 * s0 / h0.len() as f64).sqrt();
    (m1 - m0) / se
}

pub fn calibration_csv(cells: &[Calibration], image_count: usize) -> String {
    let mut s = String::from(
        "wavelet,attack,kind,strength,trials,images,h1_mean,h1_sd,h0_mean,h0_sd,separation_se,gamma,\
         rho_threshold,target_pfa,achieved_pfa,lilliefors_statistic,lilliefors_critical_5pct,\
         lilliefors_reject_5pct,warning\n",
    );
    for c in cells {
        let m = &c.model;
        let (h1m, h1s) = mean_sd(&c.h1_samples);
        let (h0m, h0s) = mean_sd(&c.h0_samples);
        let (ls, lc, lr) = match &m.h0_normality {
            Some(l) => (fmt_f64(l.statistic), fmt_f64(l.critical_value), l.reject_at_5pct.to_string()),
            None => (String::new(), String::new(), String::new()),
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.context.wavelet,
            m.context.attack,
            m.context.attack.kind(),
            fmt_f64(m.context.attack.strength()),
            c.h1_samples.len() / image_count.max(1),
            image_count,
            fmt_f64(h1m),
            fmt_f64(h1s),
            fmt_f64(h0m),
            fmt_f64(h0s),
            fmt_f64(separation_in_se(&c.h1_samples, &c.h0_samples)),
            fmt_f64(m.gamma),
            fmt_f64(m.rho_threshold),
            fmt_f64(m.target_pfa),
            fmt_f64(m.achieved_pfa),
            ls,
            lc,
            lr,
            field(m.warning.as_deref().unwrap_or("")),
        );
    }
    s
}

// ---- rate estimation ----

/// A relative frequency with its Wilson 95% interval.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Proportion {
    pub successes: usize,
    pub trials: usize,
    pub estimate: f64,
    pub lower: f64,
    pub upper: f64,
}

pub fn wilson_interval(successes: usize, trials: usize) -> Proportion {
    if trials == 0 {
        return Proportion {
            successes,
            trials,
            estimate: f64::NAN,
            lower: 0.0,
            upper: 1.0,
        };
    }
    let z = Normal::standard().inverse_cdf(0.975);
    let n = trials as f64;
    let p = successes as f64 / n;
    let denom = 1.0 + z * z / n;
    let center = (p + z * z / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z * z / (4.0 * n * n)).sqrt() / denom;
    Proportion {
        successes,
        trials,
        estimate: p,
        lower: (center - half).max(0.0),
        upper: (center + half).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RateEstimate {
    pub wavelet: String,
    pub attack: AttackSpec,
    pub detection: Proportion,
    pub false_alarm: Proportion,
}

/// Run watermark-present and watermark-absent trials on `images` (trial `t`
/// uses image `t mod n`) and count LR decisions for H1.
///
/// The attack need not be the one the model was calibrated for, which allows
/// mismatch studies; the wavelet must match.
pub fn estimate_rates(
    model: &DetectorModel,
    spec: &WaveletSpec,
    attack: &AttackSpec,
    images: &[Image],
    trials: usize,
    seed: u64,
    wrong_fraction: f64,
) -> Result<RateEstimate> {
    if images.is_empty() {
        return Err(Error::arg("rate estimation needs at least one image"));
    }
    if model.context.wavelet != spec.name() {
        return Err(Error::arg(format!(
            "model was calibrated for {}, not {}",
            model.context.wavelet,
            spec.name()
        )));
    }
    let params = EmbeddingParams::new(model.context.alpha, spec.clone(), model.context.mask)?;
    let prepared = images
        .iter()
        .map(|img| PreparedImage::new(img.clone(), &params, attack))
        .collect::<Result<Vec<_>>>()?;
    let outcomes = ordered_map(trials, |t| {
        let o = crate::detector::run_trial(&prepared[t % prepared.len()], &params, attack, seed, t, wrong_fraction)?;
        Ok((
            decide(o.rho_h1, model).hypothesis == Hypothesis::H1,
            decide(o.rho_h0, model).hypothesis == Hypothesis::H1,
        ))
    })?;
    let detections = outcomes.iter().filter(|o| o.0).count();
    let false_alarms = outcomes.iter().filter(|o| o.1).count();
    Ok(RateEstimate {
        wavelet: spec.name().to_string(),
        attack: *attack,
        detection: wilson_interval(detections, trials),
        false_alarm: wilson_interval(false_alarms, trials),
    })
}

pub fn rates_csv(rows: &[RateEstimate]) -> String {
    let mut s = String::from(
        "wavelet,attack,trials,detections,p_d,p_d_lower,p_d_upper,false_alarms,p_fa,p_fa_lower,p_fa_upper\n",
    );
    for r in rows {
        let (d, f) = (&r.detection, &r.false_alarm);
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            r.wavelet,
            r.attack,
            d.trials,
            d.successes,
            fmt_f64(d.estimate),
            fmt_f64(d.lower),
            fmt_f64(d.upper),
            f.successes,
            fmt_f64(f.estimate),
            fmt_f64(f.lower),
            fmt_f64(f.upper)
        );
    }
    s
}

// ---- per-subband analysis ----

/// Per-subband correlations of every trial in one (wavelet, attack) cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SubbandSamples {
    pub wavelet: String,
    pub attack: AttackSpec,
    /// `(trial, image index, [LL, LH, HL, HH])`.
    pub rows: Vec<(usize, usize, [f64; 4])>,
}

impl SubbandSamples {
    pub fn values(&self, band: Subband) -> Vec<f64> {
        let i = Subband::ALL.iter().position(|b| *b == band).unwrap_or(0);
        self.rows.iter().map(|r| r.2[i]).collect()
    }

    pub fn mean(&self, band: Subband) -> f64 {
        let v = self.values(band);
        v.iter().sum::<f64>() / v.len() as f64
    }

    /// Population variance of the four per-subband means.
    pub fn variance_of_means(&self) -> f64 {
        let means: Vec<f64> = Subband::ALL.iter().map(|&b| self.mean(b)).collect();
        let m = means.iter().sum::<f64>() / 4.0;
        means.iter().map(|x| (x - m).powi(2)).sum::<f64>() / 4.0
    }
}

/// Embed in all four subbands and correlate each subband separately.
pub fn subband_samples(
    spec: &WaveletSpec,
    attack: &AttackSpec,
    alpha: f64,
    images: &[Image],
    trials: usize,
    seed: u64,
) -> Result<SubbandSamples> {
    let params = EmbeddingParams::new(alpha, spec.clone(), SubbandMask::ALL)?;
    let prepared = images
        .iter()
        .map(|img| crate::dwt2d::dwt2(img, spec))
        .collect::<Result<Vec<_>>>()?;
    let n_img = images.len();
    let rows = ordered_map(trials * n_img, |k| {
        let (t, i) = (k / n_img, k % n_img);
        let (r, c) = images[i].shape();
        let wm = generate_watermark(trial_seeds(seed, t).0, r, c, SubbandMask::ALL)?;
        let marked = embed_with_subbands(&prepared[i], &wm, &params)?;
        let est = estimate_from_subbands(&attack.apply(&marked)?, &prepared[i], &params)?;
        let mut rho = [0.0; 4];
        for (slot, band) in rho.iter_mut().zip(Subband::ALL) {
            *slot = correlation_or_zero(wm.message(), &est, CorrelationScope::Single(band))?;
        }
        Ok((t, i, rho))
    })?;
    Ok(SubbandSamples {
        wavelet: spec.name().to_string(),
        attack: *attack,
        rows,
    })
}

/// Box-plot summary: quartiles by linear interpolation between order
/// statistics and whiskers at the most extreme points within 1.5 IQR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoxSummary {
    pub n: usize,
    pub mean: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: usize,
}

pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn box_summary(values: &[f64]) -> Result<BoxSummary> {
    if values.is_empty() {
        return Err(Error::InsufficientData { needed: 1, got: 0 });
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile_sorted(&v, 0.25), quantile_sorted(&v, 0.5), quantile_sorted(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
    Ok(BoxSummary {
        n: v.len(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
        q1,
        median,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers: v.len() - inside.len(),
    })
}

pub fn subband_report_csv(cells: &[SubbandSamples], labels: &[String]) -> String {
    let mut s = String::from("wavelet,attack,trial,image,subband,rho\n");
    for c in cells {
        for (t, i, rho) in &c.rows {
            for (band, r) in Subband::ALL.iter().zip(rho) {
                let _ = writeln!(s, "{},{},{t},{},{band},{}", c.wavelet, c.attack, field(&labels[*i]), fmt_f64(*r));
            }
        }
    }
    s
}

pub fn subband_summary_csv(cells: &[SubbandSamples]) -> Result<String> {
    let mut s = String::from(
        "wavelet,attack,subband,n,mean,q1,median,q3,whisker_low,whisker_high,outliers,variance_of_means\n",
    );
    for c in cells {
        let vom = c.variance_of_means();
        for band in Subband::ALL {
            let b = box_summary(&c.values(band))?;
            let _ = writeln!(
                s,
                "{},{},{band},{},{},{},{},{},{},{},{},{}",
                c.wavelet,
                c.attack,
                b.n,
                fmt_f64(b.mean),
                fmt_f64(b.q1),
                fmt_f64(b.median),
                fmt_f64(b.q3),
                fmt_f64(b.whisker_low),
                fmt_f64(b.whisker_high),
                b.outliers,
                fmt_f64(vom)
            );
        }
    }
    Ok(s)
}

// ---- full experiment ----

/// What [`run_experiment`] wrote.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentOutput {
    pub files: Vec<PathBuf>,
    pub stage_seconds: Vec<(String, f64)>,
}

fn stage<T>(name: &str, f: impl FnOnce() -> Result<T>) -> Result<T> {
    f().map_err(|e| Error::Stage {
        stage: name.to_string(),
        source: Box::new(e),
    })
}

fn write_file(dir: &Path, name: &str, text: &str, files: &mut Vec<PathBuf>) -> Result<()> {
    let path = dir.join(name);
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    fs::write(&path, text)?;
    files.push(path);
    Ok(())
}

/// Run the configured stages and write the report bundle to `output_dir`.
///
/// Inputs are validated and loaded before any stage starts. Each report is
/// written as soon as its stage finishes, so a failing stage leaves earlier
/// reports in place.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ExperimentOutput> {
    config.validate()?;
    let wavelets = config
        .wavelets
        .iter()
        .map(|w| standard_wavelet(w))
        .collect::<Result<Vec<_>>>()?;
    let calib = ImageSet::load(&config.calibration_images)?;
    let needs_eval = config.wants("rates");
    let eval = if needs_eval {
        let e = ImageSet::load(&config.evaluation_images)?;
        if config.holdout {
            check_disjoint(&calib.sources, &e.sources)?;
        }
        Some(e)
    } else {
        None
    };
    for img in calib.images.iter().chain(eval.iter().flat_map(|e| e.images.iter())) {
        if let Some(w) = wavelets.iter().find(|w| img.rows().min(img.cols()) < w.max_len()) {
            return Err(Error::Config(format!(
                "a {}x{} image is smaller than the {} filter length",
                img.rows(),
                img.cols(),
                w.name()
            )));
        }
    }

    let out = &config.output_dir;
    fs::create_dir_all(out)?;
    let mut files = Vec::new();
    let mut times = Vec::new();
    let labels = calib.labels();

    if config.wants("jsd") {
        let t = Instant::now();
        let text = stage("jsd", || jsd_csv(&labels, &calib.images, &wavelets))?;
        write_file(out, "jsd_tables.csv", &text, &mut files)?;
        times.push(("jsd".to_string(), t.elapsed().as_secs_f64()));
    }
    if config.wants("quality") {
        let t = Instant::now();
        let rows = stage("quality", || {
            quality_sweep(&calib.images, &wavelets, &config.sweep_alphas, config.seed, config.uqi_stride)
        })?;
        write_file(out, "quality_sweep.csv", &quality_csv(&rows), &mut files)?;
        times.push(("quality".to_string(), t.elapsed().as_secs_f64()));
    }
    let mut models = Vec::new();
    if config.wants("calibration") || config.wants("rates") {
        let t = Instant::now();
        let cal_config = CalibrationConfig {
            trials: config.calibration_trials,
            pfa: config.pfa,
            seed: stream_seed(config.seed, "calibration"),
            wrong_watermark_fraction: config.wrong_watermark_fraction,
        };
        let cells = stage("calibration", || {
            let mut cells = Vec::new();
            for spec in &wavelets {
                for attack in &config.attacks {
                    cells.push(calibrate(spec, attack, config.alpha, config.subbands, &calib.images, &cal_config)?);
                }
            }
            Ok(cells)
        })?;
        write_file(out, "calibration.csv", &calibration_csv(&cells, calib.images.len()), &mut files)?;
        for c in &cells {
            let name = format!("models/{}", model_file_name(&c.model.context.wavelet, &c.model.context.attack));
            write_file(out, &name, &c.model.to_csv(), &mut files)?;
        }
        models = cells.into_iter().map(|c| c.model).collect();
        times.push(("calibration".to_string(), t.elapsed().as_secs_f64()));
    }
    if let Some(eval) = &eval {
        let t = Instant::now();
        let rows = stage("rates", || {
            let mut rows = Vec::new();
            let mut it = models.iter();
            for spec in &wavelets {
                for attack in &config.attacks {
                    let model = it.next().ok_or_else(|| Error::Config("missing model".into()))?;
                    rows.push(estimate_rates(
                        model,
                        spec,
                        attack,
                        &eval.images,
                        config.evaluation_trials,
                        stream_seed(config.seed, "rates"),
                        config.wrong_watermark_fraction,
                    )?);
                }
            }
            Ok(rows)
        })?;
        write_file(out, "rates.csv", &rates_csv(&rows), &mut files)?;
        times.push(("rates".to_string(), t.elapsed().as_secs_f64()));
    }
    if config.wants("subbands") {
        let t = Instant::now();
        let cells = stage("subbands", || {
            let mut cells = Vec::new();
            for spec in &wavelets {
                for attack in &config.attacks {
                    cells.push(subband_samples(
                        spec,
                        attack,
                        config.alpha,
                        &calib.images,
                        config.subband_trials,
                        stream_seed(config.seed, "subbands"),
                    )?);
                }
            }
            Ok(cells)
        })?;
        write_file(out, "subband_report.csv", &subband_report_csv(&cells, &labels), &mut files)?;
        let summary = stage("subbands", || subband_summary_csv(&cells))?;
        write_file(out, "subband_summary.csv", &summary, &mut files)?;
        times.push(("subbands".to_string(), t.elapsed().as_secs_f64()));
    }

    let mut manifest = String::new();
    let _ = writeln!(manifest, "# grswm experiment manifest");
    let _ = writeln!(manifest, "version = {}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(manifest, "parallel = {}", cfg!(feature = "parallel"));
    let _ = writeln!(manifest, "\n[config]");
    manifest.push_str(&config.to_text());
    let _ = writeln!(manifest, "\n[seeds]");
    for tag in ["quality", "calibration", "rates", "subbands"] {
        let _ = writeln!(manifest, "{tag} = {}", stream_seed(config.seed, tag));
    }
    let _ = writeln!(manifest, "\n[images]");
    for l in &labels {
        let _ = writeln!(manifest, "calibration = {l}");
    }
    if let Some(e) = &eval {
        for l in e.labels() {
            let _ = writeln!(manifest, "evaluation = {l}");
        }
    }
    let _ = writeln!(manifest, "\n[outputs]");
    for f in &files {
        let rel = f.strip_prefix(out).unwrap_or(f);
        let _ = writeln!(manifest, "{}", rel.display());
    }
    let _ = writeln!(manifest, "\n[wall_time_seconds]");
    for (s, secs) in &times {
        let _ = writeln!(manifest, "{s} = {secs:.3}");
    }
    write_file(out, "manifest.txt", &manifest, &mut files)?;
    Ok(ExperimentOutput {
        files,
        stage_seconds: times,
    })
}

/// Run `f` on a pool of `jobs` threads, or the global pool when `None`.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    #[cfg(feature = "parallel")]
    {
        if let Some(n) = jobs {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| Error::Config(format!("cannot build thread pool: {e}")))?;
            return Ok(pool.install(f));
        }
    }
    #[cfg(not(feature = "parallel"))]
    let _ = jobs;
    Ok(f())
}
