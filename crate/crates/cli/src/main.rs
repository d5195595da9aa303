use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};

use clap::{Args, Parser, Subcommand, ValueEnum};

use grswm::attacks::AttackSpec;
use grswm::csv_util::{field, fmt_f64};
use grswm::detector::{calibrate, decide, CalibrationConfig, DetectorModel};
use grswm::dwt2d::{dwt2, write_sidecar, Subband, SubbandMask};
use grswm::filterbank::{
    grs_kernel, is_complementary, standard_wavelet, verify_perfect_reconstruction, WaveletSpec, STANDARD_WAVELETS,
};
use grswm::fixtures::{fixture, fixture_name, FixtureKind, CALIBRATION_VARIANT, FIXTURE_SIZE, HOLDOUT_VARIANT};
use grswm::harness::{check_disjoint, estimate_rates, rates_csv, run_experiment, with_jobs, ExperimentConfig, ImageSet};
use grswm::image_io::{load_pgm, rescale_for_view, save_pgm, Image};
use grswm::metrics::{jsd_table, uqi_windowed, JSD_LABELS};
use grswm::watermark::{
    correlation, embed, estimate_watermark, generate_watermark, CorrelationScope, EmbeddingParams, DEFAULT_ALPHA,
};
use grswm::{Error, Result};

#[derive(Parser)]
#[command(name = "grswm", version, about = "Wavelet-domain watermarking with GRS and classical filter banks")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print filter coefficients and reconstruction residuals as CSV.
    DumpFilters {
        /// Limit to these wavelets (default: all shipped ones).
        #[arg(long = "wavelet")]
        wavelets: Vec<String>,
    },
    /// Single-level 2-D transform: four viewable PGMs plus an exact sidecar.
    Dwt {
        #[arg(long, default_value = "grs4")]
        wavelet: String,
        input: PathBuf,
        /// Output directory (default: next to the input).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Embed a seeded ±1 watermark.
    Embed {
        #[command(flatten)]
        wm: WatermarkArgs,
        input: PathBuf,
        output: PathBuf,
    },
    /// Apply a compression attack.
    Attack {
        #[command(flatten)]
        attack: AttackArgs,
        /// Shell command with `{in}` and `{out}` placeholders for PGM files,
        /// used instead of the built-in codecs.
        #[arg(long)]
        external_cmd: Option<String>,
        input: PathBuf,
        output: PathBuf,
    },
    /// Correlate a suspect image with the watermark, optionally deciding with a model.
    Detect {
        #[command(flatten)]
        wm: WatermarkArgs,
        #[arg(long)]
        original: PathBuf,
        #[arg(long)]
        suspect: PathBuf,
        /// Calibrated detector model CSV.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Image quality and divergence measures.
    Metrics {
        /// Universal quality index between two images.
        #[arg(long, num_args = 2, value_names = ["A", "B"])]
        uqi: Option<Vec<PathBuf>>,
        /// Window stride for --uqi.
        #[arg(long, default_value_t = 1)]
        stride: usize,
        /// JSD table between an image and its subbands.
        #[arg(long)]
        jsd_table: Option<PathBuf>,
        #[arg(long, default_value = "grs4")]
        wavelet: String,
    },
    /// Calibrate a Neyman-Pearson detector by simulation.
    Calibrate {
        #[arg(long, default_value = "grs4")]
        wavelet: String,
        #[command(flatten)]
        attack: AttackArgs,
        #[arg(long, default_value_t = DEFAULT_ALPHA)]
        alpha: f64,
        #[arg(long, default_value = "all")]
        subbands: String,
        #[arg(long, default_value_t = 300)]
        trials: usize,
        #[arg(long, default_value_t = 0.01)]
        pfa: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Share of null trials using a wrong watermark instead of none.
        #[arg(long, default_value_t = 0.5)]
        wrong_fraction: f64,
        /// Image directories, files, `fixtures:a` or `fixture:NAME`, comma separated.
        #[arg(long, default_value = "fixtures:a")]
        images: String,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Estimate detection and false-alarm rates on held-out images.
    Rates {
        #[arg(long)]
        model: PathBuf,
        /// Attack used for evaluation (default: the model's own).
        #[arg(long)]
        attack: Option<String>,
        #[arg(long, default_value = "fixtures:b")]
        images: String,
        /// Calibration images, checked for overlap with --holdout.
        #[arg(long)]
        calibration_images: Option<String>,
        #[arg(long)]
        holdout: bool,
        #[arg(long, default_value_t = 1000)]
        trials: usize,
        #[arg(long, default_value_t = 2)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        wrong_fraction: f64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Run a full experiment grid from a config file.
    Experiment {
        /// Flat `key = value` config; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override a config key, e.g. `--set seed=7`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Require calibration and evaluation images to be disjoint.
        #[arg(long)]
        holdout: bool,
        /// Full-size trial counts (300 calibration, 8000 evaluation).
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Write the synthetic fixture images as PGM files.
    Fixtures {
        #[arg(long, default_value = "fixtures")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = FIXTURE_SIZE)]
        size: usize,
    },
}

#[derive(Args)]
struct WatermarkArgs {
    #[arg(long, default_value = "grs4")]
    wavelet: String,
    #[arg(long, default_value_t = DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// `all`, `high`, or a list such as `ll,hh`.
    #[arg(long, default_value = "all")]
    subbands: String,
}

impl WatermarkArgs {
    fn params(&self) -> Result<EmbeddingParams> {
        EmbeddingParams::new(self.alpha, standard_wavelet(&self.wavelet)?, self.subbands.parse()?)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum AttackKind {
    None,
    Jpeg,
    Jpeg2000,
}

#[derive(Args)]
struct AttackArgs {
    #[arg(long, alias = "attack", value_enum, default_value = "jpeg")]
    kind: AttackKind,
    /// JPEG quality factor, 1..=100.
    #[arg(long)]
    q: Option<u32>,
    /// JPEG2000 target rate in bits per pixel.
    #[arg(long)]
    bpp: Option<f64>,
}

impl AttackArgs {
    fn spec(&self) -> Result<AttackSpec> {
        match self.kind {
            AttackKind::None => Ok(AttackSpec::None),
            AttackKind::Jpeg => AttackSpec::jpeg(
                self.q
                    .ok_or_else(|| Error::Argument("--q is required for jpeg".into()))?,
            ),
            AttackKind::Jpeg2000 => AttackSpec::jpeg2000(
                self.bpp
                    .ok_or_else(|| Error::Argument("--bpp is required for jpeg2000".into()))?,
            ),
        }
    }
}

fn emit(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => {
            if let Some(parent) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                fs::create_dir_all(parent)?;
            }
            fs::write(p, text)?;
        }
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn image_entries(list: &str) -> Vec<String> {
    list.split(',').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect()
}

fn dump_filters(names: &[String]) -> Result<String> {
    let names: Vec<String> = if names.is_empty() {
        STANDARD_WAVELETS.iter().map(|s| s.to_string()).collect()
    } else {
        names.to_vec()
    };
    let mut s = String::from("wavelet,class,filter,index,value\n");
    for name in &names {
        let w = standard_wavelet(name)?;
        let mut row = |filter: &str, index: usize, value: f64| {
            s.push_str(&format!("{},{},{filter},{index},{}\n", w.name(), w.class(), fmt_f64(value)));
        };
        for (filter, coeffs) in [
            ("raw_h0", w.raw_h0()),
            ("raw_h1", w.raw_h1()),
            ("h0", w.h0()),
            ("h1", w.h1()),
            ("g0", w.g0()),
            ("g1", w.g1()),
        ] {
            for (i, c) in coeffs.iter().enumerate() {
                row(filter, i, *c);
            }
        }
        row("pr_residual", 0, verify_perfect_reconstruction(&w));
        row("lowpass_at_nyquist", 0, w.lowpass_at_nyquist());
        if w.name().starts_with("GRS") {
            let level = (w.h0().len() as f64).log2() as u32 - 1;
            row("complementarity_residual", 0, is_complementary(&grs_kernel(level)?)?.residual);
        }
    }
    Ok(s)
}

fn run_dwt(wavelet: &str, input: &Path, out_dir: Option<&Path>) -> Result<String> {
    let spec = standard_wavelet(wavelet)?;
    let img = load_pgm(input)?;
    let bands = dwt2(&img, &spec)?;
    let dir = out_dir
        .map(Path::to_path_buf)
        .unwrap_or_else(|| input.parent().unwrap_or(Path::new(".")).to_path_buf());
    fs::create_dir_all(&dir)?;
    let stem = input.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let mut listing = String::from("subband,path\n");
    for b in Subband::ALL {
        let path = dir.join(format!("{stem}_{}.pgm", b.as_str().to_ascii_lowercase()));
        save_pgm(&Image::new(rescale_for_view(bands.band(b)))?, &path)?;
        listing.push_str(&format!("{b},{}\n", field(&path.display().to_string())));
    }
    let sidecar = dir.join(format!("{stem}.subbands"));
    fs::write(&sidecar, write_sidecar(&bands))?;
    listing.push_str(&format!("sidecar,{}\n", field(&sidecar.display().to_string())));
    Ok(listing)
}

fn external_attack(cmd: &str, img: &Image) -> Result<Image> {
    let dir = tempfile::tempdir()?;
    let (inp, out) = (dir.path().join("in.pgm"), dir.path().join("out.pgm"));
    save_pgm(img, &inp)?;
    let line = cmd
        .replace("{in}", &inp.display().to_string())
        .replace("{out}", &out.display().to_string());
    let status = Command::new("sh").arg("-c").arg(&line).status()?;
    if !status.success() {
        return Err(Error::Io(std::io::Error::other(format!("external codec failed: {status}"))));
    }
    let result = load_pgm(&out)?;
    if result.shape() != img.shape() {
        return Err(Error::Dimension(format!(
            "external codec changed the size from {:?} to {:?}",
            img.shape(),
            result.shape()
        )));
    }
    Ok(result)
}

fn detect(wm: &WatermarkArgs, original: &Path, suspect: &Path, model: Option<&Path>) -> Result<String> {
    let params = wm.params()?;
    let orig = load_pgm(original)?;
    let sus = load_pgm(suspect)?;
    let (r, c) = orig.shape();
    let w = generate_watermark(wm.seed, r, c, params.mask())?;
    let est = estimate_watermark(&sus, &orig, &params)?;
    let show = |v: Result<f64>| match v {
        Ok(x) => Ok(fmt_f64(x)),
        Err(Error::DegenerateEstimate) => Ok("0".to_string()),
        Err(e) => Err(e),
    };
    let mut s = String::from("measure,value\n");
    let stacked = correlation(w.message(), &est, CorrelationScope::Stacked);
    let rho = *stacked.as_ref().unwrap_or(&0.0);
    s.push_str(&format!("rho,{}\n", show(stacked)?));
    for b in params.mask().bands() {
        let v = show(correlation(w.message(), &est, CorrelationScope::Single(b)))?;
        s.push_str(&format!("rho_{},{v}\n", b.as_str().to_ascii_lowercase()));
    }
    if let Some(path) = model {
        let m = DetectorModel::from_csv(&fs::read_to_string(path)?)?;
        let d = decide(rho, &m);
        s.push_str(&format!("decision,{}\n", d.hypothesis));
        s.push_str(&format!("log_likelihood_ratio,{}\n", fmt_f64(d.log_likelihood_ratio)));
        s.push_str(&format!("likelihood_ratio,{}\n", fmt_f64(d.likelihood_ratio)));
        s.push_str(&format!("gamma,{}\n", fmt_f64(m.gamma)));
        s.push_str(&format!("rho_threshold,{}\n", fmt_f64(m.rho_threshold)));
        s.push_str(&format!("rho_threshold_decision,{}\n", d.by_rho_threshold));
    }
    Ok(s)
}

fn metrics(uqi: Option<&[PathBuf]>, stride: usize, jsd: Option<&Path>, wavelet: &str) -> Result<String> {
    let mut s = String::new();
    match (uqi, jsd) {
        (Some([a, b]), None) => {
            let (a, b) = (load_pgm(a)?, load_pgm(b)?);
            let r = uqi_windowed(a.samples(), b.samples(), 8, stride)?;
            s.push_str("uqi,windows_used,windows_skipped\n");
            s.push_str(&format!("{},{},{}\n", fmt_f64(r.value), r.windows_used, r.windows_skipped));
        }
        (None, Some(path)) => {
            let t = jsd_table(&load_pgm(path)?, &standard_wavelet(wavelet)?)?;
            s.push_str(&format!(",{}\n", JSD_LABELS.join(",")));
            for (i, label) in JSD_LABELS.iter().enumerate() {
                let cells: Vec<String> = (0..JSD_LABELS.len()).map(|j| fmt_f64(t.get(i, j))).collect();
                s.push_str(&format!("{label},{}\n", cells.join(",")));
            }
        }
        _ => return Err(Error::Argument("give exactly one of --uqi A B or --jsd-table IMG".into())),
    }
    Ok(s)
}

fn write_fixtures(dir: &Path, size: usize) -> Result<String> {
    fs::create_dir_all(dir)?;
    let mut s = String::from("name,path\n");
    for variant in [CALIBRATION_VARIANT, HOLDOUT_VARIANT] {
        for kind in FixtureKind::ALL {
            let name = fixture_name(kind, variant);
            let path = dir.join(format!("{name}.pgm"));
            save_pgm(&fixture(kind, variant, size)?, &path)?;
            s.push_str(&format!("{name},{}\n", field(&path.display().to_string())));
        }
    }
    Ok(s)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Cmd::DumpFilters { wavelets } => emit(None, &dump_filters(&wavelets)?),
        Cmd::Dwt {
            wavelet,
            input,
            out_dir,
        } => emit(None, &run_dwt(&wavelet, &input, out_dir.as_deref())?),
        Cmd::Embed { wm, input, output } => {
            let params = wm.params()?;
            let img = load_pgm(&input)?;
            let (r, c) = img.shape();
            let w = generate_watermark(wm.seed, r, c, params.mask())?;
            save_pgm(&embed(&img, &w, &params)?, &output)
        }
        Cmd::Attack {
            attack,
            external_cmd,
            input,
            output,
        } => {
            let spec = match &external_cmd {
                Some(_) => None,
                None => Some(attack.spec()?),
            };
            let img = load_pgm(&input)?;
            let attacked = match (spec, external_cmd) {
                (Some(spec), _) => spec.apply(&img)?,
                (None, Some(cmd)) => external_attack(&cmd, &img)?,
                (None, None) => unreachable!("spec is set whenever no external command is given"),
            };
            save_pgm(&attacked, &output)
        }
        Cmd::Detect {
            wm,
            original,
            suspect,
            model,
        } => emit(None, &detect(&wm, &original, &suspect, model.as_deref())?),
        Cmd::Metrics {
            uqi,
            stride,
            jsd_table,
            wavelet,
        } => emit(None, &metrics(uqi.as_deref(), stride, jsd_table.as_deref(), &wavelet)?),
        Cmd::Calibrate {
            wavelet,
            attack,
            alpha,
            subbands,
            trials,
            pfa,
            seed,
            wrong_fraction,
            images,
            out,
            jobs,
        } => {
            let spec = standard_wavelet(&wavelet)?;
            let attack = attack.spec()?;
            let mask: SubbandMask = subbands.parse()?;
            let set = ImageSet::load(&image_entries(&images))?;
            let config = CalibrationConfig {
                trials,
                pfa,
                seed,
                wrong_watermark_fraction: wrong_fraction,
            };
            let cal = with_jobs(jobs, || calibrate(&spec, &attack, alpha, mask, &set.images, &config))??;
            if let Some(w) = &cal.model.warning {
                eprintln!("warning: {w}");
            }
            emit(Some(&out), &cal.model.to_csv())
        }
        Cmd::Rates {
            model,
            attack,
            images,
            calibration_images,
            holdout,
            trials,
            seed,
            wrong_fraction,
            out,
            jobs,
        } => {
            let m = DetectorModel::from_csv(&fs::read_to_string(&model)?)?;
            let attack: AttackSpec = match attack {
                Some(a) => a.parse()?,
                None => m.context.attack,
            };
            let eval = ImageSet::load(&image_entries(&images))?;
            if holdout {
                let calib = calibration_images
                    .ok_or_else(|| Error::Argument("--holdout needs --calibration-images".into()))?;
                let calib = ImageSet::load(&image_entries(&calib))?;
                check_disjoint(&calib.sources, &eval.sources)?;
            }
            let spec: WaveletSpec = standard_wavelet(&m.context.wavelet)?;
            let r = with_jobs(jobs, || {
                estimate_rates(&m, &spec, &attack, &eval.images, trials, seed, wrong_fraction)
            })??;
            emit(out.as_deref(), &rates_csv(&[r]))
        }
        Cmd::Experiment {
            config,
            overrides,
            out,
            holdout,
            full_scale,
            jobs,
        } => {
            let mut cfg = match config {
                Some(p) => ExperimentConfig::parse(&fs::read_to_string(p)?)?,
                None => ExperimentConfig::default(),
            };
            if full_scale {
                cfg = cfg.full_scale();
            }
            for o in &overrides {
                let (k, v) = o
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("override '{o}' is not KEY=VALUE")))?;
                cfg.set(k, v)?;
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            cfg.holdout |= holdout;
            let result = with_jobs(jobs, || run_experiment(&cfg))??;
            for f in &result.files {
                println!("{}", f.display());
            }
            Ok(())
        }
        Cmd::Fixtures { out_dir, size } => emit(None, &write_fixtures(&out_dir, size)?),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}
