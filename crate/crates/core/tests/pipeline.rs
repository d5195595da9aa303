use std::path::Path;

use grswm::attacks::AttackSpec;
use grswm::detector::{build_empirical_pdf, calibrate, decide, np_threshold, CalibrationConfig, DetectorModel, Hypothesis};
use grswm::dwt2d::{dwt2, read_sidecar, write_sidecar, SubbandMask};
use grswm::filterbank::standard_wavelet;
use grswm::fixtures::{fixture, fixture_name, FixtureKind, FIXTURE_SIZE};
use grswm::harness::{run_experiment, ExperimentConfig};
use grswm::image_io::{load_pgm, read_pgm, save_pgm, write_pgm};
use grswm::watermark::{
    correlation, embed, estimate_watermark, generate_watermark, CorrelationScope, EmbeddingParams,
};
use grswm::Error;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn shipped(name: &str) -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(format!("{name}.pgm"))
}

#[test]
fn shipped_fixtures_match_generator() {
    for variant in ['a', 'b'] {
        for kind in FixtureKind::ALL {
            let name = fixture_name(kind, variant);
            let on_disk = load_pgm(shipped(&name)).unwrap();
            assert_eq!(on_disk, fixture(kind, variant, FIXTURE_SIZE).unwrap(), "{name}");
        }
    }
}

#[test]
fn file_pipeline_detects_through_jpeg() {
    let dir = tempfile::tempdir().unwrap();
    let original = load_pgm(shipped("blobs_a")).unwrap();
    let params = EmbeddingParams::new(3.0, standard_wavelet("grs4").unwrap(), SubbandMask::ALL).unwrap();
    let wm = generate_watermark(11, 128, 128, SubbandMask::ALL).unwrap();
    let marked_path = dir.path().join("marked.pgm");
    save_pgm(&embed(&original, &wm, &params).unwrap(), &marked_path).unwrap();
    let attacked = AttackSpec::Jpeg { quality: 50 }.apply(&load_pgm(&marked_path).unwrap()).unwrap();
    let attacked = read_pgm(&write_pgm(&attacked)).unwrap();
    let est = estimate_watermark(&attacked, &original, &params).unwrap();
    let rho = correlation(wm.message(), &est, CorrelationScope::Stacked).unwrap();
    let wrong = generate_watermark(12, 128, 128, SubbandMask::ALL).unwrap();
    let rho_wrong = correlation(wrong.message(), &est, CorrelationScope::Stacked).unwrap();
    assert!(rho > 0.15 && rho_wrong.abs() < 0.05, "{rho} {rho_wrong}");
}

#[test]
fn sidecar_file_is_exact() {
    let img = load_pgm(shipped("noise_b")).unwrap();
    let spec = standard_wavelet("coiflet6").unwrap();
    let bands = dwt2(&img, &spec).unwrap();
    let bytes = write_sidecar(&bands);
    assert_eq!(&bytes[..8], b"SUBBAND1");
    assert_eq!(bytes.len(), 16 + 8 * 128 * 128);
    assert_eq!(read_sidecar(&bytes, spec.name()).unwrap(), bands);
}

#[test]
fn calibrated_model_survives_serialization_and_separates() {
    let imgs: Vec<_> = ["gradient_a", "noise_a"].iter().map(|n| load_pgm(shipped(n)).unwrap()).collect();
    let spec = standard_wavelet("grs4").unwrap();
    let cfg = CalibrationConfig {
        trials: 40,
        ..CalibrationConfig::default()
    };
    let attack = AttackSpec::Jpeg { quality: 10 };
    let cal = calibrate(&spec, &attack, 3.0, SubbandMask::ALL, &imgs, &cfg).unwrap();
    let again = calibrate(&spec, &attack, 3.0, SubbandMask::ALL, &imgs, &cfg).unwrap();
    assert_eq!(cal, again);
    let n = cal.h1_samples.len() as f64;
    let (m1, m0) = (
        cal.h1_samples.iter().sum::<f64>() / n,
        cal.h0_samples.iter().sum::<f64>() / n,
    );
    let sd = |v: &[f64], m: f64| (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let se = ((sd(&cal.h1_samples, m1).powi(2) + sd(&cal.h0_samples, m0).powi(2)) / n).sqrt();
    assert!((m1 - m0) / se >= 5.0);
    let model = DetectorModel::from_csv(&cal.model.to_csv()).unwrap();
    assert_eq!(model, cal.model);
    assert!(model.gamma > 0.0 && model.gamma.is_finite());
    assert_eq!(decide(1.0, &model).hypothesis, Hypothesis::H1);
}

#[test]
fn experiment_rejects_missing_image_before_work() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.calibration_images = vec![dir.path().join("absent.pgm").display().to_string()];
    cfg.output_dir = dir.path().join("out");
    let err = run_experiment(&cfg).unwrap_err();
    assert!(matches!(err, Error::Config(_)) && err.is_validation());
    assert!(!cfg.output_dir.exists());
}

#[test]
fn experiment_enforces_holdout() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ExperimentConfig::default();
    cfg.evaluation_images = vec!["fixture:noise_b".into(), "fixture:noise_a".into()];
    cfg.holdout = true;
    cfg.output_dir = dir.path().join("out");
    assert!(matches!(run_experiment(&cfg), Err(Error::Config(_))));
}

#[test]
fn minimal_experiment_writes_documented_reports() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig::parse(&format!(
        "calibration_images = fixture:gradient_a\n\
         evaluation_images = fixture:gradient_b\n\
         wavelets = grs4\n\
         attacks = jpeg:50\n\
         sweep_alphas = 0, 3\n\
         calibration_trials = 30\n\
         evaluation_trials = 30\n\
         subband_trials = 5\n\
         uqi_stride = 4\n\
         output_dir = {}\n",
        dir.path().display()
    ))
    .unwrap();
    let out = run_experiment(&cfg).unwrap();
    let read = |n: &str| std::fs::read_to_string(dir.path().join(n)).unwrap();
    assert!(read("jsd_tables.csv").starts_with("image,wavelet,from,to,jsd\n"));
    let quality = read("quality_sweep.csv");
    let zero = quality.lines().find(|l| l.starts_with("GRS4,all,0,")).unwrap();
    let uqi: f64 = zero.rsplit(',').next().unwrap().parse().unwrap();
    assert!((uqi - 1.0).abs() < 1e-6);
    assert!(read("calibration.csv").lines().nth(1).unwrap().starts_with("GRS4,jpeg:50,jpeg,50,30,1,"));
    assert!(dir.path().join("models/grs4_jpeg_50.csv").is_file());
    assert!(read("rates.csv").starts_with("wavelet,attack,trials,detections,p_d,"));
    assert_eq!(read("subband_report.csv").lines().count(), 1 + 5 * 4);
    assert_eq!(read("subband_summary.csv").lines().count(), 1 + 4);
    let manifest = read("manifest.txt");
    assert!(manifest.contains("[config]") && manifest.contains("[wall_time_seconds]"));
    assert_eq!(out.stage_seconds.len(), 5);
}

fn gaussian(n: usize, mean: f64, sd: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Normal::new(mean, sd).unwrap();
    (0..n).map(|_| d.sample(&mut rng)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn pdfs_integrate_to_one(seed in any::<u64>(), n in 30usize..2000, mean in -0.5f64..0.5, sd in 1e-4f64..0.3) {
        let pdf = build_empirical_pdf(&gaussian(n, mean, sd, seed)).unwrap();
        prop_assert!((pdf.integral() - 1.0).abs() <= 1e-6);
        prop_assert!(pdf.density().iter().all(|&p| p >= 0.0));
    }

    #[test]
    fn threshold_hits_target_for_overlapping_pdfs(seed in any::<u64>(), shift in 0.05f64..0.3, pfa in 0.005f64..0.5) {
        let h0 = build_empirical_pdf(&gaussian(3000, 0.0, 0.1, seed)).unwrap();
        let h1 = build_empirical_pdf(&gaussian(3000, shift, 0.1, seed ^ 1)).unwrap();
        let th = np_threshold(&h0, &h1, pfa).unwrap();
        prop_assert!(th.gamma > 0.0);
        if th.warning.is_none() {
            prop_assert!((th.achieved_pfa - pfa).abs() <= 1e-4);
        }
    }
}
