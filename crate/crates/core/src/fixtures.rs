//! Procedural test images: small, textured and fully reproducible.

use rand_chacha::rand_core::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::image_io::Image;
use crate::watermark::stream_seed;

pub const FIXTURE_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FixtureKind {
    Gradient,
    Checkerboard,
    Noise,
    Blobs,
}

impl FixtureKind {
    pub const ALL: [FixtureKind; 4] = [
        FixtureKind::Gradient,
        FixtureKind::Checkerboard,
        FixtureKind::Noise,
        FixtureKind::Blobs,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FixtureKind::Gradient => "gradient",
            FixtureKind::Checkerboard => "checkerboard",
            FixtureKind::Noise => "noise",
            FixtureKind::Blobs => "blobs",
        }
    }
}

/// Variant used for calibration.
pub const CALIBRATION_VARIANT: char = 'a';
/// Variant held out for rate estimation.
pub const HOLDOUT_VARIANT: char = 'b';

fn uniform(rng: &mut ChaCha8Rng) -> f64 {
    (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
}

fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + (hi - lo) * uniform(rng)
}

/// One octave of value noise: random lattice values every `cell` pixels,
/// blended with a smoothstep.
fn value_noise(size: usize, cell: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let lattice = size / cell + 2;
    let grid: Vec<f64> = (0..lattice * lattice).map(|_| uniform(rng) * 2.0 - 1.0).collect();
    let at = |i: usize, j: usize| grid[i * lattice + j];
    let smooth = |t: f64| t * t * (3.0 - 2.0 * t);
    let mut out = Vec::with_capacity(size * size);
    for r in 0..size {
        let (gi, fr) = (r / cell, smooth((r % cell) as f64 / cell as f64));
        for c in 0..size {
            let (gj, fc) = (c / cell, smooth((c % cell) as f64 / cell as f64));
            let top = at(gi, gj) * (1.0 - fc) + at(gi, gj + 1) * fc;
            let bottom = at(gi + 1, gj) * (1.0 - fc) + at(gi + 1, gj + 1) * fc;
            out.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    out
}

/// Sum of equally weighted octaves from cell 32 down to `finest`, scaled to
/// zero mean and unit variance.
fn texture(size: usize, finest: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let mut acc = vec![0.0; size * size];
    let mut cell = 32;
    while cell >= finest {
        for (a, v) in acc.iter_mut().zip(value_noise(size, cell, rng)) {
            *a += v;
        }
        cell /= 2;
    }
    let n = acc.len() as f64;
    let mean = acc.iter().sum::<f64>() / n;
    let sd = (acc.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    acc.into_iter().map(|v| (v - mean) / sd).collect()
}

/// Generate a fixture; `variant` selects an independent random draw.
pub fn fixture(kind: FixtureKind, variant: char, size: usize) -> Result<Image> {
    if size < 32 || !size.is_multiple_of(2) {
        return Err(Error::arg(format!("fixture size must be even and >= 32, got {size}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(stream_seed(variant as u64, kind.name()));
    let n = size as f64;
    let pixels: Vec<f64> = match kind {
        FixtureKind::Gradient => {
            let tex = texture(size, 1, &mut rng);
            (0..size * size)
                .map(|i| {
                    let (y, x) = ((i / size) as f64 / n, (i % size) as f64 / n);
                    50.0 + 150.0 * (0.6 * x + 0.4 * y) + 22.0 * tex[i]
                })
                .collect()
        }
        FixtureKind::Checkerboard => {
            let tex = texture(size, 1, &mut rng);
            (0..size * size)
                .map(|i| {
                    let light = ((i / size) / 16 + (i % size) / 16).is_multiple_of(2);
                    (if light { 85.0 } else { 170.0 }) + 22.0 * tex[i]
                })
                .collect()
        }
        FixtureKind::Noise => texture(size, 2, &mut rng)
            .into_iter()
            .map(|t| 128.0 + 45.0 * t)
            .collect(),
        FixtureKind::Blobs => {
            let blobs: Vec<[f64; 4]> = (0..6)
                .map(|_| {
                    [
                        uniform_in(&mut rng, 0.1, 0.9),
                        uniform_in(&mut rng, 0.1, 0.9),
                        uniform_in(&mut rng, 0.05, 0.2),
                        uniform_in(&mut rng, -60.0, 120.0),
                    ]
                })
                .collect();
            let tex = texture(size, 1, &mut rng);
            (0..size * size)
                .map(|i| {
                    let (y, x) = ((i / size) as f64 / n, (i % size) as f64 / n);
                    let bumps: f64 = blobs
                        .iter()
                        .map(|[cx, cy, s, a]| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * s * s)).exp())
                        .sum();
                    70.0 + bumps + 22.0 * tex[i]
                })
                .collect()
        }
    };
    let mut it = pixels.into_iter();
    Ok(Image::from_fn(size, size, |_, _| it.next().unwrap_or(0.0))?.quantized())
}

/// File stem of a shipped fixture, e.g. `gradient_a`.
pub fn fixture_name(kind: FixtureKind, variant: char) -> String {
    format!("{}_{variant}", kind.name())
}

/// All four kinds for one variant at the shipped size.
pub fn fixture_set(variant: char) -> Result<Vec<(String, Image)>> {
    FixtureKind::ALL
        .iter()
        .map(|&k| Ok((fixture_name(k, variant), fixture(k, variant, FIXTURE_SIZE)?)))
        .collect()
}
