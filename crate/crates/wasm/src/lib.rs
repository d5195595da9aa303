//! Browser bindings for the demo page in `www/`.
//!
//! Each exported operation has a plain Rust counterpart so it can be tested
//! natively; the wrappers only convert errors.

use grswm::attacks::AttackSpec;
use grswm::dwt2d::{dwt2, Subband, SubbandMask};
use grswm::filterbank::{frequency_response, standard_wavelet};
use grswm::fixtures::{fixture, FixtureKind, FIXTURE_SIZE};
use grswm::image_io::{read_pgm, rescale_for_view, Image};
use grswm::metrics::uqi;
use grswm::watermark::{
    correlation_or_zero, embed, estimate_watermark, generate_watermark, CorrelationScope, EmbeddingParams,
};
use grswm::{Error, Result};
use wasm_bindgen::prelude::*;

const RESPONSE_POINTS: usize = 256;

/// Magnitude responses of the analysis filters on `[0, pi]`.
#[wasm_bindgen]
pub struct FilterView {
    lowpass: Vec<f64>,
    highpass: Vec<f64>,
    nyquist_gain: f64,
    regular: bool,
}

#[wasm_bindgen]
impl FilterView {
    #[wasm_bindgen(getter)]
    pub fn lowpass(&self) -> Vec<f64> {
        self.lowpass.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn highpass(&self) -> Vec<f64> {
        self.highpass.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn nyquist_gain(&self) -> f64 {
        self.nyquist_gain
    }

    #[wasm_bindgen(getter)]
    pub fn regular(&self) -> bool {
        self.regular
    }
}

pub fn filter_view(wavelet: &str) -> Result<FilterView> {
    let spec = standard_wavelet(wavelet)?;
    Ok(FilterView {
        lowpass: frequency_response(spec.h0(), RESPONSE_POINTS)?,
        highpass: frequency_response(spec.h1(), RESPONSE_POINTS)?,
        nyquist_gain: spec.lowpass_at_nyquist(),
        regular: spec.is_regular(),
    })
}

/// Gray 8-bit pixels of a watermarked image and its subband mosaic.
#[wasm_bindgen]
pub struct EmbedView {
    size: usize,
    original: Vec<u8>,
    marked: Vec<u8>,
    mosaic: Vec<u8>,
    uqi: f64,
}

#[wasm_bindgen]
impl EmbedView {
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    #[wasm_bindgen(getter)]
    pub fn original(&self) -> Vec<u8> {
        self.original.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn marked(&self) -> Vec<u8> {
        self.marked.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn mosaic(&self) -> Vec<u8> {
        self.mosaic.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn uqi(&self) -> f64 {
        self.uqi
    }
}

/// Correlations of an attacked image with the true and a wrong key.
#[wasm_bindgen]
pub struct DetectView {
    attacked: Vec<u8>,
    rho: f64,
    rho_wrong_key: f64,
    per_subband: Vec<f64>,
}

#[wasm_bindgen]
impl DetectView {
    #[wasm_bindgen(getter)]
    pub fn attacked(&self) -> Vec<u8> {
        self.attacked.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn rho(&self) -> f64 {
        self.rho
    }

    #[wasm_bindgen(getter)]
    pub fn rho_wrong_key(&self) -> f64 {
        self.rho_wrong_key
    }

    /// LL, LH, HL, HH; zero for subbands outside the mask.
    #[wasm_bindgen(getter)]
    pub fn per_subband(&self) -> Vec<f64> {
        self.per_subband.clone()
    }
}

/// A square source image: a named fixture such as `blobs`, or an uploaded PGM.
pub fn source_image(fixture_name: &str, pgm: &[u8]) -> Result<Image> {
    if !pgm.is_empty() {
        return read_pgm(pgm);
    }
    let kind = FixtureKind::ALL
        .into_iter()
        .find(|k| k.name() == fixture_name)
        .ok_or_else(|| Error::Argument(format!("unknown fixture '{fixture_name}'")))?;
    fixture(kind, 'a', FIXTURE_SIZE)
}

fn params(wavelet: &str, alpha: f64, subbands: &str) -> Result<EmbeddingParams> {
    EmbeddingParams::new(alpha, standard_wavelet(wavelet)?, subbands.parse::<SubbandMask>()?)
}

fn mosaic_view(img: &Image, params: &EmbeddingParams) -> Result<Vec<u8>> {
    let bands = dwt2(img, params.spec())?;
    let (hr, hc) = bands.band_shape();
    let mut out = vec![0u8; 4 * hr * hc];
    for (i, b) in Subband::ALL.into_iter().enumerate() {
        let view = rescale_for_view(bands.band(b));
        let (r0, c0) = ((i / 2) * hr, (i % 2) * hc);
        for r in 0..hr {
            for c in 0..hc {
                out[(r0 + r) * 2 * hc + c0 + c] = view.get(r, c).round() as u8;
            }
        }
    }
    Ok(out)
}

pub fn embed_view(image: &Image, wavelet: &str, alpha: f64, seed: u64, subbands: &str) -> Result<EmbedView> {
    let p = params(wavelet, alpha, subbands)?;
    let (r, c) = image.shape();
    if r != c {
        return Err(Error::Dimension(format!("the demo needs a square image, got {r}x{c}")));
    }
    let wm = generate_watermark(seed, r, c, p.mask())?;
    let marked = embed(image, &wm, &p)?.quantized();
    Ok(EmbedView {
        size: r,
        original: image.to_bytes(),
        marked: marked.to_bytes(),
        mosaic: mosaic_view(&marked, &p)?,
        uqi: uqi(image, &marked)?,
    })
}

/// `attack` is `none`, `jpeg:Q` or `jpeg2000:BPP`.
pub fn detect_view(
    image: &Image,
    wavelet: &str,
    alpha: f64,
    seed: u64,
    subbands: &str,
    attack: &str,
) -> Result<DetectView> {
    let p = params(wavelet, alpha, subbands)?;
    let attack: AttackSpec = attack.parse()?;
    let (r, c) = image.shape();
    let wm = generate_watermark(seed, r, c, p.mask())?;
    let attacked = attack.apply(&embed(image, &wm, &p)?.quantized())?;
    let est = estimate_watermark(&attacked, image, &p)?;
    let wrong = generate_watermark(seed ^ 0x5a5a_5a5a, r, c, p.mask())?;
    let per_subband = Subband::ALL
        .into_iter()
        .map(|b| {
            if p.mask().contains(b) {
                correlation_or_zero(wm.message(), &est, CorrelationScope::Single(b))
            } else {
                Ok(0.0)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(DetectView {
        attacked: attacked.to_bytes(),
        rho: correlation_or_zero(wm.message(), &est, CorrelationScope::Stacked)?,
        rho_wrong_key: correlation_or_zero(wrong.message(), &est, CorrelationScope::Stacked)?,
        per_subband,
    })
}

fn js(e: Error) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen(js_name = filterResponses)]
pub fn filter_responses(wavelet: &str) -> std::result::Result<FilterView, JsError> {
    filter_view(wavelet).map_err(js)
}

/// Pass an empty `pgm` to use the named fixture.
#[wasm_bindgen(js_name = embedImage)]
pub fn embed_image(
    fixture_name: &str,
    pgm: &[u8],
    wavelet: &str,
    alpha: f64,
    seed: u32,
    subbands: &str,
) -> std::result::Result<EmbedView, JsError> {
    let img = source_image(fixture_name, pgm).map_err(js)?;
    embed_view(&img, wavelet, alpha, u64::from(seed), subbands).map_err(js)
}

#[wasm_bindgen(js_name = attackAndDetect)]
pub fn attack_and_detect(
    fixture_name: &str,
    pgm: &[u8],
    wavelet: &str,
    alpha: f64,
    seed: u32,
    subbands: &str,
    attack: &str,
) -> std::result::Result<DetectView, JsError> {
    let img = source_image(fixture_name, pgm).map_err(js)?;
    detect_view(&img, wavelet, alpha, u64::from(seed), subbands, attack).map_err(js)
}
