//! Browser bindings for the demo page in `www/`.
//!
//! Each exported function is a thin wrapper over a plain Rust function in
//! [`ops`], so the logic can be tested natively.

use wasm_bindgen::prelude::*;

pub mod ops {
    use stainkit::loss::focal_loss;
    use stainkit::report::to_canonical_json;
    use stainkit::stain::{ChannelSelector, StainBasis, StainProjector};
    use stainkit::{MetricReport, RgbImage, SsimParams, DEFAULT_EPS};

    fn rgba_to_image(rgba: &[u8], width: usize, height: usize) -> Result<RgbImage, String> {
        if rgba.len() != width * height * 4 {
            return Err(format!("expected {} RGBA bytes for {width}x{height}, got {}", width * height * 4, rgba.len()));
        }
        let rgb: Vec<u8> = rgba.chunks_exact(4).flat_map(|px| [px[0], px[1], px[2]]).collect();
        RgbImage::from_rgb8(height, width, &rgb).map_err(|e| e.to_string())
    }

    /// Keeps the stains named by `channel` (H, E, DAB, HE, HDAB or ALL).
    /// Alpha passes through unchanged.
    pub fn separate_rgba(rgba: &[u8], width: usize, height: usize, channel: &str) -> Result<Vec<u8>, String> {
        let img = rgba_to_image(rgba, width, height)?;
        let selector: ChannelSelector = channel.parse().map_err(|e: stainkit::Error| e.to_string())?;
        let projector = StainProjector::new(&StainBasis::default(), selector, DEFAULT_EPS).map_err(|e| e.to_string())?;
        let rgb = projector.apply(&img).to_rgb8();
        Ok(rgb
            .chunks_exact(3)
            .zip(rgba.chunks_exact(4))
            .flat_map(|(c, src)| [c[0], c[1], c[2], src[3]])
            .collect())
    }

    /// SSIM, PSNR and MAE as canonical JSON. Images smaller than the 11-pixel
    /// SSIM window use the largest odd window that fits.
    pub fn compare_rgba(a: &[u8], b: &[u8], width: usize, height: usize) -> Result<String, String> {
        let a = rgba_to_image(a, width, height)?;
        let b = rgba_to_image(b, width, height)?;
        let mut params = SsimParams::default();
        let side = width.min(height);
        if side < params.window_size {
            params.window_size = if side % 2 == 0 { side.saturating_sub(1) } else { side };
        }
        let report = MetricReport::compute(&a, &b, &params).map_err(|e| e.to_string())?;
        to_canonical_json(&report).map_err(|e| e.to_string())
    }

    /// Focal loss at `samples` evenly spaced target probabilities in
    /// `[0.01, 0.99]`, with the remaining mass spread over the other levels.
    pub fn focal_curve(alpha: f64, gamma: f64, samples: usize) -> Result<Vec<f64>, String> {
        if samples < 2 {
            return Err("need at least 2 samples".into());
        }
        (0..samples)
            .map(|i| {
                let p = 0.01 + 0.98 * i as f64 / (samples - 1) as f64;
                let rest = (1.0 - p) / 3.0;
                focal_loss(&[p, rest, rest, rest], 0, alpha, gamma)
                    .map(|v| v.value)
                    .map_err(|e| e.to_string())
            })
            .collect()
    }
}

#[wasm_bindgen(js_name = separateRgba)]
pub fn separate_rgba(rgba: &[u8], width: u32, height: u32, channel: &str) -> Result<Vec<u8>, JsError> {
    ops::separate_rgba(rgba, width as usize, height as usize, channel).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = compareRgba)]
pub fn compare_rgba(a: &[u8], b: &[u8], width: u32, height: u32) -> Result<String, JsError> {
    ops::compare_rgba(a, b, width as usize, height as usize).map_err(|e| JsError::new(&e))
}

#[wasm_bindgen(js_name = focalCurve)]
pub fn focal_curve(alpha: f64, gamma: f64, samples: u32) -> Result<Vec<f64>, JsError> {
    ops::focal_curve(alpha, gamma, samples as usize).map_err(|e| JsError::new(&e))
}
