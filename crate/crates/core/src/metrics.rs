//! SSIM, PSNR and MAE between RGB images.
//!
//! SSIM uses Gaussian-weighted windows placed only where they fit entirely
//! inside the image ("valid" coverage), is computed per channel and
//! averaged over the three channels.

use serde::de::{self, Deserializer};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window_size: usize,
    pub gaussian_sigma: f64,
    pub k1: f64,
    pub k2: f64,
    pub dynamic_range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        Self {
            window_size: 11,
            gaussian_sigma: 1.5,
            k1: 0.01,
            k2: 0.03,
            dynamic_range: 1.0,
        }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window_size < 3 || self.window_size % 2 == 0 {
            return Err(Error::invalid("window_size", format!("{} is not odd and >= 3", self.window_size)));
        }
        if !(self.gaussian_sigma > 0.0) {
            return Err(Error::invalid("gaussian_sigma", "must be positive"));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0) {
            return Err(Error::invalid("k1/k2", "must be positive"));
        }
        if !(self.dynamic_range > 0.0) {
            return Err(Error::invalid("dynamic_range", "must be positive"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
    pub fn gaussian_taps(&self) -> Vec<f64> {
        let r = (self.window_size / 2) as f64;
        let taps: Vec<f64> = (0..self.window_size)
            .map(|i| {
                let d = i as f64 - r;
                (-(d * d) / (2.0 * self.gaussian_sigma * self.gaussian_sigma)).exp()
            })
            .collect();
        let sum: f64 = taps.iter().sum();
        taps.into_iter().map(|t| t / sum).collect()
    }

    fn constants(&self) -> (f64, f64) {
        let c1 = (self.k1 * self.dynamic_range).powi(2);
        let c2 = (self.k2 * self.dynamic_range).powi(2);
        (c1, c2)
    }
}

/// Per-window SSIM, averaged over channels. Row-major over valid positions.
#[derive(Debug, Clone, PartialEq)]
pub struct SsimMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl SsimMap {
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

/// Mean SSIM over channels and window positions.
pub fn ssim(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<f64> {
    Ok(ssim_map(a, b, params)?.mean())
}

pub fn ssim_map(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<SsimMap> {
    params.validate()?;
    a.same_dims(b)?;
    let (h, w) = a.dims();
    let win = params.window_size;
    if h < win || w < win {
        return Err(Error::ImageTooSmall {
            height: h,
            width: w,
            window: win,
        });
    }
    let taps = params.gaussian_taps();
    let (c1, c2) = params.constants();
    let (oh, ow) = (h - win + 1, w - win + 1);
    let mut acc = vec![0.0; oh * ow];

    for ch in 0..3 {
        let x = a.channel(ch);
        let y = b.channel(ch);
        let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
        let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
        let xy: Vec<f64> = x.iter().zip(&y).map(|(p, q)| p * q).collect();

        let mu_x = filter_valid(&x, h, w, &taps);
        let mu_y = filter_valid(&y, h, w, &taps);
        let e_xx = filter_valid(&xx, h, w, &taps);
        let e_yy = filter_valid(&yy, h, w, &taps);
        let e_xy = filter_valid(&xy, h, w, &taps);

        for i in 0..acc.len() {
            let (mx, my) = (mu_x[i], mu_y[i]);
            let var_x = e_xx[i] - mx * mx;
            let var_y = e_yy[i] - my * my;
            let cov = e_xy[i] - mx * my;
            acc[i] += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                / ((mx * mx + my * my + c1) * (var_x + var_y + c2));
        }
    }
    for v in &mut acc {
        *v /= 3.0;
    }
    Ok(SsimMap {
        height: oh,
        width: ow,
        data: acc,
    })
}

/// Separable valid-mode filter: rows first, then columns.
fn filter_valid(src: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let ow = w - k + 1;
    let oh = h - k + 1;
    let mut rows = vec![0.0; h * ow];
    for r in 0..h {
        let line = &src[r * w..(r + 1) * w];
        for c in 0..ow {
            rows[r * ow + c] = taps.iter().zip(&line[c..c + k]).map(|(t, v)| t * v).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for r in 0..oh {
        for c in 0..ow {
            out[r * ow + c] = taps
                .iter()
                .enumerate()
                .map(|(i, t)| t * rows[(r + i) * ow + c])
                .sum();
        }
    }
    out
}

/// PSNR in decibels; identical inputs have no finite value.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Psnr {
    Finite(f64),
    Infinite,
}

impl Psnr {
    pub fn as_f64(self) -> f64 {
        match self {
            Psnr::Finite(v) => v,
            Psnr::Infinite => f64::INFINITY,
        }
    }

    pub fn is_infinite(self) -> bool {
        matches!(self, Psnr::Infinite)
    }
}

impl Serialize for Psnr {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Psnr::Finite(v) => s.serialize_f64(*v),
            Psnr::Infinite => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Psnr {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(Psnr::Finite(v)),
            Raw::Str(s) if s == "inf" => Ok(Psnr::Infinite),
            Raw::Str(s) => Err(de::Error::custom(format!("expected a number or \"inf\", got {s:?}"))),
        }
    }
}

pub fn psnr(a: &RgbImage, b: &RgbImage, dynamic_range: f64) -> Result<Psnr> {
    a.same_dims(b)?;
    if !(dynamic_range > 0.0) {
        return Err(Error::invalid("dynamic_range", "must be positive"));
    }
    let n = a.data().len() as f64;
    let mse = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / n;
    if mse == 0.0 {
        return Ok(Psnr::Infinite);
    }
    Ok(Psnr::Finite(10.0 * (dynamic_range * dynamic_range / mse).log10()))
}

/// Mean absolute difference over equal-length buffers.
pub fn mae_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {} elements", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("a", "empty input"));
    }
    Ok(a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64)
}

pub fn mae(a: &RgbImage, b: &RgbImage) -> Result<f64> {
    a.same_dims(b)?;
    mae_slices(a.data(), b.data())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub ssim: f64,
    pub psnr_db: Psnr,
    pub mae: f64,
}

impl MetricReport {
    pub fn compute(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<Self> {
        Ok(Self {
            ssim: ssim(a, b, params)?,
            psnr_db: psnr(a, b, params.dynamic_range)?,
            mae: mae(a, b)?,
        })
    }
}
