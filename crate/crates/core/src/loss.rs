//! Loss kernels for stain-transfer training, with analytic gradients where
//! the loss is differentiable.
//!
//! The overall objective is a two-level weighted sum:
//!
//! ```text
//! total   = w.stain·stain + w.content·content + w.level·level + w.gan·gan
//! stain   = w.h·h + w.dab·dab
//! content = w.ssim·ssim + w.mae·mae + w.cmp·cmp
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::RgbImage;
use crate::metrics::{self, SsimParams};

pub const NUM_HER2_LEVELS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub stain: f64,
    pub content: f64,
    pub level: f64,
    pub gan: f64,
    pub h: f64,
    pub dab: f64,
    pub ssim: f64,
    pub mae: f64,
    pub cmp: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            stain: 2.0,
            content: 13.0,
            level: 5.0,
            gan: 1.0,
            h: 1.0,
            dab: 1.0,
            ssim: 1.0,
            mae: 10.0,
            cmp: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.stain,
            self.content,
            self.level,
            self.gan,
            self.h,
            self.dab,
            self.ssim,
            self.mae,
            self.cmp,
        ];
        if all.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
            return Err(Error::invalid("weights", "every weight must be finite and >= 0"));
        }
        Ok(())
    }
}

/// Individual loss terms. `None` marks a term that was not computed; it is
/// left out of the total together with its weight.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossComponents {
    pub h: Option<f64>,
    pub dab: Option<f64>,
    pub ssim: Option<f64>,
    pub mae: Option<f64>,
    pub cmp: Option<f64>,
    pub level: Option<f64>,
    pub gan: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub stain: Option<f64>,
    pub h: Option<f64>,
    pub dab: Option<f64>,
    pub content: Option<f64>,
    pub ssim: Option<f64>,
    pub mae: Option<f64>,
    pub cmp: Option<f64>,
    pub level: Option<f64>,
    pub gan: Option<f64>,
}

fn weighted_sum(terms: &[(Option<f64>, f64)]) -> Option<f64> {
    terms
        .iter()
        .filter_map(|(v, w)| v.map(|v| v * w))
        .fold(None, |acc, t| Some(acc.unwrap_or(0.0) + t))
}

impl LossComponents {
    pub fn combine(&self, w: &LossWeights) -> LossBreakdown {
        let stain = weighted_sum(&[(self.h, w.h), (self.dab, w.dab)]);
        let content = weighted_sum(&[(self.ssim, w.ssim), (self.mae, w.mae), (self.cmp, w.cmp)]);
        let total = weighted_sum(&[
            (stain, w.stain),
            (content, w.content),
            (self.level, w.level),
            (self.gan, w.gan),
        ])
        .unwrap_or(0.0);
        LossBreakdown {
            total,
            stain,
            h: self.h,
            dab: self.dab,
            content,
            ssim: self.ssim,
            mae: self.mae,
            cmp: self.cmp,
            level: self.level,
            gan: self.gan,
        }
    }

    /// Fills `other`'s present terms into `self`.
    pub fn overlay(mut self, other: &LossComponents) -> Self {
        let pairs = [
            (&mut self.h, other.h),
            (&mut self.dab, other.dab),
            (&mut self.ssim, other.ssim),
            (&mut self.mae, other.mae),
            (&mut self.cmp, other.cmp),
            (&mut self.level, other.level),
            (&mut self.gan, other.gan),
        ];
        for (slot, v) in pairs {
            if v.is_some() {
                *slot = v;
            }
        }
        self
    }
}

/// Every term supplied.
#[allow(clippy::too_many_arguments)]
pub fn overall_loss(h: f64, dab: f64, ssim: f64, mae: f64, cmp: f64, level: f64, gan: f64, w: &LossWeights) -> LossBreakdown {
    LossComponents {
        h: Some(h),
        dab: Some(dab),
        ssim: Some(ssim),
        mae: Some(mae),
        cmp: Some(cmp),
        level: Some(level),
        gan: Some(gan),
    }
    .combine(w)
}

/// Value and gradients of a loss over two vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct PairGrad {
    pub value: f64,
    pub grad_a: Vec<f64>,
    pub grad_b: Vec<f64>,
}

/// `1 - <a, b> / (|a| |b|)`, in `[0, 2]`.
pub fn cosine_similarity_loss(a: &[f64], b: &[f64]) -> Result<PairGrad> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!("{} vs {}", a.len(), b.len())));
    }
    if a.is_empty() {
        return Err(Error::invalid("a", "empty vector"));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(Error::ZeroNorm);
    }
    let cos = (dot / (na * nb)).clamp(-1.0, 1.0);

    // d cos / da = b / (|a||b|) - cos · a / |a|²
    let grad = |x: &[f64], y: &[f64], nx: f64, ny: f64| -> Vec<f64> {
        x.iter()
            .zip(y)
            .map(|(xi, yi)| -(yi / (nx * ny) - cos * xi / (nx * nx)))
            .collect()
    };
    Ok(PairGrad {
        value: 1.0 - cos,
        grad_a: grad(a, b, na, nb),
        grad_b: grad(b, a, nb, na),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<f64>,
}

/// Mean-normalized L1 distance; the gradient is with respect to `a`, using
/// `sign(0) = 0`.
pub fn l1_loss(a: &[f64], b: &[f64]) -> Result<ValueGrad> {
    let value = metrics::mae_slices(a, b)?;
    let n = a.len() as f64;
    let grad = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(ValueGrad { value, grad })
}

/// `1 - SSIM(a, b)`. Value only.
pub fn ssim_loss(a: &RgbImage, b: &RgbImage, params: &SsimParams) -> Result<f64> {
    Ok(1.0 - metrics::ssim(a, b, params)?)
}

/// Focal loss `-alpha (1 - p_t)^gamma ln p_t` on post-softmax probabilities.
/// The gradient is nonzero only at `target`.
pub fn focal_loss(probs: &[f64], target: usize, alpha: f64, gamma: f64) -> Result<ValueGrad> {
    if probs.len() != NUM_HER2_LEVELS {
        return Err(Error::invalid(
            "probs",
            format!("expected {NUM_HER2_LEVELS} class probabilities, got {}", probs.len()),
        ));
    }
    if target >= probs.len() {
        return Err(Error::invalid("target", format!("class {target} out of range 0..{}", probs.len())));
    }
    if probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
        return Err(Error::invalid("probs", "entries must lie in (0, 1]"));
    }
    let sum: f64 = probs.iter().sum();
    if (sum - 1.0).abs() > 1e-6 {
        return Err(Error::invalid("probs", format!("sum is {sum}, not 1")));
    }
    if !(gamma >= 0.0 && gamma.is_finite()) {
        return Err(Error::invalid("gamma", "must be finite and >= 0"));
    }
    if !alpha.is_finite() {
        return Err(Error::invalid("alpha", "must be finite"));
    }

    let (value, d) = focal_terms(probs[target], alpha, gamma);
    let mut grad = vec![0.0; probs.len()];
    grad[target] = d;
    Ok(ValueGrad { value, grad })
}

fn focal_terms(p: f64, alpha: f64, gamma: f64) -> (f64, f64) {
    let q = 1.0 - p;
    let ln_p = p.ln();
    let value = -alpha * q.powf(gamma) * ln_p;
    // d/dp = alpha·gamma·q^(gamma-1)·ln p - alpha·q^gamma / p
    // The first term vanishes at gamma = 0 and at p = 1 (ln p -> 0 faster
    // than q^(gamma-1) grows).
    let focusing = if gamma == 0.0 || q == 0.0 {
        0.0
    } else {
        alpha * gamma * q.powf(gamma - 1.0) * ln_p
    };
    let value = if value == 0.0 { 0.0 } else { value };
    (value, focusing - alpha * q.powf(gamma) / p)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GanMode {
    #[default]
    LeastSquares,
    BinaryCrossEntropy,
}

/// Mean adversarial loss over a discriminator score map.
pub fn patch_gan_loss(scores: &[f64], target_is_real: bool, mode: GanMode) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("score_map", "empty"));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::invalid("score_map", "non-finite score"));
    }
    let t = if target_is_real { 1.0 } else { 0.0 };
    let n = scores.len() as f64;
    match mode {
        GanMode::LeastSquares => Ok(scores.iter().map(|s| (s - t) * (s - t)).sum::<f64>() / n),
        GanMode::BinaryCrossEntropy => {
            if scores.iter().any(|s| !(*s > 0.0 && *s < 1.0)) {
                return Err(Error::invalid("score_map", "BCE scores must lie in (0, 1)"));
            }
            let total: f64 = scores
                .iter()
                .map(|s| -(t * s.ln() + (1.0 - t) * (1.0 - s).ln()))
                .sum();
            Ok(total / n)
        }
    }
}

/// Mean of the full- and half-resolution patch losses.
pub fn multiscale_gan_loss(loss_512: f64, loss_256: f64) -> f64 {
    if loss_512 == loss_256 {
        return loss_512;
    }
    (loss_512 + loss_256) / 2.0
}
