//! Unit-interval RGB and stain-concentration image containers, PNG I/O,
//! and the clamp applied before taking logarithms.

use std::path::Path;

use ::image::{DynamicImage, ImageFormat};

use crate::error::{Error, Result};

/// Floor applied to intensities before any logarithm.
pub const DEFAULT_EPS: f64 = 1e-6;

/// Row-major `height x width x 3` intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl RgbImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::invalid(
                "data",
                format!("intensity {v} outside [0, 1]"),
            ));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    /// Every pixel set to `rgb`. Panics if a component is outside `[0, 1]`.
    pub fn filled(height: usize, width: usize, rgb: [f64; 3]) -> Self {
        assert!(rgb.iter().all(|v| (0.0..=1.0).contains(v)));
        let data = (0..height * width).flat_map(|_| rgb).collect();
        Self {
            height,
            width,
            data,
        }
    }

    /// Builds an image from a per-pixel closure; values are clipped to `[0, 1]`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> [f64; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for r in 0..height {
            for c in 0..width {
                data.extend(f(r, c).map(clip_unit));
            }
        }
        Self {
            height,
            width,
            data,
        }
    }

    /// Trusted constructor for kernels that already clip their output.
    pub(crate) fn from_clipped(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        debug_assert!(data.iter().all(|v| (0.0..=1.0).contains(v)));
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f64; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    /// Values of a single channel (0 = R, 1 = G, 2 = B) in row-major order.
    pub fn channel(&self, ch: usize) -> Vec<f64> {
        assert!(ch < 3);
        self.data.iter().skip(ch).step_by(3).copied().collect()
    }

    pub fn same_dims(&self, other: &RgbImage) -> Result<()> {
        if self.dims() != other.dims() {
            return Err(Error::DimensionMismatch(format!(
                "{}x{} vs {}x{}",
                self.height, self.width, other.height, other.width
            )));
        }
        Ok(())
    }

    /// Interleaved 8-bit samples, quantized as `round(v * 255)`.
    pub fn to_rgb8(&self) -> Vec<u8> {
        self.data.iter().map(|&v| quantize(v)).collect()
    }

    /// Inverse of [`RgbImage::to_rgb8`]: samples mapped by `v / 255`.
    pub fn from_rgb8(height: usize, width: usize, samples: &[u8]) -> Result<Self> {
        check_len(height, width, samples.len())?;
        let data = samples.iter().map(|&s| f64::from(s) / 255.0).collect();
        Ok(Self {
            height,
            width,
            data,
        })
    }
}

/// Row-major `height x width x 3` stain concentrations (H, E, DAB).
#[derive(Debug, Clone, PartialEq)]
pub struct HedImage {
    height: usize,
    width: usize,
    data: Vec<f64>,
}

impl HedImage {
    pub fn new(height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        check_len(height, width, data.len())?;
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("data", "non-finite concentration"));
        }
        Ok(Self {
            height,
            width,
            data,
        })
    }

    pub(crate) fn from_raw(height: usize, width: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), height * width * 3);
        Self {
            height,
            width,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn pixel(&self, row: usize, col: usize) -> [f64; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }
}

fn check_len(height: usize, width: usize, len: usize) -> Result<()> {
    if len != height * width * 3 {
        return Err(Error::DimensionMismatch(format!(
            "{height}x{width}x3 image needs {} samples, got {len}",
            height * width * 3
        )));
    }
    Ok(())
}

pub(crate) fn clip_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(0.0, 1.0)
    }
}

fn quantize(v: f64) -> u8 {
    (clip_unit(v) * 255.0).round() as u8
}

/// Replaces every element by `max(element, eps)`.
pub fn clamp_for_od(img: &RgbImage, eps: f64) -> RgbImage {
    debug_assert!(eps > 0.0);
    RgbImage {
        height: img.height,
        width: img.width,
        data: img.data.iter().map(|&v| v.max(eps)).collect(),
    }
}

/// Reads an 8- or 16-bit RGB(A) PNG. Alpha is dropped with a warning.
pub fn load_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::FileNotFound(path.to_path_buf()));
    }
    let bytes = std::fs::read(path)?;
    match ::image::guess_format(&bytes) {
        Ok(ImageFormat::Png) => {}
        Ok(other) => return Err(Error::UnsupportedFormat(format!("{other:?}"))),
        Err(_) => return Err(Error::UnsupportedFormat("unrecognized".into())),
    }
    let decoded = ::image::load_from_memory_with_format(&bytes, ImageFormat::Png)?;
    let (width, height) = (decoded.width() as usize, decoded.height() as usize);

    let data: Vec<f64> = match decoded {
        DynamicImage::ImageRgb8(buf) => buf.into_raw().iter().map(|&s| f64::from(s) / 255.0).collect(),
        DynamicImage::ImageRgb16(buf) => buf.into_raw().iter().map(|&s| f64::from(s) / 65535.0).collect(),
        DynamicImage::ImageRgba8(buf) => {
            log::warn!("{}: dropping alpha channel", path.display());
            drop_alpha(buf.as_raw(), 255.0)
        }
        DynamicImage::ImageRgba16(buf) => {
            log::warn!("{}: dropping alpha channel", path.display());
            drop_alpha(buf.as_raw(), 65535.0)
        }
        other => return Err(Error::NotRgb(format!("{:?}", other.color()))),
    };
    Ok(RgbImage {
        height,
        width,
        data,
    })
}

fn drop_alpha<T: Copy + Into<f64>>(samples: &[T], max: f64) -> Vec<f64> {
    samples
        .chunks_exact(4)
        .flat_map(|p| [p[0].into() / max, p[1].into() / max, p[2].into() / max])
        .collect()
}

/// 8-bit RGB PNG bytes.
pub fn encode_png(img: &RgbImage) -> Result<Vec<u8>> {
    use ::image::ImageEncoder;
    let mut bytes = Vec::new();
    ::image::codecs::png::PngEncoder::new(&mut bytes).write_image(
        &img.to_rgb8(),
        img.width as u32,
        img.height as u32,
        ::image::ExtendedColorType::Rgb8,
    )?;
    Ok(bytes)
}

/// Writes an 8-bit RGB PNG.
pub fn save_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, encode_png(img)?)?;
    Ok(())
}
