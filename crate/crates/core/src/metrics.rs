//! Image quality metrics on exposure-scaled reflectance images.
//!
//! PSNR uses peak 1 on values clamped to `[0, 1]`. SSIM uses the usual 11x11
//! Gaussian window with `sigma = 1.5`, `K1 = 0.01`, `K2 = 0.03` and dynamic
//! range 1, evaluated only where the window fits inside the image. When an
//! image carries a validity mask, PSNR skips masked pixels and SSIM skips
//! windows centred on them.

use serde::{Deserialize, Serialize};

use crate::colorimetry::{self, ColorSpace, ColorTriple};
use crate::{Error, Result};

pub const PSNR_CAP_DB: f64 = 99.0;
pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalImage {
    pub width: usize,
    pub height: usize,
    /// Row-major, top row first.
    pub pixels: Vec<[f64; 3]>,
    pub space: ColorSpace,
    pub exposure_ru: f64,
    /// `false` marks pixels that carry no data.
    pub mask: Option<Vec<bool>>,
}

impl EvalImage {
    pub fn new(width: usize, height: usize, pixels: Vec<[f64; 3]>, space: ColorSpace, exposure_ru: f64) -> Result<Self> {
        if pixels.len() != width * height {
            return Err(Error::DimensionMismatch { expected: width * height, found: pixels.len() });
        }
        if let Some(bad) = pixels.iter().flatten().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("image contains non-finite value {bad}")));
        }
        Ok(EvalImage { width, height, pixels, space, exposure_ru, mask: None })
    }

    pub fn with_mask(mut self, mask: Vec<bool>) -> Result<Self> {
        if mask.len() != self.pixels.len() {
            return Err(Error::DimensionMismatch { expected: self.pixels.len(), found: mask.len() });
        }
        self.mask = Some(mask);
        Ok(self)
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.mask.as_ref().is_none_or(|m| m[i])
    }

    pub fn valid_count(&self) -> usize {
        self.mask.as_ref().map_or(self.pixels.len(), |m| m.iter().filter(|v| **v).count())
    }

    /// Converts an XYZ image; sRGB and YCbCr results are display-clamped.
    pub fn to_space(&self, space: ColorSpace) -> Result<EvalImage> {
        if self.space == space {
            return Ok(self.clone());
        }
        if self.space != ColorSpace::Xyz {
            return Err(Error::invalid(format!("can only convert from XYZ, image is {:?}", self.space)));
        }
        let convert = |c: [f64; 3]| -> Result<[f64; 3]> {
            Ok(match space {
                ColorSpace::Xyz => c,
                ColorSpace::LinearRgb => colorimetry::xyz_to_linear_rgb(ColorTriple::xyz(c))?.c,
                ColorSpace::Srgb => colorimetry::xyz_to_srgb(c),
                ColorSpace::YCbCr => colorimetry::ycbcr601(colorimetry::xyz_to_srgb(c)),
            })
        };
        let pixels = self.pixels.iter().map(|&c| convert(c)).collect::<Result<_>>()?;
        Ok(EvalImage { pixels, space, ..self.clone() })
    }

    fn channel(&self, c: usize) -> Vec<f64> {
        self.pixels.iter().map(|p| p[c]).collect()
    }
}

fn check_pair(a: &EvalImage, b: &EvalImage) -> Result<()> {
    if (a.width, a.height) != (b.width, b.height) {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if a.space != b.space {
        return Err(Error::invalid(format!("color spaces differ: {:?} vs {:?}", a.space, b.space)));
    }
    if a.mask.is_some() && b.mask.is_some() && a.mask != b.mask {
        return Err(Error::invalid("validity masks differ"));
    }
    Ok(())
}

fn valid_at(a: &EvalImage, b: &EvalImage, i: usize) -> bool {
    a.is_valid(i) && b.is_valid(i)
}

/// `10 log10(1 / MSE)` over clamped values, capped at [`PSNR_CAP_DB`].
pub fn psnr(a: &EvalImage, b: &EvalImage) -> Result<f64> {
    check_pair(a, b)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for i in 0..a.pixels.len() {
        if !valid_at(a, b, i) {
            continue;
        }
        for c in 0..3 {
            let d = a.pixels[i][c].clamp(0.0, 1.0) - b.pixels[i][c].clamp(0.0, 1.0);
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::invalid("no valid pixels to compare"));
    }
    let mse = sum / count as f64;
    Ok(if mse == 0.0 { PSNR_CAP_DB } else { (-10.0 * mse.log10()).min(PSNR_CAP_DB) })
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let mut g = [0.0; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    for (i, v) in g.iter_mut().enumerate() {
        let d = i as f64 - half;
        *v = (-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
    }
    let s: f64 = g.iter().sum();
    g.map(|v| v / s)
}

/// Separable "valid" Gaussian filter; output is `(w - 10) x (h - 10)`.
fn filter_valid(x: &[f64], w: usize, h: usize, g: &[f64; SSIM_WINDOW]) -> Vec<f64> {
    let (ow, oh) = (w + 1 - SSIM_WINDOW, h + 1 - SSIM_WINDOW);
    let mut rows = vec![0.0; ow * h];
    for y in 0..h {
        let line = &x[y * w..(y + 1) * w];
        for ox in 0..ow {
            rows[y * ow + ox] = g.iter().zip(&line[ox..ox + SSIM_WINDOW]).map(|(k, v)| k * v).sum();
        }
    }
    let mut out = vec![0.0; ow * oh];
    for oy in 0..oh {
        for ox in 0..ow {
            out[oy * ow + ox] = g.iter().enumerate().map(|(k, gk)| gk * rows[(oy + k) * ow + ox]).sum();
        }
    }
    out
}

#[inline]
fn ssim_formula(mu_a: f64, mu_b: f64, var_a: f64, var_b: f64, cov: f64) -> f64 {
    ((2.0 * mu_a * mu_b + C1) * (2.0 * cov + C2)) / ((mu_a * mu_a + mu_b * mu_b + C1) * (var_a + var_b + C2))
}

fn ssim_channel(a: &[f64], b: &[f64], w: usize, h: usize, include: &dyn Fn(usize, usize) -> bool) -> (f64, usize) {
    let g = gaussian_window();
    let sq = |x: &[f64]| x.iter().map(|v| v * v).collect::<Vec<_>>();
    let ab: Vec<f64> = a.iter().zip(b).map(|(x, y)| x * y).collect();
    let (ma, mb) = (filter_valid(a, w, h, &g), filter_valid(b, w, h, &g));
    let (eaa, ebb, eab) = (filter_valid(&sq(a), w, h, &g), filter_valid(&sq(b), w, h, &g), filter_valid(&ab, w, h, &g));
    let ow = w + 1 - SSIM_WINDOW;
    let mut sum = 0.0;
    let mut n = 0;
    for (i, &mu_a) in ma.iter().enumerate() {
        let (ox, oy) = (i % ow, i / ow);
        if !include(ox, oy) {
            continue;
        }
        let mu_b = mb[i];
        sum += ssim_formula(mu_a, mu_b, eaa[i] - mu_a * mu_a, ebb[i] - mu_b * mu_b, eab[i] - mu_a * mu_b);
        n += 1;
    }
    (sum, n)
}

/// Mean SSIM over the three channels of YCbCr or sRGB images.
pub fn ssim(a: &EvalImage, b: &EvalImage) -> Result<f64> {
    check_pair(a, b)?;
    if !matches!(a.space, ColorSpace::YCbCr | ColorSpace::Srgb) {
        return Err(Error::invalid(format!("SSIM needs YCbCr or sRGB images, got {:?}", a.space)));
    }
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("image {w}x{h} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let half = SSIM_WINDOW / 2;
    let include = |ox: usize, oy: usize| valid_at(a, b, (oy + half) * w + ox + half);
    let mut total = 0.0;
    for c in 0..3 {
        let (sum, n) = ssim_channel(&a.channel(c), &b.channel(c), w, h, &include);
        if n == 0 {
            return Err(Error::invalid("no SSIM window is centred on a valid pixel"));
        }
        total += sum / n as f64;
    }
    Ok(total / 3.0)
}

/// One machine-readable evaluation result.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub psnr_xyz: f64,
    pub psnr_linear_rgb: f64,
    pub ssim_ycbcr: f64,
    pub ssim_srgb: f64,
    /// Reserved; perceptual FLIP is not computed.
    pub flip: Option<f64>,
    pub exposure_ru: f64,
    pub width: usize,
    pub height: usize,
    pub valid_pixels: usize,
    #[serde(default)]
    pub context: serde_json::Value,
}

impl MetricsRecord {
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}

/// PSNR in XYZ and linear RGB plus SSIM in YCbCr and sRGB for two exposed XYZ images.
pub fn report(gt: &EvalImage, pred: &EvalImage) -> Result<MetricsRecord> {
    check_pair(gt, pred)?;
    if gt.space != ColorSpace::Xyz {
        return Err(Error::invalid(format!("report expects XYZ images, got {:?}", gt.space)));
    }
    let in_space = |s| -> Result<(EvalImage, EvalImage)> { Ok((gt.to_space(s)?, pred.to_space(s)?)) };
    let (a, b) = in_space(ColorSpace::LinearRgb)?;
    let psnr_linear_rgb = psnr(&a, &b)?;
    let (a, b) = in_space(ColorSpace::Srgb)?;
    let ssim_srgb = ssim(&a, &b)?;
    let (a, b) = in_space(ColorSpace::YCbCr)?;
    let ssim_ycbcr = ssim(&a, &b)?;
    let valid_pixels = (0..gt.pixels.len()).filter(|&i| valid_at(gt, pred, i)).count();
    Ok(MetricsRecord {
        psnr_xyz: psnr(gt, pred)?,
        psnr_linear_rgb,
        ssim_ycbcr,
        ssim_srgb,
        flip: None,
        exposure_ru: gt.exposure_ru,
        width: gt.width,
        height: gt.height,
        valid_pixels,
        context: serde_json::Value::Null,
    })
}
