//! BRDF slices: a fixed incident direction and every view direction of the
//! upper hemisphere, projected orthographically onto the unit disk.
//!
//! Pixel `(px, py)` of an `r x r` slice looks along
//! `omega_o = (x, y, sqrt(1 - x^2 - y^2))` with `x = 2 (px + 0.5) / r - 1` and
//! `y = 1 - 2 (py + 0.5) / r`; pixels with `x^2 + y^2 > 1` are background.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::colorimetry::{self, ColorSpace};
use crate::formats::IMAGE_MAGIC;
use crate::metrics::{self, EvalImage, MetricsRecord};
use crate::neuralnet::NetworkModel;
use crate::sampling::{GridLayout, HalfVectorKey, ReflectanceGrid};
use crate::waveoptics::{self, AttenuationParams, CoherenceWindow, TaylorSpectra};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SliceSpec {
    pub theta_i_deg: f64,
    pub phi_i_deg: f64,
    pub resolution: usize,
    pub exposure_ru: f64,
    pub attenuation: AttenuationParams,
    pub output_space: ColorSpace,
}

impl SliceSpec {
    pub fn new(theta_i_deg: f64, phi_i_deg: f64, resolution: usize, exposure_ru: f64) -> Result<Self> {
        let spec = SliceSpec {
            theta_i_deg,
            phi_i_deg,
            resolution,
            exposure_ru,
            attenuation: AttenuationParams::default(),
            output_space: ColorSpace::Srgb,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..90.0).contains(&self.theta_i_deg) {
            return Err(Error::invalid(format!("theta_i must lie in [0, 90), got {}", self.theta_i_deg)));
        }
        if !self.phi_i_deg.is_finite() {
            return Err(Error::invalid("phi_i must be finite"));
        }
        if self.resolution < 16 {
            return Err(Error::invalid(format!("slice resolution must be >= 16, got {}", self.resolution)));
        }
        if !(self.exposure_ru > 0.0 && self.exposure_ru.is_finite()) {
            return Err(Error::invalid(format!("exposure must be positive, got {}", self.exposure_ru)));
        }
        if !matches!(self.output_space, ColorSpace::Srgb | ColorSpace::Xyz) {
            return Err(Error::invalid(format!("slice output space must be sRGB or XYZ, got {:?}", self.output_space)));
        }
        self.attenuation.validate()
    }

    pub fn omega_i(&self) -> [f64; 3] {
        let (t, p) = (self.theta_i_deg.to_radians(), self.phi_i_deg.to_radians());
        [t.sin() * p.cos(), t.sin() * p.sin(), t.cos()]
    }
}

/// View direction of a pixel centre, or `None` outside the disk.
pub fn pixel_to_omega_o(px: usize, py: usize, resolution: usize) -> Option<[f64; 3]> {
    let r = resolution as f64;
    let x = 2.0 * (px as f64 + 0.5) / r - 1.0;
    let y = 1.0 - 2.0 * (py as f64 + 0.5) / r;
    let rho2 = x * x + y * y;
    if rho2 > 1.0 {
        return None;
    }
    Some([x, y, (1.0 - rho2).sqrt()])
}

pub fn pixel_to_key(px: usize, py: usize, spec: &SliceSpec) -> Option<HalfVectorKey> {
    let o = pixel_to_omega_o(px, py, spec.resolution)?;
    Some(HalfVectorKey::from_directions(spec.omega_i(), o))
}

/// Disk membership of every pixel, row-major.
pub fn disk_mask(resolution: usize) -> Vec<bool> {
    (0..resolution * resolution)
        .map(|i| pixel_to_omega_o(i % resolution, i / resolution, resolution).is_some())
        .collect()
}

/// Anything that can produce the raw XYZ `F`-term at a key.
pub trait FTermSource: Sync {
    fn f_term(&self, keys: &[HalfVectorKey]) -> Result<Vec<[f64; 3]>>;

    /// Whether `key` lies in the region the source was built from.
    fn covers(&self, key: &HalfVectorKey) -> bool;

    fn describe(&self) -> serde_json::Value;
}

/// Ground truth straight from the wave-optics model.
pub struct ForwardModelSource<'a> {
    pub spectra: &'a TaylorSpectra,
    pub window: CoherenceWindow,
}

impl FTermSource for ForwardModelSource<'_> {
    fn f_term(&self, keys: &[HalfVectorKey]) -> Result<Vec<[f64; 3]>> {
        keys.par_iter()
            .map(|k| Ok(waveoptics::reflectance_xyz(k, self.spectra, &self.window)?.c))
            .collect()
    }

    fn covers(&self, key: &HalfVectorKey) -> bool {
        key.valid
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "forward-model",
            "heightfield_id": self.spectra.source_id(),
            "taylor_order": self.spectra.order(),
            "sigma_s_um": self.window.sigma_s(),
        })
    }
}

/// A trained network, optionally aware of the grid it was trained on.
pub struct ModelSource<'a> {
    pub model: &'a NetworkModel,
    pub layout: Option<GridLayout>,
}

impl<'a> ModelSource<'a> {
    /// Reads the training layout from the model provenance when present.
    pub fn new(model: &'a NetworkModel) -> Self {
        let layout = model
            .provenance
            .get("layout")
            .and_then(|v| serde_json::from_value(v.clone()).ok());
        ModelSource { model, layout }
    }
}

impl FTermSource for ModelSource<'_> {
    fn f_term(&self, keys: &[HalfVectorKey]) -> Result<Vec<[f64; 3]>> {
        self.model.predict_keys(keys)
    }

    fn covers(&self, key: &HalfVectorKey) -> bool {
        match &self.layout {
            Some(l) => l.covers(key),
            None => key.valid,
        }
    }

    fn describe(&self) -> serde_json::Value {
        serde_json::json!({
            "kind": "network",
            "layer_sizes": self.model.layer_sizes(),
            "parameter_count": self.model.parameter_count(),
        })
    }
}

/// Rendered slice: exposed, unclamped XYZ with the disk mask and coverage flags.
#[derive(Debug, Clone, PartialEq)]
pub struct SliceImage {
    pub spec: SliceSpec,
    pub image: EvalImage,
    /// True where the key lies inside the source's sampled domain.
    pub coverage: Vec<bool>,
    pub source: serde_json::Value,
}

pub fn render_slice(source: &dyn FTermSource, spec: &SliceSpec) -> Result<SliceImage> {
    spec.validate()?;
    let r = spec.resolution;
    let omega_i = spec.omega_i();
    let mut keys = Vec::new();
    let mut where_ = Vec::new();
    let mut atten = Vec::new();
    for py in 0..r {
        for px in 0..r {
            if let Some(o) = pixel_to_omega_o(px, py, r) {
                keys.push(HalfVectorKey::from_directions(omega_i, o));
                atten.push(waveoptics::attenuation(omega_i, o, &spec.attenuation));
                where_.push(py * r + px);
            }
        }
    }
    let f = source.f_term(&keys)?;
    let mut pixels = vec![[0.0; 3]; r * r];
    let mut coverage = vec![false; r * r];
    for (((&i, k), a), f) in where_.iter().zip(&keys).zip(&atten).zip(&f) {
        let s = a * spec.exposure_ru;
        pixels[i] = f.map(|v| v * s);
        coverage[i] = source.covers(k);
    }
    let image = EvalImage::new(r, r, pixels, ColorSpace::Xyz, spec.exposure_ru)?.with_mask(disk_mask(r))?;
    Ok(SliceImage { spec: *spec, image, coverage, source: source.describe() })
}

impl SliceImage {
    /// Clamped pixels in the slice's output colour space.
    pub fn display(&self) -> Vec<[f64; 3]> {
        self.image
            .pixels
            .iter()
            .map(|&c| match self.spec.output_space {
                ColorSpace::Xyz => c.map(|v| v.clamp(0.0, 1.0)),
                _ => colorimetry::xyz_to_srgb(c),
            })
            .collect()
    }

    /// Fraction of in-disk pixels whose key lies inside the source's domain.
    pub fn coverage_fraction(&self) -> f64 {
        let inside = self.image.valid_count();
        let covered = self.coverage.iter().filter(|c| **c).count();
        covered as f64 / inside.max(1) as f64
    }

    pub fn provenance(&self) -> serde_json::Value {
        serde_json::json!({
            "spec": self.spec,
            "source": self.source,
            "coverage_fraction": self.coverage_fraction(),
        })
    }

    pub fn write_ppm(&self, out: &mut impl Write) -> Result<()> {
        write_ppm(out, self.image.width, self.image.height, &self.image.pixels)
    }

    pub fn sidecar_bytes(&self) -> Vec<u8> {
        image_bytes(&self.image)
    }
}

/// Binary P6 PPM of display-encoded sRGB from exposed XYZ pixels.
pub fn write_ppm(out: &mut impl Write, width: usize, height: usize, xyz: &[[f64; 3]]) -> Result<()> {
    write!(out, "P6\n{width} {height}\n255\n")?;
    let mut buf = Vec::with_capacity(3 * xyz.len());
    for &c in xyz {
        for v in colorimetry::xyz_to_srgb(c) {
            buf.push((v * 255.0).round() as u8);
        }
    }
    out.write_all(&buf)?;
    Ok(())
}

/// `DFRQIM1\0`, u32 width, u32 height, then f32 XYZ triples row-major.
pub fn image_bytes(img: &EvalImage) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + 12 * img.pixels.len());
    out.extend_from_slice(IMAGE_MAGIC);
    binio::put_u32(&mut out, img.width as u32);
    binio::put_u32(&mut out, img.height as u32);
    binio::put_f32s(&mut out, img.pixels.iter().flatten().map(|&v| v as f32));
    out
}

/// Reads a sidecar as an XYZ image with the disk mask of a square slice.
pub fn read_image(bytes: &[u8], exposure_ru: f64) -> Result<EvalImage> {
    let mut r = Reader::new(bytes, "image");
    r.expect_magic(IMAGE_MAGIC)?;
    let (w, h) = (r.u32()? as usize, r.u32()? as usize);
    let n = w.checked_mul(h).ok_or_else(|| Error::format("image: dimensions overflow"))?;
    let flat = r.f32_vec(3 * n)?;
    r.finish()?;
    let px = flat.chunks_exact(3).map(|c| [c[0] as f64, c[1] as f64, c[2] as f64]).collect();
    let img = EvalImage::new(w, h, px, ColorSpace::Xyz, exposure_ru).map_err(|e| Error::format(format!("image: {e}")))?;
    if w == h && w >= 16 { img.with_mask(disk_mask(w)) } else { Ok(img) }
}

/// Metrics plus an absolute-difference image of two slices.
pub fn compare_slices(gt: &SliceImage, pred: &SliceImage) -> Result<(MetricsRecord, Vec<[f64; 3]>)> {
    if gt.image.mask != pred.image.mask {
        return Err(Error::invalid("slice masks disagree"));
    }
    let mut record = metrics::report(&gt.image, &pred.image)?;
    record.context = serde_json::json!({
        "theta_i_deg": gt.spec.theta_i_deg,
        "phi_i_deg": gt.spec.phi_i_deg,
        "exposure_ru": gt.spec.exposure_ru,
        "gt": gt.provenance(),
        "pred": pred.provenance(),
    });
    let diff = gt
        .display()
        .iter()
        .zip(pred.display())
        .map(|(a, b)| [(a[0] - b[0]).abs(), (a[1] - b[1]).abs(), (a[2] - b[2]).abs()])
        .collect();
    Ok((record, diff))
}

/// Ground truth and prediction for one 0-based `w`-slice of a dataset grid,
/// as exposed XYZ images (`u` across, `v` down) masked to valid samples.
pub fn grid_slice_images(
    grid: &ReflectanceGrid,
    model: &NetworkModel,
    iw: usize,
    exposure_ru: f64,
) -> Result<(EvalImage, EvalImage)> {
    let l = grid.layout();
    if iw >= l.res_w {
        return Err(Error::invalid(format!("slice index {iw} outside 0..{}", l.res_w)));
    }
    let (gt, valid) = grid.slice(iw);
    let keys: Vec<HalfVectorKey> = (0..l.res_u * l.res_v)
        .map(|i| l.key(i % l.res_u, i / l.res_u, iw))
        .collect();
    let mut pred = model.predict_keys(&keys)?;
    for (p, &ok) in pred.iter_mut().zip(&valid) {
        if !ok {
            *p = [0.0; 3];
        }
    }
    let scale = |px: Vec<[f64; 3]>| -> Vec<[f64; 3]> { px.into_iter().map(|c| c.map(|v| v * exposure_ru)).collect() };
    let gt = EvalImage::new(l.res_u, l.res_v, scale(gt), ColorSpace::Xyz, exposure_ru)?.with_mask(valid.clone())?;
    let pred = EvalImage::new(l.res_u, l.res_v, scale(pred), ColorSpace::Xyz, exposure_ru)?.with_mask(valid)?;
    Ok((gt, pred))
}
