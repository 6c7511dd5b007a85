//! Spectral integration and color-space conversion.
//!
//! Spectra live on a fixed 380–780 nm grid at 5 nm (81 bins). XYZ is
//! normalized so that a unit reflectance spectrum under D65 has `Y = 1`.

use std::sync::LazyLock;

use serde::{Deserialize, Serialize};

use crate::cie_tables::{CMF_X, CMF_Y, CMF_Z, D65};
use crate::{Error, Result};

pub const SPECTRAL_BINS: usize = 81;
pub const LAMBDA_MIN_NM: f64 = 380.0;
pub const LAMBDA_STEP_NM: f64 = 5.0;

/// Wavelength of bin `i` in micrometers.
pub fn wavelength_um(i: usize) -> f64 {
    (LAMBDA_MIN_NM + LAMBDA_STEP_NM * i as f64) * 1e-3
}

pub fn wavelengths_um() -> impl Iterator<Item = f64> {
    (0..SPECTRAL_BINS).map(wavelength_um)
}

/// Precomputed per-bin integration weights `K * d65 * cmf * dlambda`.
pub struct SpectralTables {
    pub weight_x: [f64; SPECTRAL_BINS],
    pub weight_y: [f64; SPECTRAL_BINS],
    pub weight_z: [f64; SPECTRAL_BINS],
    /// Normalization constant applied to the raw D65-weighted sums.
    pub k: f64,
}

impl SpectralTables {
    pub fn cmf(&self, bin: usize) -> [f64; 3] {
        [CMF_X[bin], CMF_Y[bin], CMF_Z[bin]]
    }

    pub fn d65(&self, bin: usize) -> f64 {
        D65[bin]
    }
}

pub static TABLES: LazyLock<SpectralTables> = LazyLock::new(|| {
    let raw_y: f64 = (0..SPECTRAL_BINS).map(|i| D65[i] * CMF_Y[i] * LAMBDA_STEP_NM).sum();
    let k = 1.0 / raw_y;
    let mut t = SpectralTables {
        weight_x: [0.0; SPECTRAL_BINS],
        weight_y: [0.0; SPECTRAL_BINS],
        weight_z: [0.0; SPECTRAL_BINS],
        k,
    };
    for i in 0..SPECTRAL_BINS {
        let s = k * D65[i] * LAMBDA_STEP_NM;
        t.weight_x[i] = s * CMF_X[i];
        t.weight_y[i] = s * CMF_Y[i];
        t.weight_z[i] = s * CMF_Z[i];
    }
    t
});

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ColorSpace {
    Xyz,
    LinearRgb,
    Srgb,
    YCbCr,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ColorTriple {
    pub c: [f64; 3],
    pub space: ColorSpace,
}

impl ColorTriple {
    pub fn new(c: [f64; 3], space: ColorSpace) -> Self {
        ColorTriple { c, space }
    }

    pub fn xyz(c: [f64; 3]) -> Self {
        ColorTriple::new(c, ColorSpace::Xyz)
    }

    fn expect(&self, space: ColorSpace) -> Result<()> {
        if self.space != space {
            return Err(Error::invalid(format!(
                "expected a {space:?} color, got {:?}",
                self.space
            )));
        }
        Ok(())
    }
}

/// Integrates an 81-bin spectrum against D65 and the CIE 1931 2° observer.
pub fn spectrum_to_xyz(spectrum: &[f64]) -> Result<ColorTriple> {
    if spectrum.len() != SPECTRAL_BINS {
        return Err(Error::invalid(format!(
            "spectrum must have {SPECTRAL_BINS} bins on the 5 nm grid, got {}",
            spectrum.len()
        )));
    }
    Ok(ColorTriple::xyz(integrate(spectrum)))
}

#[inline]
pub(crate) fn integrate(spectrum: &[f64]) -> [f64; 3] {
    let t = &*TABLES;
    let mut xyz = [0.0; 3];
    for (i, &s) in spectrum.iter().enumerate() {
        xyz[0] += s * t.weight_x[i];
        xyz[1] += s * t.weight_y[i];
        xyz[2] += s * t.weight_z[i];
    }
    xyz
}

/// Linear sRGB (D65) to XYZ, derived from the sRGB primaries.
pub const RGB_TO_XYZ: [[f64; 3]; 3] = [
    [0.412_456_4, 0.357_576_1, 0.180_437_5],
    [0.212_672_9, 0.715_152_2, 0.072_175_0],
    [0.019_333_9, 0.119_192_0, 0.950_304_1],
];

pub static XYZ_TO_RGB: LazyLock<[[f64; 3]; 3]> = LazyLock::new(|| invert3(&RGB_TO_XYZ));

pub(crate) fn invert3(m: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let cof = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    let c = [
        [cof(1, 2, 1, 2), -cof(1, 2, 0, 2), cof(1, 2, 0, 1)],
        [-cof(0, 2, 1, 2), cof(0, 2, 0, 2), -cof(0, 2, 0, 1)],
        [cof(0, 1, 1, 2), -cof(0, 1, 0, 2), cof(0, 1, 0, 1)],
    ];
    let det = m[0][0] * c[0][0] + m[0][1] * c[0][1] + m[0][2] * c[0][2];
    let mut inv = [[0.0; 3]; 3];
    for (r, row) in inv.iter_mut().enumerate() {
        for (col, v) in row.iter_mut().enumerate() {
            *v = c[col][r] / det;
        }
    }
    inv
}

#[inline]
pub(crate) fn mat_mul(m: &[[f64; 3]; 3], v: [f64; 3]) -> [f64; 3] {
    [
        m[0][0] * v[0] + m[0][1] * v[1] + m[0][2] * v[2],
        m[1][0] * v[0] + m[1][1] * v[1] + m[1][2] * v[2],
        m[2][0] * v[0] + m[2][1] * v[1] + m[2][2] * v[2],
    ]
}

/// Matrix conversion only; out-of-gamut values are left negative here.
pub fn xyz_to_linear_rgb(c: ColorTriple) -> Result<ColorTriple> {
    c.expect(ColorSpace::Xyz)?;
    Ok(ColorTriple::new(mat_mul(&XYZ_TO_RGB, c.c), ColorSpace::LinearRgb))
}

pub fn linear_rgb_to_xyz(c: ColorTriple) -> Result<ColorTriple> {
    c.expect(ColorSpace::LinearRgb)?;
    Ok(ColorTriple::new(mat_mul(&RGB_TO_XYZ, c.c), ColorSpace::Xyz))
}

/// IEC 61966-2-1 transfer curve for one clamped channel.
#[inline]
pub fn srgb_encode(linear: f64) -> f64 {
    let l = linear.max(0.0);
    let e = if l <= 0.003_130_8 {
        12.92 * l
    } else {
        1.055 * l.powf(1.0 / 2.4) - 0.055
    };
    e.clamp(0.0, 1.0)
}

pub fn srgb_decode(encoded: f64) -> f64 {
    let e = encoded.clamp(0.0, 1.0);
    if e <= 0.040_45 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

/// Clamps to `[0, inf)`, encodes, then clamps to `[0, 1]`.
pub fn linear_to_srgb(c: ColorTriple) -> Result<ColorTriple> {
    c.expect(ColorSpace::LinearRgb)?;
    Ok(ColorTriple::new(c.c.map(srgb_encode), ColorSpace::Srgb))
}

/// BT.601 full-range YCbCr from encoded sRGB.
pub fn srgb_to_ycbcr(c: ColorTriple) -> Result<ColorTriple> {
    c.expect(ColorSpace::Srgb)?;
    Ok(ColorTriple::new(ycbcr601(c.c), ColorSpace::YCbCr))
}

#[inline]
pub(crate) fn ycbcr601([r, g, b]: [f64; 3]) -> [f64; 3] {
    let y = 0.299 * r + 0.587 * g + 0.114 * b;
    let cb = 0.5 + (b - y) / 1.772;
    let cr = 0.5 + (r - y) / 1.402;
    [y.clamp(0.0, 1.0), cb.clamp(0.0, 1.0), cr.clamp(0.0, 1.0)]
}

/// Exposed XYZ straight to display sRGB.
pub fn xyz_to_srgb(xyz: [f64; 3]) -> [f64; 3] {
    mat_mul(&XYZ_TO_RGB, xyz).map(srgb_encode)
}
