//! Fourier-optics forward model.
//!
//! The diffraction amplitude of the phasor `exp(i w k h)` is expanded as
//! `sum_n (i w k)^n / n! * (DFT{h^n} * G)(u / lambda, v / lambda)`, where `G`
//! is the frequency-space image of a Gaussian spatial coherence window. The
//! DFTs of the elevation powers are computed once per height-field; every
//! key and wavelength after that only touches the handful of bins under the
//! window.

use std::f64::consts::PI;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::colorimetry::{self, wavelength_um, ColorTriple, SPECTRAL_BINS};
use crate::heightfield::{HeightField, HeightFieldShape};
use crate::sampling::HalfVectorKey;
use crate::{Error, Result};

/// Shortest wavelength of the spectral grid, micrometers.
pub const LAMBDA_MIN_UM: f64 = 0.38;

/// Sample-count normalized DFTs of `(h - offset)^n` for `n = 0..=order`.
///
/// Coefficients are interleaved per bin (`[bin][n]`) so a window lookup reads
/// one contiguous run per bin.
#[derive(Debug, Clone)]
pub struct TaylorSpectra {
    coeffs: Vec<Complex64>,
    samples_x: usize,
    samples_y: usize,
    freq_step_x: f64,
    freq_step_y: f64,
    order: usize,
    offset: f64,
    source: HeightFieldShape,
    source_id: String,
}

/// Gaussian spatial coherence window, `sigma_s` in micrometers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceWindow {
    sigma_s: f64,
    /// Bins farther than this many `sigma_f` from the lookup frequency are ignored.
    truncation: f64,
}

impl CoherenceWindow {
    pub const DEFAULT_TRUNCATION: f64 = 3.0;

    pub fn new(sigma_s: f64) -> Result<Self> {
        Self::with_truncation(sigma_s, Self::DEFAULT_TRUNCATION)
    }

    pub fn with_truncation(sigma_s: f64, truncation: f64) -> Result<Self> {
        if !(sigma_s > 0.0) || !sigma_s.is_finite() {
            return Err(Error::invalid(format!("sigma_s must be positive, got {sigma_s}")));
        }
        if !(truncation > 0.0) {
            return Err(Error::invalid(format!(
                "truncation radius must be positive, got {truncation}"
            )));
        }
        Ok(CoherenceWindow { sigma_s, truncation })
    }

    pub fn sigma_s(&self) -> f64 {
        self.sigma_s
    }

    /// Frequency-space standard deviation, cycles per micrometer.
    pub fn sigma_f(&self) -> f64 {
        1.0 / (2.0 * PI * self.sigma_s)
    }

    pub fn truncation(&self) -> f64 {
        self.truncation
    }

    /// `exp(-(xi^2 + psi^2) / (2 sigma_f^2))`, unit at the origin.
    pub fn weight(&self, xi: f64, psi: f64) -> f64 {
        let sf = self.sigma_f();
        (-(xi * xi + psi * psi) / (2.0 * sf * sf)).exp()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttenuationParams {
    pub ior: f64,
    pub w_epsilon: f64,
    pub include_fresnel: bool,
}

impl Default for AttenuationParams {
    fn default() -> Self {
        AttenuationParams {
            ior: 1.5,
            w_epsilon: 1e-6,
            include_fresnel: true,
        }
    }
}

impl AttenuationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.ior >= 1.0) || !(self.w_epsilon > 0.0) {
            return Err(Error::invalid(format!(
                "attenuation needs ior >= 1 and w_epsilon > 0, got {} and {}",
                self.ior, self.w_epsilon
            )));
        }
        Ok(())
    }
}

/// Smallest `N` whose first omitted Taylor term bound `B^(N+1) / (N+1)!` drops
/// below `epsilon`, with `B = 2 * (2 pi / lambda_min) * max_elevation`.
///
/// # Panics
///
/// Panics unless `epsilon` is positive and finite.
pub fn choose_taylor_order(max_elevation: f64, lambda_min: f64, epsilon: f64) -> usize {
    assert!(epsilon > 0.0 && epsilon.is_finite(), "epsilon must be positive");
    let bound = 2.0 * (2.0 * PI / lambda_min) * max_elevation.abs();
    let (ln_b, ln_eps) = (bound.ln(), epsilon.ln());
    // Log space: the terms overflow long before the factorial wins for large B.
    let mut ln_term = 0.0;
    let mut n = 0usize;
    loop {
        ln_term += ln_b - ((n + 1) as f64).ln();
        if ln_term < ln_eps {
            return n;
        }
        n += 1;
    }
}

/// Spectra of the raw elevations, `DFT{h^n}`.
pub fn precompute_taylor_spectra(hf: &HeightField, order: usize) -> Result<TaylorSpectra> {
    precompute_taylor_spectra_about(hf, order, 0.0)
}

/// Spectra of `(h - offset)^n`. The offset only contributes the unit-modulus
/// phase `exp(i w k offset)` to the amplitude, so centering the elevations
/// shrinks the series without changing any reflectance.
pub fn precompute_taylor_spectra_about(
    hf: &HeightField,
    order: usize,
    offset: f64,
) -> Result<TaylorSpectra> {
    let (sx, sy) = (hf.samples_x(), hf.samples_y());
    let bins = sx * sy;
    let terms = order + 1;
    let norm = 1.0 / bins as f64;
    let base: Vec<f64> = hf.elevations().iter().map(|&h| h as f64 - offset).collect();

    let grids: Vec<Vec<Complex64>> = (0..terms)
        .into_par_iter()
        .map(|n| {
            let mut planner = FftPlanner::<f64>::new();
            let mut grid = Vec::with_capacity(bins);
            for &h in &base {
                let p = h.powi(n as i32);
                if !p.is_finite() {
                    return Err(Error::NumericRange(format!(
                        "elevation power h^{n} overflows for h = {h} um"
                    )));
                }
                grid.push(Complex64::new(p, 0.0));
            }
            fft2(&mut planner, &mut grid, sx, sy);
            grid.iter_mut().for_each(|c| *c *= norm);
            Ok(grid)
        })
        .collect::<Result<_>>()?;

    let mut coeffs = vec![Complex64::new(0.0, 0.0); bins * terms];
    for (n, grid) in grids.iter().enumerate() {
        for (b, c) in grid.iter().enumerate() {
            coeffs[b * terms + n] = *c;
        }
    }
    Ok(TaylorSpectra {
        coeffs,
        samples_x: sx,
        samples_y: sy,
        freq_step_x: 1.0 / hf.extent_x(),
        freq_step_y: 1.0 / hf.extent_y(),
        order,
        offset,
        source: hf.shape(),
        source_id: hf.content_id(),
    })
}

/// Centers the elevations on their mid-range and picks the order for `epsilon`.
pub fn precompute_for_accuracy(hf: &HeightField, epsilon: f64) -> Result<TaylorSpectra> {
    let (lo, hi) = (hf.min_elevation(), hf.max_elevation());
    let offset = 0.5 * (lo + hi);
    let order = choose_taylor_order(0.5 * (hi - lo), LAMBDA_MIN_UM, epsilon);
    precompute_taylor_spectra_about(hf, order, offset)
}

fn fft2(planner: &mut FftPlanner<f64>, data: &mut [Complex64], sx: usize, sy: usize) {
    let row = planner.plan_fft_forward(sx);
    for chunk in data.chunks_exact_mut(sx) {
        row.process(chunk);
    }
    let col = planner.plan_fft_forward(sy);
    let mut buf = vec![Complex64::new(0.0, 0.0); sy];
    for ix in 0..sx {
        for iy in 0..sy {
            buf[iy] = data[iy * sx + ix];
        }
        col.process(&mut buf);
        for iy in 0..sy {
            data[iy * sx + ix] = buf[iy];
        }
    }
}

impl TaylorSpectra {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn samples(&self) -> (usize, usize) {
        (self.samples_x, self.samples_y)
    }

    pub fn freq_step(&self) -> (f64, f64) {
        (self.freq_step_x, self.freq_step_y)
    }

    pub fn source(&self) -> HeightFieldShape {
        self.source
    }

    pub fn source_id(&self) -> &str {
        &self.source_id
    }

    /// Highest representable frequency per axis, cycles per micrometer.
    pub fn nyquist(&self) -> (f64, f64) {
        (
            0.5 * self.samples_x as f64 * self.freq_step_x,
            0.5 * self.samples_y as f64 * self.freq_step_y,
        )
    }

    /// `DFT{(h - offset)^n}` at integer bin `(kx, ky)`, `0 <= k < samples`.
    pub fn coefficient(&self, n: usize, kx: usize, ky: usize) -> Complex64 {
        self.coeffs[(ky * self.samples_x + kx) * (self.order + 1) + n]
    }

    /// Gaussian weights of the bins under the window centred at `(fx, fy)`.
    fn window_bins(&self, fx: f64, fy: f64, window: &CoherenceWindow, out: &mut Vec<(usize, f64)>) {
        out.clear();
        let radius = window.truncation() * window.sigma_f();
        let r2 = radius * radius;
        let (dfx, dfy) = (self.freq_step_x, self.freq_step_y);
        let (jx0, jx1) = (((fx - radius) / dfx).ceil() as i64, ((fx + radius) / dfx).floor() as i64);
        let (jy0, jy1) = (((fy - radius) / dfy).ceil() as i64, ((fy + radius) / dfy).floor() as i64);
        for jy in jy0..=jy1 {
            let dy = jy as f64 * dfy - fy;
            let ky = jy.rem_euclid(self.samples_y as i64) as usize;
            for jx in jx0..=jx1 {
                let dx = jx as f64 * dfx - fx;
                if dx * dx + dy * dy <= r2 {
                    let kx = jx.rem_euclid(self.samples_x as i64) as usize;
                    out.push((ky * self.samples_x + kx, window.weight(dx, dy)));
                }
            }
        }
        if out.is_empty() {
            // Window narrower than the bin spacing: fall back to the nearest bin.
            let (jx, jy) = ((fx / dfx).round() as i64, (fy / dfy).round() as i64);
            let kx = jx.rem_euclid(self.samples_x as i64) as usize;
            let ky = jy.rem_euclid(self.samples_y as i64) as usize;
            out.push((
                ky * self.samples_x + kx,
                window.weight(jx as f64 * dfx - fx, jy as f64 * dfy - fy),
            ));
        }
    }

    fn check_band(&self, fx: f64, fy: f64) -> Result<()> {
        let (nx, ny) = self.nyquist();
        let tol = 1.0 + 1e-12;
        if fx.abs() > nx * tol || fy.abs() > ny * tol || !fx.is_finite() || !fy.is_finite() {
            return Err(Error::OutOfBand {
                fx,
                fy,
                nyquist_x: nx,
                nyquist_y: ny,
            });
        }
        Ok(())
    }

    /// Window-convolved coefficients `(DFT{h^n} * G)(fx, fy)` for every `n`.
    fn convolved(
        &self,
        fx: f64,
        fy: f64,
        window: &CoherenceWindow,
        bins: &mut Vec<(usize, f64)>,
        out: &mut Vec<Complex64>,
    ) -> Result<()> {
        self.check_band(fx, fy)?;
        self.window_bins(fx, fy, window, bins);
        let terms = self.order + 1;
        out.clear();
        out.resize(terms, Complex64::new(0.0, 0.0));
        for &(b, wgt) in bins.iter() {
            let src = &self.coeffs[b * terms..(b + 1) * terms];
            for (o, c) in out.iter_mut().zip(src) {
                *o += c * wgt;
            }
        }
        Ok(())
    }

    /// `exp(i w k offset) * sum_n (i w k)^n / n! * coeffs[n]`.
    fn series(&self, coeffs: &[Complex64], wk: f64) -> Complex64 {
        let z = Complex64::new(0.0, wk);
        let mut acc = Complex64::new(0.0, 0.0);
        let mut term = Complex64::new(1.0, 0.0);
        for (n, c) in coeffs.iter().enumerate() {
            if n > 0 {
                term = term * z / n as f64;
            }
            acc += term * c;
        }
        if self.offset != 0.0 {
            acc *= Complex64::from_polar(1.0, wk * self.offset);
        }
        acc
    }

    /// Spectral `F`-term for several `w` sharing one `(u, v)`, integrated to XYZ.
    ///
    /// The window convolution does not depend on `w`, so it is done once per
    /// wavelength and reused across the column.
    pub(crate) fn reflectance_column(
        &self,
        u: f64,
        v: f64,
        ws: &[f64],
        window: &CoherenceWindow,
    ) -> Result<Vec<[f64; 3]>> {
        let t = &*colorimetry::TABLES;
        let mut out = vec![[0.0; 3]; ws.len()];
        let mut bins = Vec::new();
        let mut coeffs = Vec::new();
        for i in 0..SPECTRAL_BINS {
            let lambda = wavelength_um(i);
            self.convolved(u / lambda, v / lambda, window, &mut bins, &mut coeffs)?;
            let k = 2.0 * PI / lambda;
            for (o, &w) in out.iter_mut().zip(ws) {
                let e = self.series(&coeffs, w * k).norm_sqr();
                o[0] += e * t.weight_x[i];
                o[1] += e * t.weight_y[i];
                o[2] += e * t.weight_z[i];
            }
        }
        Ok(out)
    }
}

/// Complex diffraction amplitude at `key` for wavelength `lambda` (micrometers).
pub fn eval_amplitude(
    key: &HalfVectorKey,
    lambda: f64,
    spectra: &TaylorSpectra,
    window: &CoherenceWindow,
) -> Result<Complex64> {
    let mut bins = Vec::new();
    let mut coeffs = Vec::new();
    spectra.convolved(key.u / lambda, key.v / lambda, window, &mut bins, &mut coeffs)?;
    Ok(spectra.series(&coeffs, key.w * 2.0 * PI / lambda))
}

/// Spectrally integrated `|amplitude|^2` in XYZ, without attenuation.
pub fn reflectance_xyz(
    key: &HalfVectorKey,
    spectra: &TaylorSpectra,
    window: &CoherenceWindow,
) -> Result<ColorTriple> {
    if key.w > 0.0 {
        return Err(Error::invalid(format!("key w must be <= 0, got {}", key.w)));
    }
    let xyz = spectra.reflectance_column(key.u, key.v, &[key.w], window)?;
    Ok(ColorTriple::xyz(xyz[0]))
}

/// Unpolarized dielectric Fresnel reflectance from air into `ior`.
pub fn fresnel_dielectric(cos_i: f64, ior: f64) -> f64 {
    let cos_i = cos_i.clamp(0.0, 1.0);
    let sin_t2 = (1.0 - cos_i * cos_i) / (ior * ior);
    if sin_t2 >= 1.0 {
        return 1.0;
    }
    let cos_t = (1.0 - sin_t2).sqrt();
    let rs = (cos_i - ior * cos_t) / (cos_i + ior * cos_t);
    let rp = (ior * cos_i - cos_t) / (ior * cos_i + cos_t);
    0.5 * (rs * rs + rp * rp)
}

/// Relative attenuation `(R / R0)^2 * G / w^2`, zero for `|w| <= w_epsilon`
/// or grazing directions.
pub fn attenuation(omega_i: [f64; 3], omega_o: [f64; 3], params: &AttenuationParams) -> f64 {
    let (cos_i, cos_o) = (omega_i[2], omega_o[2]);
    if cos_i < 1e-9 || cos_o < 1e-9 {
        return 0.0;
    }
    let w = -(omega_i[2] + omega_o[2]);
    if w.abs() <= params.w_epsilon {
        return 0.0;
    }
    let dot = omega_i[0] * omega_o[0] + omega_i[1] * omega_o[1] + omega_i[2] * omega_o[2];
    let g = (1.0 + dot).powi(2) / (cos_i * cos_o);
    let fresnel_ratio = if params.include_fresnel {
        let h = [
            omega_i[0] + omega_o[0],
            omega_i[1] + omega_o[1],
            omega_i[2] + omega_o[2],
        ];
        let len = (h[0] * h[0] + h[1] * h[1] + h[2] * h[2]).sqrt();
        let cos_h = (omega_i[0] * h[0] + omega_i[1] * h[1] + omega_i[2] * h[2]) / len;
        fresnel_dielectric(cos_h, params.ior) / fresnel_dielectric(1.0, params.ior)
    } else {
        1.0
    };
    fresnel_ratio * fresnel_ratio * g / (w * w)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightfield::generate_blazed;
    use approx::assert_abs_diff_eq;

    fn key(u: f64, v: f64, w: f64) -> HalfVectorKey {
        HalfVectorKey::new(u, v, w)
    }

    /// ln of the omitted-term bound via an explicit factorial log-sum.
    fn order_oracle(b: f64, eps: f64) -> usize {
        (0..10_000)
            .find(|&n| {
                let ln_fact: f64 = (1..=n + 1).map(|k| (k as f64).ln()).sum();
                (n + 1) as f64 * b.ln() - ln_fact < eps.ln()
            })
            .unwrap()
    }

    #[test]
    fn taylor_order_examples() {
        assert_eq!(choose_taylor_order(0.0, 0.38, 1e-8), 0);
        let b = 2.0 * (2.0 * PI / 0.38) * 0.25;
        assert_abs_diff_eq!(b, 8.267, epsilon = 1e-3);
        let n = choose_taylor_order(0.25, 0.38, 1e-8);
        assert_eq!(n, order_oracle(b, 1e-8));
        assert_eq!(n, 35);
        // B <= 1 and epsilon >= 1: the first omitted term is already small enough.
        assert_eq!(choose_taylor_order(0.5 * 0.38 / (4.0 * PI), 0.38, 1.0), 0);
        for (h, eps) in [(0.06, 1e-6), (0.5, 1e-10), (1.0, 1e-8)] {
            let b = 2.0 * (2.0 * PI / 0.38) * h;
            assert_eq!(choose_taylor_order(h, 0.38, eps), order_oracle(b, eps));
        }
    }

    #[test]
    fn dc_grid_is_unit_impulse() {
        let hf = crate::heightfield::generate_random(0.3, 4.0, 8, 2).unwrap();
        let s = precompute_taylor_spectra(&hf, 3).unwrap();
        for ky in 0..8 {
            for kx in 0..8 {
                let c = s.coefficient(0, kx, ky);
                let expect = if kx == 0 && ky == 0 { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(c.re, expect, epsilon = 1e-14);
                assert_abs_diff_eq!(c.im, 0.0, epsilon = 1e-14);
            }
        }
    }

    #[test]
    fn constant_field_powers() {
        let c = 0.7;
        let hf = HeightField::from_fn(8, 4.0, |_, _| c).unwrap();
        let cf = c as f32 as f64;
        let s = precompute_taylor_spectra(&hf, 4).unwrap();
        for n in 0..=4 {
            assert_abs_diff_eq!(s.coefficient(n, 0, 0).norm(), cf.powi(n as i32), epsilon = 1e-12);
            assert_abs_diff_eq!(s.coefficient(n, 3, 5).norm(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn parseval_against_brute_force_dft() {
        let hf = crate::heightfield::generate_random(0.5, 4.0, 8, 11).unwrap();
        let s = precompute_taylor_spectra(&hf, 1).unwrap();
        let m = 64.0;
        let mut mean_sq_bins = 0.0;
        for ky in 0..8 {
            for kx in 0..8 {
                // Literal DFT sum.
                let mut acc = Complex64::new(0.0, 0.0);
                for y in 0..8 {
                    for x in 0..8 {
                        let ph = -2.0 * PI * ((kx * x) as f64 / 8.0 + (ky * y) as f64 / 8.0);
                        acc += Complex64::from_polar(hf.at(x, y) as f64, ph);
                    }
                }
                acc /= m;
                let c = s.coefficient(1, kx, ky);
                assert_abs_diff_eq!((c - acc).norm(), 0.0, epsilon = 1e-13);
                mean_sq_bins += c.norm_sqr() / m;
            }
        }
        let mean_h2: f64 = hf.elevations().iter().map(|&h| (h as f64).powi(2)).sum::<f64>() / m;
        assert_abs_diff_eq!(mean_sq_bins, mean_h2 / m, epsilon = 1e-14);
    }

    #[test]
    fn flat_field_dc_amplitude_is_one() {
        let hf = HeightField::from_fn(8, 2.0, |_, _| 0.0).unwrap();
        let s = precompute_taylor_spectra(&hf, 0).unwrap();
        let win = CoherenceWindow::new(0.5).unwrap();
        for lambda in [0.38, 0.55, 0.78] {
            let a = eval_amplitude(&key(0.0, 0.0, -2.0), lambda, &s, &win).unwrap();
            assert_abs_diff_eq!(a.re, 1.0, epsilon = 1e-14);
            assert_abs_diff_eq!(a.im, 0.0, epsilon = 1e-14);
        }
        let xyz = reflectance_xyz(&key(0.0, 0.0, -2.0), &s, &win).unwrap();
        let white = colorimetry::spectrum_to_xyz(&[1.0; SPECTRAL_BINS]).unwrap();
        for i in 0..3 {
            assert_abs_diff_eq!(xyz.c[i], white.c[i], epsilon = 1e-12);
        }
    }

    #[test]
    fn vanishing_w_reduces_to_flat() {
        let hf = generate_blazed(4.0, 0.25, 8.0, 32).unwrap();
        let s = precompute_taylor_spectra(&hf, 20).unwrap();
        let flat = precompute_taylor_spectra(&HeightField::from_fn(32, 8.0, |_, _| 0.0).unwrap(), 0).unwrap();
        let win = CoherenceWindow::new(2.0).unwrap();
        for u in [0.0, 0.1, 0.3] {
            let a = eval_amplitude(&key(u, 0.05, -1e-9), 0.5, &s, &win).unwrap();
            let b = eval_amplitude(&key(u, 0.05, -1e-9), 0.5, &flat, &win).unwrap();
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-7);
        }
    }

    #[test]
    fn out_of_band_rejected() {
        let hf = HeightField::from_fn(8, 8.0, |_, _| 0.1).unwrap();
        let s = precompute_taylor_spectra(&hf, 2).unwrap();
        let win = CoherenceWindow::new(2.0).unwrap();
        // Nyquist is 0.5 cycles/um; u / lambda = 2.
        let err = eval_amplitude(&key(1.0, 0.0, -1.0), 0.5, &s, &win).unwrap_err();
        assert!(matches!(err, Error::OutOfBand { .. }));
        assert!(err.is_numeric());
    }

    #[test]
    fn reflectance_is_non_negative() {
        let hf = generate_blazed(2.0, 0.2, 4.0, 32).unwrap();
        let s = precompute_for_accuracy(&hf, 1e-8).unwrap();
        let win = CoherenceWindow::new(1.0).unwrap();
        for u in [-1.0, -0.3, 0.0, 0.45, 1.1] {
            let c = reflectance_xyz(&key(u, 0.2, -1.3), &s, &win).unwrap();
            assert!(c.c.iter().all(|v| *v >= 0.0 && v.is_finite()));
        }
        assert!(reflectance_xyz(&key(0.0, 0.0, 0.5), &s, &win).is_err());
    }

    #[test]
    fn centered_spectra_match_raw_intensity() {
        let hf = generate_blazed(2.0, 0.25, 8.0, 64).unwrap();
        let raw = precompute_taylor_spectra(&hf, choose_taylor_order(0.25, 0.38, 1e-12)).unwrap();
        let centered = precompute_for_accuracy(&hf, 1e-12).unwrap();
        assert!(centered.order() < raw.order());
        let win = CoherenceWindow::new(2.0).unwrap();
        for (u, v, w) in [(0.1, 0.0, -1.9), (0.52, 0.1, -1.2), (-0.8, 0.3, -0.4)] {
            let a = eval_amplitude(&key(u, v, w), 0.61, &raw, &win).unwrap();
            let b = eval_amplitude(&key(u, v, w), 0.61, &centered, &win).unwrap();
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-10);
        }
    }

    #[test]
    fn attenuation_anchor_and_edge_cases() {
        let p = AttenuationParams::default();
        let up = [0.0, 0.0, 1.0];
        assert_abs_diff_eq!(attenuation(up, up, &p), 1.0, epsilon = 1e-14);

        // |w| = 1e-7 at grazing-but-valid directions.
        let a = 5e-8f64;
        let wi = [(1.0 - a * a).sqrt(), 0.0, a];
        let wo = [-(1.0 - a * a).sqrt(), 0.0, a];
        assert_eq!(attenuation(wi, wo, &p), 0.0);

        let s = (30f64).to_radians();
        let wi = [s.sin(), 0.0, s.cos()];
        let wo = [-0.2, 0.1, (1.0f64 - 0.05).sqrt()];
        let no_fresnel = AttenuationParams { include_fresnel: false, ..p };
        let other_ior = AttenuationParams { ior: 2.4, ..no_fresnel };
        let dot: f64 = (0..3).map(|i| wi[i] * wo[i]).sum();
        let w = -(wi[2] + wo[2]);
        let g = (1.0 + dot).powi(2) / (wi[2] * wo[2]);
        assert_abs_diff_eq!(attenuation(wi, wo, &no_fresnel), g / (w * w), epsilon = 1e-12);
        assert_eq!(attenuation(wi, wo, &no_fresnel), attenuation(wi, wo, &other_ior));
        assert_eq!(attenuation(wi, [1.0, 0.0, 0.0], &p), 0.0);
    }

    #[test]
    fn fresnel_normal_incidence() {
        assert_abs_diff_eq!(fresnel_dielectric(1.0, 1.5), 0.04, epsilon = 1e-12);
        assert_abs_diff_eq!(fresnel_dielectric(0.0, 1.5), 1.0, epsilon = 1e-12);
    }
}
