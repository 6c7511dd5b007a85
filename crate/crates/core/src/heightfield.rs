//! Nanostructure height-fields.
//!
//! Elevations are held in micrometers as `f32`, the same precision the file
//! format stores, so a store/load round trip is bit-exact. Sample `(ix, iy)`
//! sits at `(ix * extent_x / samples_x, iy * extent_y / samples_y)` and the
//! grid is row-major with `y` as the outer index.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::formats::HEIGHTFIELD_MAGIC;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct HeightField {
    elevations: Vec<f32>,
    samples_x: usize,
    samples_y: usize,
    extent_x: f64,
    extent_y: f64,
}

/// Shape summary carried in dataset metadata.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeightFieldShape {
    pub samples_x: usize,
    pub samples_y: usize,
    pub extent_x_um: f64,
    pub extent_y_um: f64,
}

impl HeightField {
    pub fn new(
        elevations: Vec<f32>,
        samples_x: usize,
        samples_y: usize,
        extent_x: f64,
        extent_y: f64,
    ) -> Result<Self> {
        if samples_x < 2 || samples_y < 2 {
            return Err(Error::invalid(format!(
                "height-field needs at least 2x2 samples, got {samples_x}x{samples_y}"
            )));
        }
        if !(extent_x > 0.0 && extent_y > 0.0 && extent_x.is_finite() && extent_y.is_finite()) {
            return Err(Error::invalid(format!(
                "height-field extents must be positive, got {extent_x} x {extent_y}"
            )));
        }
        if elevations.len() != samples_x * samples_y {
            return Err(Error::DimensionMismatch {
                expected: samples_x * samples_y,
                found: elevations.len(),
            });
        }
        if let Some(bad) = elevations.iter().find(|h| !h.is_finite() || **h < 0.0) {
            return Err(Error::invalid(format!(
                "elevations must be finite and non-negative, found {bad}"
            )));
        }
        Ok(HeightField {
            elevations,
            samples_x,
            samples_y,
            extent_x,
            extent_y,
        })
    }

    /// Builds a square field by evaluating `f(x, y)` at every sample position.
    pub fn from_fn(
        samples: usize,
        extent: f64,
        mut f: impl FnMut(f64, f64) -> f64,
    ) -> Result<Self> {
        let dx = extent / samples as f64;
        let mut elevations = Vec::with_capacity(samples * samples);
        for iy in 0..samples {
            for ix in 0..samples {
                elevations.push(f(ix as f64 * dx, iy as f64 * dx) as f32);
            }
        }
        HeightField::new(elevations, samples, samples, extent, extent)
    }

    pub fn samples_x(&self) -> usize {
        self.samples_x
    }

    pub fn samples_y(&self) -> usize {
        self.samples_y
    }

    pub fn extent_x(&self) -> f64 {
        self.extent_x
    }

    pub fn extent_y(&self) -> f64 {
        self.extent_y
    }

    pub fn spacing_x(&self) -> f64 {
        self.extent_x / self.samples_x as f64
    }

    pub fn spacing_y(&self) -> f64 {
        self.extent_y / self.samples_y as f64
    }

    pub fn elevations(&self) -> &[f32] {
        &self.elevations
    }

    pub fn at(&self, ix: usize, iy: usize) -> f32 {
        self.elevations[iy * self.samples_x + ix]
    }

    pub fn min_elevation(&self) -> f64 {
        self.elevations.iter().fold(f32::INFINITY, |a, &b| a.min(b)) as f64
    }

    pub fn max_elevation(&self) -> f64 {
        self.elevations.iter().fold(0.0f32, |a, &b| a.max(b)) as f64
    }

    pub fn shape(&self) -> HeightFieldShape {
        HeightFieldShape {
            samples_x: self.samples_x,
            samples_y: self.samples_y,
            extent_x_um: self.extent_x,
            extent_y_um: self.extent_y,
        }
    }

    /// Returns a copy with `offset` added to every elevation.
    pub fn offset(&self, offset: f64) -> Result<Self> {
        let elevations = self
            .elevations
            .iter()
            .map(|&h| (h as f64 + offset) as f32)
            .collect();
        HeightField::new(
            elevations,
            self.samples_x,
            self.samples_y,
            self.extent_x,
            self.extent_y,
        )
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 4 * self.elevations.len());
        out.extend_from_slice(HEIGHTFIELD_MAGIC);
        binio::put_u32(&mut out, self.samples_x as u32);
        binio::put_u32(&mut out, self.samples_y as u32);
        binio::put_f64(&mut out, self.extent_x);
        binio::put_f64(&mut out, self.extent_y);
        binio::put_f32s(&mut out, self.elevations.iter().copied());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "height-field");
        r.expect_magic(HEIGHTFIELD_MAGIC)?;
        let samples_x = r.u32()? as usize;
        let samples_y = r.u32()? as usize;
        let extent_x = r.f64()?;
        let extent_y = r.f64()?;
        if samples_x == 0 || samples_y == 0 {
            return Err(Error::format(format!(
                "height-field: zero-size grid {samples_x}x{samples_y}"
            )));
        }
        let elevations = r.f32_vec(samples_x * samples_y)?;
        r.finish()?;
        HeightField::new(elevations, samples_x, samples_y, extent_x, extent_y)
    }

    /// SHA-256 of the serialized field, used to tie datasets to their source.
    pub fn content_id(&self) -> String {
        binio::sha256_hex(&self.to_bytes())
    }
}

fn check_grid(extent: f64, samples: usize) -> Result<()> {
    if !(extent > 0.0) || !extent.is_finite() {
        return Err(Error::invalid(format!("extent must be positive, got {extent}")));
    }
    if samples < 2 {
        return Err(Error::invalid(format!("need at least 2 samples, got {samples}")));
    }
    Ok(())
}

/// Sawtooth blazed grating with grooves along `y`.
///
/// Each tooth spans `round(period / dx)` samples and ramps linearly from 0 up
/// to exactly `peak_height`.
pub fn generate_blazed(period: f64, peak_height: f64, extent: f64, samples: usize) -> Result<HeightField> {
    check_grid(extent, samples)?;
    if !(period > 0.0) || !(peak_height > 0.0) {
        return Err(Error::invalid(format!(
            "period and peak height must be positive, got {period} and {peak_height}"
        )));
    }
    let dx = extent / samples as f64;
    let teeth = extent / period;
    if (teeth - teeth.round()).abs() * period > dx + 1e-12 || teeth.round() < 1.0 {
        return Err(Error::invalid(format!(
            "period {period} um does not divide extent {extent} um to within one grid cell"
        )));
    }
    let per_tooth = (period / dx).round() as usize;
    if per_tooth < 2 {
        return Err(Error::invalid(format!(
            "period {period} um spans fewer than two samples of {dx} um"
        )));
    }
    let ramp = (0..samples)
        .map(|ix| (peak_height * (ix % per_tooth) as f64 / (per_tooth - 1) as f64) as f32)
        .collect::<Vec<_>>();
    let elevations = (0..samples).flat_map(|_| ramp.iter().copied()).collect();
    HeightField::new(elevations, samples, samples, extent, extent)
}

/// Parameters of a synthetic compact-disc patch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CdParams {
    pub track_pitch: f64,
    pub pit_depth: f64,
    pub bit_length: f64,
    /// Pit width across the track, as a fraction of the pitch.
    pub pit_width_fraction: f64,
    pub min_run_bits: u32,
    pub max_run_bits: u32,
}

impl Default for CdParams {
    fn default() -> Self {
        CdParams {
            track_pitch: 1.6,
            pit_depth: 0.12,
            bit_length: 0.3,
            pit_width_fraction: 0.5 / 1.6,
            min_run_bits: 3,
            max_run_bits: 11,
        }
    }
}

/// Synthetic CD: tracks along `x`, `track_pitch` apart in `y`, with alternating
/// land/pit runs whose lengths are drawn uniformly from 3..=11 bit lengths.
///
/// Pits are raised by `pit_depth` over a zero land, which is how they present
/// to the reading side of the disc.
pub fn generate_synthetic_cd(
    track_pitch: f64,
    pit_depth: f64,
    bit_length: f64,
    extent: f64,
    samples: usize,
    seed: u64,
) -> Result<HeightField> {
    let params = CdParams {
        track_pitch,
        pit_depth,
        bit_length,
        ..CdParams::default()
    };
    generate_synthetic_cd_with(&params, extent, samples, seed)
}

pub fn generate_synthetic_cd_with(
    params: &CdParams,
    extent: f64,
    samples: usize,
    seed: u64,
) -> Result<HeightField> {
    check_grid(extent, samples)?;
    let CdParams {
        track_pitch,
        pit_depth,
        bit_length,
        pit_width_fraction,
        min_run_bits,
        max_run_bits,
    } = *params;
    if !(track_pitch > 0.0) || track_pitch > extent {
        return Err(Error::invalid(format!(
            "track pitch {track_pitch} um must be positive and no larger than the extent {extent} um"
        )));
    }
    if !(bit_length > 0.0) || !(pit_depth >= 0.0) {
        return Err(Error::invalid("bit length must be positive and pit depth non-negative"));
    }
    if !(pit_width_fraction > 0.0 && pit_width_fraction <= 1.0) || min_run_bits == 0 || min_run_bits > max_run_bits {
        return Err(Error::invalid("inconsistent pit width or run-length bounds"));
    }

    let dx = extent / samples as f64;
    let n_tracks = (extent / track_pitch).floor() as usize;
    let half_width = 0.5 * pit_width_fraction * track_pitch;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // Per track, a bit-level pit mask along x.
    let n_bits = (extent / bit_length).ceil() as usize + 1;
    let mut tracks = Vec::with_capacity(n_tracks);
    for _ in 0..n_tracks {
        let mut bits = Vec::with_capacity(n_bits + max_run_bits as usize);
        let mut pit = rng.random_bool(0.5);
        // Random phase so tracks do not all start with a full run.
        let mut skip = rng.random_range(0..max_run_bits as usize);
        while bits.len() < n_bits {
            let run = rng.random_range(min_run_bits..=max_run_bits) as usize;
            for _ in 0..run {
                if skip > 0 {
                    skip -= 1;
                } else {
                    bits.push(pit);
                }
            }
            pit = !pit;
        }
        tracks.push(bits);
    }

    let mut elevations = vec![0.0f32; samples * samples];
    for iy in 0..samples {
        let y = iy as f64 * dx;
        let track = (y / track_pitch).floor() as usize;
        if track >= n_tracks {
            continue;
        }
        let centre = (track as f64 + 0.5) * track_pitch;
        if (y - centre).abs() >= half_width {
            continue;
        }
        let row = &mut elevations[iy * samples..(iy + 1) * samples];
        for (ix, h) in row.iter_mut().enumerate() {
            let bit = ((ix as f64 * dx) / bit_length).floor() as usize;
            if tracks[track][bit] {
                *h = pit_depth as f32;
            }
        }
    }
    HeightField::new(elevations, samples, samples, extent, extent)
}

/// Uniform random elevations in `[0, max_height]`.
pub fn generate_random(max_height: f64, extent: f64, samples: usize, seed: u64) -> Result<HeightField> {
    check_grid(extent, samples)?;
    if !(max_height > 0.0) || !max_height.is_finite() {
        return Err(Error::invalid(format!("max height must be positive, got {max_height}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let elevations = (0..samples * samples)
        .map(|_| (rng.random::<f64>() * max_height).min(max_height) as f32)
        .collect();
    HeightField::new(elevations, samples, samples, extent, extent)
}

/// Multiplies elevations by `exp(-r^2 / (2 sigma^2))`, `r` measured from the
/// patch centre `(extent_x / 2, extent_y / 2)`.
pub fn apply_gaussian_window(hf: &HeightField, sigma: f64) -> Result<HeightField> {
    if !(sigma > 0.0) {
        return Err(Error::invalid(format!("window sigma must be positive, got {sigma}")));
    }
    let (cx, cy) = (0.5 * hf.extent_x, 0.5 * hf.extent_y);
    let (dx, dy) = (hf.spacing_x(), hf.spacing_y());
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut elevations = hf.elevations.clone();
    for iy in 0..hf.samples_y {
        let ry = iy as f64 * dy - cy;
        for ix in 0..hf.samples_x {
            let rx = ix as f64 * dx - cx;
            let damp = (-(rx * rx + ry * ry) * inv).exp();
            let h = &mut elevations[iy * hf.samples_x + ix];
            *h = (*h as f64 * damp) as f32;
        }
    }
    HeightField::new(elevations, hf.samples_x, hf.samples_y, hf.extent_x, hf.extent_y)
}
