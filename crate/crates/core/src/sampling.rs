//! Key-space sampling schemes, dataset generation and train/test splits.
//!
//! Grid index `(iu, iv, iw)` maps to a key as follows. The regular coordinate
//! is `u* = -2 + 4 iu / (res_u - 1)` (likewise `v*`). `Regular` uses `u = u*`;
//! `Simple` and `SimpleMax` use `u = 2 sign(u*) (u*/2)^2`. `Regular` and
//! `Simple` sample `w = -2 + 2 iw / (res_w - 1)`; `SimpleMax` samples
//! `w = -W (1 - iw / (res_w - 1))` with `W = sqrt(4 - u^2 - v^2)`, and marks
//! the whole column invalid when `u^2 + v^2 >= 4`. Slices are numbered from 1.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::binio::{self, Reader};
use crate::formats::DATASET_MAGIC;
use crate::heightfield::{HeightField, HeightFieldShape};
use crate::waveoptics::{self, CoherenceWindow, TaylorSpectra};
use crate::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;

/// Stam's key `(u, v, w) = -(omega_i + omega_o)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HalfVectorKey {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    /// False for keys that no pair of unit directions can produce.
    pub valid: bool,
}

impl HalfVectorKey {
    /// Key flagged valid iff `u^2 + v^2 + w^2 <= 4`.
    pub fn new(u: f64, v: f64, w: f64) -> Self {
        let valid = u * u + v * v + w * w <= 4.0 + 1e-12 && w <= 0.0;
        HalfVectorKey { u, v, w, valid }
    }

    pub fn invalid(u: f64, v: f64) -> Self {
        HalfVectorKey { u, v, w: 0.0, valid: false }
    }

    pub fn from_directions(omega_i: [f64; 3], omega_o: [f64; 3]) -> Self {
        HalfVectorKey::new(
            -(omega_i[0] + omega_o[0]),
            -(omega_i[1] + omega_o[1]),
            -(omega_i[2] + omega_o[2]),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scheme {
    Regular,
    Simple,
    SimpleMax,
}

impl std::str::FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "regular" => Ok(Scheme::Regular),
            "simple" => Ok(Scheme::Simple),
            "simple-max" | "simplemax" | "simple_max" => Ok(Scheme::SimpleMax),
            other => Err(Error::invalid(format!(
                "unknown sampling scheme {other:?} (expected regular, simple or simple-max)"
            ))),
        }
    }
}

/// Squares the regular coordinates to concentrate samples near the specular peak.
pub fn domain_transform(u_star: f64, v_star: f64) -> Result<(f64, f64)> {
    for c in [u_star, v_star] {
        if !(-2.0..=2.0).contains(&c) {
            return Err(Error::invalid(format!("regular coordinate {c} outside [-2, 2]")));
        }
    }
    Ok((squash(u_star), squash(v_star)))
}

#[inline]
fn squash(c: f64) -> f64 {
    let h = 0.5 * c;
    2.0 * c.signum() * h * h
}

/// `w` positions of one `(u, v)` column; `None` marks a column with no valid range.
pub fn w_samples(scheme: Scheme, u: f64, v: f64, res_w: usize) -> Option<Vec<f64>> {
    let steps = (res_w.max(2) - 1) as f64;
    match scheme {
        Scheme::Regular | Scheme::Simple => {
            Some((0..res_w).map(|k| -2.0 + 2.0 * k as f64 / steps).collect())
        }
        Scheme::SimpleMax => {
            let r2 = u * u + v * v;
            if r2 >= 4.0 {
                return None;
            }
            let top = (4.0 - r2).sqrt();
            Some((0..res_w).map(|k| -top * (1.0 - k as f64 / steps)).collect())
        }
    }
}

/// Grid resolution and scheme; everything needed to rebuild keys from indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub scheme: Scheme,
    pub res_u: usize,
    pub res_v: usize,
    pub res_w: usize,
}

impl GridLayout {
    pub fn new(scheme: Scheme, res_u: usize, res_v: usize, res_w: usize) -> Result<Self> {
        if res_u < 2 || res_v < 2 || res_w < 2 {
            return Err(Error::invalid(format!(
                "grid resolutions must be >= 2, got {res_u}x{res_v}x{res_w}"
            )));
        }
        Ok(GridLayout { scheme, res_u, res_v, res_w })
    }

    pub fn len(&self) -> usize {
        self.res_u * self.res_v * self.res_w
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// `w`-major, then `v`, with `u` fastest.
    pub fn index(&self, iu: usize, iv: usize, iw: usize) -> usize {
        (iw * self.res_v + iv) * self.res_u + iu
    }

    pub fn unindex(&self, idx: usize) -> (usize, usize, usize) {
        let iu = idx % self.res_u;
        let iv = (idx / self.res_u) % self.res_v;
        let iw = idx / (self.res_u * self.res_v);
        (iu, iv, iw)
    }

    fn regular(i: usize, res: usize) -> f64 {
        -2.0 + 4.0 * i as f64 / (res - 1) as f64
    }

    /// Transformed `(u, v)` of a column.
    pub fn uv(&self, iu: usize, iv: usize) -> (f64, f64) {
        let (us, vs) = (Self::regular(iu, self.res_u), Self::regular(iv, self.res_v));
        match self.scheme {
            Scheme::Regular => (us, vs),
            Scheme::Simple | Scheme::SimpleMax => (squash(us), squash(vs)),
        }
    }

    pub fn column(&self, iu: usize, iv: usize) -> Option<Vec<f64>> {
        let (u, v) = self.uv(iu, iv);
        w_samples(self.scheme, u, v, self.res_w)
    }

    pub fn key(&self, iu: usize, iv: usize, iw: usize) -> HalfVectorKey {
        let (u, v) = self.uv(iu, iv);
        match w_samples(self.scheme, u, v, self.res_w) {
            Some(ws) => HalfVectorKey::new(u, v, ws[iw]),
            None => HalfVectorKey::invalid(u, v),
        }
    }

    pub fn key_at(&self, idx: usize) -> HalfVectorKey {
        let (iu, iv, iw) = self.unindex(idx);
        self.key(iu, iv, iw)
    }

    /// Validity of every sample, no forward model involved.
    pub fn validity_mask(&self) -> Vec<bool> {
        let mut valid = vec![false; self.len()];
        for iv in 0..self.res_v {
            for iu in 0..self.res_u {
                let (u, v) = self.uv(iu, iv);
                if let Some(ws) = w_samples(self.scheme, u, v, self.res_w) {
                    for (iw, &w) in ws.iter().enumerate() {
                        valid[self.index(iu, iv, iw)] = HalfVectorKey::new(u, v, w).valid;
                    }
                }
            }
        }
        valid
    }

    /// Whether `key` lies inside the sampled region of this layout.
    pub fn covers(&self, key: &HalfVectorKey) -> bool {
        if !key.valid || key.u.abs() > 2.0 || key.v.abs() > 2.0 || key.w > 0.0 {
            return false;
        }
        match self.scheme {
            Scheme::Regular | Scheme::Simple => key.w >= -2.0,
            Scheme::SimpleMax => {
                let r2 = key.u * key.u + key.v * key.v;
                r2 < 4.0 && key.w >= -(4.0 - r2).sqrt() - 1e-12
            }
        }
    }
}

/// Parameters of one dataset build.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetParams {
    pub layout: GridLayout,
    pub sigma_s_um: f64,
    pub truncation_sigmas: f64,
    pub epsilon: f64,
}

impl DatasetParams {
    pub fn new(layout: GridLayout, sigma_s_um: f64, epsilon: f64) -> Self {
        DatasetParams {
            layout,
            sigma_s_um,
            truncation_sigmas: CoherenceWindow::DEFAULT_TRUNCATION,
            epsilon,
        }
    }

    pub fn window(&self) -> Result<CoherenceWindow> {
        CoherenceWindow::with_truncation(self.sigma_s_um, self.truncation_sigmas)
    }
}

/// JSON header of the dataset file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub format_version: u32,
    pub scheme: Scheme,
    pub res_u: usize,
    pub res_v: usize,
    pub res_w: usize,
    pub sigma_s_um: f64,
    pub truncation_sigmas: f64,
    pub epsilon: f64,
    pub taylor_order: usize,
    pub taylor_offset_um: f64,
    pub heightfield_id: String,
    pub heightfield: HeightFieldShape,
    pub slice_index_base: u32,
    pub key_reconstruction: String,
    /// Free-form record of how the height-field and run were configured.
    #[serde(default)]
    pub generation: serde_json::Value,
}

impl DatasetMeta {
    pub fn layout(&self) -> GridLayout {
        GridLayout {
            scheme: self.scheme,
            res_u: self.res_u,
            res_v: self.res_v,
            res_w: self.res_w,
        }
    }

    pub fn params(&self) -> DatasetParams {
        DatasetParams {
            layout: self.layout(),
            sigma_s_um: self.sigma_s_um,
            truncation_sigmas: self.truncation_sigmas,
            epsilon: self.epsilon,
        }
    }
}

pub const KEY_RECONSTRUCTION: &str = "u*=-2+4*iu/(res_u-1), v* likewise; regular: u=u*; \
simple/simple-max: u=2*sign(u*)*(u*/2)^2; regular/simple: w=-2+2*iw/(res_w-1); \
simple-max: w=-sqrt(4-u^2-v^2)*(1-iw/(res_w-1)), invalid if u^2+v^2>=4; index=(iw*res_v+iv)*res_u+iu";

/// Raw (untransformed) XYZ reflectance over a key grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ReflectanceGrid {
    pub meta: DatasetMeta,
    pub valid: Vec<bool>,
    pub xyz: Vec<[f32; 3]>,
}

impl ReflectanceGrid {
    pub fn layout(&self) -> GridLayout {
        self.meta.layout()
    }

    pub fn invalid_fraction(&self) -> f64 {
        self.valid.iter().filter(|v| !**v).count() as f64 / self.valid.len() as f64
    }

    /// One `w`-slice (0-based `iw`) as a `res_u x res_v` image, `u` fastest.
    pub fn slice(&self, iw: usize) -> (Vec<[f64; 3]>, Vec<bool>) {
        let l = self.layout();
        let start = l.index(0, 0, iw);
        let end = start + l.res_u * l.res_v;
        let px = self.xyz[start..end]
            .iter()
            .map(|c| c.map(|v| v as f64))
            .collect();
        (px, self.valid[start..end].to_vec())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let n = self.meta.layout().len();
        if self.valid.len() != n || self.xyz.len() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                found: self.xyz.len(),
            });
        }
        let mut out = Vec::with_capacity(16 + n.div_ceil(8) + 12 * n);
        out.extend_from_slice(DATASET_MAGIC);
        binio::put_json(&mut out, &self.meta)?;
        out.extend_from_slice(&pack_bits(&self.valid));
        binio::put_f32s(&mut out, self.xyz.iter().flatten().copied());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dataset");
        r.expect_magic(DATASET_MAGIC)?;
        let meta: DatasetMeta = r.json()?;
        if meta.format_version != DATASET_FORMAT_VERSION {
            return Err(Error::format(format!(
                "dataset: unsupported format version {}",
                meta.format_version
            )));
        }
        let layout = GridLayout::new(meta.scheme, meta.res_u, meta.res_v, meta.res_w)
            .map_err(|e| Error::format(format!("dataset: {e}")))?;
        let n = layout.len();
        let valid = unpack_bits(r.take(n.div_ceil(8))?, n);
        let flat = r.f32_vec(3 * n)?;
        r.finish()?;
        let xyz: Vec<[f32; 3]> = flat.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect();
        for (i, (c, ok)) in xyz.iter().zip(&valid).enumerate() {
            let bad = if *ok {
                c.iter().any(|v| !v.is_finite() || *v < 0.0)
            } else {
                c.iter().any(|v| *v != 0.0)
            };
            if bad {
                return Err(Error::format(format!("dataset: sample {i} violates the validity contract")));
            }
        }
        Ok(ReflectanceGrid { meta, valid, xyz })
    }
}

fn pack_bits(bits: &[bool]) -> Vec<u8> {
    let mut out = vec![0u8; bits.len().div_ceil(8)];
    for (i, &b) in bits.iter().enumerate() {
        if b {
            out[i / 8] |= 1 << (i % 8);
        }
    }
    out
}

fn unpack_bits(bytes: &[u8], n: usize) -> Vec<bool> {
    (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect()
}

/// Evaluates the forward model at every valid key of the layout.
///
/// Columns are evaluated in parallel and scattered back by grid index, so the
/// result does not depend on scheduling.
pub fn build_dataset(hf: &HeightField, params: &DatasetParams) -> Result<ReflectanceGrid> {
    let spectra = waveoptics::precompute_for_accuracy(hf, params.epsilon)?;
    build_dataset_with(&spectra, params, serde_json::Value::Null)
}

pub fn build_dataset_with(
    spectra: &TaylorSpectra,
    params: &DatasetParams,
    generation: serde_json::Value,
) -> Result<ReflectanceGrid> {
    let layout = params.layout;
    let window = params.window()?;
    let columns: Vec<(usize, usize)> = (0..layout.res_v)
        .flat_map(|iv| (0..layout.res_u).map(move |iu| (iu, iv)))
        .collect();

    let evaluated: Vec<Option<Vec<[f64; 3]>>> = columns
        .par_iter()
        .map(|&(iu, iv)| {
            let (u, v) = layout.uv(iu, iv);
            let Some(ws) = layout.column(iu, iv) else {
                return Ok(None);
            };
            spectra
                .reflectance_column(u, v, &ws, &window)
                .map(Some)
                .map_err(|e| annotate(e, u, v))
        })
        .collect::<Result<_>>()?;

    let n = layout.len();
    let mut xyz = vec![[0.0f32; 3]; n];
    let mut valid = vec![false; n];
    for (&(iu, iv), col) in columns.iter().zip(&evaluated) {
        let Some(col) = col else { continue };
        let (u, v) = layout.uv(iu, iv);
        let ws = layout.column(iu, iv).unwrap_or_default();
        for (iw, (c, &w)) in col.iter().zip(&ws).enumerate() {
            if !HalfVectorKey::new(u, v, w).valid {
                continue;
            }
            let idx = layout.index(iu, iv, iw);
            if c.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericRange(format!(
                    "non-finite reflectance at key ({u}, {v}, {w})"
                )));
            }
            xyz[idx] = c.map(|x| x.max(0.0) as f32);
            valid[idx] = true;
        }
    }

    let meta = DatasetMeta {
        format_version: DATASET_FORMAT_VERSION,
        scheme: layout.scheme,
        res_u: layout.res_u,
        res_v: layout.res_v,
        res_w: layout.res_w,
        sigma_s_um: params.sigma_s_um,
        truncation_sigmas: params.truncation_sigmas,
        epsilon: params.epsilon,
        taylor_order: spectra.order(),
        taylor_offset_um: spectra.offset(),
        heightfield_id: spectra.source_id().to_string(),
        heightfield: spectra.source(),
        slice_index_base: 1,
        key_reconstruction: KEY_RECONSTRUCTION.to_string(),
        generation,
    };
    Ok(ReflectanceGrid { meta, valid, xyz })
}

fn annotate(e: Error, u: f64, v: f64) -> Error {
    match e {
        Error::OutOfBand { .. } => Error::NumericRange(format!("at key column (u={u}, v={v}): {e}")),
        other => other,
    }
}

/// How valid samples are partitioned into training and test sets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "strategy", rename_all = "kebab-case")]
pub enum DataSplit {
    RandomFraction { train_fraction: f64, seed: u64 },
    /// 1-based `w`-slice numbers; an empty list trains on everything.
    HeldOutSlices { slices: Vec<usize> },
}

impl Default for DataSplit {
    fn default() -> Self {
        DataSplit::HeldOutSlices { slices: vec![4, 7, 10] }
    }
}

impl DataSplit {
    pub fn none() -> Self {
        DataSplit::HeldOutSlices { slices: Vec::new() }
    }

    /// `held-out:4,7,10`, `random:0.73[:seed]` or `none`.
    pub fn parse(s: &str, default_seed: u64) -> Result<Self> {
        let s = s.trim();
        if s == "none" {
            return Ok(DataSplit::none());
        }
        if let Some(rest) = s.strip_prefix("held-out:").or_else(|| s.strip_prefix("slices:")) {
            let slices = rest
                .split(',')
                .filter(|t| !t.trim().is_empty())
                .map(|t| t.trim().parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::invalid(format!("bad slice list {rest:?}: {e}")))?;
            return Ok(DataSplit::HeldOutSlices { slices });
        }
        if let Some(rest) = s.strip_prefix("random:") {
            let mut parts = rest.split(':');
            let frac = parts
                .next()
                .unwrap_or_default()
                .parse::<f64>()
                .map_err(|e| Error::invalid(format!("bad train fraction in {s:?}: {e}")))?;
            let seed = match parts.next() {
                Some(p) => p.parse().map_err(|e| Error::invalid(format!("bad seed in {s:?}: {e}")))?,
                None => default_seed,
            };
            return Ok(DataSplit::RandomFraction { train_fraction: frac, seed });
        }
        Err(Error::invalid(format!(
            "unknown split {s:?} (expected held-out:<list>, random:<fraction> or none)"
        )))
    }

    /// Held-out 0-based slice indices, validated against `res_w`.
    pub fn test_slices(&self, res_w: usize) -> Result<Vec<usize>> {
        match self {
            DataSplit::HeldOutSlices { slices } => slices
                .iter()
                .map(|&s| {
                    if s == 0 || s > res_w {
                        Err(Error::invalid(format!("slice {s} outside 1..={res_w}")))
                    } else {
                        Ok(s - 1)
                    }
                })
                .collect(),
            DataSplit::RandomFraction { .. } => Ok(Vec::new()),
        }
    }
}

/// Returns sorted `(train, test)` sample indices over the valid samples.
pub fn split(grid: &ReflectanceGrid, spec: &DataSplit) -> Result<(Vec<usize>, Vec<usize>)> {
    let layout = grid.layout();
    let valid: Vec<usize> = (0..grid.valid.len()).filter(|&i| grid.valid[i]).collect();
    match spec {
        DataSplit::HeldOutSlices { .. } => {
            let test_slices = spec.test_slices(layout.res_w)?;
            let (test, train): (Vec<usize>, Vec<usize>) = valid
                .into_iter()
                .partition(|&i| test_slices.contains(&layout.unindex(i).2));
            Ok((train, test))
        }
        DataSplit::RandomFraction { train_fraction, seed } => {
            if !(*train_fraction > 0.0 && *train_fraction < 1.0) {
                return Err(Error::invalid(format!(
                    "train fraction must lie in (0, 1), got {train_fraction}"
                )));
            }
            let mut shuffled = valid;
            shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(*seed));
            let n_train = (train_fraction * shuffled.len() as f64).round() as usize;
            let mut test = shuffled.split_off(n_train);
            shuffled.sort_unstable();
            test.sort_unstable();
            Ok((shuffled, test))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heightfield::{generate_blazed, HeightField};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn domain_transform_examples() {
        assert_eq!(domain_transform(2.0, -2.0).unwrap(), (2.0, -2.0));
        assert_eq!(domain_transform(1.0, 1.0).unwrap(), (0.5, 0.5));
        assert_eq!(domain_transform(0.0, 1.3).unwrap().0, 0.0);
        assert!(domain_transform(2.1, 0.0).is_err());
    }

    #[test]
    fn w_sample_ranges() {
        let ws = w_samples(Scheme::SimpleMax, 0.0, 0.0, 11).unwrap();
        assert_eq!(ws.len(), 11);
        assert_eq!(ws[0], -2.0);
        assert_eq!(ws[10], 0.0);
        assert_abs_diff_eq!(ws[1] - ws[0], 0.2, epsilon = 1e-12);
        assert!(w_samples(Scheme::SimpleMax, 2.0, 0.0, 11).is_none());
        let ws = w_samples(Scheme::SimpleMax, 1.0, 1.0, 5).unwrap();
        assert_abs_diff_eq!(ws[0], -(2.0f64).sqrt(), epsilon = 1e-15);
        assert_eq!(ws[4], 0.0);
        let ws = w_samples(Scheme::Simple, 1.9, 1.9, 3).unwrap();
        assert_eq!(ws, vec![-2.0, -1.0, 0.0]);
    }

    #[test]
    fn simple_max_invalid_fraction() {
        for res in [501, 1001] {
            let l = GridLayout::new(Scheme::SimpleMax, res, res, 2).unwrap();
            let mask = l.validity_mask();
            let frac = mask.iter().filter(|v| !**v).count() as f64 / mask.len() as f64;
            assert!((0.068..=0.078).contains(&frac), "{res}: {frac}");
        }
    }

    #[test]
    fn regular_scheme_invalid_keys() {
        let l = GridLayout::new(Scheme::Regular, 5, 5, 3).unwrap();
        // Corner (u, v) = (-2, -2) is invalid for every w.
        assert!(!l.key(0, 0, 2).valid);
        // Centre column is valid throughout.
        assert!((0..3).all(|iw| l.key(2, 2, iw).valid));
        // (2, 0, -2) has norm^2 8.
        assert!(!l.key(4, 2, 0).valid);
    }

    #[test]
    fn index_round_trip() {
        let l = GridLayout::new(Scheme::Simple, 7, 5, 3).unwrap();
        for idx in 0..l.len() {
            let (iu, iv, iw) = l.unindex(idx);
            assert_eq!(l.index(iu, iv, iw), idx);
        }
        assert_eq!(l.index(1, 0, 0), 1);
        assert_eq!(l.index(0, 1, 0), 7);
        assert_eq!(l.index(0, 0, 1), 35);
    }

    fn tiny_field() -> HeightField {
        // Nyquist 8 samples / (2 * 0.7 um) = 5.7 cycles/um covers u / lambda up to 2 / 0.38.
        generate_blazed(0.35, 0.05, 0.7, 8).unwrap()
    }

    #[test]
    fn small_build_round_trips() {
        let hf = tiny_field();
        let params = DatasetParams::new(GridLayout::new(Scheme::SimpleMax, 16, 16, 3).unwrap(), 0.2, 1e-8);
        let grid = build_dataset(&hf, &params).unwrap();
        let bytes = grid.to_bytes().unwrap();
        let back = ReflectanceGrid::from_bytes(&bytes).unwrap();
        assert_eq!(back, grid);
        assert_eq!(back.to_bytes().unwrap(), bytes);
        assert_eq!(grid.meta.heightfield_id, hf.content_id());
        for (c, ok) in grid.xyz.iter().zip(&grid.valid) {
            if !ok {
                assert_eq!(*c, [0.0; 3]);
            }
        }
        // Rebuilding gives identical bytes.
        assert_eq!(build_dataset(&hf, &params).unwrap().to_bytes().unwrap(), bytes);
    }

    #[test]
    fn stored_values_match_fresh_evaluation() {
        let hf = tiny_field();
        let params = DatasetParams::new(GridLayout::new(Scheme::Simple, 12, 10, 4).unwrap(), 0.2, 1e-8);
        let grid = build_dataset(&hf, &params).unwrap();
        let spectra = waveoptics::precompute_for_accuracy(&hf, 1e-8).unwrap();
        let window = params.window().unwrap();
        for idx in (0..grid.xyz.len()).step_by(7) {
            let key = grid.layout().key_at(idx);
            assert_eq!(key.valid, grid.valid[idx]);
            if !key.valid {
                continue;
            }
            let fresh = waveoptics::reflectance_xyz(&key, &spectra, &window).unwrap();
            for ch in 0..3 {
                assert_eq!(grid.xyz[idx][ch], fresh.c[ch] as f32);
            }
        }
    }

    #[test]
    fn flat_field_energy_sits_on_specular_column() {
        let hf = HeightField::from_fn(8, 0.7, |_, _| 0.0).unwrap();
        let params = DatasetParams::new(GridLayout::new(Scheme::SimpleMax, 15, 15, 3).unwrap(), 10.0, 1e-8);
        let grid = build_dataset(&hf, &params).unwrap();
        let l = grid.layout();
        for idx in 0..grid.xyz.len() {
            let (iu, iv, _) = l.unindex(idx);
            let y = grid.xyz[idx][1];
            if iu == 7 && iv == 7 {
                assert!((y - 1.0).abs() < 1e-6, "{y}");
            } else {
                assert!(y < 1e-3, "energy {y} off the specular column at {iu},{iv}");
            }
        }
    }

    #[test]
    fn corrupted_dataset_rejected() {
        let hf = tiny_field();
        let params = DatasetParams::new(GridLayout::new(Scheme::Regular, 4, 4, 2).unwrap(), 0.2, 1e-6);
        let mut bytes = build_dataset(&hf, &params).unwrap().to_bytes().unwrap();
        assert!(ReflectanceGrid::from_bytes(&bytes[..bytes.len() - 1]).is_err());
        bytes[3] = b'?';
        assert!(matches!(ReflectanceGrid::from_bytes(&bytes), Err(Error::Format(_))));
    }

    fn synthetic_grid(res_w: usize) -> ReflectanceGrid {
        let layout = GridLayout::new(Scheme::SimpleMax, 21, 21, res_w).unwrap();
        let valid = layout.validity_mask();
        let xyz = valid.iter().map(|&v| if v { [0.5; 3] } else { [0.0; 3] }).collect();
        let meta = DatasetMeta {
            format_version: 1,
            scheme: layout.scheme,
            res_u: 21,
            res_v: 21,
            res_w,
            sigma_s_um: 1.0,
            truncation_sigmas: 3.0,
            epsilon: 1e-6,
            taylor_order: 0,
            taylor_offset_um: 0.0,
            heightfield_id: String::new(),
            heightfield: HeightField::from_fn(2, 1.0, |_, _| 0.0).unwrap().shape(),
            slice_index_base: 1,
            key_reconstruction: KEY_RECONSTRUCTION.into(),
            generation: serde_json::Value::Null,
        };
        ReflectanceGrid { meta, valid, xyz }
    }

    #[test]
    fn held_out_slices_split() {
        let grid = synthetic_grid(11);
        let (train, test) = split(&grid, &DataSplit::default()).unwrap();
        let total = train.len() + test.len();
        assert_eq!(total, grid.valid.iter().filter(|v| **v).count());
        assert_abs_diff_eq!(train.len() as f64 / total as f64, 8.0 / 11.0, epsilon = 1e-12);
        let l = grid.layout();
        assert!(test.iter().all(|&i| [3, 6, 9].contains(&l.unindex(i).2)));

        let (train, test) = split(&grid, &DataSplit::none()).unwrap();
        assert!(test.is_empty());
        assert_eq!(train.len(), total);

        let bad = DataSplit::HeldOutSlices { slices: vec![12] };
        assert!(split(&grid, &bad).is_err());
        assert!(split(&synthetic_grid(5), &DataSplit::default()).is_err());
    }

    #[test]
    fn random_split_reproducible() {
        let grid = synthetic_grid(5);
        let spec = DataSplit::RandomFraction { train_fraction: 0.73, seed: 1 };
        let a = split(&grid, &spec).unwrap();
        let b = split(&grid, &spec).unwrap();
        assert_eq!(a, b);
        let c = split(&grid, &DataSplit::RandomFraction { train_fraction: 0.73, seed: 2 }).unwrap();
        assert_ne!(a, c);
        assert!(split(&grid, &DataSplit::RandomFraction { train_fraction: 1.0, seed: 1 }).is_err());
    }

    #[test]
    fn split_parsing() {
        assert_eq!(DataSplit::parse("none", 0).unwrap(), DataSplit::none());
        assert_eq!(
            DataSplit::parse("held-out:4,7,10", 0).unwrap(),
            DataSplit::HeldOutSlices { slices: vec![4, 7, 10] }
        );
        assert_eq!(
            DataSplit::parse("random:0.73", 9).unwrap(),
            DataSplit::RandomFraction { train_fraction: 0.73, seed: 9 }
        );
        assert!(DataSplit::parse("bogus", 0).is_err());
    }

    proptest! {
        #[test]
        fn domain_transform_odd_and_monotone(a in 0.0f64..2.0, b in 0.0f64..2.0) {
            let (fa, fb) = domain_transform(a, b).unwrap();
            let (na, nb) = domain_transform(-a, -b).unwrap();
            prop_assert_eq!(na, -fa);
            prop_assert_eq!(nb, -fb);
            if a < b {
                prop_assert!(fa <= fb);
            }
        }

        #[test]
        fn split_partitions_valid_samples(frac in 0.05f64..0.95, seed in any::<u64>()) {
            let grid = synthetic_grid(4);
            let (train, test) = split(&grid, &DataSplit::RandomFraction { train_fraction: frac, seed }).unwrap();
            let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
            all.sort_unstable();
            let valid: Vec<usize> = (0..grid.valid.len()).filter(|&i| grid.valid[i]).collect();
            prop_assert_eq!(all, valid);
        }
    }
}
