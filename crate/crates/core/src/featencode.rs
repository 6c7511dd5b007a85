//! Sinusoidal input features for the reflectance network.
//!
//! A key becomes the raw triple `(u, v, w')` with `w' = w / 2 + 1`, followed
//! by `sin(s^j pi d), cos(s^j pi d)` for `j = 1..m` over each encoded
//! dimension `d`. The `u`/`v` family is `(u, v)` or, with `diagonal`,
//! `(u, v, u + v, u - v)`; the `w` family is `w'` alone. Choosing
//! `s = (res / 2)^(1 / m)` puts the highest frequency at the grid's Nyquist
//! index.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::sampling::HalfVectorKey;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EncodingSpec {
    pub m_uv: usize,
    pub m_w: usize,
    pub diagonal: bool,
    pub s_uv: f64,
    pub s_w: f64,
    pub grid_res_uv: usize,
    pub grid_res_w: usize,
}

/// `s` whose `m`-th power equals the Nyquist index `grid_res / 2`.
pub fn select_s(m: usize, grid_res: usize) -> Result<f64> {
    if m == 0 {
        return Err(Error::invalid("select_s needs at least one frequency"));
    }
    if grid_res < 4 {
        return Err(Error::invalid(format!(
            "grid resolution {grid_res} too small for frequency selection (need >= 4)"
        )));
    }
    Ok((grid_res as f64 / 2.0).powf(1.0 / m as f64))
}

impl EncodingSpec {
    /// Frequencies chosen from the training grid resolution.
    pub fn for_grid(m_uv: usize, m_w: usize, diagonal: bool, grid_res_uv: usize, grid_res_w: usize) -> Result<Self> {
        let s_uv = if m_uv > 0 { select_s(m_uv, grid_res_uv)? } else { 1.0 };
        let s_w = if m_w > 0 { select_s(m_w, grid_res_w)? } else { 1.0 };
        let spec = EncodingSpec { m_uv, m_w, diagonal, s_uv, s_w, grid_res_uv, grid_res_w };
        spec.validate()?;
        Ok(spec)
    }

    /// Raw key only.
    pub fn raw() -> Self {
        EncodingSpec {
            m_uv: 0,
            m_w: 0,
            diagonal: false,
            s_uv: 1.0,
            s_w: 1.0,
            grid_res_uv: 0,
            grid_res_w: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (m, s, name) in [(self.m_uv, self.s_uv, "s_uv"), (self.m_w, self.s_w, "s_w")] {
            if m > 0 && !(s > 1.0 && s.is_finite()) {
                return Err(Error::invalid(format!("{name} must exceed 1 when frequencies are used, got {s}")));
            }
        }
        Ok(())
    }

    pub fn uv_dims(&self) -> usize {
        if self.diagonal { 4 } else { 2 }
    }

    pub fn input_size(&self) -> usize {
        input_size(self.m_uv, self.m_w, self.diagonal)
    }

    /// Writes the features of `key` into `out`, which must hold `input_size()` values.
    pub fn encode_into(&self, key: &HalfVectorKey, out: &mut [f32]) -> Result<()> {
        if out.len() != self.input_size() {
            return Err(Error::DimensionMismatch { expected: self.input_size(), found: out.len() });
        }
        let b = base_vector(key, true);
        let w_prime = b[4];
        out[0] = key.u as f32;
        out[1] = key.v as f32;
        out[2] = w_prime as f32;
        let mut pos = 3;
        for &d in &b[..self.uv_dims()] {
            pos = ladder(d, self.s_uv, self.m_uv, out, pos);
        }
        ladder(w_prime, self.s_w, self.m_w, out, pos);
        Ok(())
    }

    pub fn encode(&self, key: &HalfVectorKey) -> Vec<f32> {
        let mut out = vec![0.0; self.input_size()];
        self.encode_into(key, &mut out).expect("buffer sized by input_size");
        out
    }

    /// Row-major feature matrix for many keys.
    pub fn encode_batch(&self, keys: &[HalfVectorKey]) -> Vec<f32> {
        let n = self.input_size();
        let mut out = vec![0.0; n * keys.len()];
        for (k, row) in keys.iter().zip(out.chunks_exact_mut(n)) {
            self.encode_into(k, row).expect("row sized by input_size");
        }
        out
    }
}

fn ladder(d: f64, s: f64, m: usize, out: &mut [f32], mut pos: usize) -> usize {
    let mut f = 1.0;
    for _ in 0..m {
        f *= s;
        let (sin, cos) = (f * PI * d).sin_cos();
        out[pos] = sin as f32;
        out[pos + 1] = cos as f32;
        pos += 2;
    }
    pos
}

/// `3 + 2 m_uv (diagonal ? 4 : 2) + 2 m_w`.
pub fn input_size(m_uv: usize, m_w: usize, diagonal: bool) -> usize {
    3 + 2 * m_uv * if diagonal { 4 } else { 2 } + 2 * m_w
}

/// `(u, v, u + v, u - v, w')`; the diagonals are zeroed when `diagonal` is false.
pub fn base_vector(key: &HalfVectorKey, diagonal: bool) -> [f64; 5] {
    let (u, v) = (key.u, key.v);
    let (s, d) = if diagonal { (u + v, u - v) } else { (0.0, 0.0) };
    [u, v, s, d, key.w / 2.0 + 1.0]
}
