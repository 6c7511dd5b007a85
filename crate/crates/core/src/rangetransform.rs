//! Dynamic-range compression of reflectance into `[0, 1]` and its inverse.
//!
//! `BitPlane` maps `x` to `clamp(1 + log2(x) / b_max, 0, 1)`, so every factor
//! of two below 1 occupies the same `1 / b_max` slice of the output range.
//! `BitPlanePower` raises that to `n`, which spends more of the range on the
//! bright end. Transforms act on each XYZ channel independently.

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RangeKind {
    Identity,
    Log1p,
    BitPlane,
    Power,
    BitPlanePower,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RangeTransformSpec {
    pub kind: RangeKind,
    pub b_max: f64,
    pub n: f64,
}

impl Default for RangeTransformSpec {
    fn default() -> Self {
        RangeTransformSpec { kind: RangeKind::BitPlanePower, b_max: 48.0, n: 8.0 }
    }
}

impl RangeTransformSpec {
    pub fn new(kind: RangeKind, b_max: f64, n: f64) -> Result<Self> {
        let spec = RangeTransformSpec { kind, b_max, n };
        spec.validate()?;
        Ok(spec)
    }

    pub fn bit_plane_power(b_max: f64, n: f64) -> Result<Self> {
        Self::new(RangeKind::BitPlanePower, b_max, n)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.b_max > 0.0 && self.b_max.is_finite()) {
            return Err(Error::invalid(format!("b_max must be positive, got {}", self.b_max)));
        }
        if !(self.n > 0.0 && self.n.is_finite()) {
            return Err(Error::invalid(format!("power n must be positive, got {}", self.n)));
        }
        Ok(())
    }

    /// Smallest input that survives the clamp; anything below decodes to 0.
    pub fn floor(&self) -> f64 {
        match self.kind {
            RangeKind::BitPlane | RangeKind::BitPlanePower => (-self.b_max).exp2(),
            _ => 0.0,
        }
    }

    pub fn forward(&self, x: f64) -> Result<f64> {
        if !(x >= 0.0) {
            return Err(Error::invalid(format!("range transform input must be >= 0, got {x}")));
        }
        Ok(self.forward_unchecked(x))
    }

    /// `forward` for inputs already known to be non-negative.
    pub fn forward_unchecked(&self, x: f64) -> f64 {
        let y = match self.kind {
            RangeKind::Identity => x,
            RangeKind::Log1p => x.ln_1p() / std::f64::consts::LN_2,
            RangeKind::Power => x.powf(self.n),
            RangeKind::BitPlane => bit_plane(x, self.b_max),
            RangeKind::BitPlanePower => bit_plane(x, self.b_max).powf(self.n),
        };
        y.clamp(0.0, 1.0)
    }

    /// Decodes `y`. Out-of-range inputs are clamped to `[0, 1]` first, which
    /// is what happens to raw network outputs.
    pub fn inverse(&self, y: f64) -> f64 {
        let y = if y.is_nan() { 0.0 } else { y.clamp(0.0, 1.0) };
        match self.kind {
            RangeKind::Identity => y,
            RangeKind::Log1p => y.exp2() - 1.0,
            RangeKind::Power => y.powf(1.0 / self.n),
            RangeKind::BitPlane => bit_plane_inverse(y, self.b_max),
            RangeKind::BitPlanePower => bit_plane_inverse(y.powf(1.0 / self.n), self.b_max),
        }
    }

    pub fn forward_xyz(&self, c: [f64; 3]) -> Result<[f64; 3]> {
        Ok([self.forward(c[0])?, self.forward(c[1])?, self.forward(c[2])?])
    }

    pub fn inverse_xyz(&self, c: [f64; 3]) -> [f64; 3] {
        c.map(|y| self.inverse(y))
    }
}

fn bit_plane(x: f64, b_max: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        (1.0 + x.log2() / b_max).clamp(0.0, 1.0)
    }
}

fn bit_plane_inverse(t: f64, b_max: f64) -> f64 {
    if t <= 0.0 {
        0.0
    } else {
        (b_max * (t - 1.0)).exp2()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const ALL: [RangeKind; 5] = [
        RangeKind::Identity,
        RangeKind::Log1p,
        RangeKind::BitPlane,
        RangeKind::Power,
        RangeKind::BitPlanePower,
    ];

    #[test]
    fn bit_plane_power_examples() {
        let t = RangeTransformSpec::default();
        assert_eq!(t.forward(1.0).unwrap(), 1.0);
        assert_eq!(t.forward((-48.0f64).exp2()).unwrap(), 0.0);
        assert_relative_eq!(t.forward(0.5).unwrap(), 0.844_992_714_477_155, max_relative = 1e-12);
        assert_eq!(t.forward(0.0).unwrap(), 0.0);
        assert_eq!(t.inverse(1.0), 1.0);
        assert_eq!(t.inverse(0.0), 0.0);
        assert!(matches!(t.forward(-1e-9), Err(Error::InvalidArgument(_))));
        assert!(t.forward(f64::NAN).is_err());
    }

    #[test]
    fn zero_maps_to_zero_for_every_kind() {
        for kind in ALL {
            let t = RangeTransformSpec::new(kind, 48.0, 8.0).unwrap();
            assert_eq!(t.forward(0.0).unwrap(), 0.0, "{kind:?}");
        }
    }

    #[test]
    fn round_trip_on_log_sweep() {
        for (b, n) in [(48.0, 8.0), (24.0, 2.5), (20.0, 1.0)] {
            let t = RangeTransformSpec::bit_plane_power(b, n).unwrap();
            let lo = 2.0 * t.floor();
            for i in 0..=400 {
                let x = lo * (1.0 / lo).powf(i as f64 / 400.0);
                let back = t.inverse(t.forward(x).unwrap());
                assert_relative_eq!(back, x, max_relative = 1e-5);
            }
        }
    }

    #[test]
    fn fractional_power_below_floor() {
        let t = RangeTransformSpec::bit_plane_power(24.0, 2.5).unwrap();
        assert_eq!(t.forward(1e-12).unwrap(), 0.0);
        assert_eq!(t.inverse(0.0), 0.0);
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(RangeTransformSpec::new(RangeKind::BitPlane, 0.0, 1.0).is_err());
        assert!(RangeTransformSpec::new(RangeKind::Power, 48.0, -2.0).is_err());
    }

    proptest! {
        #[test]
        fn forward_is_monotone_and_bounded(a in 0.0f64..4.0, b in 0.0f64..4.0, k in 0usize..5) {
            let t = RangeTransformSpec::new(ALL[k], 24.0, 2.5).unwrap();
            let (fa, fb) = (t.forward(a).unwrap(), t.forward(b).unwrap());
            prop_assert!((0.0..=1.0).contains(&fa));
            if a <= b {
                prop_assert!(fa <= fb);
            }
        }

        #[test]
        fn forward_inverts_inverse(y in 1e-6f64..=1.0, k in 0usize..5) {
            let t = RangeTransformSpec::new(ALL[k], 48.0, 8.0).unwrap();
            let x = t.inverse(y);
            prop_assert!(x >= 0.0);
            prop_assert!((t.forward(x).unwrap() - y).abs() <= 1e-9 * y.max(1e-3));
        }
    }
}
