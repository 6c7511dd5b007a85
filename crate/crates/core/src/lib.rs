//! Diffractive reflectance toolkit.
//!
//! Generates ground-truth reflectance datasets from nanostructure height-fields
//! with a Taylor-series Fourier-optics forward model, compresses them into a
//! funneled MLP with sinusoidal input features, and renders BRDF slices from
//! either source for validation.

pub mod colorimetry;
pub mod error;
pub mod featencode;
pub mod heightfield;
pub mod metrics;
pub mod neuralnet;
pub mod rangetransform;
pub mod sampling;
pub mod slicer;
pub mod waveoptics;

mod binio;
mod cie_tables;

pub use error::{Error, Result};

/// Magic tags and versions of every on-disk artifact.
pub mod formats {
    pub const HEIGHTFIELD_MAGIC: &[u8; 8] = b"DFRQHF1\0";
    pub const DATASET_MAGIC: &[u8; 8] = b"DFRQDS1\0";
    pub const MODEL_MAGIC: &[u8; 8] = b"DFRQNN1\0";
    pub const IMAGE_MAGIC: &[u8; 8] = b"DFRQIM1\0";

    /// Human readable summary, used by `--version`.
    pub fn summary() -> String {
        format!(
            "heightfield {} / dataset {} / model {} / image {}",
            tag(HEIGHTFIELD_MAGIC),
            tag(DATASET_MAGIC),
            tag(MODEL_MAGIC),
            tag(IMAGE_MAGIC)
        )
    }

    fn tag(magic: &[u8; 8]) -> &str {
        std::str::from_utf8(&magic[..7]).unwrap_or("?")
    }
}
