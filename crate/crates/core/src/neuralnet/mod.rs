//! Funneled MLP that maps encoded keys to range-compressed XYZ reflectance.

mod io;
mod mlp;
mod train;

pub use io::MODEL_FORMAT_VERSION;
pub use mlp::{gradient_check, logcosh, logcosh_loss, parameter_count, Activation, Gradients, Mlp, Real};
pub use train::{train, train_with_progress, EpochStats, PlateauScheduler, TrainConfig, TrainReport, TrainingSet};

use ndarray::{Array2, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::featencode::EncodingSpec;
use crate::rangetransform::RangeTransformSpec;
use crate::sampling::HalfVectorKey;
use crate::{Error, Result};

pub const GOLDEN_RATIO_RECIPROCAL: f64 = 0.618_033_988_749_894_9;

pub(crate) fn round4(x: f64) -> usize {
    ((x / 4.0).round() * 4.0) as usize
}

/// `[input, first, round4(first r), round4(first r^2), ..., 3]` with `num_hidden` hidden layers.
pub fn build_funnel(input_size: usize, first_hidden: usize, num_hidden: usize, ratio: f64) -> Result<Vec<usize>> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::invalid(format!("funnel ratio must lie in (0, 1), got {ratio}")));
    }
    if input_size == 0 || num_hidden == 0 {
        return Err(Error::invalid("funnel needs a non-empty input and at least one hidden layer"));
    }
    if first_hidden < 4 {
        return Err(Error::invalid(format!("first hidden layer {first_hidden} is smaller than 4")));
    }
    let mut sizes = vec![input_size, first_hidden];
    for k in 1..num_hidden {
        let h = round4(first_hidden as f64 * ratio.powi(k as i32));
        if h < 4 {
            return Err(Error::invalid(format!(
                "hidden layer {} rounds to {h} (< 4); use fewer layers or a larger first layer",
                k + 1
            )));
        }
        sizes.push(h);
    }
    sizes.push(3);
    check_funnel(&sizes)?;
    Ok(sizes)
}

/// Output of 3 and strictly shrinking hidden layers after the first.
fn check_funnel(sizes: &[usize]) -> Result<()> {
    if sizes.len() < 3 {
        return Err(Error::invalid(format!("layer list {sizes:?} has no hidden layer")));
    }
    if *sizes.last().unwrap() != 3 {
        return Err(Error::invalid(format!("output layer must have 3 units, got {sizes:?}")));
    }
    if sizes.contains(&0) {
        return Err(Error::invalid(format!("zero-width layer in {sizes:?}")));
    }
    let hidden = &sizes[1..sizes.len() - 1];
    if hidden.windows(2).any(|p| p[1] >= p[0]) {
        return Err(Error::invalid(format!("hidden sizes {hidden:?} are not strictly decreasing")));
    }
    Ok(())
}

/// A trained or freshly initialized reflectance network with its input and
/// output conventions.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkModel {
    pub net: Mlp<f32>,
    pub encoding: EncodingSpec,
    pub range: RangeTransformSpec,
    /// Free-form record of how the model was produced.
    pub provenance: serde_json::Value,
}

/// Architecture choice for [`NetworkModel::init`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    Funnel { first_hidden: usize, num_hidden: usize, ratio: f64 },
    /// Hidden sizes taken verbatim.
    Explicit { hidden: Vec<usize> },
}

impl Architecture {
    pub fn layer_sizes(&self, input_size: usize) -> Result<Vec<usize>> {
        match self {
            Architecture::Funnel { first_hidden, num_hidden, ratio } => {
                build_funnel(input_size, *first_hidden, *num_hidden, *ratio)
            }
            Architecture::Explicit { hidden } => {
                let mut sizes = Vec::with_capacity(hidden.len() + 2);
                sizes.push(input_size);
                sizes.extend_from_slice(hidden);
                sizes.push(3);
                check_funnel(&sizes)?;
                Ok(sizes)
            }
        }
    }
}

const PREDICT_CHUNK: usize = 2048;

impl NetworkModel {
    pub fn init(
        encoding: EncodingSpec,
        range: RangeTransformSpec,
        arch: &Architecture,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        encoding.validate()?;
        range.validate()?;
        let sizes = arch.layer_sizes(encoding.input_size())?;
        Ok(NetworkModel {
            net: Mlp::glorot(&sizes, activation, seed)?,
            encoding,
            range,
            provenance: serde_json::Value::Null,
        })
    }

    /// Wraps an existing network after checking it fits the encoding.
    pub fn from_parts(net: Mlp<f32>, encoding: EncodingSpec, range: RangeTransformSpec) -> Result<Self> {
        encoding.validate()?;
        range.validate()?;
        check_funnel(net.sizes())?;
        if net.input_size() != encoding.input_size() {
            return Err(Error::DimensionMismatch { expected: encoding.input_size(), found: net.input_size() });
        }
        Ok(NetworkModel { net, encoding, range, provenance: serde_json::Value::Null })
    }

    pub fn layer_sizes(&self) -> &[usize] {
        self.net.sizes()
    }

    pub fn parameter_count(&self) -> usize {
        self.net.parameter_count()
    }

    /// Clamped network outputs for a row-major feature matrix.
    pub fn forward_features(&self, features: ArrayView2<f32>) -> Result<Array2<f32>> {
        let mut out = self.net.forward(features)?;
        out.mapv_inplace(|v| if v.is_nan() { 0.0 } else { v.clamp(0.0, 1.0) });
        Ok(out)
    }

    /// Clamped outputs for a single feature vector.
    pub fn forward(&self, features: &[f32]) -> Result<[f32; 3]> {
        let x = ArrayView2::from_shape((1, features.len()), features)
            .map_err(|e| Error::invalid(e.to_string()))?;
        let y = self.forward_features(x)?;
        Ok([y[[0, 0]], y[[0, 1]], y[[0, 2]]])
    }

    /// Decoded XYZ reflectance at each key.
    pub fn predict_keys(&self, keys: &[HalfVectorKey]) -> Result<Vec<[f64; 3]>> {
        let chunks: Vec<Vec<[f64; 3]>> = keys
            .par_chunks(PREDICT_CHUNK)
            .map(|chunk| {
                let feats = self.encoding.encode_batch(chunk);
                let x = ArrayView2::from_shape((chunk.len(), self.encoding.input_size()), &feats)
                    .map_err(|e| Error::invalid(e.to_string()))?;
                let y = self.forward_features(x)?;
                Ok(y.outer_iter()
                    .map(|r| self.range.inverse_xyz([r[0] as f64, r[1] as f64, r[2] as f64]))
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(chunks.into_iter().flatten().collect())
    }

    pub fn predict_xyz(&self, key: &HalfVectorKey) -> Result<[f64; 3]> {
        Ok(self.predict_keys(std::slice::from_ref(key))?[0])
    }
}
