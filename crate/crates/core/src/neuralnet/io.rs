//! Model file: magic, length-prefixed JSON header, then each layer's
//! `n_in x n_out` weight matrix (row-major) followed by its biases, all f32 LE.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::mlp::{parameter_count, Activation, Mlp};
use super::NetworkModel;
use crate::binio::{self, Reader};
use crate::featencode::EncodingSpec;
use crate::formats::MODEL_MAGIC;
use crate::rangetransform::RangeTransformSpec;
use crate::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;
const WEIGHT_LAYOUT: &str = "per layer: weights n_in x n_out row-major, then n_out biases";

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    format_version: u32,
    layer_sizes: Vec<usize>,
    activation: Activation,
    encoding: EncodingSpec,
    range_transform: RangeTransformSpec,
    parameter_count: usize,
    weight_layout: String,
    #[serde(default)]
    provenance: serde_json::Value,
}

impl NetworkModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = ModelHeader {
            format_version: MODEL_FORMAT_VERSION,
            layer_sizes: self.net.sizes().to_vec(),
            activation: self.net.activation(),
            encoding: self.encoding,
            range_transform: self.range,
            parameter_count: self.parameter_count(),
            weight_layout: WEIGHT_LAYOUT.to_string(),
            provenance: self.provenance.clone(),
        };
        let mut out = Vec::with_capacity(4096 + 4 * header.parameter_count);
        out.extend_from_slice(MODEL_MAGIC);
        binio::put_json(&mut out, &header)?;
        for (w, b) in self.net.weights().iter().zip(self.net.biases()) {
            binio::put_f32s(&mut out, w.iter().copied());
            binio::put_f32s(&mut out, b.iter().copied());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader::new(bytes, "model");
        r.expect_magic(MODEL_MAGIC)?;
        let h: ModelHeader = r.json()?;
        if h.format_version != MODEL_FORMAT_VERSION {
            return Err(Error::format(format!("model: unsupported format version {}", h.format_version)));
        }
        if h.parameter_count != parameter_count(&h.layer_sizes) {
            return Err(Error::format(format!(
                "model: header claims {} parameters, layer sizes imply {}",
                h.parameter_count,
                parameter_count(&h.layer_sizes)
            )));
        }
        let mut net = Mlp::<f32>::zeros(&h.layer_sizes, h.activation)
            .map_err(|e| Error::format(format!("model: {e}")))?;
        for (l, p) in h.layer_sizes.windows(2).enumerate() {
            let w = r.f32_vec(p[0] * p[1])?;
            let b = r.f32_vec(p[1])?;
            let (wl, bl) = net.layer_mut(l);
            *wl = Array2::from_shape_vec((p[0], p[1]), w).map_err(|e| Error::format(e.to_string()))?;
            *bl = Array1::from(b);
        }
        r.finish()?;
        let mut model = NetworkModel::from_parts(net, h.encoding, h.range_transform)
            .map_err(|e| Error::format(format!("model: {e}")))?;
        model.provenance = h.provenance;
        Ok(model)
    }
}
