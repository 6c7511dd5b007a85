//! Python bindings: height-fields, datasets, networks, range transforms,
//! encodings, slices and metrics.
//!
//! Pixel and sample data cross the boundary as lists of `(x, y, z)` tuples.
//! Slice numbers are 1-based, as in the files and the command line.

use std::path::PathBuf;

use ::dfrq as core;
use core::colorimetry::ColorSpace;
use core::featencode::{self, EncodingSpec};
use core::heightfield;
use core::metrics::{self, EvalImage};
use core::neuralnet::{self, Activation as CoreActivation, Architecture, NetworkModel, TrainConfig};
use core::rangetransform::{RangeKind, RangeTransformSpec};
use core::sampling::{self, DataSplit, DatasetParams, GridLayout, HalfVectorKey, ReflectanceGrid, Scheme};
use core::slicer::{self, ForwardModelSource, ModelSource, SliceSpec};
use core::waveoptics::{self, CoherenceWindow};
use pyo3::exceptions::{PyArithmeticError, PyOSError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

fn err(e: core::Error) -> PyErr {
    let msg = e.to_string();
    match e {
        core::Error::Io(_) => PyOSError::new_err(msg),
        e if e.is_numeric() => PyArithmeticError::new_err(msg),
        _ => PyValueError::new_err(msg),
    }
}

fn io_err(path: &PathBuf, e: std::io::Error) -> PyErr {
    PyOSError::new_err(format!("{}: {e}", path.display()))
}

/// Converts a serde value into the matching Python object via `json.loads`.
fn to_py<'py>(py: Python<'py>, v: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(v).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

#[pyclass(name = "HeightField", module = "dfrq", frozen)]
struct PyHeightField {
    inner: heightfield::HeightField,
}

#[pymethods]
impl PyHeightField {
    #[staticmethod]
    #[pyo3(signature = (period_um=2.5, height_um=0.25, extent_um=100.0, samples=1000))]
    fn blazed(period_um: f64, height_um: f64, extent_um: f64, samples: usize) -> PyResult<Self> {
        let inner = heightfield::generate_blazed(period_um, height_um, extent_um, samples).map_err(err)?;
        Ok(PyHeightField { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (track_pitch_um=1.6, pit_depth_um=0.12, bit_length_um=0.3, extent_um=65.0, samples=1024, seed=0))]
    fn synthetic_cd(
        track_pitch_um: f64,
        pit_depth_um: f64,
        bit_length_um: f64,
        extent_um: f64,
        samples: usize,
        seed: u64,
    ) -> PyResult<Self> {
        let inner =
            heightfield::generate_synthetic_cd(track_pitch_um, pit_depth_um, bit_length_um, extent_um, samples, seed)
                .map_err(err)?;
        Ok(PyHeightField { inner })
    }

    #[staticmethod]
    #[pyo3(signature = (max_height_um=0.25, extent_um=32.0, samples=512, seed=0, window_sigma_um=None))]
    fn random(max_height_um: f64, extent_um: f64, samples: usize, seed: u64, window_sigma_um: Option<f64>) -> PyResult<Self> {
        let mut inner = heightfield::generate_random(max_height_um, extent_um, samples, seed).map_err(err)?;
        if let Some(s) = window_sigma_um {
            inner = heightfield::apply_gaussian_window(&inner, s).map_err(err)?;
        }
        Ok(PyHeightField { inner })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyHeightField { inner: heightfield::HeightField::from_bytes(data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_bytes(&std::fs::read(&path).map_err(|e| io_err(&path, e))?)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> Bound<'py, PyBytes> {
        PyBytes::new(py, &self.inner.to_bytes())
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_bytes()).map_err(|e| io_err(&path, e))
    }

    /// Copy with `dz` micrometers added to every elevation.
    fn offset(&self, dz: f64) -> PyResult<Self> {
        Ok(PyHeightField { inner: self.inner.offset(dz).map_err(err)? })
    }

    #[getter]
    fn samples(&self) -> (usize, usize) {
        (self.inner.samples_x(), self.inner.samples_y())
    }

    #[getter]
    fn extent_um(&self) -> (f64, f64) {
        (self.inner.extent_x(), self.inner.extent_y())
    }

    #[getter]
    fn elevation_range_um(&self) -> (f64, f64) {
        (self.inner.min_elevation(), self.inner.max_elevation())
    }

    #[getter]
    fn content_id(&self) -> String {
        self.inner.content_id()
    }

    /// Row-major elevations in micrometers.
    fn elevations(&self) -> Vec<f32> {
        self.inner.elevations().to_vec()
    }

    fn __repr__(&self) -> String {
        let (sx, sy) = self.samples();
        format!("HeightField({sx}x{sy}, {:.3} x {:.3} um)", self.inner.extent_x(), self.inner.extent_y())
    }
}

/// Spectrally integrated XYZ reflectance of a height-field at one key.
#[pyfunction]
#[pyo3(signature = (hf, u, v, w, sigma_s_um, epsilon=1e-8))]
fn reflectance_xyz(py: Python<'_>, hf: &PyHeightField, u: f64, v: f64, w: f64, sigma_s_um: f64, epsilon: f64) -> PyResult<(f64, f64, f64)> {
    let inner = &hf.inner;
    py.detach(|| {
        let spectra = waveoptics::precompute_for_accuracy(inner, epsilon)?;
        let c = waveoptics::reflectance_xyz(&HalfVectorKey::new(u, v, w), &spectra, &CoherenceWindow::new(sigma_s_um)?)?.c;
        Ok((c[0], c[1], c[2]))
    })
    .map_err(err)
}

#[pyfunction]
fn choose_taylor_order(max_elevation_um: f64, lambda_min_um: f64, epsilon: f64) -> PyResult<usize> {
    if !(epsilon > 0.0 && epsilon.is_finite()) {
        return Err(PyValueError::new_err("epsilon must be positive"));
    }
    Ok(waveoptics::choose_taylor_order(max_elevation_um, lambda_min_um, epsilon))
}

#[pyclass(name = "Dataset", module = "dfrq", frozen)]
struct PyDataset {
    inner: ReflectanceGrid,
}

#[pymethods]
impl PyDataset {
    #[staticmethod]
    #[pyo3(signature = (hf, res_u=256, res_v=256, res_w=5, sigma_s_um=16.25, scheme="simple-max", epsilon=1e-6))]
    fn build(
        py: Python<'_>,
        hf: &PyHeightField,
        res_u: usize,
        res_v: usize,
        res_w: usize,
        sigma_s_um: f64,
        scheme: &str,
        epsilon: f64,
    ) -> PyResult<Self> {
        let scheme: Scheme = scheme.parse().map_err(err)?;
        let layout = GridLayout::new(scheme, res_u, res_v, res_w).map_err(err)?;
        let params = DatasetParams::new(layout, sigma_s_um, epsilon);
        let inner = &hf.inner;
        let grid = py.detach(|| sampling::build_dataset(inner, &params)).map_err(err)?;
        Ok(PyDataset { inner: grid })
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyDataset { inner: ReflectanceGrid::from_bytes(data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_bytes(&std::fs::read(&path).map_err(|e| io_err(&path, e))?)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_bytes().map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_bytes().map_err(err)?).map_err(|e| io_err(&path, e))
    }

    /// `(res_u, res_v, res_w)`.
    #[getter]
    fn resolution(&self) -> (usize, usize, usize) {
        let l = self.inner.layout();
        (l.res_u, l.res_v, l.res_w)
    }

    #[getter]
    fn invalid_fraction(&self) -> f64 {
        self.inner.invalid_fraction()
    }

    /// Header metadata as a dict.
    fn meta<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.meta)
    }

    fn __len__(&self) -> usize {
        self.inner.valid.len()
    }

    /// Key `(u, v, w, valid)` of sample `index`.
    fn key(&self, index: usize) -> PyResult<(f64, f64, f64, bool)> {
        if index >= self.inner.valid.len() {
            return Err(PyValueError::new_err(format!("sample {index} out of range")));
        }
        let k = self.inner.layout().key_at(index);
        Ok((k.u, k.v, k.w, k.valid))
    }

    /// XYZ values and validity of 1-based w-slice `number`, `u` fastest.
    fn slice(&self, number: usize) -> PyResult<(Vec<(f64, f64, f64)>, Vec<bool>)> {
        let res_w = self.inner.layout().res_w;
        if number == 0 || number > res_w {
            return Err(PyValueError::new_err(format!("slice {number} outside 1..={res_w}")));
        }
        let (px, valid) = self.inner.slice(number - 1);
        Ok((px.into_iter().map(|c| (c[0], c[1], c[2])).collect(), valid))
    }
}

#[pyclass(name = "RangeTransform", module = "dfrq", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyRangeTransform {
    inner: RangeTransformSpec,
}

#[pymethods]
impl PyRangeTransform {
    /// `kind` is one of identity, log1p, bit-plane, power, bit-plane-power.
    #[new]
    #[pyo3(signature = (b_max=48.0, n=8.0, kind="bit-plane-power"))]
    fn new(b_max: f64, n: f64, kind: &str) -> PyResult<Self> {
        let kind: RangeKind = serde_json::from_value(serde_json::Value::String(kind.to_string()))
            .map_err(|_| PyValueError::new_err(format!("unknown range transform kind {kind:?}")))?;
        Ok(PyRangeTransform { inner: RangeTransformSpec::new(kind, b_max, n).map_err(err)? })
    }

    fn forward(&self, x: f64) -> PyResult<f64> {
        self.inner.forward(x).map_err(err)
    }

    fn inverse(&self, y: f64) -> f64 {
        self.inner.inverse(y)
    }

    #[getter]
    fn floor(&self) -> f64 {
        self.inner.floor()
    }

    fn __repr__(&self) -> String {
        format!("RangeTransform({:?}, b_max={}, n={})", self.inner.kind, self.inner.b_max, self.inner.n)
    }
}

#[pyclass(name = "Encoding", module = "dfrq", frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct PyEncoding {
    inner: EncodingSpec,
}

#[pymethods]
impl PyEncoding {
    #[new]
    #[pyo3(signature = (m_uv, m_w, diagonal, grid_res_uv, grid_res_w))]
    fn new(m_uv: usize, m_w: usize, diagonal: bool, grid_res_uv: usize, grid_res_w: usize) -> PyResult<Self> {
        Ok(PyEncoding { inner: EncodingSpec::for_grid(m_uv, m_w, diagonal, grid_res_uv, grid_res_w).map_err(err)? })
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.input_size()
    }

    #[getter]
    fn scales(&self) -> (f64, f64) {
        (self.inner.s_uv, self.inner.s_w)
    }

    fn encode(&self, u: f64, v: f64, w: f64) -> Vec<f32> {
        self.inner.encode(&HalfVectorKey::new(u, v, w))
    }
}

#[pyfunction]
#[pyo3(signature = (m_uv, m_w, diagonal=false))]
fn input_size(m_uv: usize, m_w: usize, diagonal: bool) -> usize {
    featencode::input_size(m_uv, m_w, diagonal)
}

#[pyfunction]
fn select_s(m: usize, grid_res: usize) -> PyResult<f64> {
    featencode::select_s(m, grid_res).map_err(err)
}

#[pyclass(name = "Model", module = "dfrq", frozen)]
struct PyModel {
    inner: NetworkModel,
}

#[pymethods]
impl PyModel {
    /// Fresh network. `hidden` replaces the funnel parameters when given.
    #[new]
    #[pyo3(signature = (encoding, range=None, first_hidden=464, depth=8, ratio=neuralnet::GOLDEN_RATIO_RECIPROCAL, hidden=None, activation="relu", seed=0))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        encoding: &PyEncoding,
        range: Option<&PyRangeTransform>,
        first_hidden: usize,
        depth: usize,
        ratio: f64,
        hidden: Option<Vec<usize>>,
        activation: &str,
        seed: u64,
    ) -> PyResult<Self> {
        let arch = match hidden {
            Some(hidden) => Architecture::Explicit { hidden },
            None => Architecture::Funnel { first_hidden, num_hidden: depth, ratio },
        };
        let act: CoreActivation = activation.parse().map_err(err)?;
        let range = range.map_or_else(RangeTransformSpec::default, |r| r.inner);
        Ok(PyModel { inner: NetworkModel::init(encoding.inner, range, &arch, act, seed).map_err(err)? })
    }

    /// Trains a copy of this model; returns `(trained, report_dict)`.
    #[pyo3(signature = (dataset, split="held-out:4,7,10", epochs=200, lr=1e-3, batch_size=4096, seed=0))]
    fn train<'py>(
        &self,
        py: Python<'py>,
        dataset: &PyDataset,
        split: &str,
        epochs: usize,
        lr: f64,
        batch_size: usize,
        seed: u64,
    ) -> PyResult<(PyModel, Bound<'py, PyAny>)> {
        let split = DataSplit::parse(split, seed).map_err(err)?;
        let cfg = TrainConfig { max_epochs: epochs, learning_rate: lr, batch_size, seed, ..TrainConfig::default() };
        let (grid, model) = (&dataset.inner, self.inner.clone());
        let (mut trained, report) = py.detach(|| neuralnet::train(grid, &split, model, &cfg)).map_err(err)?;
        trained.provenance = serde_json::json!({ "layout": grid.layout(), "split": split, "train_config": cfg });
        let report = to_py(py, &report)?;
        Ok((PyModel { inner: trained }, report))
    }

    /// Decoded XYZ at each `(u, v, w)` key.
    fn predict(&self, py: Python<'_>, keys: Vec<(f64, f64, f64)>) -> PyResult<Vec<(f64, f64, f64)>> {
        let keys: Vec<HalfVectorKey> = keys.into_iter().map(|(u, v, w)| HalfVectorKey::new(u, v, w)).collect();
        let out = py.detach(|| self.inner.predict_keys(&keys)).map_err(err)?;
        Ok(out.into_iter().map(|c| (c[0], c[1], c[2])).collect())
    }

    #[staticmethod]
    fn from_bytes(data: &[u8]) -> PyResult<Self> {
        Ok(PyModel { inner: NetworkModel::from_bytes(data).map_err(err)? })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Self::from_bytes(&std::fs::read(&path).map_err(|e| io_err(&path, e))?)
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_bytes().map_err(err)?))
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        std::fs::write(&path, self.inner.to_bytes().map_err(err)?).map_err(|e| io_err(&path, e))
    }

    #[getter]
    fn layer_sizes(&self) -> Vec<usize> {
        self.inner.layer_sizes().to_vec()
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.parameter_count()
    }

    fn __repr__(&self) -> String {
        format!("Model({:?}, {} parameters)", self.inner.layer_sizes(), self.inner.parameter_count())
    }
}

#[pyclass(name = "Slice", module = "dfrq", frozen)]
struct PySlice {
    inner: slicer::SliceImage,
}

#[pymethods]
impl PySlice {
    #[getter]
    fn resolution(&self) -> usize {
        self.inner.image.width
    }

    /// Exposed, unclamped XYZ pixels, row-major.
    fn pixels(&self) -> Vec<(f64, f64, f64)> {
        self.inner.image.pixels.iter().map(|c| (c[0], c[1], c[2])).collect()
    }

    /// Clamped sRGB pixels as displayed.
    fn display(&self) -> Vec<(f64, f64, f64)> {
        self.inner.display().into_iter().map(|c| (c[0], c[1], c[2])).collect()
    }

    #[getter]
    fn coverage_fraction(&self) -> f64 {
        self.inner.coverage_fraction()
    }

    fn provenance<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.provenance())
    }

    fn save_ppm(&self, path: PathBuf) -> PyResult<()> {
        let mut buf = Vec::new();
        self.inner.write_ppm(&mut buf).map_err(err)?;
        std::fs::write(&path, buf).map_err(|e| io_err(&path, e))
    }

    /// Metrics dict against a ground-truth slice of the same geometry.
    fn compare<'py>(&self, py: Python<'py>, gt: &PySlice) -> PyResult<Bound<'py, PyAny>> {
        let (record, _) = slicer::compare_slices(&gt.inner, &self.inner).map_err(err)?;
        to_py(py, &record)
    }
}

fn slice_spec(theta_i: f64, phi_i: f64, res: usize, exposure: f64, ior: f64, fresnel: bool) -> PyResult<SliceSpec> {
    let mut spec = SliceSpec::new(theta_i, phi_i, res, exposure).map_err(err)?;
    spec.attenuation.ior = ior;
    spec.attenuation.include_fresnel = fresnel;
    spec.validate().map_err(err)?;
    Ok(spec)
}

/// Slice rendered from a trained network.
#[pyfunction]
#[pyo3(signature = (model, theta_i=0.0, phi_i=0.0, res=512, exposure=2000.0, ior=1.5, fresnel=true))]
fn render_model_slice(py: Python<'_>, model: &PyModel, theta_i: f64, phi_i: f64, res: usize, exposure: f64, ior: f64, fresnel: bool) -> PyResult<PySlice> {
    let spec = slice_spec(theta_i, phi_i, res, exposure, ior, fresnel)?;
    let inner = py.detach(|| slicer::render_slice(&ModelSource::new(&model.inner), &spec)).map_err(err)?;
    Ok(PySlice { inner })
}

/// Ground-truth slice straight from the forward model.
#[pyfunction]
#[pyo3(signature = (hf, sigma_s_um, theta_i=0.0, phi_i=0.0, res=512, exposure=2000.0, ior=1.5, fresnel=true, epsilon=1e-6))]
#[allow(clippy::too_many_arguments)]
fn render_ground_truth_slice(
    py: Python<'_>,
    hf: &PyHeightField,
    sigma_s_um: f64,
    theta_i: f64,
    phi_i: f64,
    res: usize,
    exposure: f64,
    ior: f64,
    fresnel: bool,
    epsilon: f64,
) -> PyResult<PySlice> {
    let spec = slice_spec(theta_i, phi_i, res, exposure, ior, fresnel)?;
    let inner = &hf.inner;
    let image = py
        .detach(|| {
            let spectra = waveoptics::precompute_for_accuracy(inner, epsilon)?;
            let source = ForwardModelSource { spectra: &spectra, window: CoherenceWindow::new(sigma_s_um)? };
            slicer::render_slice(&source, &spec)
        })
        .map_err(err)?;
    Ok(PySlice { inner: image })
}

/// Metrics of a model against 1-based w-slice `number` of a dataset.
#[pyfunction]
#[pyo3(signature = (dataset, model, number, exposure=2000.0))]
fn evaluate_w_slice<'py>(py: Python<'py>, dataset: &PyDataset, model: &PyModel, number: usize, exposure: f64) -> PyResult<Bound<'py, PyAny>> {
    let res_w = dataset.inner.layout().res_w;
    if number == 0 || number > res_w {
        return Err(PyValueError::new_err(format!("slice {number} outside 1..={res_w}")));
    }
    let record = py
        .detach(|| {
            let (gt, pred) = slicer::grid_slice_images(&dataset.inner, &model.inner, number - 1, exposure)?;
            metrics::report(&gt, &pred)
        })
        .map_err(err)?;
    to_py(py, &record)
}

/// Metrics of two XYZ images (row-major `(x, y, z)` lists), with an optional validity mask.
#[pyfunction]
#[pyo3(signature = (gt, pred, width, height, exposure=1.0, mask=None))]
fn metrics_report<'py>(
    py: Python<'py>,
    gt: Vec<(f64, f64, f64)>,
    pred: Vec<(f64, f64, f64)>,
    width: usize,
    height: usize,
    exposure: f64,
    mask: Option<Vec<bool>>,
) -> PyResult<Bound<'py, PyAny>> {
    let image = |px: Vec<(f64, f64, f64)>| -> PyResult<EvalImage> {
        let px = px.into_iter().map(|(x, y, z)| [x, y, z]).collect();
        let img = EvalImage::new(width, height, px, ColorSpace::Xyz, exposure).map_err(err)?;
        match &mask {
            Some(m) => img.with_mask(m.clone()).map_err(err),
            None => Ok(img),
        }
    };
    let record = metrics::report(&image(gt)?, &image(pred)?).map_err(err)?;
    to_py(py, &record)
}

#[pyfunction]
fn format_versions() -> String {
    core::formats::summary()
}

#[pymodule]
#[pyo3(name = "dfrq")]
fn dfrq_module(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyHeightField>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyRangeTransform>()?;
    m.add_class::<PyEncoding>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PySlice>()?;
    m.add_function(wrap_pyfunction!(reflectance_xyz, m)?)?;
    m.add_function(wrap_pyfunction!(choose_taylor_order, m)?)?;
    m.add_function(wrap_pyfunction!(input_size, m)?)?;
    m.add_function(wrap_pyfunction!(select_s, m)?)?;
    m.add_function(wrap_pyfunction!(render_model_slice, m)?)?;
    m.add_function(wrap_pyfunction!(render_ground_truth_slice, m)?)?;
    m.add_function(wrap_pyfunction!(evaluate_w_slice, m)?)?;
    m.add_function(wrap_pyfunction!(metrics_report, m)?)?;
    m.add_function(wrap_pyfunction!(format_versions, m)?)?;
    Ok(())
}
