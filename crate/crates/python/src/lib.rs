//! Python bindings: metrics, statistics, ROI selection, phantom data and the network.

use std::path::PathBuf;

use candle_core::{DType, Device, Tensor};
use kneeseg::data::{make_phantom, LabelMask, Volume, VolumeMeta};
use kneeseg::harness::{error_map as core_error_map, load_trained, segment_volume, Mode, RunConfig};
use kneeseg::metrics::{self, association_measures, significance_tests};
use kneeseg::net::{count_parameters, probabilities, MtraUnet};
use kneeseg::roi::{is_critical_slice as core_is_critical, select_critical_slices as core_select, ThresholdConfig, TissueCounts};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn py_err(e: kneeseg::Error) -> PyErr {
    if e.is_validation() {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn tensor_err(e: candle_core::Error) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn as_masks(labels: Vec<u8>, height: usize, width: usize) -> PyResult<LabelMask> {
    LabelMask::new(labels, height, width, 5).map_err(py_err)
}

/// Dice similarity coefficient in percent.
#[pyfunction]
fn dsc(k: Vec<bool>, y: Vec<bool>) -> PyResult<f64> {
    metrics::dsc(&k, &y).map_err(py_err)
}

#[pyfunction]
fn jaccard(k: Vec<bool>, y: Vec<bool>) -> PyResult<f64> {
    metrics::jaccard(&k, &y).map_err(py_err)
}

/// Volumetric overlap error from a DSC percentage.
#[pyfunction]
fn voe(dsc_percent: f64) -> PyResult<f64> {
    metrics::voe(dsc_percent).map_err(py_err)
}

/// Symmetric Hausdorff distance in mm; `None` when exactly one mask is empty.
#[pyfunction]
#[pyo3(signature = (k, y, height, width, spacing_mm=(1.0, 1.0)))]
fn hausdorff(k: Vec<bool>, y: Vec<bool>, height: usize, width: usize, spacing_mm: (f64, f64)) -> PyResult<Option<f64>> {
    metrics::hausdorff(&k, &y, height, width, spacing_mm).map_err(py_err)
}

#[pyfunction]
fn pixel_accuracy(k: Vec<u8>, y: Vec<u8>) -> PyResult<f64> {
    metrics::pixel_accuracy(&k, &y).map_err(py_err)
}

/// Pearson r, ICC(A,1) and Kendall's W; undefined entries are `None`.
#[pyfunction]
fn association<'py>(py: Python<'py>, manual: Vec<f64>, auto: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let a = association_measures(&manual, &auto).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("r", a.r)?;
    d.set_item("icc", a.icc)?;
    d.set_item("w", a.w)?;
    Ok(d)
}

/// Welch t-test p-value and one-way ANOVA F and p.
#[pyfunction]
fn significance<'py>(py: Python<'py>, group_a: Vec<f64>, group_b: Vec<f64>) -> PyResult<Bound<'py, PyDict>> {
    let s = significance_tests(&group_a, &group_b).map_err(py_err)?;
    let d = PyDict::new(py);
    d.set_item("t_p", s.t_p)?;
    d.set_item("anova_f", s.anova_f)?;
    d.set_item("anova_p", s.anova_p)?;
    Ok(d)
}

fn thresholds(mode: &str) -> PyResult<ThresholdConfig> {
    Ok(mode.parse::<Mode>().map_err(py_err)?.default_thresholds())
}

/// Minimum-pixel-count rule with the thresholds of `mode`.
#[pyfunction]
#[pyo3(signature = (fb, fc, tb, tc, mode="multiclass"))]
fn is_critical_slice(fb: usize, fc: usize, tb: usize, tc: usize, mode: &str) -> PyResult<bool> {
    Ok(core_is_critical(&TissueCounts { fb, fc, tb, tc }, &thresholds(mode)?))
}

/// Indices of the critical slices among flattened 5-class masks.
#[pyfunction]
#[pyo3(signature = (masks, height, width, mode="multiclass"))]
fn select_critical_slices(masks: Vec<Vec<u8>>, height: usize, width: usize, mode: &str) -> PyResult<Vec<usize>> {
    let masks = masks
        .into_iter()
        .map(|m| as_masks(m, height, width))
        .collect::<PyResult<Vec<_>>>()?;
    Ok(core_select(&masks, &thresholds(mode)?))
}

/// Per-pixel error codes as bytes: 0 correct, t missed tissue t, 4 + t false detection of t.
#[pyfunction]
fn error_map(pred: Vec<u8>, gt: Vec<u8>, height: usize, width: usize) -> PyResult<Vec<u8>> {
    let map = core_error_map(&as_masks(pred, height, width)?, &as_masks(gt, height, width)?).map_err(py_err)?;
    Ok(map.codes().to_vec())
}

/// Trainable parameter count of a preset (`default` or `tiny`) network.
#[pyfunction]
#[pyo3(signature = (preset="default", overrides=Vec::new()))]
fn parameter_count(preset: &str, overrides: Vec<(String, String)>) -> PyResult<usize> {
    Ok(count_parameters(&RunConfig::resolve(preset, &overrides).map_err(py_err)?.model))
}

/// A synthetic knee volume: per-slice images in [0, 1] and 5-class masks.
#[pyclass(name = "Volume", unsendable)]
struct PyVolume {
    inner: Volume,
}

#[pymethods]
impl PyVolume {
    #[new]
    #[pyo3(signature = (seed=0, slice_count=160, size=150))]
    fn new(seed: u64, slice_count: usize, size: usize) -> PyResult<Self> {
        let meta = VolumeMeta {
            slice_count,
            ..VolumeMeta::default()
        };
        meta.validate().map_err(py_err)?;
        let inner = make_phantom(seed, &meta).resized(size).map_err(py_err)?;
        Ok(Self { inner })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn size(&self) -> usize {
        self.inner.slices.first().map_or(0, |s| s.image.height())
    }

    #[getter]
    fn spacing_mm(&self) -> (f64, f64) {
        self.inner.meta.spacing_mm
    }

    fn slice_id(&self, index: usize) -> PyResult<String> {
        Ok(self.get(index)?.id.to_string())
    }

    /// Row-major pixels of slice `index`.
    fn image(&self, index: usize) -> PyResult<Vec<f32>> {
        Ok(self.get(index)?.image.pixels().to_vec())
    }

    /// Row-major labels of slice `index`, as bytes.
    fn mask(&self, index: usize) -> PyResult<Vec<u8>> {
        Ok(self.get(index)?.mask.labels().to_vec())
    }

    /// Critical slice indices under the default thresholds of `mode`.
    #[pyo3(signature = (mode="multiclass"))]
    fn critical_slices(&self, mode: &str) -> PyResult<Vec<usize>> {
        Ok(core_select(self.inner.masks(), &thresholds(mode)?))
    }
}

impl PyVolume {
    fn get(&self, index: usize) -> PyResult<&kneeseg::data::SlicePair> {
        self.inner
            .slices
            .get(index)
            .ok_or_else(|| PyValueError::new_err(format!("slice {index} out of range 0..{}", self.inner.len())))
    }
}

/// The segmentation network, freshly initialized or loaded from a checkpoint.
#[pyclass(name = "Model", unsendable)]
struct PyModel {
    inner: MtraUnet,
    mode: Mode,
}

#[pymethods]
impl PyModel {
    #[new]
    #[pyo3(signature = (preset="tiny", overrides=Vec::new()))]
    fn new(preset: &str, overrides: Vec<(String, String)>) -> PyResult<Self> {
        let cfg = RunConfig::resolve(preset, &overrides).map_err(py_err)?;
        let inner = MtraUnet::new(cfg.model, DType::F32, &Device::Cpu).map_err(py_err)?;
        Ok(Self { inner, mode: cfg.mode })
    }

    /// Loads a checkpoint written by `kneeseg train`.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let (inner, cfg) = load_trained(&path).map_err(py_err)?;
        Ok(Self { inner, mode: cfg.mode })
    }

    #[getter]
    fn parameter_count(&self) -> usize {
        self.inner.num_parameters()
    }

    #[getter]
    fn input_size(&self) -> usize {
        self.inner.config().input_size
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.config().class_count
    }

    /// Class probabilities `[class][pixel]` for one row-major slice.
    fn predict(&self, image: Vec<f32>) -> PyResult<Vec<Vec<f32>>> {
        let s = self.inner.config().input_size;
        if image.len() != s * s {
            return Err(PyValueError::new_err(format!("expected {} pixels, got {}", s * s, image.len())));
        }
        let x = Tensor::from_vec(image, (1, 1, s, s), &Device::Cpu).map_err(tensor_err)?;
        let logits = self.inner.forward(&x, false).map_err(py_err)?.squeeze(0).map_err(tensor_err)?;
        let probs = probabilities(&logits, 0).map_err(py_err)?;
        probs.flatten_from(1).map_err(tensor_err)?.to_vec2().map_err(tensor_err)
    }

    /// 5-class masks for every slice of `volume`, plus the timing report as JSON.
    fn segment(&self, volume: &PyVolume) -> PyResult<(Vec<Vec<u8>>, String)> {
        let seg = segment_volume(&self.inner, self.mode, &volume.inner).map_err(py_err)?;
        let timing = serde_json::to_string(&seg.timing).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
        Ok((seg.masks.into_iter().map(|m| m.labels().to_vec()).collect(), timing))
    }
}

#[pymodule]
fn kneeseg_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(dsc, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(voe, m)?)?;
    m.add_function(wrap_pyfunction!(hausdorff, m)?)?;
    m.add_function(wrap_pyfunction!(pixel_accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(association, m)?)?;
    m.add_function(wrap_pyfunction!(significance, m)?)?;
    m.add_function(wrap_pyfunction!(is_critical_slice, m)?)?;
    m.add_function(wrap_pyfunction!(select_critical_slices, m)?)?;
    m.add_function(wrap_pyfunction!(error_map, m)?)?;
    m.add_function(wrap_pyfunction!(parameter_count, m)?)?;
    m.add_class::<PyVolume>()?;
    m.add_class::<PyModel>()?;
    m.add("DEFAULT_PARAMETER_COUNT", kneeseg::net::DEFAULT_PARAMETER_COUNT)?;
    Ok(())
}
