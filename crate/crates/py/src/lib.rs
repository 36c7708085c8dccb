//! Python bindings.

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;

use densenorm::grid::GridSpec;
use densenorm::imageio;
use densenorm::interp::{self, BasisMatrices};
use densenorm::metrics;
use densenorm::moments;
use densenorm::normalize::{AffineParams, StrategyConfig, StrategyKind};
use densenorm::pipeline::{self, Executor, PassOptions, StylizerSpec};
use densenorm::raster;

fn to_py(e: densenorm::Error) -> PyErr {
    if e.is_io() {
        PyIOError::new_err(e.to_string())
    } else if e.is_protocol_violation() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn to_dict<'py>(py: Python<'py>, value: &impl serde::Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyRuntimeError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

/// Interleaved height x width x channels float image.
#[pyclass(name = "Image", module = "pydensenorm", skip_from_py_object)]
#[derive(Clone)]
struct PyImage {
    inner: raster::Image,
}

#[pymethods]
impl PyImage {
    #[new]
    #[pyo3(signature = (height, width, channels, data=None))]
    fn new(height: usize, width: usize, channels: usize, data: Option<Vec<f32>>) -> PyResult<Self> {
        let inner = match data {
            Some(d) => raster::Image::from_vec(height, width, channels, d).map_err(to_py)?,
            None => raster::Image::new(height, width, channels),
        };
        Ok(Self { inner })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: imageio::load_image(path).map_err(to_py)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        imageio::save_image(&self.inner, path).map_err(to_py)
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn channels(&self) -> usize {
        self.inner.channels()
    }

    #[getter]
    fn shape(&self) -> (usize, usize, usize) {
        self.inner.shape()
    }

    fn get(&self, y: usize, x: usize, c: usize) -> PyResult<f32> {
        let (h, w, ch) = self.inner.shape();
        if y >= h || x >= w || c >= ch {
            return Err(PyValueError::new_err(format!(
                "({y},{x},{c}) outside {h}x{w}x{ch}"
            )));
        }
        Ok(self.inner.get(y, x, c))
    }

    fn to_list(&self) -> Vec<f32> {
        self.inner.data().to_vec()
    }

    fn __eq__(&self, other: &Self) -> bool {
        self.inner == other.inner
    }

    fn __repr__(&self) -> String {
        let (h, w, c) = self.inner.shape();
        format!("Image(height={h}, width={w}, channels={c})")
    }
}

type DispatchTuple = (i64, Option<(usize, usize)>, Option<(usize, usize)>);

#[pyclass(name = "GridSpec", module = "pydensenorm", frozen)]
struct PyGridSpec {
    inner: GridSpec,
}

#[pymethods]
impl PyGridSpec {
    #[new]
    fn new(height: usize, width: usize, patch_size: usize) -> PyResult<Self> {
        Ok(Self {
            inner: GridSpec::new(height, width, patch_size).map_err(to_py)?,
        })
    }

    #[getter]
    fn rows(&self) -> usize {
        self.inner.rows
    }

    #[getter]
    fn cols(&self) -> usize {
        self.inner.cols
    }

    #[getter]
    fn patch_size(&self) -> usize {
        self.inner.patch_size
    }

    fn num_patches(&self) -> usize {
        self.inner.num_patches()
    }

    /// `(step, inference, prefetch)` tuples; coordinates are `(row, col)` or None.
    #[pyo3(signature = (radius=1))]
    fn dispatch_sequence(&self, radius: usize) -> Vec<DispatchTuple> {
        self.inner
            .dispatch_sequence_with_radius(radius)
            .map(|s| {
                (
                    s.step,
                    s.inference.map(|c| (c.row, c.col)),
                    s.prefetch.map(|c| (c.row, c.col)),
                )
            })
            .collect()
    }

    fn __repr__(&self) -> String {
        let g = &self.inner;
        format!(
            "GridSpec(rows={}, cols={}, patch_size={})",
            g.rows, g.cols, g.patch_size
        )
    }
}

#[pyclass(name = "Strategy", module = "pydensenorm", skip_from_py_object)]
#[derive(Clone)]
struct PyStrategy {
    inner: StrategyConfig,
}

#[pymethods]
impl PyStrategy {
    #[new]
    #[pyo3(signature = (kind="dn", epsilon=moments::DEFAULT_EPSILON, kin_kernel=5, granularity=1, reciprocal_sigma=true, gamma=None, beta=None))]
    fn new(
        kind: &str,
        epsilon: f64,
        kin_kernel: usize,
        granularity: usize,
        reciprocal_sigma: bool,
        gamma: Option<Vec<f64>>,
        beta: Option<Vec<f64>>,
    ) -> PyResult<Self> {
        let kind: StrategyKind = kind.parse().map_err(to_py)?;
        let mut inner = StrategyConfig::new(kind);
        inner.epsilon = epsilon;
        inner.kin_kernel = kin_kernel;
        inner.granularity = granularity;
        inner.reciprocal_sigma = reciprocal_sigma;
        inner.affine = AffineParams::new(gamma.unwrap_or_default(), beta.unwrap_or_default());
        Ok(Self { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind.as_str()
    }

    fn __repr__(&self) -> String {
        format!("Strategy(kind={:?})", self.inner.kind.as_str())
    }
}

#[pyclass(name = "Stylizer", module = "pydensenorm", skip_from_py_object)]
#[derive(Clone)]
struct PyStylizer {
    inner: StylizerSpec,
}

#[pymethods]
impl PyStylizer {
    #[new]
    #[pyo3(signature = (target_mean=vec![0.5], target_std=vec![0.2]))]
    fn new(target_mean: Vec<f64>, target_std: Vec<f64>) -> Self {
        Self {
            inner: StylizerSpec::new(target_mean, target_std),
        }
    }

    #[staticmethod]
    #[pyo3(signature = (image, epsilon=moments::DEFAULT_EPSILON))]
    fn from_reference(image: &PyImage, epsilon: f64) -> PyResult<Self> {
        Ok(Self {
            inner: StylizerSpec::from_reference(&image.inner, epsilon).map_err(to_py)?,
        })
    }

    #[getter]
    fn target_mean(&self) -> Vec<f64> {
        self.inner.target_mean.clone()
    }

    #[getter]
    fn target_std(&self) -> Vec<f64> {
        self.inner.target_std.clone()
    }
}

fn executor(name: &str) -> PyResult<Executor> {
    match name {
        "single" => Ok(Executor::Single),
        "two-stage" | "two_stage" => Ok(Executor::TwoStage),
        other => Err(PyValueError::new_err(format!("unknown pipeline {other:?}"))),
    }
}

/// Translates an image; returns the unclamped output and the run report.
#[pyfunction]
#[pyo3(signature = (image, patch_size, strategy=None, stylizer=None, pipeline="single", threads=2))]
fn translate<'py>(
    py: Python<'py>,
    image: &PyImage,
    patch_size: usize,
    strategy: Option<&PyStrategy>,
    stylizer: Option<&PyStylizer>,
    pipeline: &str,
    threads: usize,
) -> PyResult<(PyImage, Bound<'py, PyAny>)> {
    let strategy = strategy.map_or_else(|| StrategyConfig::dn(1), |s| s.inner.clone());
    let stylizer = stylizer.map_or_else(StylizerSpec::default, |s| s.inner.clone());
    let exec = executor(pipeline)?;
    let input = image.inner.clone();
    let options = PassOptions {
        threads,
        instrument: false,
    };
    let (out, pass) = py
        .detach(|| {
            pipeline::translate_image(&input, patch_size, exec, &strategy, &stylizer, options)
        })
        .map_err(to_py)?;
    Ok((PyImage { inner: out }, to_dict(py, &pass.report)?))
}

#[pyfunction]
fn seam_energy<'py>(
    py: Python<'py>,
    image: &PyImage,
    patch_size: usize,
) -> PyResult<Bound<'py, PyAny>> {
    to_dict(
        py,
        &metrics::seam_energy(&image.inner, patch_size).map_err(to_py)?,
    )
}

/// Per-channel `(mean, std)` of a patch.
#[pyfunction]
#[pyo3(signature = (image, epsilon=moments::DEFAULT_EPSILON))]
fn compute_moments(image: &PyImage, epsilon: f64) -> PyResult<(Vec<f64>, Vec<f64>)> {
    let m = moments::compute_moments(&image.inner, epsilon).map_err(to_py)?;
    Ok((m.mean, m.stddev))
}

/// Precomputed-basis interpolation of a 2x2 cell to n x n, row-major.
#[pyfunction]
fn fast_interp_cell(q: [[f64; 2]; 2], n: usize) -> PyResult<Vec<f64>> {
    let basis = BasisMatrices::new(n).map_err(to_py)?;
    Ok(interp::fast_interp_cell(&q, &basis))
}

#[pyfunction]
fn naive_bilinear_cell(q: [[f64; 2]; 2], n: usize) -> PyResult<Vec<f64>> {
    if n < 2 {
        return Err(PyValueError::new_err("n must be at least 2"));
    }
    Ok(interp::naive_bilinear_cell(&q, n))
}

#[pyfunction]
#[pyo3(signature = (n, iterations=100, patches=1))]
fn bench_interpolation<'py>(
    py: Python<'py>,
    n: usize,
    iterations: usize,
    patches: usize,
) -> PyResult<Bound<'py, PyAny>> {
    let report = py
        .detach(|| metrics::bench_interpolation(n, iterations, patches))
        .map_err(to_py)?;
    to_dict(py, &report)
}

#[pymodule]
fn pydensenorm(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyImage>()?;
    m.add_class::<PyGridSpec>()?;
    m.add_class::<PyStrategy>()?;
    m.add_class::<PyStylizer>()?;
    m.add_function(wrap_pyfunction!(translate, m)?)?;
    m.add_function(wrap_pyfunction!(seam_energy, m)?)?;
    m.add_function(wrap_pyfunction!(compute_moments, m)?)?;
    m.add_function(wrap_pyfunction!(fast_interp_cell, m)?)?;
    m.add_function(wrap_pyfunction!(naive_bilinear_cell, m)?)?;
    m.add_function(wrap_pyfunction!(bench_interpolation, m)?)?;
    Ok(())
}
