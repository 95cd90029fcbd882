//! Python module `photostereo`.
//!
//! Matrices cross the boundary as lists of rows and rasters as flat
//! row-major lists of length `height * width`, with NaN outside the mask.

use nalgebra::DMatrix;
use photostereo::eval::{fit_gbr_depth, percent_improved_trials, relative_improvement, z_err};
use photostereo::grid::{DepthMap, PixelGrid};
use photostereo::lowrank;
use photostereo::photometric::{detect_missing, generate_scene, ObservationSet, Scene, MISSING_HIGH, MISSING_LOW};
use photostereo::pipeline::{run_method, Method, MethodOutput};
use photostereo::{Error, RunConfig};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn to_py(e: Error) -> PyErr {
    if e.is_data_error() || matches!(e, Error::InvalidArgument(_) | Error::Config(_)) {
        PyValueError::new_err(e.to_string())
    } else {
        PyRuntimeError::new_err(e.to_string())
    }
}

fn config(toml: Option<&str>) -> PyResult<RunConfig> {
    let cfg = match toml {
        Some(text) => RunConfig::from_toml_str(text).map_err(to_py)?,
        None => RunConfig::default(),
    };
    cfg.validate().map_err(to_py)?;
    Ok(cfg)
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows must have equal length"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn raster(grid: &PixelGrid, values: &[f64]) -> Vec<f64> {
    grid.scatter(values, f64::NAN)
}

/// Images of an object under unknown distant lighting.
#[pyclass(name = "Observations", module = "photostereo", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyObservations {
    inner: ObservationSet,
}

#[pymethods]
impl PyObservations {
    /// `images`: one raster per image with intensities in `[0, 1]`.
    /// Entries outside `(low, high)` are treated as missing.
    #[new]
    #[pyo3(signature = (images, mask, height, width, low=MISSING_LOW, high=MISSING_HIGH))]
    fn new(images: Vec<Vec<f64>>, mask: Vec<bool>, height: usize, width: usize, low: f64, high: f64) -> PyResult<Self> {
        let grid = PixelGrid::new(height, width, mask).map_err(to_py)?;
        if let Some(i) = images.iter().position(|img| img.len() != height * width) {
            return Err(PyValueError::new_err(format!("image {i} does not have {height} x {width} pixels")));
        }
        let gathered: Vec<Vec<f64>> = images.iter().map(|img| grid.gather(img)).collect();
        let m = from_rows(&gathered)?;
        let w = detect_missing(&m, low, high);
        let inner = ObservationSet::new(m, w, grid).map_err(to_py)?;
        Ok(Self { inner })
    }

    #[getter]
    fn images(&self) -> usize {
        self.inner.images()
    }

    #[getter]
    fn pixels(&self) -> usize {
        self.inner.pixels()
    }

    #[getter]
    fn height(&self) -> usize {
        self.inner.grid.height()
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.grid.width()
    }

    #[getter]
    fn mask(&self) -> Vec<bool> {
        self.inner.grid.mask().to_vec()
    }

    /// Fraction of entries treated as missing.
    #[getter]
    fn missing_fraction(&self) -> f64 {
        let missing = self.inner.w.iter().filter(|&&o| !o).count();
        missing as f64 / self.inner.w.len().max(1) as f64
    }

    fn __repr__(&self) -> String {
        format!(
            "Observations(images={}, height={}, width={}, pixels={})",
            self.images(),
            self.height(),
            self.width(),
            self.pixels()
        )
    }
}

/// Rendered synthetic scene with ground truth.
#[pyclass(name = "Scene", module = "photostereo", frozen)]
struct PyScene {
    inner: Scene,
}

#[pymethods]
impl PyScene {
    #[getter]
    fn observations(&self) -> PyObservations {
        PyObservations {
            inner: self.inner.obs.clone(),
        }
    }

    #[getter]
    fn depth(&self) -> Vec<f64> {
        raster(&self.inner.obs.grid, self.inner.surface.depth.values())
    }

    /// `m` rows of `(x, y, z)`.
    #[getter]
    fn lights(&self) -> Vec<Vec<f64>> {
        rows(&self.inner.lights.0)
    }

    /// Rasters of the rendered images.
    #[getter]
    fn images(&self) -> Vec<Vec<f64>> {
        let grid = &self.inner.obs.grid;
        self.inner
            .obs
            .m
            .row_iter()
            .map(|r| raster(grid, &r.iter().copied().collect::<Vec<_>>()))
            .collect()
    }

    /// Depth error in percent after the best GBR alignment of `depth`, a
    /// raster such as [`Reconstruction.depth`].
    fn z_err(&self, depth: Vec<f64>) -> PyResult<f64> {
        let grid = &self.inner.obs.grid;
        if depth.len() != grid.height() * grid.width() {
            return Err(PyValueError::new_err("depth raster has the wrong size"));
        }
        let rec = DepthMap(grid.gather(&depth));
        let truth = &self.inner.surface.depth;
        let fit = fit_gbr_depth(&rec, truth, grid).map_err(to_py)?;
        z_err(&fit.aligned, truth).map_err(to_py)
    }

    fn __repr__(&self) -> String {
        let g = &self.inner.obs.grid;
        format!("Scene(images={}, height={}, width={})", self.inner.obs.images(), g.height(), g.width())
    }
}

/// Depth, scaled normals and lights recovered by one method.
#[pyclass(name = "Reconstruction", module = "photostereo", frozen)]
struct PyReconstruction {
    method: Method,
    grid: PixelGrid,
    out: MethodOutput,
}

#[pymethods]
impl PyReconstruction {
    #[getter]
    fn method(&self) -> &'static str {
        self.method.name()
    }

    #[getter]
    fn depth(&self) -> Vec<f64> {
        raster(&self.grid, self.out.depth.values())
    }

    /// Three rasters: the x, y and z components of `albedo * unit normal`.
    #[getter]
    fn normals(&self) -> Vec<Vec<f64>> {
        self.out
            .normals
            .row_iter()
            .map(|r| raster(&self.grid, &r.iter().copied().collect::<Vec<_>>()))
            .collect()
    }

    #[getter]
    fn lights(&self) -> Vec<Vec<f64>> {
        rows(&self.out.lights)
    }

    /// Outer iterations of the joint solver, `None` for the other methods.
    #[getter]
    fn outer_iterations(&self) -> Option<usize> {
        self.out.report.as_ref().map(|r| r.outer_iterations)
    }

    #[getter]
    fn converged(&self) -> Option<bool> {
        self.out.report.as_ref().map(|r| r.converged)
    }

    /// Final data misfit of the joint solver.
    #[getter]
    fn f_data(&self) -> Option<f64> {
        self.out.report.as_ref().map(|r| r.final_f_data)
    }

    fn __repr__(&self) -> String {
        format!("Reconstruction(method={:?}, pixels={})", self.method.name(), self.grid.len())
    }
}

/// Renders a synthetic scene. `config` is TOML in the format of the
/// command-line tool; the keyword arguments override its `[scene]` table.
#[pyfunction]
#[pyo3(signature = (images=None, noise=None, width=None, height=None, phong=None, shadow_free=None, seed=None, config=None))]
#[allow(clippy::too_many_arguments)]
fn synth(
    py: Python<'_>,
    images: Option<usize>,
    noise: Option<f64>,
    width: Option<usize>,
    height: Option<usize>,
    phong: Option<bool>,
    shadow_free: Option<bool>,
    seed: Option<u64>,
    config: Option<&str>,
) -> PyResult<PyScene> {
    let cfg = self::config(config)?;
    let mut spec = cfg.scene.clone();
    spec.m = images.unwrap_or(spec.m);
    spec.noise = noise.unwrap_or(spec.noise);
    spec.width = width.unwrap_or(spec.width);
    spec.height = height.unwrap_or(spec.height);
    spec.phong = phong.unwrap_or(spec.phong);
    spec.shadow_free = shadow_free.unwrap_or(spec.shadow_free);
    let seed = seed.unwrap_or(cfg.seed);
    let inner = py.detach(|| generate_scene(&spec, seed)).map_err(to_py)?;
    Ok(PyScene { inner })
}

/// Reconstructs with `method`: "baseline", "rpca", "joint-mc" or
/// "joint-nc". Solver settings come from `config` (TOML).
#[pyfunction]
#[pyo3(signature = (observations, method="joint-mc", config=None))]
fn solve(py: Python<'_>, observations: &PyObservations, method: &str, config: Option<&str>) -> PyResult<PyReconstruction> {
    let method: Method = method.parse().map_err(to_py)?;
    let cfg = self::config(config)?;
    let obs = &observations.inner;
    let out = py.detach(|| run_method(obs, method, &cfg.rpca, &cfg.joint)).map_err(to_py)?;
    Ok(PyReconstruction {
        method,
        grid: obs.grid.clone(),
        out,
    })
}

/// Mean per-trial relative reduction of `errs_b` by `errs_a`, in percent.
#[pyfunction(name = "relative_improvement")]
fn py_relative_improvement(errs_a: Vec<f64>, errs_b: Vec<f64>) -> PyResult<f64> {
    relative_improvement(&errs_a, &errs_b).map_err(to_py)
}

/// Percentage of trials where `errs_a` is strictly below `errs_b`.
#[pyfunction(name = "percent_improved_trials")]
fn py_percent_improved_trials(errs_a: Vec<f64>, errs_b: Vec<f64>) -> PyResult<f64> {
    percent_improved_trials(&errs_a, &errs_b).map_err(to_py)
}

/// Singular value soft-thresholding of a matrix given as rows.
#[pyfunction]
fn shrink(matrix: Vec<Vec<f64>>, t: f64) -> PyResult<Vec<Vec<f64>>> {
    if !(t >= 0.0) {
        return Err(PyValueError::new_err("threshold must be non-negative"));
    }
    Ok(rows(&lowrank::shrink(&from_rows(&matrix)?, t)))
}

/// Sum of the singular values beyond the third.
#[pyfunction]
fn tnn(matrix: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(lowrank::tnn(&from_rows(&matrix)?))
}

/// The default configuration as TOML.
#[pyfunction]
fn default_config() -> PyResult<String> {
    RunConfig::default().to_toml_string().map_err(to_py)
}

#[pymodule]
#[pyo3(name = "photostereo")]
fn photostereo_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyObservations>()?;
    m.add_class::<PyScene>()?;
    m.add_class::<PyReconstruction>()?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(py_relative_improvement, m)?)?;
    m.add_function(wrap_pyfunction!(py_percent_improved_trials, m)?)?;
    m.add_function(wrap_pyfunction!(shrink, m)?)?;
    m.add_function(wrap_pyfunction!(tnn, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add("METHODS", Method::ALL.iter().map(|m| m.name()).collect::<Vec<_>>())?;
    Ok(())
}
