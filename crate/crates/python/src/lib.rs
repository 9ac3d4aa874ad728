//! Python bindings: compositions and their algebra, smoothing and imputation,
//! compositional FPCA, spectral clustering and the file pipeline.

use std::path::PathBuf;

use compfda_core::cfpca::{self, FpcaFit};
use compfda_core::clustering::{self, ClusterOptions, SilhouetteOptions};
use compfda_core::compdata::{self, FunctionalComposition, TimeGrid, DEFAULT_PSEUDOCOUNT};
use compfda_core::pipeline::{self, PipelineConfig};
use compfda_core::smoothing::{self, Lambda, MissingMask, SmoothingConfig};
use compfda_core::{synth, Error, ErrorKind};
use nalgebra::DMatrix;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

type SelectionRow = (usize, f64, f64);

fn raise(kind: ErrorKind, message: String) -> PyErr {
    match kind {
        ErrorKind::Numeric => PyRuntimeError::new_err(message),
        _ => PyValueError::new_err(message),
    }
}

fn py_err(e: Error) -> PyErr {
    raise(e.kind(), e.to_string())
}

fn matrix(rows: &[Vec<f64>]) -> PyResult<DMatrix<f64>> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(PyValueError::new_err("rows have different lengths"));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

/// A D-part composition observed on a grid of time points.
#[pyclass(name = "Composition", module = "compfda", from_py_object)]
#[derive(Clone)]
struct PyComposition {
    inner: FunctionalComposition,
}

impl PyComposition {
    fn wrap(inner: FunctionalComposition) -> Self {
        Self { inner }
    }
}

#[pymethods]
impl PyComposition {
    /// Closes `values` (parts x times, nonnegative), replacing zeros by `pseudocount`.
    #[new]
    #[pyo3(signature = (id, part_names, times, values, pseudocount = DEFAULT_PSEUDOCOUNT))]
    fn new(
        id: String,
        part_names: Vec<String>,
        times: Vec<f64>,
        values: Vec<Vec<f64>>,
        pseudocount: f64,
    ) -> PyResult<Self> {
        let grid = TimeGrid::new(times).map_err(py_err)?;
        let raw = matrix(&values)?;
        compdata::closure(id, part_names, grid, &raw, pseudocount).map(Self::wrap).map_err(py_err)
    }

    /// Inverse clr of coordinates (parts x times) with zero column sums.
    #[staticmethod]
    fn from_clr(
        id: String,
        part_names: Vec<String>,
        times: Vec<f64>,
        coords: Vec<Vec<f64>>,
    ) -> PyResult<Self> {
        let grid = TimeGrid::new(times).map_err(py_err)?;
        compdata::clr_inv_coords(id, part_names, grid, &matrix(&coords)?).map(Self::wrap).map_err(py_err)
    }

    #[getter]
    fn id(&self) -> String {
        self.inner.id().to_string()
    }

    #[getter]
    fn part_names(&self) -> Vec<String> {
        self.inner.part_names().to_vec()
    }

    #[getter]
    fn times(&self) -> Vec<f64> {
        self.inner.grid().points().to_vec()
    }

    #[getter]
    fn parts(&self) -> Vec<Vec<f64>> {
        rows(self.inner.parts())
    }

    fn clr(&self) -> Vec<Vec<f64>> {
        rows(compdata::clr(&self.inner).coords())
    }

    fn perturb(&self, other: &PyComposition) -> PyResult<Self> {
        compdata::perturb(&self.inner, &other.inner).map(Self::wrap).map_err(py_err)
    }

    fn power(&self, alpha: f64) -> PyResult<Self> {
        compdata::power(alpha, &self.inner).map(Self::wrap).map_err(py_err)
    }

    fn inner_product(&self, other: &PyComposition) -> PyResult<f64> {
        compdata::inner_product(&self.inner, &other.inner).map_err(py_err)
    }

    fn norm(&self) -> f64 {
        compdata::norm(&self.inner)
    }

    fn distance(&self, other: &PyComposition) -> PyResult<f64> {
        compdata::distance(&self.inner, &other.inner).map_err(py_err)
    }

    /// Penalized spline smoothing of the clr coordinates; `lam=None` selects by GCV.
    #[pyo3(signature = (basis_dimension = smoothing::DEFAULT_BASIS_DIMENSION, penalty_order = smoothing::DEFAULT_PENALTY_ORDER, lam = None))]
    fn smooth(&self, basis_dimension: usize, penalty_order: usize, lam: Option<f64>) -> PyResult<Self> {
        let cfg = SmoothingConfig {
            basis_dimension,
            penalty_order,
            lambda: lam.map_or(Lambda::Gcv, Lambda::Fixed),
        };
        smoothing::smooth_composition(&self.inner, &cfg).map(Self::wrap).map_err(py_err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Composition(id={:?}, parts={}, times={})",
            self.inner.id(),
            self.inner.n_parts(),
            self.inner.n_points()
        )
    }
}

fn unwrap_all(sample: &[PyComposition]) -> Vec<FunctionalComposition> {
    sample.iter().map(|c| c.inner.clone()).collect()
}

/// Fills masked time points (`True` = missing) of incomplete curves.
#[pyfunction]
#[pyo3(signature = (sample, missing, ridge = smoothing::DEFAULT_RIDGE))]
fn impute(sample: Vec<PyComposition>, missing: Vec<Vec<bool>>, ridge: f64) -> PyResult<Vec<PyComposition>> {
    let masks: Vec<MissingMask> = sample
        .iter()
        .zip(missing)
        .map(|(c, m)| MissingMask { id: c.inner.id().to_string(), missing: m })
        .collect();
    smoothing::impute_missing(&unwrap_all(&sample), &masks, ridge)
        .map(|v| v.into_iter().map(PyComposition::wrap).collect())
        .map_err(py_err)
}

/// Compositional functional PCA of a sample.
#[pyclass(name = "Fpca", module = "compfda")]
struct PyFpca {
    fit: FpcaFit,
}

#[pymethods]
impl PyFpca {
    #[new]
    fn new(sample: Vec<PyComposition>) -> PyResult<Self> {
        cfpca::fit(&unwrap_all(&sample)).map(|fit| Self { fit }).map_err(py_err)
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.fit.scores.ids.clone()
    }

    #[getter]
    fn eigenvalues(&self) -> Vec<f64> {
        self.fit.eigen.eigenvalues.clone()
    }

    #[getter]
    fn fev(&self) -> Vec<f64> {
        self.fit.eigen.fev.clone()
    }

    #[getter]
    fn mean(&self) -> PyComposition {
        PyComposition::wrap(self.fit.mean.composition.clone())
    }

    /// Scores as rows of the sample, one column per component.
    #[getter]
    fn scores(&self) -> Vec<Vec<f64>> {
        rows(&self.fit.scores.values)
    }

    /// clr coordinates (parts x times) of component `k` (0-based).
    fn clr_eigenfunction(&self, k: usize) -> PyResult<Vec<Vec<f64>>> {
        self.fit
            .eigen
            .clr_eigenfunctions
            .get(k)
            .map(|c| rows(c.coords()))
            .ok_or_else(|| PyValueError::new_err(format!("component {k} not available")))
    }

    /// Reconstruction of curve `i` from its first `k` scores.
    fn reconstruct(&self, i: usize, k: usize) -> PyResult<PyComposition> {
        if i >= self.fit.scores.n() {
            return Err(PyValueError::new_err(format!("curve {i} not in the sample")));
        }
        cfpca::reconstruct(&self.fit.mean, &self.fit.eigen, &self.fit.scores.row(i), k)
            .map(PyComposition::wrap)
            .map_err(py_err)
    }

    /// Mean plus and minus `c` standard deviations of component `k` (0-based).
    #[pyo3(signature = (k, c = 1.0))]
    fn envelope(&self, k: usize, c: f64) -> PyResult<(PyComposition, PyComposition)> {
        cfpca::component_envelope(&self.fit.mean, &self.fit.eigen, k, c)
            .map(|(p, m)| (PyComposition::wrap(p), PyComposition::wrap(m)))
            .map_err(py_err)
    }
}

/// Majority-vote spectral clustering; labels run from 1 to `g`.
#[pyclass(name = "Clustering", module = "compfda", get_all)]
struct PyClustering {
    labels: Vec<usize>,
    g: usize,
    silhouette_mean: f64,
    silhouette: Vec<f64>,
    vote_share: f64,
    centroids: Vec<Vec<f64>>,
}

fn silhouette_options(literal: bool, unsquared: bool) -> ClusterOptions {
    ClusterOptions { silhouette: SilhouetteOptions { literal, unsquared } }
}

fn to_py(r: &clustering::ClusterResult) -> PyClustering {
    PyClustering {
        labels: r.labels.iter().map(|l| l + 1).collect(),
        g: r.g,
        silhouette_mean: r.silhouette_mean,
        silhouette: r.per_point_silhouette.clone(),
        vote_share: r.vote_share,
        centroids: rows(&r.centroids),
    }
}

#[pyfunction]
#[pyo3(signature = (points, g, sigma = clustering::DEFAULT_SIGMA, repetitions = clustering::DEFAULT_REPETITIONS, master_seed = 1, silhouette_literal = false, silhouette_unsquared = false))]
fn cluster(
    points: Vec<Vec<f64>>,
    g: usize,
    sigma: f64,
    repetitions: usize,
    master_seed: u64,
    silhouette_literal: bool,
    silhouette_unsquared: bool,
) -> PyResult<PyClustering> {
    let graph = clustering::similarity(&matrix(&points)?, sigma).map_err(py_err)?;
    let options = silhouette_options(silhouette_literal, silhouette_unsquared);
    clustering::majority_vote_with(&graph, g, repetitions, master_seed, options)
        .map(|r| to_py(&r))
        .map_err(py_err)
}

/// Clusters for every `g` in `g_range`; returns the best `g` and the
/// `(g, silhouette_mean, vote_share)` rows.
#[pyfunction]
#[pyo3(signature = (points, g_range, sigma = clustering::DEFAULT_SIGMA, repetitions = clustering::DEFAULT_REPETITIONS, master_seed = 1))]
fn select_g(
    points: Vec<Vec<f64>>,
    g_range: Vec<usize>,
    sigma: f64,
    repetitions: usize,
    master_seed: u64,
) -> PyResult<(usize, Vec<SelectionRow>)> {
    let sel = clustering::select_g(
        &matrix(&points)?,
        &g_range,
        sigma,
        repetitions,
        master_seed,
        ClusterOptions::default(),
    )
    .map_err(py_err)?;
    Ok((sel.best_g, sel.rows.iter().map(|r| (r.g, r.silhouette_mean, r.vote_share)).collect()))
}

/// Runs every stage for a pipeline config file; returns the written paths.
#[pyfunction]
#[pyo3(signature = (config, output = None))]
fn run_pipeline(config: PathBuf, output: Option<PathBuf>) -> PyResult<Vec<PathBuf>> {
    let mut cfg = PipelineConfig::from_path(&config).map_err(py_err)?;
    if let Some(o) = output {
        cfg.paths.output = o;
    }
    let reports = pipeline::run_all(&cfg).map_err(|e| raise(e.kind(), e.to_string()))?;
    Ok(reports.into_iter().flat_map(|r| r.written).collect())
}

/// Writes the synthetic fixture into `dir`; returns its config path.
#[pyfunction]
#[pyo3(signature = (dir, seed = 1, repetitions = 1000))]
fn write_synthetic_fixture(dir: PathBuf, seed: u64, repetitions: usize) -> PyResult<PathBuf> {
    synth::write_fixture(&dir, seed, repetitions).map_err(py_err)
}

#[pymodule]
fn compfda(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyComposition>()?;
    m.add_class::<PyFpca>()?;
    m.add_class::<PyClustering>()?;
    m.add_function(wrap_pyfunction!(impute, m)?)?;
    m.add_function(wrap_pyfunction!(cluster, m)?)?;
    m.add_function(wrap_pyfunction!(select_g, m)?)?;
    m.add_function(wrap_pyfunction!(run_pipeline, m)?)?;
    m.add_function(wrap_pyfunction!(write_synthetic_fixture, m)?)?;
    Ok(())
}
