//! Python bindings for the density, bandwidth, transport, synthesis and
//! pipeline APIs.

use std::path::PathBuf;

use pyo3::exceptions::{PyOSError, PyValueError};
use pyo3::prelude::*;

use fieldkde::bandwidth::{self, CandidateGrid, CvConfig};
use fieldkde::pipeline::{self, AnalysisConfig};
use fieldkde::render::{self, ColorMap, HeatmapScale};
use fieldkde::synth::{self, SeasonConfig};
use fieldkde::transport::{self, CostSpec, SinkhornParams};
use fieldkde::{Error, Vec2};

fn to_py(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyOSError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn points(pts: Vec<(f64, f64)>) -> Vec<Vec2> {
    pts.into_iter().map(|(x, y)| Vec2::new(x, y)).collect()
}

fn sample_set(pts: Vec<(f64, f64)>) -> PyResult<fieldkde::SampleSet> {
    fieldkde::SampleSet::new("samples", points(pts)).map_err(to_py)
}

fn cost_spec(p: f64, norm: &str) -> PyResult<CostSpec> {
    CostSpec::norm_from_name(norm)
        .and_then(|q| CostSpec::new(p, q))
        .map_err(to_py)
}

/// Rectangular evaluation grid; row 0 is the lowest y.
#[pyclass(frozen, skip_from_py_object)]
#[derive(Clone, Copy)]
struct GridSpec(fieldkde::GridSpec);

#[pymethods]
impl GridSpec {
    #[new]
    fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell_size: f64) -> PyResult<Self> {
        fieldkde::GridSpec::new(x_min, x_max, y_min, y_max, cell_size)
            .map(GridSpec)
            .map_err(to_py)
    }

    /// The pitch with its standard margin, at `cell_size` meters.
    #[staticmethod]
    fn padded_pitch(cell_size: f64) -> PyResult<Self> {
        fieldkde::GridSpec::padded_pitch(cell_size).map(GridSpec).map_err(to_py)
    }

    #[getter]
    fn rows(&self) -> usize {
        self.0.rows()
    }

    #[getter]
    fn cols(&self) -> usize {
        self.0.cols()
    }

    #[getter]
    fn cell_size(&self) -> f64 {
        self.0.cell_size
    }

    fn center(&self, row: usize, col: usize) -> (f64, f64) {
        let c = self.0.center(row, col);
        (c.x, c.y)
    }

    fn __repr__(&self) -> String {
        let g = &self.0;
        format!(
            "GridSpec(x=[{}, {}], y=[{}, {}], cell={}, {}x{})",
            g.x_min,
            g.x_max,
            g.y_min,
            g.y_max,
            g.cell_size,
            g.rows(),
            g.cols()
        )
    }
}

/// Densities at cell centers.
#[pyclass(frozen, skip_from_py_object)]
struct DensityGrid(fieldkde::DensityGrid);

#[pymethods]
impl DensityGrid {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        fieldkde::DensityGrid::from_json(text).map(DensityGrid).map_err(to_py)
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(to_py)
    }

    #[getter]
    fn spec(&self) -> GridSpec {
        GridSpec(*self.0.spec())
    }

    /// Row-major values, one list per row.
    fn values(&self) -> Vec<Vec<f64>> {
        self.0.values().chunks(self.0.cols()).map(<[f64]>::to_vec).collect()
    }

    fn value(&self, row: usize, col: usize) -> PyResult<f64> {
        if row >= self.0.rows() || col >= self.0.cols() {
            return Err(PyValueError::new_err("cell out of range"));
        }
        Ok(self.0.value(row, col))
    }

    fn total_mass(&self) -> f64 {
        self.0.total_mass()
    }

    /// Writes a PPM heatmap with the default white-to-blue map.
    fn write_heatmap(&self, path: PathBuf) -> PyResult<()> {
        let img = render::render_heatmap(&self.0, &ColorMap::sequential(), HeatmapScale::Max).map_err(to_py)?;
        img.write_ppm(&path).map_err(to_py)
    }

    /// Writes `self - other` as a red-white-green PPM.
    fn write_difference(&self, other: &DensityGrid, path: PathBuf) -> PyResult<()> {
        let diff = pipeline::difference_grid(&self.0, &other.0).map_err(to_py)?;
        let img = render::render_diff(&diff, &ColorMap::diverging(), true).map_err(to_py)?;
        img.write_ppm(&path).map_err(to_py)
    }
}

/// Gaussian KDE with a fixed bandwidth `h` (variance, square meters).
#[pyclass(frozen, skip_from_py_object)]
struct DensityModel(fieldkde::DensityModel);

#[pymethods]
impl DensityModel {
    #[new]
    fn new(points: Vec<(f64, f64)>, h: f64) -> PyResult<Self> {
        let bw = fieldkde::Bandwidth::new(h).map_err(to_py)?;
        Ok(DensityModel(fieldkde::DensityModel::fit(sample_set(points)?, bw)))
    }

    #[getter]
    fn bandwidth(&self) -> f64 {
        self.0.bandwidth().value()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn density_at(&self, x: f64, y: f64) -> f64 {
        self.0.density_at(Vec2::new(x, y))
    }

    /// Sum of log densities at `points`, in nats.
    fn log_likelihood(&self, points: Vec<(f64, f64)>) -> PyResult<f64> {
        self.0.log_likelihood(&self::points(points)).map_err(to_py)
    }

    fn evaluate_grid(&self, py: Python<'_>, spec: &GridSpec) -> DensityGrid {
        DensityGrid(py.detach(|| self.0.evaluate_grid(&spec.0)))
    }
}

/// Weighted point masses summing to one.
#[pyclass(frozen, skip_from_py_object)]
struct Distribution(transport::DiscreteDistribution);

#[pymethods]
impl Distribution {
    /// Masses are normalized to sum to one.
    #[new]
    fn new(points: Vec<(f64, f64)>, weights: Vec<f64>) -> PyResult<Self> {
        transport::DiscreteDistribution::from_weights(self::points(points), &weights)
            .map(Distribution)
            .map_err(to_py)
    }

    /// Cell masses of a grid, dropping cells below `mass_floor`.
    #[staticmethod]
    #[pyo3(signature = (grid, mass_floor = 1e-10))]
    fn from_grid(grid: &DensityGrid, mass_floor: f64) -> PyResult<Self> {
        transport::discretize(&grid.0, mass_floor)
            .map(Distribution)
            .map_err(to_py)
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn support(&self) -> Vec<(f64, f64)> {
        self.0.support().iter().map(|p| (p.x, p.y)).collect()
    }

    fn mass(&self) -> Vec<f64> {
        self.0.mass().to_vec()
    }
}

/// Gaussian kernel value for the offset `(dx, dy)`.
#[pyfunction]
fn kernel_value(dx: f64, dy: f64, h: f64) -> PyResult<f64> {
    let bw = fieldkde::Bandwidth::new(h).map_err(to_py)?;
    fieldkde::kde::kernel_value(Vec2::new(dx, dy), bw).map_err(to_py)
}

/// Mean held-out log-likelihood per point for each bandwidth.
#[pyfunction]
#[pyo3(signature = (points, bandwidths, folds = 10, seed = 0))]
fn cv_curve(
    py: Python<'_>,
    points: Vec<(f64, f64)>,
    bandwidths: Vec<f64>,
    folds: usize,
    seed: u64,
) -> PyResult<Vec<f64>> {
    let set = sample_set(points)?;
    let cfg = CvConfig {
        folds,
        seed,
        shuffle: true,
    };
    py.detach(|| bandwidth::cv_curve(&set, &bandwidths, &cfg))
        .map_err(to_py)
}

/// Best bandwidth over `count` log-spaced candidates in `[h_min, h_max]`.
/// Returns `(h, candidates, scores)`.
#[pyfunction]
#[pyo3(signature = (points, folds = 10, seed = 0, h_min = 0.25, h_max = 100.0, count = 40))]
fn select_bandwidth(
    py: Python<'_>,
    points: Vec<(f64, f64)>,
    folds: usize,
    seed: u64,
    h_min: f64,
    h_max: f64,
    count: usize,
) -> PyResult<(f64, Vec<f64>, Vec<f64>)> {
    let set = sample_set(points)?;
    let grid = CandidateGrid::log_spaced(h_min, h_max, count).map_err(to_py)?;
    let cfg = CvConfig {
        folds,
        seed,
        shuffle: true,
    };
    let sel = py
        .detach(|| bandwidth::select_with_curve(&set, &grid, &cfg))
        .map_err(to_py)?;
    Ok((sel.bandwidth.value(), grid.values().to_vec(), sel.scores))
}

#[pyfunction]
fn pool_geometric_mean(bandwidths: Vec<f64>) -> PyResult<f64> {
    let hs = bandwidths
        .into_iter()
        .map(fieldkde::Bandwidth::new)
        .collect::<fieldkde::Result<Vec<_>>>()
        .map_err(to_py)?;
    bandwidth::pool_geometric_mean(&hs).map(|h| h.value()).map_err(to_py)
}

/// Exact p-Wasserstein distance; `norm` is `l1`, `l2` or `linf`.
#[pyfunction]
#[pyo3(signature = (a, b, p = 1.0, norm = "l1"))]
fn wasserstein_exact(py: Python<'_>, a: &Distribution, b: &Distribution, p: f64, norm: &str) -> PyResult<f64> {
    let cost = cost_spec(p, norm)?;
    py.detach(|| transport::wasserstein_exact(&a.0, &b.0, cost))
        .map(|r| r.distance)
        .map_err(to_py)
}

/// Entropic approximation. Returns `(distance, converged, iterations)`.
#[pyfunction]
#[pyo3(signature = (a, b, epsilon, p = 1.0, norm = "l1", max_iters = 10_000, tol = 1e-9))]
#[allow(clippy::too_many_arguments)]
fn wasserstein_sinkhorn(
    py: Python<'_>,
    a: &Distribution,
    b: &Distribution,
    epsilon: f64,
    p: f64,
    norm: &str,
    max_iters: usize,
    tol: f64,
) -> PyResult<(f64, bool, usize)> {
    let cost = cost_spec(p, norm)?;
    let params = SinkhornParams {
        epsilon,
        max_iters,
        tol,
    };
    let r = py
        .detach(|| transport::wasserstein_sinkhorn(&a.0, &b.0, cost, &params))
        .map_err(to_py)?;
    Ok((r.distance, r.converged, r.iterations))
}

/// Writes a synthetic season CSV. Uses the built-in 12-team example with
/// `seed` unless `config_json` (a SeasonConfig) is given. Returns the event count.
#[pyfunction]
#[pyo3(signature = (path, seed = 0, config_json = None))]
fn write_season(py: Python<'_>, path: PathBuf, seed: u64, config_json: Option<&str>) -> PyResult<usize> {
    let cfg = match config_json {
        Some(text) => {
            let cfg: SeasonConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
            cfg.validate().map_err(to_py)?;
            cfg
        }
        None => SeasonConfig::example(seed),
    };
    let events = py.detach(|| synth::generate_season(&cfg)).map_err(to_py)?;
    let file = std::fs::File::create(&path).map_err(|e| PyOSError::new_err(format!("{}: {e}", path.display())))?;
    synth::write_events_csv(std::io::BufWriter::new(file), &events).map_err(to_py)?;
    Ok(events.len())
}

/// Runs the full pipeline from an AnalysisConfig JSON string and returns
/// the report as JSON.
#[pyfunction]
fn run_analysis(py: Python<'_>, config_json: &str) -> PyResult<String> {
    let cfg: AnalysisConfig = serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    let report = py.detach(|| pipeline::run_analysis(&cfg)).map_err(to_py)?;
    serde_json::to_string(&report).map_err(|e| PyValueError::new_err(e.to_string()))
}

#[pymodule]
fn pyfieldkde(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<GridSpec>()?;
    m.add_class::<DensityGrid>()?;
    m.add_class::<DensityModel>()?;
    m.add_class::<Distribution>()?;
    m.add_function(wrap_pyfunction!(kernel_value, m)?)?;
    m.add_function(wrap_pyfunction!(cv_curve, m)?)?;
    m.add_function(wrap_pyfunction!(select_bandwidth, m)?)?;
    m.add_function(wrap_pyfunction!(pool_geometric_mean, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_exact, m)?)?;
    m.add_function(wrap_pyfunction!(wasserstein_sinkhorn, m)?)?;
    m.add_function(wrap_pyfunction!(write_season, m)?)?;
    m.add_function(wrap_pyfunction!(run_analysis, m)?)?;
    Ok(())
}
