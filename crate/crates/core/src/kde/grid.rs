use serde::{Deserialize, Serialize};

use super::Vec2;
use crate::error::{Error, Result};

/// A regular lattice of square cells over `[x_min, x_max] x [y_min, y_max]`.
///
/// Cell counts are `ceil((max - min) / cell_size)`; the last column or row may
/// overhang the nominal maximum. Row 0 is the bottom row (smallest `y`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub cell_size: f64,
}

// Relative slack when counting cells, so 90 / 2 is 45 and not 46.
const COUNT_SLACK: f64 = 1e-9;

impl GridSpec {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64, cell_size: f64) -> Result<Self> {
        let all_finite = [x_min, x_max, y_min, y_max, cell_size].iter().all(|v| v.is_finite());
        if !all_finite {
            return Err(Error::invalid("grid bounds must be finite"));
        }
        if !(x_max > x_min && y_max > y_min) {
            return Err(Error::invalid(format!(
                "degenerate grid extent x [{x_min}, {x_max}], y [{y_min}, {y_max}]"
            )));
        }
        if cell_size <= 0.0 {
            return Err(Error::invalid(format!("cell size must be > 0, got {cell_size}")));
        }
        Ok(GridSpec {
            x_min,
            x_max,
            y_min,
            y_max,
            cell_size,
        })
    }

    /// The padded analysis domain: x in [-10, 80], y in [-20, 120].
    pub fn padded_pitch(cell_size: f64) -> Result<Self> {
        GridSpec::new(-10.0, 80.0, -20.0, 120.0, cell_size)
    }

    fn count(span: f64, cell: f64) -> usize {
        ((span / cell) * (1.0 - COUNT_SLACK)).ceil().max(1.0) as usize
    }

    pub fn cols(&self) -> usize {
        Self::count(self.x_max - self.x_min, self.cell_size)
    }

    pub fn rows(&self) -> usize {
        Self::count(self.y_max - self.y_min, self.cell_size)
    }

    pub fn len(&self) -> usize {
        self.rows() * self.cols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_area(&self) -> f64 {
        self.cell_size * self.cell_size
    }

    pub fn center_x(&self, col: usize) -> f64 {
        self.x_min + (col as f64 + 0.5) * self.cell_size
    }

    pub fn center_y(&self, row: usize) -> f64 {
        self.y_min + (row as f64 + 0.5) * self.cell_size
    }

    pub fn center(&self, row: usize, col: usize) -> Vec2 {
        Vec2::new(self.center_x(col), self.center_y(row))
    }
}

impl<'de> Deserialize<'de> for GridSpec {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        struct Raw {
            x_min: f64,
            x_max: f64,
            y_min: f64,
            y_max: f64,
            cell_size: f64,
        }
        let r = Raw::deserialize(d)?;
        GridSpec::new(r.x_min, r.x_max, r.y_min, r.y_max, r.cell_size).map_err(serde::de::Error::custom)
    }
}

/// On-disk layout shared by density and signed grids.
#[derive(Serialize, Deserialize)]
struct GridFile {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
    cell_size: f64,
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl GridFile {
    fn new(spec: &GridSpec, values: &[f64]) -> Self {
        GridFile {
            x_min: spec.x_min,
            x_max: spec.x_max,
            y_min: spec.y_min,
            y_max: spec.y_max,
            cell_size: spec.cell_size,
            rows: spec.rows(),
            cols: spec.cols(),
            values: values.to_vec(),
        }
    }

    fn into_parts(self) -> Result<(GridSpec, Vec<f64>)> {
        let spec = GridSpec::new(self.x_min, self.x_max, self.y_min, self.y_max, self.cell_size)?;
        if spec.rows() != self.rows || spec.cols() != self.cols {
            return Err(Error::invalid(format!(
                "grid declares {}x{} cells but its extent implies {}x{}",
                self.rows,
                self.cols,
                spec.rows(),
                spec.cols()
            )));
        }
        if self.values.len() != self.rows * self.cols {
            return Err(Error::invalid(format!(
                "grid has {} values, expected {}",
                self.values.len(),
                self.rows * self.cols
            )));
        }
        if let Some(v) = self.values.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!("grid value {v} is not finite")));
        }
        Ok((spec, self.values))
    }
}

/// Read access shared by [`DensityGrid`] and [`SignedGrid`].
pub trait Raster {
    fn spec(&self) -> &GridSpec;
    fn values(&self) -> &[f64];
}

/// Nonnegative densities (per square meter) at cell centers, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl DensityGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::invalid(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.rows(),
                spec.cols()
            )));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid(format!(
                "density grid value {v} is negative or not finite"
            )));
        }
        Ok(DensityGrid { spec, values })
    }

    pub(crate) fn from_parts(spec: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), spec.len());
        DensityGrid { spec, values }
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn rows(&self) -> usize {
        self.spec.rows()
    }

    pub fn cols(&self) -> usize {
        self.spec.cols()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols() + col]
    }

    /// Midpoint-rule integral: sum of values times cell area.
    pub fn total_mass(&self) -> f64 {
        crate::numeric::pairwise_sum_slice(&self.values) * self.spec.cell_area()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GridFile::new(&self.spec, &self.values))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (spec, values) = serde_json::from_str::<GridFile>(text)?.into_parts()?;
        DensityGrid::new(spec, values)
    }
}

impl Raster for DensityGrid {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}

/// A grid of signed values, typically the difference of two densities.
#[derive(Debug, Clone, PartialEq)]
pub struct SignedGrid {
    spec: GridSpec,
    values: Vec<f64>,
}

impl SignedGrid {
    pub fn new(spec: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != spec.len() {
            return Err(Error::invalid(format!(
                "{} values for a {}x{} grid",
                values.len(),
                spec.rows(),
                spec.cols()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid("signed grid values must be finite"));
        }
        Ok(SignedGrid { spec, values })
    }

    /// Elementwise `a - b`. Both grids must share the same spec.
    pub fn difference(a: &DensityGrid, b: &DensityGrid) -> Result<Self> {
        if a.spec != b.spec {
            return Err(Error::invalid("difference of grids with different specs"));
        }
        let values = a.values.iter().zip(&b.values).map(|(x, y)| x - y).collect();
        Ok(SignedGrid { spec: a.spec, values })
    }

    pub fn spec(&self) -> &GridSpec {
        &self.spec
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.spec.cols() + col]
    }

    pub fn negated(&self) -> Self {
        SignedGrid {
            spec: self.spec,
            values: self.values.iter().map(|v| -v).collect(),
        }
    }

    /// Signed midpoint-rule integral.
    pub fn integral(&self) -> f64 {
        crate::numeric::pairwise_sum_slice(&self.values) * self.spec.cell_area()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&GridFile::new(&self.spec, &self.values))?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let (spec, values) = serde_json::from_str::<GridFile>(text)?.into_parts()?;
        SignedGrid::new(spec, values)
    }
}

impl Raster for SignedGrid {
    fn spec(&self) -> &GridSpec {
        &self.spec
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
}
