//! Fixed-bandwidth bivariate Gaussian kernel density estimation.
//!
//! The smoothing matrix is `h * I`: `h` is a variance-scale constant in
//! square meters, so the kernel is `(2 pi h)^-1 exp(-|d|^2 / (2h))`.

mod grid;

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::pairwise_sum;

pub use grid::{DensityGrid, GridSpec, Raster, SignedGrid};

/// Legal pitch extent across the width, in meters.
pub const PITCH_X: (f64, f64) = (0.0, 70.0);
/// Legal extent along the length including both try areas, in meters.
pub const PITCH_Y: (f64, f64) = (-10.0, 110.0);

/// A point on the pitch: `x` across the width, `y` along the length.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }

    pub fn norm_squared(self) -> f64 {
        self.x * self.x + self.y * self.y
    }

    pub fn on_pitch(self) -> bool {
        (PITCH_X.0..=PITCH_X.1).contains(&self.x) && (PITCH_Y.0..=PITCH_Y.1).contains(&self.y)
    }
}

impl std::ops::Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl std::ops::Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

/// Kernel bandwidth `h` in square meters. Always finite and positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
#[serde(transparent)]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Bandwidth(h))
        } else {
            Err(Error::invalid(format!("bandwidth must be finite and > 0, got {h}")))
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    /// The normalizer `(2 pi h)^-1`.
    pub fn kernel_peak(self) -> f64 {
        1.0 / (2.0 * PI * self.0)
    }
}

impl<'de> Deserialize<'de> for Bandwidth {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let h = f64::deserialize(d)?;
        Bandwidth::new(h).map_err(serde::de::Error::custom)
    }
}

/// An ordered, labelled, non-empty set of on-pitch locations.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleSet {
    label: String,
    points: Vec<Vec2>,
}

impl SampleSet {
    pub fn new(label: impl Into<String>, points: Vec<Vec2>) -> Result<Self> {
        let label = label.into();
        if points.is_empty() {
            return Err(Error::EmptyInput(format!("sample set '{label}' has no points")));
        }
        if let Some((i, p)) = points.iter().enumerate().find(|(_, p)| !p.is_finite() || !p.on_pitch()) {
            return Err(Error::invalid(format!(
                "sample set '{label}': point {i} at ({}, {}) is outside x in [0, 70], y in [-10, 110]",
                p.x, p.y
            )));
        }
        Ok(SampleSet { label, points })
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn points(&self) -> &[Vec2] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

/// The isotropic bivariate normal kernel evaluated at offset `delta`.
pub fn kernel_value(delta: Vec2, h: Bandwidth) -> Result<f64> {
    if !delta.is_finite() {
        return Err(Error::invalid(format!(
            "kernel offset must be finite, got ({}, {})",
            delta.x, delta.y
        )));
    }
    Ok(h.kernel_peak() * (-delta.norm_squared() / (2.0 * h.value())).exp())
}

/// One axis factor of the kernel: `exp(-d^2 / (2h))`.
///
/// The kernel factorizes over axes; density evaluation uses the product of
/// the two factors so that grid evaluation can reuse per-column factors and
/// still agree bit-for-bit with [`DensityModel::density_at`].
#[inline]
pub(crate) fn axis_factor(d: f64, two_h: f64) -> f64 {
    (-(d * d) / two_h).exp()
}

/// A fitted kernel density estimate: the sample set plus the bandwidth.
///
/// Evaluation sums kernel terms with pairwise summation over the samples in a
/// canonical (sorted) order, so the result does not depend on the order in
/// which the samples were supplied.
#[derive(Debug, Clone)]
pub struct DensityModel {
    samples: SampleSet,
    canonical: Vec<Vec2>,
    bandwidth: Bandwidth,
}

impl DensityModel {
    pub fn fit(samples: SampleSet, bandwidth: Bandwidth) -> Self {
        let mut canonical = samples.points().to_vec();
        canonical.sort_by(|a, b| a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)));
        DensityModel {
            samples,
            canonical,
            bandwidth,
        }
    }

    pub fn samples(&self) -> &SampleSet {
        &self.samples
    }

    pub fn bandwidth(&self) -> Bandwidth {
        self.bandwidth
    }

    pub fn len(&self) -> usize {
        self.canonical.len()
    }

    pub fn is_empty(&self) -> bool {
        self.canonical.is_empty()
    }

    #[inline]
    fn finish(&self, kernel_sum: f64) -> f64 {
        kernel_sum / self.canonical.len() as f64 * self.bandwidth.kernel_peak()
    }

    /// Density (per square meter) at `q`.
    pub fn density_at(&self, q: Vec2) -> f64 {
        let two_h = 2.0 * self.bandwidth.value();
        let pts = &self.canonical;
        let sum = pairwise_sum(pts.len(), |i| {
            axis_factor(q.x - pts[i].x, two_h) * axis_factor(q.y - pts[i].y, two_h)
        });
        self.finish(sum)
    }

    /// Natural log of the density at `q`, computed with a log-sum-exp shift
    /// so it stays finite where the density itself underflows.
    pub fn log_density_at(&self, q: Vec2) -> f64 {
        let two_h = 2.0 * self.bandwidth.value();
        let pts = &self.canonical;
        let exponent = |p: &Vec2| {
            let dx = q.x - p.x;
            let dy = q.y - p.y;
            -(dx * dx) / two_h - (dy * dy) / two_h
        };
        let shift = pts.iter().map(exponent).fold(f64::NEG_INFINITY, f64::max);
        let sum = pairwise_sum(pts.len(), |i| (exponent(&pts[i]) - shift).exp());
        shift + sum.ln() - (pts.len() as f64).ln() + self.bandwidth.kernel_peak().ln()
    }

    /// Sum of log densities of the held-out points, in nats.
    pub fn log_likelihood(&self, held_out: &[Vec2]) -> Result<f64> {
        if held_out.is_empty() {
            return Err(Error::EmptyInput("held-out set is empty".into()));
        }
        let logs: Vec<f64> = held_out.iter().map(|&q| self.log_density_at(q)).collect();
        Ok(crate::numeric::pairwise_sum_slice(&logs))
    }

    /// Density at every cell center of `spec`.
    pub fn evaluate_grid(&self, spec: &GridSpec) -> DensityGrid {
        use rayon::prelude::*;

        let two_h = 2.0 * self.bandwidth.value();
        let pts = &self.canonical;
        let n = pts.len();
        let (rows, cols) = (spec.rows(), spec.cols());

        // Column factors are shared by every row: cols x n table.
        let mut col_factors = vec![0.0; cols * n];
        col_factors.par_chunks_mut(n).enumerate().for_each(|(c, chunk)| {
            let x = spec.center_x(c);
            for (slot, p) in chunk.iter_mut().zip(pts) {
                *slot = axis_factor(x - p.x, two_h);
            }
        });

        let mut values = vec![0.0; rows * cols];
        values.par_chunks_mut(cols).enumerate().for_each_init(
            || vec![0.0; n],
            |row_factors, (r, out)| {
                let y = spec.center_y(r);
                for (slot, p) in row_factors.iter_mut().zip(pts) {
                    *slot = axis_factor(y - p.y, two_h);
                }
                for (c, cell) in out.iter_mut().enumerate() {
                    let cf = &col_factors[c * n..(c + 1) * n];
                    let sum = pairwise_sum(n, |i| cf[i] * row_factors[i]);
                    *cell = self.finish(sum);
                }
            },
        );
        DensityGrid::from_parts(*spec, values)
    }
}
