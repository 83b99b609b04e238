//! Heatmap and difference-map rendering to binary PPM.
//!
//! One pixel per grid cell. Image row 0 is the grid's top row (largest
//! y), so the attacking direction points up.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kde::{Raster, SignedGrid};

pub type Rgb = [u8; 3];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColorMapKind {
    Sequential,
    /// Neutral color at fraction 0.5, which value 0 always maps to.
    Diverging,
}

/// Piecewise-linear colormap over fractions in [0, 1].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ColorMap {
    kind: ColorMapKind,
    anchors: Vec<(f64, Rgb)>,
}

impl ColorMap {
    pub fn new(kind: ColorMapKind, anchors: Vec<(f64, Rgb)>) -> Result<Self> {
        if anchors.len() < 2 {
            return Err(Error::invalid("a colormap needs at least two anchors"));
        }
        if anchors
            .windows(2)
            .any(|w| w[0].0.partial_cmp(&w[1].0) != Some(std::cmp::Ordering::Less))
        {
            return Err(Error::invalid("colormap anchors must be strictly increasing"));
        }
        if anchors[0].0 != 0.0 || anchors[anchors.len() - 1].0 != 1.0 {
            return Err(Error::invalid("colormap anchors must start at 0 and end at 1"));
        }
        if kind == ColorMapKind::Diverging && !anchors.iter().any(|a| a.0 == 0.5) {
            return Err(Error::invalid("a diverging colormap needs a neutral anchor at 0.5"));
        }
        Ok(ColorMap { kind, anchors })
    }

    /// White to dark blue.
    pub fn sequential() -> Self {
        ColorMap {
            kind: ColorMapKind::Sequential,
            anchors: vec![(0.0, [255, 255, 255]), (1.0, [8, 48, 107])],
        }
    }

    /// Red (below) through white to green (above).
    pub fn diverging() -> Self {
        ColorMap {
            kind: ColorMapKind::Diverging,
            anchors: vec![(0.0, [178, 24, 43]), (0.5, [255, 255, 255]), (1.0, [27, 120, 55])],
        }
    }

    pub fn kind(&self) -> ColorMapKind {
        self.kind
    }

    pub fn anchors(&self) -> &[(f64, Rgb)] {
        &self.anchors
    }

    /// Color at `frac`, clamped to [0, 1].
    pub fn color(&self, frac: f64) -> Rgb {
        let f = if frac.is_nan() { 0.0 } else { frac.clamp(0.0, 1.0) };
        let k = self.anchors.partition_point(|a| a.0 <= f);
        if k >= self.anchors.len() {
            return self.anchors[self.anchors.len() - 1].1;
        }
        let (f0, c0) = self.anchors[k - 1];
        let (f1, c1) = self.anchors[k];
        let t = (f - f0) / (f1 - f0);
        let mut out = [0; 3];
        for i in 0..3 {
            let v = c0[i] as f64 + (c1[i] as f64 - c0[i] as f64) * t;
            out[i] = v.round().clamp(0.0, 255.0) as u8;
        }
        out
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

impl<'de> Deserialize<'de> for ColorMap {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(deny_unknown_fields)]
        struct Raw {
            kind: ColorMapKind,
            anchors: Vec<(f64, Rgb)>,
        }
        let raw = Raw::deserialize(d)?;
        ColorMap::new(raw.kind, raw.anchors).map_err(serde::de::Error::custom)
    }
}

/// How raw values map to colormap fractions in a heatmap.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeatmapScale {
    /// The largest absolute value in the grid maps to the top of the map.
    Max,
    Fixed(f64),
}

/// An RGB raster, row-major from the top-left pixel.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl Image {
    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    /// Binary PPM (P6) encoding.
    pub fn to_ppm(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + 3 * self.pixels.len());
        out.extend_from_slice(header.as_bytes());
        for p in &self.pixels {
            out.extend_from_slice(p);
        }
        out
    }

    pub fn write_ppm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_ppm()).map_err(|e| Error::io(path, e))
    }
}

fn paint(grid: &impl Raster, frac: impl Fn(f64) -> f64, map: &ColorMap) -> Image {
    let spec = grid.spec();
    let (rows, cols) = (spec.rows(), spec.cols());
    let values = grid.values();
    let mut pixels = Vec::with_capacity(rows * cols);
    for r in (0..rows).rev() {
        for c in 0..cols {
            pixels.push(map.color(frac(values[r * cols + c])));
        }
    }
    Image {
        width: cols,
        height: rows,
        pixels,
    }
}

fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Heatmap of a grid. Sequential maps send 0 to the bottom anchor and the
/// scale value to the top; diverging maps send 0 to the midpoint and
/// `-scale, +scale` to the ends.
pub fn render_heatmap(grid: &impl Raster, map: &ColorMap, scale: HeatmapScale) -> Result<Image> {
    let values = grid.values();
    if map.kind == ColorMapKind::Sequential {
        if let Some(v) = values.iter().find(|v| **v < 0.0) {
            return Err(Error::invalid(format!(
                "negative value {v} cannot be shown on a sequential colormap"
            )));
        }
    }
    let s = match scale {
        HeatmapScale::Max => max_abs(values),
        HeatmapScale::Fixed(v) if v.is_finite() && v > 0.0 => v,
        HeatmapScale::Fixed(v) => return Err(Error::invalid(format!("fixed scale must be positive, got {v}"))),
    };
    let ratio = move |v: f64| if s > 0.0 { v / s } else { 0.0 };
    Ok(match map.kind {
        ColorMapKind::Sequential => paint(grid, ratio, map),
        ColorMapKind::Diverging => paint(grid, |v| 0.5 + 0.5 * ratio(v), map),
    })
}

/// Difference map on a diverging colormap; zero is always neutral.
///
/// With `symmetric_scale` both sides share `M = max |value|`. Otherwise
/// negatives are scaled by the most negative value and positives by the
/// largest, so each side uses its full color range.
pub fn render_diff(diff: &SignedGrid, map: &ColorMap, symmetric_scale: bool) -> Result<Image> {
    if map.kind != ColorMapKind::Diverging {
        return Err(Error::invalid("difference maps need a diverging colormap"));
    }
    let values = diff.values();
    let (neg, pos) = if symmetric_scale {
        let m = max_abs(values);
        (m, m)
    } else {
        let lo = values.iter().fold(0.0_f64, |m, v| m.min(*v));
        let hi = values.iter().fold(0.0_f64, |m, v| m.max(*v));
        (-lo, hi)
    };
    let frac = |v: f64| {
        if v > 0.0 && pos > 0.0 {
            0.5 + 0.5 * v / pos
        } else if v < 0.0 && neg > 0.0 {
            0.5 + 0.5 * v / neg
        } else {
            0.5
        }
    };
    Ok(paint(diff, frac, map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kde::{DensityGrid, GridSpec};

    fn spec(cols: usize, rows: usize) -> GridSpec {
        GridSpec::new(0.0, cols as f64, 0.0, rows as f64, 1.0).unwrap()
    }

    #[test]
    fn zero_grid_is_uniform_bottom_color() {
        let g = DensityGrid::new(spec(3, 2), vec![0.0; 6]).unwrap();
        let img = render_heatmap(&g, &ColorMap::sequential(), HeatmapScale::Max).unwrap();
        assert!(img.pixels().iter().all(|p| *p == [255, 255, 255]));
        assert_eq!((img.width(), img.height()), (3, 2));
    }

    #[test]
    fn single_peak_gets_the_top_color() {
        let mut v = vec![0.1; 6];
        v[4] = 2.0;
        let img = render_heatmap(
            &DensityGrid::new(spec(3, 2), v).unwrap(),
            &ColorMap::sequential(),
            HeatmapScale::Max,
        )
        .unwrap();
        let top: Vec<_> = img.pixels().iter().filter(|p| **p == [8, 48, 107]).collect();
        assert_eq!(top.len(), 1);
        // Grid row 1 (upper) column 1 lands in image row 0.
        assert_eq!(img.pixel(1, 0), [8, 48, 107]);
    }

    #[test]
    fn half_value_interpolates_linearly() {
        // Grid rows bottom-up: [0, m] then [m/2, m].
        let m = 3.0;
        let g = DensityGrid::new(spec(2, 2), vec![0.0, m, m / 2.0, m]).unwrap();
        let img = render_heatmap(&g, &ColorMap::sequential(), HeatmapScale::Max).unwrap();
        // (255 + 8) / 2, (255 + 48) / 2, (255 + 107) / 2, rounded half away from zero.
        assert_eq!(img.pixel(0, 0), [132, 152, 181]);
        assert_eq!(img.pixel(0, 1), [255, 255, 255]);
    }

    #[test]
    fn ppm_header_and_origin() {
        let g = DensityGrid::new(spec(2, 3), vec![0.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        let bytes = render_heatmap(&g, &ColorMap::sequential(), HeatmapScale::Max)
            .unwrap()
            .to_ppm();
        let header = b"P6\n2 3\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 2 * 3 * 3);
        assert_eq!(&bytes[header.len()..header.len() + 3], &[8, 48, 107]);
    }

    #[test]
    fn sequential_rejects_negatives() {
        let g = SignedGrid::new(spec(2, 1), vec![-1.0, 1.0]).unwrap();
        assert!(render_heatmap(&g, &ColorMap::sequential(), HeatmapScale::Max).is_err());
        assert!(render_diff(&g, &ColorMap::sequential(), true).is_err());
        assert!(render_heatmap(&g, &ColorMap::diverging(), HeatmapScale::Max).is_ok());
    }

    #[test]
    fn zero_diff_is_neutral_and_negation_mirrors() {
        let map = ColorMap::diverging();
        let zero = SignedGrid::new(spec(2, 2), vec![0.0; 4]).unwrap();
        let img = render_diff(&zero, &map, true).unwrap();
        assert!(img.pixels().iter().all(|p| *p == [255, 255, 255]));

        let g = SignedGrid::new(spec(3, 1), vec![-2.0, 0.5, 1.0]).unwrap();
        let a = render_diff(&g, &map, true).unwrap();
        let b = render_diff(&g.negated(), &map, true).unwrap();
        for (k, v) in g.values().iter().enumerate() {
            assert_eq!(a.pixel(k, 0), map.color(0.5 + 0.5 * v / 2.0));
            assert_eq!(b.pixel(k, 0), map.color(0.5 - 0.5 * v / 2.0));
        }
        assert_eq!(a.pixel(0, 0), [178, 24, 43]);
        let asym = render_diff(&g, &map, false).unwrap();
        assert_eq!(asym.pixel(2, 0), [27, 120, 55]);
    }

    #[test]
    fn colormap_validation() {
        assert!(ColorMap::new(ColorMapKind::Sequential, vec![(0.0, [0; 3])]).is_err());
        assert!(ColorMap::new(ColorMapKind::Sequential, vec![(0.0, [0; 3]), (0.9, [1; 3])]).is_err());
        assert!(ColorMap::new(
            ColorMapKind::Sequential,
            vec![(0.0, [0; 3]), (0.6, [1; 3]), (0.4, [1; 3]), (1.0, [1; 3])]
        )
        .is_err());
        assert!(ColorMap::new(ColorMapKind::Diverging, vec![(0.0, [0; 3]), (1.0, [1; 3])]).is_err());
        let json = r#"{"kind": "diverging", "anchors": [[0, [0, 0, 255]], [0.5, [250, 250, 250]], [1, [255, 0, 0]]]}"#;
        let m = ColorMap::from_json(json).unwrap();
        assert_eq!(m.color(0.25), [125, 125, 253]);
        assert!(ColorMap::from_json(r#"{"kind": "diverging", "anchors": [[0, [0, 0, 0]], [1, [1, 1, 1]]]}"#).is_err());
    }
}
