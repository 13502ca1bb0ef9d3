use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default nodata sentinel used by generated grids.
pub const DEFAULT_NODATA: f32 = -9999.0;

/// Placement of a north-up raster lattice. `origin_x`/`origin_y` locate the
/// top-left corner of pixel (0, 0); rows grow southward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GridGeometry {
    pub width: usize,
    pub height: usize,
    pub origin_x: f64,
    pub origin_y: f64,
    pub pixel_size: f64,
}

impl GridGeometry {
    pub fn new(width: usize, height: usize, origin_x: f64, origin_y: f64, pixel_size: f64) -> Result<Self> {
        let g = Self {
            width,
            height,
            origin_x,
            origin_y,
            pixel_size,
        };
        g.validate()?;
        Ok(g)
    }

    /// Unit-pixel geometry anchored at the origin.
    pub fn unit(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            origin_x: 0.0,
            origin_y: height as f64,
            pixel_size: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidGrid(format!(
                "dimensions must be positive, got {}x{}",
                self.width, self.height
            )));
        }
        if !(self.pixel_size.is_finite() && self.pixel_size > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "pixel size must be positive, got {}",
                self.pixel_size
            )));
        }
        if !self.origin_x.is_finite() || !self.origin_y.is_finite() {
            return Err(Error::InvalidGrid("origin must be finite".into()));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Map coordinates of the center of pixel (row, col).
    pub fn center(&self, row: usize, col: usize) -> (f64, f64) {
        (
            self.origin_x + (col as f64 + 0.5) * self.pixel_size,
            self.origin_y - (row as f64 + 0.5) * self.pixel_size,
        )
    }

    /// (min_x, min_y, max_x, max_y)
    pub fn extent(&self) -> (f64, f64, f64, f64) {
        (
            self.origin_x,
            self.origin_y - self.height as f64 * self.pixel_size,
            self.origin_x + self.width as f64 * self.pixel_size,
            self.origin_y,
        )
    }

    pub fn overlaps(&self, other: &GridGeometry) -> bool {
        let (ax0, ay0, ax1, ay1) = self.extent();
        let (bx0, by0, bx1, by1) = other.extent();
        ax0 < bx1 && bx0 < ax1 && ay0 < by1 && by0 < ay1
    }

    pub fn ensure_same(&self, other: &GridGeometry, what: &str) -> Result<()> {
        if self != other {
            return Err(Error::Geometry(format!(
                "{what}: {}x{} @ ({}, {}) / {} vs {}x{} @ ({}, {}) / {}",
                self.width,
                self.height,
                self.origin_x,
                self.origin_y,
                self.pixel_size,
                other.width,
                other.height,
                other.origin_x,
                other.origin_y,
                other.pixel_size
            )));
        }
        Ok(())
    }
}

/// Single-band float raster with nodata semantics.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    geometry: GridGeometry,
    nodata: f32,
    values: Vec<f32>,
}

impl RasterGrid {
    pub fn new(geometry: GridGeometry, nodata: f32, values: Vec<f32>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} values for {}x{}, got {}",
                geometry.len(),
                geometry.width,
                geometry.height,
                values.len()
            )));
        }
        if let Some(i) = values.iter().position(|&v| !v.is_finite() && v.to_bits() != nodata.to_bits()) {
            return Err(Error::InvalidGrid(format!(
                "non-finite value {} at index {i} is not the nodata sentinel",
                values[i]
            )));
        }
        Ok(Self {
            geometry,
            nodata,
            values,
        })
    }

    pub fn filled(geometry: GridGeometry, nodata: f32, value: f32) -> Result<Self> {
        Self::new(geometry, nodata, vec![value; geometry.len()])
    }

    /// Builds a grid by evaluating `f(row, col)` at every pixel.
    pub fn from_fn(geometry: GridGeometry, nodata: f32, mut f: impl FnMut(usize, usize) -> f32) -> Result<Self> {
        let mut values = Vec::with_capacity(geometry.len());
        for r in 0..geometry.height {
            for c in 0..geometry.width {
                values.push(f(r, c));
            }
        }
        Self::new(geometry, nodata, values)
    }

    pub(crate) fn from_parts_unchecked(geometry: GridGeometry, nodata: f32, values: Vec<f32>) -> Self {
        debug_assert_eq!(values.len(), geometry.len());
        Self {
            geometry,
            nodata,
            values,
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn width(&self) -> usize {
        self.geometry.width
    }

    pub fn height(&self) -> usize {
        self.geometry.height
    }

    pub fn nodata(&self) -> f32 {
        self.nodata
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.geometry.width + col]
    }

    pub fn set(&mut self, row: usize, col: usize, v: f32) {
        self.values[row * self.geometry.width + col] = v;
    }

    pub fn is_nodata(&self, v: f32) -> bool {
        is_nodata(v, self.nodata)
    }

    pub fn is_valid_at(&self, row: usize, col: usize) -> bool {
        !self.is_nodata(self.get(row, col))
    }

    /// Number of pixels that are not nodata.
    pub fn valid_count(&self) -> usize {
        self.values.iter().filter(|&&v| !self.is_nodata(v)).count()
    }

    /// (min, max) over valid pixels, or `None` when everything is nodata.
    pub fn valid_range(&self) -> Option<(f32, f32)> {
        let mut it = self.values.iter().copied().filter(|&v| !self.is_nodata(v));
        let first = it.next()?;
        Some(it.fold((first, first), |(lo, hi), v| (lo.min(v), hi.max(v))))
    }

    /// Applies `f` to every valid pixel; nodata stays nodata.
    pub fn map_valid(&self, f: impl Fn(f32) -> f32) -> RasterGrid {
        let nodata = self.nodata;
        let values = self
            .values
            .iter()
            .map(|&v| if is_nodata(v, nodata) { nodata } else { f(v) })
            .collect();
        RasterGrid::from_parts_unchecked(self.geometry, nodata, values)
    }
}

/// Nodata test that also treats NaN sentinels correctly.
#[inline]
pub fn is_nodata(v: f32, nodata: f32) -> bool {
    v.to_bits() == nodata.to_bits() || (nodata.is_nan() && v.is_nan()) || v == nodata
}
