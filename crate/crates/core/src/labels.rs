//! Five-class reference masks built from index thresholds and rasterized
//! glacier/debris outlines.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::io::{decode_u8_band, encode_u8_band};
use crate::raster::{is_nodata, BandStack, GridGeometry, RasterGrid, DEFAULT_NODATA};

pub const NUM_CLASSES: usize = 5;
pub const IGNORE: u8 = 255;

pub const BACKGROUND: u8 = 0;
pub const CLEAN_ICE: u8 = 1;
pub const DEBRIS: u8 = 2;
pub const WATER: u8 = 3;
pub const VEGETATION: u8 = 4;

pub const CLASS_NAMES: [&str; NUM_CLASSES] = ["background", "clean-ice", "debris-covered", "water", "vegetation"];

/// NDWI above this is water.
pub const WATER_NDWI_THRESHOLD: f32 = 0.17;
/// NDVI above this is vegetation.
pub const VEGETATION_NDVI_THRESHOLD: f32 = 0.3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Greater,
    Less,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoolGrid {
    geometry: GridGeometry,
    values: Vec<bool>,
}

impl BoolGrid {
    pub fn new(geometry: GridGeometry, values: Vec<bool>) -> Result<Self> {
        geometry.validate()?;
        if values.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} mask values, got {}",
                geometry.len(),
                values.len()
            )));
        }
        Ok(Self { geometry, values })
    }

    pub fn filled(geometry: GridGeometry, v: bool) -> Self {
        Self {
            geometry,
            values: vec![v; geometry.len()],
        }
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, row: usize, col: usize) -> bool {
        self.values[row * self.geometry.width + col]
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    /// {0, 1} float grid, the on-disk representation.
    pub fn to_grid(&self) -> RasterGrid {
        let v = self.values.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        RasterGrid::new(self.geometry, DEFAULT_NODATA, v).expect("finite mask values")
    }

    /// Non-zero, non-nodata pixels are true.
    pub fn from_grid(grid: &RasterGrid) -> Self {
        let nodata = grid.nodata();
        Self {
            geometry: *grid.geometry(),
            values: grid
                .values()
                .iter()
                .map(|&v| !is_nodata(v, nodata) && v != 0.0)
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    geometry: GridGeometry,
    classes: Vec<u8>,
}

impl LabelMask {
    pub fn new(geometry: GridGeometry, classes: Vec<u8>) -> Result<Self> {
        geometry.validate()?;
        if classes.len() != geometry.len() {
            return Err(Error::InvalidGrid(format!(
                "expected {} labels, got {}",
                geometry.len(),
                classes.len()
            )));
        }
        if let Some(&bad) = classes.iter().find(|&&c| c as usize >= NUM_CLASSES && c != IGNORE) {
            return Err(Error::InvalidGrid(format!("invalid class id {bad}")));
        }
        Ok(Self { geometry, classes })
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn classes(&self) -> &[u8] {
        &self.classes
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.classes[row * self.geometry.width + col]
    }

    pub fn counts(&self) -> ClassCounts {
        let mut c = ClassCounts::default();
        for &v in &self.classes {
            c.add(v);
        }
        c
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = encode_u8_band(&self.geometry, DEFAULT_NODATA, "labels", &self.classes)?;
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let (g, _, v) = decode_u8_band(&bytes)?;
        Self::new(g, v)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub per_class: [u64; NUM_CLASSES],
    pub ignore: u64,
}

impl ClassCounts {
    pub fn add(&mut self, class: u8) {
        if class == IGNORE {
            self.ignore += 1;
        } else {
            self.per_class[class as usize] += 1;
        }
    }

    pub fn total(&self) -> u64 {
        self.per_class.iter().sum::<u64>() + self.ignore
    }
}

/// Strict comparison against `threshold`; nodata is never selected.
pub fn threshold_mask(band: &RasterGrid, threshold: f32, direction: Direction) -> Result<BoolGrid> {
    if !threshold.is_finite() {
        return Err(Error::Config(format!("threshold must be finite, got {threshold}")));
    }
    let nodata = band.nodata();
    let values = band
        .values()
        .iter()
        .map(|&v| {
            !is_nodata(v, nodata)
                && match direction {
                    Direction::Greater => v > threshold,
                    Direction::Less => v < threshold,
                }
        })
        .collect();
    Ok(BoolGrid {
        geometry: *band.geometry(),
        values,
    })
}

/// `full_glacier ∧ ¬debris`.
pub fn subtract_mask(full_glacier: &BoolGrid, debris: &BoolGrid) -> Result<BoolGrid> {
    full_glacier.geometry.ensure_same(&debris.geometry, "debris mask")?;
    Ok(BoolGrid {
        geometry: full_glacier.geometry,
        values: full_glacier
            .values
            .iter()
            .zip(&debris.values)
            .map(|(&g, &d)| g && !d)
            .collect(),
    })
}

/// Debris wins over clean ice, then water, then vegetation.
pub const DEFAULT_PRIORITY: [u8; 4] = [DEBRIS, CLEAN_ICE, WATER, VEGETATION];

/// Each pixel takes the first class in `priority` whose mask is set there,
/// otherwise background.
pub fn compose_labels(
    clean: &BoolGrid,
    debris: &BoolGrid,
    water: &BoolGrid,
    vegetation: &BoolGrid,
    priority: [u8; 4],
) -> Result<(LabelMask, ClassCounts)> {
    let mut sorted = priority;
    sorted.sort_unstable();
    if sorted != [CLEAN_ICE, DEBRIS, WATER, VEGETATION] {
        return Err(Error::Config(format!("priority {priority:?} is not a permutation of 1..=4")));
    }
    let g = clean.geometry;
    for (m, what) in [(debris, "debris mask"), (water, "water mask"), (vegetation, "vegetation mask")] {
        g.ensure_same(&m.geometry, what)?;
    }
    let mask_of = |class: u8| match class {
        CLEAN_ICE => clean,
        DEBRIS => debris,
        WATER => water,
        _ => vegetation,
    };
    let ordered: [&BoolGrid; 4] = priority.map(mask_of);
    let mut counts = ClassCounts::default();
    let classes = (0..g.len())
        .map(|i| {
            let c = ordered
                .iter()
                .zip(priority)
                .find(|(m, _)| m.values[i])
                .map_or(BACKGROUND, |(_, c)| c);
            counts.add(c);
            c
        })
        .collect();
    Ok((LabelMask { geometry: g, classes }, counts))
}

/// Full label synthesis: water from NDWI, vegetation from NDVI, clean ice as
/// glacier outlines minus debris.
pub fn labels_from_stack(stack: &BandStack, glacier: &BoolGrid, debris: &BoolGrid) -> Result<(LabelMask, ClassCounts)> {
    use crate::features::{spectral_index, IndexKind};
    let ndwi = match stack.by_role(crate::raster::BandRole::Ndwi) {
        Ok(g) => g.clone(),
        Err(_) => spectral_index(stack, IndexKind::Ndwi)?,
    };
    let ndvi = match stack.by_role(crate::raster::BandRole::Ndvi) {
        Ok(g) => g.clone(),
        Err(_) => spectral_index(stack, IndexKind::Ndvi)?,
    };
    stack.geometry().ensure_same(glacier.geometry(), "glacier mask")?;
    let water = threshold_mask(&ndwi, WATER_NDWI_THRESHOLD, Direction::Greater)?;
    let veg = threshold_mask(&ndvi, VEGETATION_NDVI_THRESHOLD, Direction::Greater)?;
    let clean = subtract_mask(glacier, debris)?;
    compose_labels(&clean, debris, &water, &veg, DEFAULT_PRIORITY)
}
