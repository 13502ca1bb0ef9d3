use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::raster::{is_nodata, BandRole, BandStack, RasterGrid};

/// Normalized-difference indices as `(a - b) / (a + b)` over a role pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum IndexKind {
    Ndvi,
    Ndsi,
    Ndwi,
    Ndgi,
}

impl IndexKind {
    pub const ALL: [IndexKind; 4] = [IndexKind::Ndvi, IndexKind::Ndsi, IndexKind::Ndwi, IndexKind::Ndgi];

    /// `(minuend, subtrahend)` roles.
    pub fn roles(self) -> (BandRole, BandRole) {
        match self {
            IndexKind::Ndvi => (BandRole::Nir, BandRole::Red),
            IndexKind::Ndsi => (BandRole::Green, BandRole::Swir1),
            IndexKind::Ndwi => (BandRole::Green, BandRole::Nir),
            IndexKind::Ndgi => (BandRole::Green, BandRole::Red),
        }
    }

    /// Role under which the result is registered in the stack.
    pub fn output_role(self) -> BandRole {
        match self {
            IndexKind::Ndvi => BandRole::Ndvi,
            IndexKind::Ndsi => BandRole::Ndsi,
            IndexKind::Ndwi => BandRole::Ndwi,
            IndexKind::Ndgi => BandRole::Ndgi,
        }
    }
}

/// Denominators smaller than this produce 0 instead of a blown-up ratio.
pub const INDEX_DENOM_EPS: f64 = 1e-12;

#[inline]
pub fn normalized_difference(a: f64, b: f64) -> f64 {
    let s = a + b;
    if s.abs() < INDEX_DENOM_EPS {
        0.0
    } else {
        (a - b) / s
    }
}

pub fn spectral_index(stack: &BandStack, kind: IndexKind) -> Result<RasterGrid> {
    let (ra, rb) = kind.roles();
    let a = stack.by_role(ra)?;
    let b = stack.by_role(rb)?;
    Ok(normalized_difference_grid(a, b))
}

/// Pixelwise normalized difference of two grids on the same lattice.
pub fn normalized_difference_grid(a: &RasterGrid, b: &RasterGrid) -> RasterGrid {
    let nodata = a.nodata();
    let values = a
        .values()
        .iter()
        .zip(b.values())
        .map(|(&x, &y)| {
            if is_nodata(x, nodata) || is_nodata(y, b.nodata()) {
                nodata
            } else {
                normalized_difference(x as f64, y as f64) as f32
            }
        })
        .collect();
    RasterGrid::from_parts_unchecked(*a.geometry(), nodata, values)
}
