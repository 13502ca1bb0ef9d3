//! Slope and aspect from a DEM with Horn's 3×3 weighted finite differences.
//! Borders replicate the edge row/column; any nodata in the 3×3
//! neighborhood yields nodata.

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{is_nodata, RasterGrid};

/// Sentinel written by [`aspect`] where the surface is flat.
pub const FLAT_ASPECT: f32 = -1.0;
const FLAT_GRADIENT: f64 = 1e-9;

/// (dz/dx toward east, dz/dy toward north) at (row, col), or `None` when the
/// neighborhood touches nodata.
pub fn horn_gradient(dem: &RasterGrid, row: usize, col: usize) -> Option<(f64, f64)> {
    let (w, h) = (dem.width() as isize, dem.height() as isize);
    let nodata = dem.nodata();
    let mut z = [[0.0f64; 3]; 3];
    for (i, dr) in (-1isize..=1).enumerate() {
        for (j, dc) in (-1isize..=1).enumerate() {
            let r = (row as isize + dr).clamp(0, h - 1) as usize;
            let c = (col as isize + dc).clamp(0, w - 1) as usize;
            let v = dem.get(r, c);
            if is_nodata(v, nodata) {
                return None;
            }
            z[i][j] = v as f64;
        }
    }
    let ps = dem.geometry().pixel_size;
    let east = ((z[0][2] + 2.0 * z[1][2] + z[2][2]) - (z[0][0] + 2.0 * z[1][0] + z[2][0])) / (8.0 * ps);
    let north = ((z[0][0] + 2.0 * z[0][1] + z[0][2]) - (z[2][0] + 2.0 * z[2][1] + z[2][2])) / (8.0 * ps);
    Some((east, north))
}

fn check(dem: &RasterGrid) -> Result<()> {
    if dem.width() < 3 || dem.height() < 3 {
        return Err(Error::Size(format!(
            "terrain derivatives need at least 3x3 pixels, got {}x{}",
            dem.width(),
            dem.height()
        )));
    }
    Ok(())
}

fn per_pixel(dem: &RasterGrid, f: impl Fn(f64, f64) -> f32 + Sync) -> RasterGrid {
    let (w, nodata) = (dem.width(), dem.nodata());
    let rows = par::map_range(dem.height(), |r| {
        (0..w)
            .map(|c| match horn_gradient(dem, r, c) {
                Some((gx, gy)) => f(gx, gy),
                None => nodata,
            })
            .collect::<Vec<f32>>()
    });
    RasterGrid::from_parts_unchecked(*dem.geometry(), nodata, rows.concat())
}

/// Slope in degrees, `[0, 90)`.
pub fn slope(dem: &RasterGrid) -> Result<RasterGrid> {
    check(dem)?;
    Ok(per_pixel(dem, |gx, gy| (gx.hypot(gy)).atan().to_degrees() as f32))
}

/// Downslope azimuth in degrees clockwise from north, `[0, 360)`; flat
/// pixels get [`FLAT_ASPECT`].
pub fn aspect(dem: &RasterGrid) -> Result<RasterGrid> {
    check(dem)?;
    Ok(per_pixel(dem, |gx, gy| {
        if gx.hypot(gy) < FLAT_GRADIENT {
            return FLAT_ASPECT;
        }
        let mut az = (-gx).atan2(-gy).to_degrees();
        if az < 0.0 {
            az += 360.0;
        }
        if az >= 360.0 {
            az -= 360.0;
        }
        az as f32
    }))
}
