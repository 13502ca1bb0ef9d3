use serde::{Deserialize, Serialize};

use super::grid::{is_nodata, GridGeometry, RasterGrid};
use super::stack::BandStack;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResampleMethod {
    Nearest,
    Bilinear,
}

// Fractional offsets this close to a pixel center snap onto it, so that
// resampling onto an identical lattice reproduces the source exactly.
const SNAP: f64 = 1e-9;

/// Resamples `grid` onto `target`. Target pixels whose centers fall outside
/// the source extent become nodata.
pub fn resample(grid: &RasterGrid, target: &GridGeometry, method: ResampleMethod) -> Result<RasterGrid> {
    target.validate()?;
    let src = grid.geometry();
    if !src.overlaps(target) {
        return Err(Error::EmptyOverlap);
    }
    let nodata = grid.nodata();
    let (sx0, sy0, sx1, sy1) = src.extent();
    let mut out = Vec::with_capacity(target.len());
    for r in 0..target.height {
        for c in 0..target.width {
            let (x, y) = target.center(r, c);
            if x < sx0 || x > sx1 || y < sy0 || y > sy1 {
                out.push(nodata);
                continue;
            }
            let u = (x - src.origin_x) / src.pixel_size;
            let v = (src.origin_y - y) / src.pixel_size;
            let value = match method {
                ResampleMethod::Nearest => {
                    let col = (u.floor().max(0.0) as usize).min(src.width - 1);
                    let row = (v.floor().max(0.0) as usize).min(src.height - 1);
                    grid.get(row, col)
                }
                ResampleMethod::Bilinear => bilinear_at(grid, u - 0.5, v - 0.5),
            };
            out.push(value);
        }
    }
    Ok(RasterGrid::from_parts_unchecked(*target, nodata, out))
}

fn axis(pos: f64, n: usize) -> (usize, usize, f64) {
    if n == 1 {
        return (0, 0, 0.0);
    }
    let p = pos.clamp(0.0, (n - 1) as f64);
    let mut i0 = p.floor() as usize;
    let mut t = p - i0 as f64;
    if t > 1.0 - SNAP {
        i0 += 1;
        t = 0.0;
    } else if t < SNAP {
        t = 0.0;
    }
    if i0 >= n - 1 {
        return (n - 1, n - 1, 0.0);
    }
    (i0, i0 + 1, t)
}

/// Bilinear interpolation at fractional pixel-center coordinates
/// (`fc`, `fr`); positions beyond the outermost centers clamp to the edge.
/// Only contributors with non-zero weight can propagate nodata.
fn bilinear_at(grid: &RasterGrid, fc: f64, fr: f64) -> f32 {
    let nodata = grid.nodata();
    let (c0, c1, tx) = axis(fc, grid.width());
    let (r0, r1, ty) = axis(fr, grid.height());
    let taps = [
        (r0, c0, (1.0 - ty) * (1.0 - tx)),
        (r0, c1, (1.0 - ty) * tx),
        (r1, c0, ty * (1.0 - tx)),
        (r1, c1, ty * tx),
    ];
    let mut acc = 0.0f64;
    for (r, c, w) in taps {
        if w == 0.0 {
            continue;
        }
        let v = grid.get(r, c);
        if is_nodata(v, nodata) {
            return nodata;
        }
        acc += w * v as f64;
    }
    acc as f32
}

/// Resamples every band of a stack onto `target`.
pub fn resample_stack(stack: &BandStack, target: &GridGeometry, method: ResampleMethod) -> Result<BandStack> {
    let mut out = BandStack::new(*target, stack.nodata())?;
    for b in stack.bands() {
        let m = match b.role {
            Some(r) if r.is_categorical() => ResampleMethod::Nearest,
            _ => method,
        };
        out.push(b.name.clone(), b.role, resample(&b.grid, target, m)?)?;
    }
    Ok(out)
}
