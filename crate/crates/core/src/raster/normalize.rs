use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::grid::RasterGrid;
use super::stack::{Band, BandStack};
use crate::error::{Error, Result};

pub const STD_EPS: f64 = 1e-8;

/// Per-band standardization statistics, persisted as a JSON sidecar.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Mean and population standard deviation over the valid pixels of `grid`.
pub fn band_moments(grid: &RasterGrid) -> (f64, f64) {
    let mut n = 0usize;
    let mut sum = 0.0f64;
    for &v in grid.values() {
        if !grid.is_nodata(v) {
            n += 1;
            sum += v as f64;
        }
    }
    if n == 0 {
        return (0.0, 0.0);
    }
    let mean = sum / n as f64;
    let mut ss = 0.0f64;
    for &v in grid.values() {
        if !grid.is_nodata(v) {
            let d = v as f64 - mean;
            ss += d * d;
        }
    }
    (mean, (ss / n as f64).sqrt())
}

/// Standardizes each band to `(v - mean) / max(std, 1e-8)`. When `stats` is
/// `None` they are computed from the stack and returned for reuse.
pub fn normalize_stack(stack: &BandStack, stats: Option<&[BandStats]>) -> Result<(BandStack, Vec<BandStats>)> {
    let stats: Vec<BandStats> = match stats {
        Some(s) => {
            if s.len() != stack.len() {
                return Err(Error::Arity {
                    what: "normalization stats per band",
                    expected: stack.len(),
                    found: s.len(),
                });
            }
            s.to_vec()
        }
        None => stack
            .bands()
            .iter()
            .map(|b| {
                let (mean, std) = band_moments(&b.grid);
                BandStats {
                    name: b.name.clone(),
                    mean,
                    std,
                }
            })
            .collect(),
    };
    let mut out = BandStack::new(*stack.geometry(), stack.nodata())?;
    for (b, s) in stack.bands().iter().zip(&stats) {
        let denom = s.std.max(STD_EPS);
        let mean = s.mean;
        let grid = b.grid.map_valid(|v| ((v as f64 - mean) / denom) as f32);
        out.push_band(Band {
            name: b.name.clone(),
            role: b.role,
            grid,
        })?;
    }
    Ok((out, stats))
}

pub fn write_stats(stats: &[BandStats], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let json = serde_json::to_string_pretty(stats)?;
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn read_stats(path: impl AsRef<Path>) -> Result<Vec<BandStats>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}
