use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::par;
use crate::raster::{is_nodata, RasterGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GlcmStatistic {
    Dissimilarity,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GlcmConfig {
    pub window: usize,
    pub levels: usize,
    /// (dy, dx) displacements; counts are accumulated symmetrically.
    pub offsets: Vec<(i32, i32)>,
    pub statistic: GlcmStatistic,
}

impl Default for GlcmConfig {
    fn default() -> Self {
        Self {
            window: 7,
            levels: 32,
            offsets: vec![(0, 1), (1, 0)],
            statistic: GlcmStatistic::Dissimilarity,
        }
    }
}

impl GlcmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 3 || self.window.is_multiple_of(2) {
            return Err(Error::Config(format!("GLCM window must be odd and >= 3, got {}", self.window)));
        }
        if self.levels < 2 || self.levels > u16::MAX as usize {
            return Err(Error::Config(format!("GLCM levels must be in [2, 65535], got {}", self.levels)));
        }
        if self.offsets.is_empty() {
            return Err(Error::Config("GLCM needs at least one offset".into()));
        }
        if self.offsets.contains(&(0, 0)) {
            return Err(Error::Config("GLCM offset (0, 0) is degenerate".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Texture {
    pub grid: RasterGrid,
    /// Set when the band's valid range is a single value; the texture is then
    /// identically zero.
    pub degenerate_range: bool,
}

const INVALID: u16 = u16::MAX;

/// Equal-width grey-level bins over `[min, max]`; nodata maps to `INVALID`.
fn quantize(band: &RasterGrid, levels: usize, min: f32, max: f32) -> Vec<u16> {
    let span = max as f64 - min as f64;
    let nodata = band.nodata();
    band.values()
        .iter()
        .map(|&v| {
            if is_nodata(v, nodata) {
                INVALID
            } else {
                let t = (v as f64 - min as f64) / span;
                ((t * levels as f64).floor().max(0.0) as usize).min(levels - 1) as u16
            }
        })
        .collect()
}

/// Symmetric grey-level co-occurrence counts for one window.
struct Cooccurrence {
    levels: usize,
    counts: Vec<u32>,
    touched: Vec<usize>,
    total: u64,
}

impl Cooccurrence {
    fn new(levels: usize) -> Self {
        Self {
            levels,
            counts: vec![0; levels * levels],
            touched: Vec::new(),
            total: 0,
        }
    }

    fn clear(&mut self) {
        for &i in &self.touched {
            self.counts[i] = 0;
        }
        self.touched.clear();
        self.total = 0;
    }

    fn bump(&mut self, i: usize, j: usize) {
        let k = i * self.levels + j;
        if self.counts[k] == 0 {
            self.touched.push(k);
        }
        self.counts[k] += 1;
        self.total += 1;
    }

    fn add_pair(&mut self, a: u16, b: u16) {
        self.bump(a as usize, b as usize);
        self.bump(b as usize, a as usize);
    }

    /// Σ P(i, j)·|i − j| with P the normalized counts.
    fn dissimilarity(&self) -> f64 {
        if self.total == 0 {
            return 0.0;
        }
        let mut acc = 0.0f64;
        for &k in &self.touched {
            let (i, j) = (k / self.levels, k % self.levels);
            acc += self.counts[k] as f64 * (i as f64 - j as f64).abs();
        }
        acc / self.total as f64
    }
}

/// Moving-window GLCM dissimilarity. The window is clipped at scene borders
/// and quantization uses the band's global valid range.
pub fn glcm_dissimilarity(band: &RasterGrid, cfg: &GlcmConfig) -> Result<Texture> {
    cfg.validate()?;
    let valid = band.valid_count();
    if valid < cfg.window * cfg.window {
        return Err(Error::Size(format!(
            "GLCM window {0}x{0} needs at least {1} valid pixels, band has {valid}",
            cfg.window,
            cfg.window * cfg.window
        )));
    }
    let (min, max) = band.valid_range().expect("band has valid pixels");
    let nodata = band.nodata();
    if max <= min {
        return Ok(Texture {
            grid: band.map_valid(|_| 0.0),
            degenerate_range: true,
        });
    }
    let q = quantize(band, cfg.levels, min, max);
    let (w, h) = (band.width(), band.height());
    let half = (cfg.window / 2) as isize;

    let rows = par::map_range(h, |r| {
        let mut glcm = Cooccurrence::new(cfg.levels);
        let r0 = (r as isize - half).max(0);
        let r1 = (r as isize + half).min(h as isize - 1);
        let mut out = Vec::with_capacity(w);
        for c in 0..w {
            if q[r * w + c] == INVALID {
                out.push(nodata);
                continue;
            }
            let c0 = (c as isize - half).max(0);
            let c1 = (c as isize + half).min(w as isize - 1);
            glcm.clear();
            for &(dy, dx) in &cfg.offsets {
                let (dy, dx) = (dy as isize, dx as isize);
                for y in r0..=r1 {
                    let y2 = y + dy;
                    if y2 < r0 || y2 > r1 {
                        continue;
                    }
                    for x in c0..=c1 {
                        let x2 = x + dx;
                        if x2 < c0 || x2 > c1 {
                            continue;
                        }
                        let a = q[y as usize * w + x as usize];
                        let b = q[y2 as usize * w + x2 as usize];
                        if a != INVALID && b != INVALID {
                            glcm.add_pair(a, b);
                        }
                    }
                }
            }
            out.push(glcm.dissimilarity() as f32);
        }
        out
    });
    Ok(Texture {
        grid: RasterGrid::from_parts_unchecked(*band.geometry(), nodata, rows.concat()),
        degenerate_range: false,
    })
}
