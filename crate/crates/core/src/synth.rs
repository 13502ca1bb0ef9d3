//! Synthetic 5-class scenes with controllable per-band informativeness.
//!
//! The class map is a warped Voronoi tessellation with classes dealt out
//! evenly over the cells. Informative bands carry a per-class code plus
//! Gaussian noise; debris additionally gets a checkerboard texture on the
//! first informative band. Every other band is pure noise.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labels::{LabelMask, DEBRIS, NUM_CLASSES};
use crate::raster::{BandRole, BandStack, GridGeometry, RasterGrid, DEFAULT_NODATA};

/// Class codes on the first three informative bands.
const CODES: [[f32; 3]; NUM_CLASSES] = [
    [0.0, 0.0, 0.0],
    [1.5, 1.5, 0.0],
    [0.3, 0.0, 1.0],
    [-1.5, 0.5, -1.0],
    [0.0, -1.5, 0.5],
];

/// Class levels when a single band is informative.
const LEVELS: [f32; NUM_CLASSES] = [-2.0, -1.0, 0.0, 1.0, 2.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub width: usize,
    pub height: usize,
    pub bands: usize,
    /// Indices of the bands that carry class information.
    pub informative: Vec<usize>,
    pub noise_std: f32,
    /// Mean Voronoi cell side in pixels.
    pub cell_size: f64,
    pub texture_amplitude: f32,
    /// `v ↦ gain·v + bias` on informative bands (domain shift).
    pub gain: f32,
    pub bias: f32,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            width: 128,
            height: 128,
            bands: 30,
            informative: vec![0, 1, 2],
            noise_std: 0.3,
            cell_size: 22.0,
            texture_amplitude: 0.6,
            gain: 1.0,
            bias: 0.0,
            seed: 7,
        }
    }
}

impl SynthConfig {
    /// Class identity carried by `band` alone, without texture.
    pub fn single_band(band: usize) -> Self {
        Self {
            informative: vec![band],
            texture_amplitude: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.width < 8 || self.height < 8 || self.bands == 0 {
            return Err(Error::Config("synthetic scene needs at least 8x8 pixels and one band".into()));
        }
        if self.informative.is_empty() || self.informative.iter().any(|&b| b >= self.bands) {
            return Err(Error::Config(format!(
                "informative bands {:?} must be non-empty and below {}",
                self.informative, self.bands
            )));
        }
        if !(self.noise_std.is_finite() && self.noise_std >= 0.0 && self.cell_size.is_finite() && self.cell_size >= 2.0) {
            return Err(Error::Config("noise_std must be >= 0 and cell_size >= 2".into()));
        }
        Ok(())
    }

    fn code(&self, class: u8, slot: usize) -> f32 {
        if self.informative.len() == 1 {
            LEVELS[class as usize]
        } else {
            CODES[class as usize][slot % 3]
        }
    }
}

#[derive(Debug, Clone)]
pub struct SynthScene {
    pub stack: BandStack,
    pub labels: LabelMask,
}

/// Band names for a synthetic stack: the registry names, then `extraN`.
pub fn synth_band_names(n: usize) -> Vec<(String, Option<BandRole>)> {
    (0..n)
        .map(|i| match BandRole::ALL.get(i) {
            Some(&r) => (r.name().to_string(), Some(r)),
            None => (format!("extra{i}"), None),
        })
        .collect()
}

fn class_map(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<u8> {
    let (w, h) = (cfg.width as f64, cfg.height as f64);
    let cells = ((w * h) / (cfg.cell_size * cfg.cell_size)).round().max(NUM_CLASSES as f64) as usize;
    let mut classes: Vec<u8> = (0..cells).map(|i| (i % NUM_CLASSES) as u8).collect();
    classes.shuffle(rng);
    let seeds: Vec<(f64, f64)> = (0..cells).map(|_| (rng.gen_range(0.0..h), rng.gen_range(0.0..w))).collect();
    let (pa, pb): (f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
    let amp = cfg.cell_size * 0.25;
    let freq = 2.0 * std::f64::consts::PI / (cfg.cell_size * 1.5);
    let mut out = Vec::with_capacity(cfg.width * cfg.height);
    for r in 0..cfg.height {
        for c in 0..cfg.width {
            let (y, x) = (r as f64, c as f64);
            // domain warp for irregular boundaries
            let wy = y + amp * (freq * x + pa).sin();
            let wx = x + amp * (freq * y + pb).sin();
            let nearest = seeds
                .iter()
                .enumerate()
                .map(|(i, &(sy, sx))| (i, (sy - wy).powi(2) + (sx - wx).powi(2)))
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .map(|(i, _)| i)
                .expect("at least one cell");
            out.push(classes[nearest]);
        }
    }
    out
}

pub fn synth_scene(cfg: &SynthConfig) -> Result<SynthScene> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let classes = class_map(cfg, &mut rng);
    let geometry = GridGeometry::unit(cfg.width, cfg.height);
    let noise = Normal::new(0.0f32, 1.0).expect("unit normal");
    let mut stack = BandStack::new(geometry, DEFAULT_NODATA)?;
    for (b, (name, role)) in synth_band_names(cfg.bands).into_iter().enumerate() {
        let slot = cfg.informative.iter().position(|&i| i == b);
        let mut values = Vec::with_capacity(classes.len());
        for (p, &cls) in classes.iter().enumerate() {
            let e = noise.sample(&mut rng);
            let v = match slot {
                None => e,
                Some(s) => {
                    let mut v = cfg.code(cls, s) + cfg.noise_std * e;
                    if s == 0 && cls == DEBRIS {
                        let (r, c) = (p / cfg.width, p % cfg.width);
                        v += if (r + c) % 2 == 0 { cfg.texture_amplitude } else { -cfg.texture_amplitude };
                    }
                    cfg.gain * v + cfg.bias
                }
            };
            values.push(v);
        }
        stack.push(name, role, RasterGrid::new(geometry, DEFAULT_NODATA, values)?)?;
    }
    Ok(SynthScene {
        stack,
        labels: LabelMask::new(geometry, classes)?,
    })
}
