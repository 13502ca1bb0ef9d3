//! On-disk patch sets: `manifest.json` plus one `CRYO` stack per patch whose
//! last band, named `label`, carries the class ids.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::patch::{Patch, PatchSet, Split};
use super::weights::ClassWeights;
use crate::error::{Error, Result};
use crate::raster::{read_stack, write_stack, BandStack, BandStats, GridGeometry, RasterGrid, DEFAULT_NODATA};

pub const MANIFEST: &str = "manifest.json";
const LABEL_BAND: &str = "label";

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatchEntry {
    pub file: String,
    pub offset: (usize, usize),
    pub split: Split,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub patch_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub band_names: Vec<String>,
    pub scene: GridGeometry,
    pub padding: (usize, usize),
    pub class_weights: Option<ClassWeights>,
    pub norm_stats: Option<Vec<BandStats>>,
    pub patches: Vec<PatchEntry>,
}

fn patch_stack(set: &PatchSet, p: &Patch) -> Result<BandStack> {
    let n = set.patch_size;
    let ps = set.scene.pixel_size;
    let g = GridGeometry::new(
        n,
        n,
        set.scene.origin_x + p.offset.1 as f64 * ps,
        set.scene.origin_y - p.offset.0 as f64 * ps,
        ps,
    )?;
    let mut s = BandStack::new(g, DEFAULT_NODATA)?;
    for (k, name) in set.band_names.iter().enumerate() {
        let plane = p.image[k * n * n..(k + 1) * n * n].to_vec();
        s.push(name.clone(), None, RasterGrid::new(g, DEFAULT_NODATA, plane)?)?;
    }
    let labels = p.labels.iter().map(|&c| c as f32).collect();
    s.push(LABEL_BAND, None, RasterGrid::new(g, DEFAULT_NODATA, labels)?)?;
    Ok(s)
}

pub fn write_patchset(set: &PatchSet, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(set.patches.len());
    for (i, p) in set.patches.iter().enumerate() {
        let file = format!("patch_{i:05}.cryo");
        write_stack(&patch_stack(set, p)?, dir.join(&file))?;
        entries.push(PatchEntry {
            file,
            offset: p.offset,
            split: p.split,
        });
    }
    let manifest = Manifest {
        patch_size: set.patch_size,
        stride: set.stride,
        seed: set.seed,
        band_names: set.band_names.clone(),
        scene: set.scene,
        padding: set.padding,
        class_weights: set.class_weights.clone(),
        norm_stats: set.norm_stats.clone(),
        patches: entries,
    };
    let path = dir.join(MANIFEST);
    fs::write(&path, serde_json::to_string_pretty(&manifest)?).map_err(|e| Error::io(&path, e))
}

pub fn read_patchset(dir: impl AsRef<Path>) -> Result<PatchSet> {
    let dir = dir.as_ref();
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)?;
    let n = m.patch_size;
    let mut patches = Vec::with_capacity(m.patches.len());
    for e in &m.patches {
        let s = read_stack(dir.join(&e.file))?;
        if s.len() != m.band_names.len() + 1 || s.geometry().width != n || s.geometry().height != n {
            return Err(Error::Registry(format!(
                "{} does not match the manifest ({} bands of {n}x{n} plus label)",
                e.file,
                m.band_names.len()
            )));
        }
        let mut image = Vec::with_capacity(m.band_names.len() * n * n);
        for (b, name) in s.bands()[..m.band_names.len()].iter().zip(&m.band_names) {
            if &b.name != name {
                return Err(Error::Registry(format!("{}: expected band {name}, found {}", e.file, b.name)));
            }
            image.extend_from_slice(b.grid.values());
        }
        let labels = s.bands()[m.band_names.len()].grid.values().iter().map(|&v| v as u8).collect();
        patches.push(Patch {
            image,
            labels,
            offset: e.offset,
            split: e.split,
        });
    }
    Ok(PatchSet {
        patch_size: m.patch_size,
        stride: m.stride,
        seed: m.seed,
        band_names: m.band_names,
        scene: m.scene,
        padding: m.padding,
        patches,
        class_weights: m.class_weights,
        norm_stats: m.norm_stats,
    })
}
