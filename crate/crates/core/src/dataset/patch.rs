use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::weights::{class_weights, ClassWeights};
use crate::error::{Error, Result};
use crate::labels::{LabelMask, IGNORE, NUM_CLASSES};
use crate::raster::{is_nodata, BandStack, BandStats, GridGeometry};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    /// `channels × size × size`, row-major per channel.
    pub image: Vec<f32>,
    /// `size × size` class ids.
    pub labels: Vec<u8>,
    /// (row, col) of the top-left pixel in the (padded) scene.
    pub offset: (usize, usize),
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchSet {
    pub patch_size: usize,
    pub stride: usize,
    pub seed: u64,
    pub band_names: Vec<String>,
    pub scene: GridGeometry,
    /// Reflection padding added on the (bottom, right) edges.
    pub padding: (usize, usize),
    pub patches: Vec<Patch>,
    pub class_weights: Option<ClassWeights>,
    pub norm_stats: Option<Vec<BandStats>>,
}

impl PatchSet {
    pub fn channels(&self) -> usize {
        self.band_names.len()
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.patches.len()).filter(|&i| self.patches[i].split == split).collect()
    }

    pub fn count(&self, split: Split) -> usize {
        self.patches.iter().filter(|p| p.split == split).count()
    }

    /// Computes inverse-frequency weights from the training patches.
    pub fn training_weights(&self) -> ClassWeights {
        class_weights(
            self.patches
                .iter()
                .filter(|p| p.split == Split::Train)
                .map(|p| p.labels.as_slice()),
            NUM_CLASSES,
        )
    }
}

/// Patch origins along one axis of length `dim`: a regular grid with the
/// given stride, plus a final origin shifted inward so the far edge is
/// covered. Scenes shorter than the patch get a single origin at 0.
pub fn axis_offsets(dim: usize, patch: usize, stride: usize) -> Vec<usize> {
    if dim <= patch {
        return vec![0];
    }
    let mut v: Vec<usize> = (0..).map(|k| k * stride).take_while(|&o| o + patch <= dim).collect();
    let last = dim - patch;
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Reflection (without edge repeat) of index `i` into `0..dim`.
#[inline]
pub(crate) fn reflect(i: usize, dim: usize) -> usize {
    if i < dim {
        i
    } else {
        2 * (dim - 1) - i
    }
}

/// Geometry of a scene tiled into patches.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub stride: usize,
    pub padding: (usize, usize),
    pub offsets: Vec<(usize, usize)>,
}

impl PatchGrid {
    pub fn new(height: usize, width: usize, patch: usize, stride: usize) -> Result<Self> {
        if patch == 0 || stride == 0 || stride > patch {
            return Err(Error::Config(format!(
                "stride must be in [1, patch_size]; got patch {patch}, stride {stride}"
            )));
        }
        let pad = |dim: usize| -> Result<usize> {
            let p = patch.saturating_sub(dim);
            if p > 0 && p > dim - 1 {
                return Err(Error::Size(format!(
                    "scene dimension {dim} is too small for patch {patch}: reflection padding of {p} exceeds {}",
                    dim - 1
                )));
            }
            Ok(p)
        };
        let padding = (pad(height)?, pad(width)?);
        let rows = axis_offsets(height + padding.0, patch, stride);
        let cols = axis_offsets(width + padding.1, patch, stride);
        let offsets = rows.iter().flat_map(|&r| cols.iter().map(move |&c| (r, c))).collect();
        Ok(Self {
            height,
            width,
            patch,
            stride,
            padding,
            offsets,
        })
    }

    pub fn padded(&self) -> (usize, usize) {
        (self.height + self.padding.0, self.width + self.padding.1)
    }

    /// Copies the `patch × patch` window at `offset` out of a row-major plane,
    /// reflecting across the bottom/right edges.
    pub fn window<T: Copy>(&self, plane: &[T], offset: (usize, usize), out: &mut Vec<T>) {
        let (r0, c0) = offset;
        for r in r0..r0 + self.patch {
            let sr = reflect(r, self.height);
            let row = &plane[sr * self.width..(sr + 1) * self.width];
            for c in c0..c0 + self.patch {
                out.push(row[reflect(c, self.width)]);
            }
        }
    }

    /// `channels × patch × patch` image windows for every offset. Nodata is
    /// replaced with 0.
    pub fn extract_images(&self, stack: &BandStack) -> Vec<Vec<f32>> {
        let nodata = stack.nodata();
        let cleaned: Vec<Vec<f32>> = stack
            .bands()
            .iter()
            .map(|b| {
                b.grid
                    .values()
                    .iter()
                    .map(|&v| if is_nodata(v, nodata) { 0.0 } else { v })
                    .collect()
            })
            .collect();
        crate::par::map_range(self.offsets.len(), |k| {
            let mut img = Vec::with_capacity(cleaned.len() * self.patch * self.patch);
            for plane in &cleaned {
                self.window(plane, self.offsets[k], &mut img);
            }
            img
        })
    }
}

/// Tiles `stack` and `labels` into `patch_size` windows on a regular grid
/// with the given stride. Pixels where any band is nodata are labelled
/// ignore. Every patch starts in the training split.
pub fn patchify(stack: &BandStack, labels: &LabelMask, patch_size: usize, stride: usize, seed: u64) -> Result<PatchSet> {
    let g = *stack.geometry();
    g.ensure_same(labels.geometry(), "label mask")?;
    if stack.is_empty() {
        return Err(Error::InvalidGrid("cannot patchify an empty stack".into()));
    }
    let grid = PatchGrid::new(g.height, g.width, patch_size, stride)?;
    let nodata = stack.nodata();
    let mask: Vec<u8> = labels
        .classes()
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            if stack.bands().iter().any(|b| is_nodata(b.grid.values()[i], nodata)) {
                IGNORE
            } else {
                c
            }
        })
        .collect();
    let images = grid.extract_images(stack);
    let patches = images
        .into_iter()
        .zip(&grid.offsets)
        .map(|(image, &offset)| {
            let mut lab = Vec::with_capacity(patch_size * patch_size);
            grid.window(&mask, offset, &mut lab);
            Patch {
                image,
                labels: lab,
                offset,
                split: Split::Train,
            }
        })
        .collect();
    Ok(PatchSet {
        patch_size,
        stride,
        seed,
        band_names: stack.names(),
        scene: g,
        padding: grid.padding,
        patches,
        class_weights: None,
        norm_stats: None,
    })
}

/// Seeded shuffle followed by a prefix split: the first
/// `round(n · train_fraction)` shuffled patches train, the rest test.
pub fn split(mut set: PatchSet, train_fraction: f64, seed: u64) -> Result<PatchSet> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::Split(format!("train fraction must be in (0, 1), got {train_fraction}")));
    }
    let n = set.patches.len();
    if n < 2 {
        return Err(Error::Split(format!("need at least 2 patches, have {n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64 * train_fraction).round() as usize).clamp(1, n - 1);
    for (rank, &i) in order.iter().enumerate() {
        set.patches[i].split = if rank < n_train { Split::Train } else { Split::Test };
    }
    set.seed = seed;
    set.class_weights = Some(set.training_weights());
    Ok(set)
}
