use crate::dataset::{merge_patches, HannWindow, PatchGrid};
use crate::error::{Error, Result};
use crate::labels::{LabelMask, CLASS_NAMES};
use crate::nn::{Checkpoint, Tensor};
use crate::raster::{normalize_stack, BandStack, RasterGrid};

#[derive(Debug, Clone)]
pub struct Prediction {
    pub labels: LabelMask,
    /// One probability band per class, named after the class.
    pub probabilities: BandStack,
}

/// Per-pixel argmax; the lowest class id wins ties.
pub fn argmax_classes(probs: &[f32], classes: usize, pixels: usize) -> Vec<u8> {
    (0..pixels)
        .map(|q| {
            let mut best = 0;
            for c in 1..classes {
                if probs[c * pixels + q] > probs[best * pixels + q] {
                    best = c;
                }
            }
            best as u8
        })
        .collect()
}

/// Tiles `stack`, maps each `N×C×P×P` batch to `N×K×P×P` outputs with `f`,
/// and blends the outputs back with Hann weights into `K×H×W`.
pub fn tiled_map<F>(stack: &BandStack, patch: usize, stride: usize, classes: usize, batch: usize, f: F) -> Result<Vec<f32>>
where
    F: Fn(Tensor<f32>) -> Result<Tensor<f32>>,
{
    let g = *stack.geometry();
    let grid = PatchGrid::new(g.height, g.width, patch, stride)?;
    let images = grid.extract_images(stack);
    let channels = stack.len();
    let mut outputs: Vec<Vec<f32>> = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let refs: Vec<&[f32]> = chunk.iter().map(Vec::as_slice).collect();
        let y = f(Tensor::stack_samples(&refs, (channels, patch, patch))?)?;
        if y.shape() != [chunk.len(), classes, patch, patch] {
            return Err(Error::Shape(format!(
                "patch model returned {:?}, expected {}x{classes}x{patch}x{patch}",
                y.shape(),
                chunk.len()
            )));
        }
        outputs.extend(y.data().chunks(classes * patch * patch).map(<[f32]>::to_vec));
    }
    let pairs: Vec<(&[f32], (usize, usize))> =
        outputs.iter().map(Vec::as_slice).zip(grid.offsets.iter().copied()).collect();
    merge_patches(&pairs, classes, (g.height, g.width), &HannWindow::new(patch)?)
}

/// Selects and normalizes the checkpoint's bands, predicts overlapping
/// patches in eval mode, blends the softmax outputs and takes the argmax.
pub fn predict_scene(ckpt: &Checkpoint, stack: &BandStack, patch: usize, stride: usize) -> Result<Prediction> {
    let missing: Vec<&str> = ckpt
        .band_names
        .iter()
        .filter(|b| stack.index_of(b).is_none())
        .map(String::as_str)
        .collect();
    if !missing.is_empty() {
        return Err(Error::Registry(format!(
            "input stack is missing bands required by the checkpoint: {}",
            missing.join(", ")
        )));
    }
    let selected = stack.select(&ckpt.band_names)?;
    let input = match &ckpt.norm_stats {
        Some(stats) => normalize_stack(&selected, Some(stats))?.0,
        None => selected,
    };
    let net = &ckpt.model;
    let k = net.config.classes;
    let probs = tiled_map(&input, patch, stride, k, 16, |x| net.probabilities(x))?;
    let geom = *stack.geometry();
    let pixels = geom.len();
    let labels = LabelMask::new(geom, argmax_classes(&probs, k, pixels))?;
    let mut out = BandStack::new(geom, stack.nodata())?;
    for c in 0..k {
        let name = CLASS_NAMES.get(c).map_or_else(|| format!("class{c}"), |s| s.to_string());
        let grid = RasterGrid::new(geom, stack.nodata(), probs[c * pixels..(c + 1) * pixels].to_vec())?;
        out.push(name, None, grid)?;
    }
    Ok(Prediction {
        labels,
        probabilities: out,
    })
}
