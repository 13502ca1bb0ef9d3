use super::hann::HannWindow;
use crate::error::{Error, Result};
use crate::par;

/// Hann-weighted blend of overlapping `channels × size × size` patch outputs
/// into a `channels × height × width` scene. Patch pixels beyond the scene
/// (reflection padding) are dropped. Patches are accumulated in offset
/// order, so the result does not depend on how `patches` is ordered.
pub fn merge_patches(
    patches: &[(&[f32], (usize, usize))],
    channels: usize,
    scene: (usize, usize),
    window: &HannWindow,
) -> Result<Vec<f32>> {
    let (h, w) = scene;
    let size = window.size();
    let plane = size * size;
    for (data, _) in patches {
        if data.len() != channels * plane {
            return Err(Error::Shape(format!(
                "patch output has {} values, expected {channels}x{size}x{size}",
                data.len()
            )));
        }
    }
    let mut order: Vec<usize> = (0..patches.len()).collect();
    order.sort_by_key(|&i| patches[i].1);

    let mut wsum = vec![0.0f64; h * w];
    for &k in &order {
        let (r0, c0) = patches[k].1;
        for i in 0..size {
            let r = r0 + i;
            if r >= h {
                break;
            }
            for j in 0..size {
                let c = c0 + j;
                if c >= w {
                    break;
                }
                wsum[r * w + c] += window.weight(i, j);
            }
        }
    }
    if let Some(p) = wsum.iter().position(|&s| s == 0.0) {
        return Err(Error::Coverage { row: p / w, col: p % w });
    }

    let mut out = vec![0.0f32; channels * h * w];
    par::for_each_chunk_mut(&mut out, h * w, |ch, dst| {
        let mut acc = vec![0.0f64; h * w];
        for &k in &order {
            let (data, (r0, c0)) = patches[k];
            let src = &data[ch * plane..(ch + 1) * plane];
            for i in 0..size {
                let r = r0 + i;
                if r >= h {
                    break;
                }
                for j in 0..size {
                    let c = c0 + j;
                    if c >= w {
                        break;
                    }
                    acc[r * w + c] += window.weight(i, j) * src[i * size + j] as f64;
                }
            }
        }
        for ((d, a), s) in dst.iter_mut().zip(&acc).zip(&wsum) {
            *d = (a / s) as f32;
        }
    });
    Ok(out)
}
