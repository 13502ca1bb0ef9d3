use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::metrics::{metrics, Metrics};
use super::trainer::evaluate_indices;
use crate::dataset::{PatchSet, Split};
use crate::error::{Error, Result};
use crate::labels::{CLEAN_ICE, DEBRIS};
use crate::nn::CryoNet;
use crate::par;

/// Moves band `band` of test patch `test[i]` to test patch `test[perm[i]]`.
/// Training patches and all other bands are untouched.
pub fn permute_band_with(set: &PatchSet, band: usize, perm: &[usize]) -> Result<PatchSet> {
    if band >= set.channels() {
        return Err(Error::BandNotFound(format!("band index {band} (set has {})", set.channels())));
    }
    let test = set.indices(Split::Test);
    if perm.len() != test.len() {
        return Err(Error::Permutation(format!(
            "permutation of length {} for {} test patches",
            perm.len(),
            test.len()
        )));
    }
    let mut seen = vec![false; perm.len()];
    for &p in perm {
        if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
            return Err(Error::Permutation(format!("{perm:?} is not a permutation")));
        }
    }
    let plane = set.patch_size * set.patch_size;
    let range = band * plane..(band + 1) * plane;
    let mut out = set.clone();
    for (i, &src) in test.iter().enumerate() {
        let dst = test[perm[i]];
        out.patches[dst].image[range.clone()].copy_from_slice(&set.patches[src].image[range.clone()]);
    }
    Ok(out)
}

/// Seeded random permutation of one band's planes across the test patches.
pub fn permute_band(set: &PatchSet, band: usize, seed: u64) -> Result<PatchSet> {
    let n = set.count(Split::Test);
    if n < 2 {
        return Err(Error::Permutation(format!("need at least 2 test patches to permute, have {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    permute_band_with(set, band, &perm)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandImportance {
    pub band: usize,
    pub name: String,
    /// Mean over repeats of the permuted-set scores.
    pub permuted_accuracy: f64,
    pub permuted_miou: f64,
    pub permuted_iou_clean: f64,
    pub permuted_iou_debris: f64,
    /// Baseline minus permuted.
    pub delta_accuracy: f64,
    pub delta_miou: f64,
    pub delta_iou_clean: f64,
    pub delta_iou_debris: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub seed: u64,
    pub repeats: usize,
    pub baseline: Metrics,
    /// Sorted by decreasing ΔmIoU.
    pub bands: Vec<BandImportance>,
}

/// Permutation seed for one (band, repeat) pair.
fn derive_seed(seed: u64, band: usize, repeat: usize) -> u64 {
    let mut x = seed ^ ((band as u64) << 32 | repeat as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    // splitmix64 finalizer
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

struct Scores {
    accuracy: f64,
    miou: f64,
    clean: f64,
    debris: f64,
}

fn scores(m: &Metrics) -> Scores {
    Scores {
        accuracy: m.accuracy,
        miou: m.mean_iou,
        clean: m.iou(CLEAN_ICE as usize).unwrap_or(0.0),
        debris: m.iou(DEBRIS as usize).unwrap_or(0.0),
    }
}

/// Drop in test accuracy, mIoU and clean-ice/debris IoU when each band is
/// permuted across test patches, averaged over `repeats` permutations.
pub fn channel_importance(net: &CryoNet, set: &PatchSet, seed: u64, repeats: usize) -> Result<ImportanceReport> {
    if repeats == 0 {
        return Err(Error::Config("importance needs at least one repeat".into()));
    }
    let test = set.indices(Split::Test);
    let baseline = metrics(&evaluate_indices(net, set, &test)?);
    let base = scores(&baseline);
    let results = par::map_range(set.channels(), |band| -> Result<BandImportance> {
        let mut acc = Scores {
            accuracy: 0.0,
            miou: 0.0,
            clean: 0.0,
            debris: 0.0,
        };
        for r in 0..repeats {
            let permuted = permute_band(set, band, derive_seed(seed, band, r))?;
            let s = scores(&metrics(&evaluate_indices(net, &permuted, &test)?));
            acc.accuracy += s.accuracy;
            acc.miou += s.miou;
            acc.clean += s.clean;
            acc.debris += s.debris;
        }
        let n = repeats as f64;
        let p = Scores {
            accuracy: acc.accuracy / n,
            miou: acc.miou / n,
            clean: acc.clean / n,
            debris: acc.debris / n,
        };
        Ok(BandImportance {
            band,
            name: set.band_names[band].clone(),
            delta_accuracy: base.accuracy - p.accuracy,
            delta_miou: base.miou - p.miou,
            delta_iou_clean: base.clean - p.clean,
            delta_iou_debris: base.debris - p.debris,
            permuted_accuracy: p.accuracy,
            permuted_miou: p.miou,
            permuted_iou_clean: p.clean,
            permuted_iou_debris: p.debris,
        })
    });
    let mut bands = results.into_iter().collect::<Result<Vec<_>>>()?;
    bands.sort_by(|a, b| b.delta_miou.total_cmp(&a.delta_miou).then(a.band.cmp(&b.band)));
    Ok(ImportanceReport {
        seed,
        repeats,
        baseline,
        bands,
    })
}

impl ImportanceReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("band,name,delta_acc,delta_mIoU,delta_IoU_clean,delta_IoU_debris\n");
        for b in &self.bands {
            writeln!(
                s,
                "{},{},{:.8},{:.8},{:.8},{:.8}",
                b.band, b.name, b.delta_accuracy, b.delta_miou, b.delta_iou_clean, b.delta_iou_debris
            )
            .unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn rank_of(&self, band: usize) -> Option<usize> {
        self.bands.iter().position(|b| b.band == band)
    }
}
