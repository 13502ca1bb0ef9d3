use serde::{Deserialize, Serialize};

use crate::labels::IGNORE;

/// Per-class loss weights. `absent` lists classes with no training pixels;
/// they receive the clamped maximum weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub weights: Vec<f64>,
    #[serde(default)]
    pub absent: Vec<usize>,
}

impl ClassWeights {
    pub fn uniform(k: usize) -> Self {
        Self {
            weights: vec![1.0; k],
            absent: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Inverse-frequency weighting `w_c = N / (K · max(N_c, 1))` over the given
/// label planes; ignore pixels are skipped.
pub fn class_weights<'a>(labels: impl IntoIterator<Item = &'a [u8]>, k: usize) -> ClassWeights {
    let mut counts = vec![0u64; k];
    for plane in labels {
        for &c in plane {
            if c != IGNORE && (c as usize) < k {
                counts[c as usize] += 1;
            }
        }
    }
    weights_from_counts(&counts)
}

pub fn weights_from_counts(counts: &[u64]) -> ClassWeights {
    let k = counts.len();
    let total: u64 = counts.iter().sum();
    let mut absent = Vec::new();
    let weights = counts
        .iter()
        .enumerate()
        .map(|(c, &n)| {
            if n == 0 {
                absent.push(c);
                log::warn!("class {c} has no training pixels; using clamped weight");
            }
            total as f64 / (k as f64 * n.max(1) as f64)
        })
        .collect();
    ClassWeights { weights, absent }
}
