use crate::error::{Error, Result};

/// Floor applied to the 1-D Hann taper so border weights never vanish.
pub const HANN_FLOOR: f64 = 1e-3;

/// `0.5·(1 − cos(2πn/(N−1)))`, floored at [`HANN_FLOOR`].
pub fn hann_1d(size: usize) -> Vec<f64> {
    let denom = (size - 1) as f64;
    (0..size)
        .map(|n| (0.5 * (1.0 - (2.0 * std::f64::consts::PI * n as f64 / denom).cos())).max(HANN_FLOOR))
        .collect()
}

/// Separable 2-D Hann blending window, `w(i, j) = h(i)·h(j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct HannWindow {
    size: usize,
    taper: Vec<f64>,
}

impl HannWindow {
    pub fn new(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::Size(format!("Hann window needs size >= 2, got {size}")));
        }
        Ok(Self {
            size,
            taper: hann_1d(size),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.taper[i] * self.taper[j]
    }

    /// Row-major `size × size` weights.
    pub fn to_grid(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.size * self.size);
        for i in 0..self.size {
            for j in 0..self.size {
                out.push(self.weight(i, j));
            }
        }
        out
    }
}

/// Row-major `size × size` Hann weights.
pub fn hann_window(size: usize) -> Result<Vec<f64>> {
    Ok(HannWindow::new(size)?.to_grid())
}
