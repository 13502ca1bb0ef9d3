use crate::error::{Error, Result};
use crate::labels::IGNORE;
use crate::nn::{Real, Tensor};

#[derive(Debug, Clone)]
pub struct LossOutput<T> {
    pub loss: f64,
    /// ∂loss/∂logits.
    pub grad: Tensor<T>,
    /// Non-ignore pixels in the normalizer.
    pub pixels: usize,
}

/// Class-weighted cross-entropy averaged over non-ignore pixels:
/// `(1/M) Σ w_y · (logsumexp(z) − z_y)`.
///
/// `targets` is `N×H×W` in the same pixel order as the logits.
pub fn weighted_ce_loss<T: Real>(logits: &Tensor<T>, targets: &[u8], weights: &[f64]) -> Result<LossOutput<T>> {
    let (n, k, h, w) = logits.dims4()?;
    let hw = h * w;
    if targets.len() != n * hw {
        return Err(Error::Shape(format!(
            "{} targets for {n}x{h}x{w} logits",
            targets.len()
        )));
    }
    if weights.len() != k {
        return Err(Error::Arity {
            what: "class weights",
            expected: k,
            found: weights.len(),
        });
    }
    let pixels = targets.iter().filter(|&&t| t != IGNORE).count();
    if pixels == 0 {
        return Err(Error::EmptyLoss);
    }
    if let Some(&bad) = targets.iter().find(|&&t| t != IGNORE && t as usize >= k) {
        return Err(Error::Shape(format!("target class {bad} out of range for {k} classes")));
    }
    let z = logits.data();
    let norm = pixels as f64;
    let mut grad = vec![T::zero(); z.len()];
    let mut total = 0.0f64;
    let mut probs = vec![0.0f64; k];
    for s in 0..n {
        for p in 0..hw {
            let t = targets[s * hw + p];
            if t == IGNORE {
                continue;
            }
            let at = |c: usize| (s * k + c) * hw + p;
            let m = (0..k).map(|c| z[at(c)].as_f64()).fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for (c, pr) in probs.iter_mut().enumerate() {
                *pr = (z[at(c)].as_f64() - m).exp();
                sum += *pr;
            }
            let lse = m + sum.ln();
            let wy = weights[t as usize];
            total += wy * (lse - z[at(t as usize)].as_f64());
            for (c, pr) in probs.iter().enumerate() {
                let onehot = if c == t as usize { 1.0 } else { 0.0 };
                grad[at(c)] = T::from_f64(wy * (pr / sum - onehot) / norm);
            }
        }
    }
    Ok(LossOutput {
        loss: total / norm,
        grad: Tensor::new(logits.shape(), grad)?,
        pixels,
    })
}
