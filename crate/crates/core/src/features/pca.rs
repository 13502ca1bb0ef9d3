use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{is_nodata, Band, BandRole, BandStack, RasterGrid};

/// Fitted principal axes of a band stack. Persisted so that other scenes can
/// be projected onto the same loadings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PcaModel {
    pub band_names: Vec<String>,
    pub means: Vec<f64>,
    /// All eigenvalues of the sample covariance, descending.
    pub eigenvalues: Vec<f64>,
    /// Unit eigenvectors, one row per retained component, descending by
    /// eigenvalue. The largest-magnitude entry of each row is positive.
    pub components: Vec<Vec<f64>>,
}

const PCA_ROLES: [BandRole; 3] = [BandRole::Pca1, BandRole::Pca2, BandRole::Pca3];

fn valid_rows(stack: &BandStack) -> Vec<usize> {
    let nodata = stack.nodata();
    (0..stack.geometry().len())
        .filter(|&i| stack.bands().iter().all(|b| !is_nodata(b.grid.values()[i], nodata)))
        .collect()
}

/// Sample covariance (denominator n − 1) over pixels valid in every band.
pub fn band_covariance(stack: &BandStack) -> (Vec<f64>, DMatrix<f64>, usize) {
    let nb = stack.len();
    let rows = valid_rows(stack);
    let n = rows.len();
    let mut means = vec![0.0f64; nb];
    for (b, m) in stack.bands().iter().zip(means.iter_mut()) {
        let vals = b.grid.values();
        *m = rows.iter().map(|&i| vals[i] as f64).sum::<f64>() / n.max(1) as f64;
    }
    let mut cov = DMatrix::<f64>::zeros(nb, nb);
    let mut centered = vec![0.0f64; nb];
    for &i in &rows {
        for (k, b) in stack.bands().iter().enumerate() {
            centered[k] = b.grid.values()[i] as f64 - means[k];
        }
        for a in 0..nb {
            for b in a..nb {
                cov[(a, b)] += centered[a] * centered[b];
            }
        }
    }
    let denom = (n.max(2) - 1) as f64;
    for a in 0..nb {
        for b in a..nb {
            let v = cov[(a, b)] / denom;
            cov[(a, b)] = v;
            cov[(b, a)] = v;
        }
    }
    (means, cov, n)
}

impl PcaModel {
    pub fn fit(stack: &BandStack, components: usize) -> Result<Self> {
        let nb = stack.len();
        if components == 0 || components > nb {
            return Err(Error::Config(format!(
                "PCA components must be in [1, {nb}], got {components}"
            )));
        }
        let (means, cov, n) = band_covariance(stack);
        if n < components + 1 {
            return Err(Error::Size(format!(
                "PCA with {components} components needs at least {} valid pixels, found {n}",
                components + 1
            )));
        }
        let sym = (&cov + cov.transpose()) * 0.5;
        if sym.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numerical("covariance has non-finite entries".into()));
        }
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..nb).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
        let eigenvalues: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let top = eigenvalues[0].abs().max(1.0);
        if let Some(&neg) = eigenvalues.iter().find(|&&l| l < -1e-9 * top) {
            return Err(Error::Numerical(format!(
                "covariance is not positive semidefinite (eigenvalue {neg:e})"
            )));
        }
        let components = order[..components]
            .iter()
            .map(|&i| {
                let mut v: Vec<f64> = eig.eigenvectors.column(i).iter().copied().collect();
                let lead = v
                    .iter()
                    .copied()
                    .enumerate()
                    .max_by(|a, b| a.1.abs().total_cmp(&b.1.abs()).then(b.0.cmp(&a.0)))
                    .map(|(k, _)| k)
                    .unwrap();
                if v[lead] < 0.0 {
                    v.iter_mut().for_each(|x| *x = -*x);
                }
                v
            })
            .collect();
        Ok(Self {
            band_names: stack.names(),
            means,
            eigenvalues,
            components,
        })
    }

    /// Projects `stack` (bands matched by name) onto the fitted axes. Output
    /// bands are named `PCA1..PCAk`.
    pub fn transform(&self, stack: &BandStack) -> Result<BandStack> {
        let selected = stack.select(&self.band_names)?;
        let nodata = stack.nodata();
        let geom = *stack.geometry();
        let mut out = BandStack::new(geom, nodata)?;
        let bands: Vec<&[f32]> = selected.bands().iter().map(|b| b.grid.values()).collect();
        for (k, axis) in self.components.iter().enumerate() {
            let mut values = Vec::with_capacity(geom.len());
            for i in 0..geom.len() {
                let mut acc = 0.0f64;
                let mut bad = false;
                for (b, vals) in bands.iter().enumerate() {
                    let v = vals[i];
                    if is_nodata(v, nodata) {
                        bad = true;
                        break;
                    }
                    acc += (v as f64 - self.means[b]) * axis[b];
                }
                values.push(if bad { nodata } else { acc as f32 });
            }
            out.push_band(Band {
                name: format!("PCA{}", k + 1),
                role: PCA_ROLES.get(k).copied(),
                grid: RasterGrid::from_parts_unchecked(geom, nodata, values),
            })?;
        }
        Ok(out)
    }
}

/// Fits PCA on `stack` and returns the leading `components` projections.
pub fn pca(stack: &BandStack, components: usize) -> Result<BandStack> {
    PcaModel::fit(stack, components)?.transform(stack)
}
