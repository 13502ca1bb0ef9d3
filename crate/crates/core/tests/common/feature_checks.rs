//! Per-seed comparisons of the feature kernels against the oracles. Each
//! returns the worst absolute deviation; a nodata mismatch counts as
//! infinite.

use cryostack::features::*;
use cryostack::raster::{BandStack, RasterGrid};
use rand::Rng;

use super::*;

fn dev(got: f32, want: Option<f64>) -> f64 {
    match want {
        Some(w) if got != ND => (got as f64 - w).abs(),
        None if got == ND => 0.0,
        _ => f64::INFINITY,
    }
}

pub fn index_error(seed: u64) -> f64 {
    let mut r = rng(seed);
    let s = random_optical(&mut r, 9, 7);
    let mut err = 0.0f64;
    for kind in IndexKind::ALL {
        let got = spectral_index(&s, kind).unwrap();
        let (ra, rb) = kind.roles();
        let (a, b) = (s.by_role(ra).unwrap(), s.by_role(rb).unwrap());
        for i in 0..got.values().len() {
            err = err.max(dev(got.values()[i], nd_oracle(a.values()[i], b.values()[i])));
        }
    }
    err
}

/// Worst slope and aspect deviations in degrees.
pub fn terrain_error(seed: u64) -> (f64, f64) {
    let mut r = rng(100 + seed);
    let dem = random_grid(&mut r, 8, 6, 1000.0, 1400.0, 0.04);
    let (s, a) = (slope(&dem).unwrap(), aspect(&dem).unwrap());
    let (mut es, mut ea) = (0.0f64, 0.0f64);
    for (i, o) in horn_oracle(&dem).into_iter().enumerate() {
        let (sv, av) = (s.values()[i], a.values()[i]);
        match o {
            None => {
                es = es.max(dev(sv, None));
                ea = ea.max(dev(av, None));
            }
            Some((sl, az)) => {
                es = es.max(dev(sv, Some(sl)));
                ea = ea.max(match az {
                    None if av == FLAT_ASPECT => 0.0,
                    None => f64::INFINITY,
                    Some(_) if av == ND => f64::INFINITY,
                    Some(az) => angle_diff(av as f64, az),
                });
            }
        }
    }
    (es, ea)
}

pub fn glcm_error(seed: u64) -> f64 {
    let mut r = rng(200 + seed);
    let (w, h) = (r.gen_range(7..13), r.gen_range(7..13));
    let band = random_grid(&mut r, w, h, -3.0, 5.0, 0.05);
    let cfg = GlcmConfig {
        window: [3, 5, 7][seed as usize % 3],
        levels: [4, 8, 32][seed as usize % 3],
        offsets: if seed.is_multiple_of(2) { vec![(0, 1), (1, 0)] } else { vec![(1, 1), (0, 2), (-1, 1)] },
        statistic: GlcmStatistic::Dissimilarity,
    };
    let got = glcm_dissimilarity(&band, &cfg).unwrap();
    if got.degenerate_range {
        return f64::INFINITY;
    }
    glcm_oracle(&band, cfg.window, cfg.levels, &cfg.offsets)
        .into_iter()
        .enumerate()
        .map(|(i, o)| dev(got.grid.values()[i], o))
        .fold(0.0, f64::max)
}

/// Bands mixed from independent sources of decreasing spread, with a few
/// nodata pixels.
pub fn correlated_stack(seed: u64, bands: usize, w: usize, h: usize) -> BandStack {
    let mut r = rng(seed);
    let mix: Vec<Vec<f64>> = (0..bands).map(|_| (0..bands).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
    let scale: Vec<f64> = (0..bands).map(|k| 3.0 / (k + 1) as f64).collect();
    let mut planes = vec![Vec::with_capacity(w * h); bands];
    for _ in 0..w * h {
        let z: Vec<f64> = (0..bands).map(|k| r.gen_range(-1.0..1.0) * scale[k]).collect();
        let hole = r.gen_bool(0.03);
        for (b, plane) in planes.iter_mut().enumerate() {
            let v: f64 = (0..bands).map(|k| mix[b][k] * z[k]).sum::<f64>() + 2.0;
            plane.push(if hole { ND } else { v as f32 });
        }
    }
    let mut s = BandStack::new(geometry(w, h, 10.0), ND).unwrap();
    for (b, p) in planes.into_iter().enumerate() {
        s.push(format!("b{b}"), None, RasterGrid::new(geometry(w, h, 10.0), ND, p).unwrap()).unwrap();
    }
    s
}

pub struct PcaError {
    /// Eigenvalue deviation relative to the largest eigenvalue.
    pub eigenvalue: f64,
    pub mean: f64,
    /// `1 − |cos|` between library and oracle axes with a clear spectral gap.
    pub axis: f64,
    /// Worst full-rank reconstruction error.
    pub reconstruction: f64,
}

pub fn pca_error(seed: u64) -> PcaError {
    let nb = 3 + seed as usize % 4;
    let s = correlated_stack(300 + seed, nb, 12, 10);
    let (mean, cov) = covariance_oracle(&s);
    let (vals, vecs) = jacobi_eigen(cov);
    let model = PcaModel::fit(&s, nb).unwrap();
    let top = vals[0].abs().max(1.0);
    let mut e = PcaError {
        eigenvalue: 0.0,
        mean: 0.0,
        axis: 0.0,
        reconstruction: 0.0,
    };
    for k in 0..nb {
        e.eigenvalue = e.eigenvalue.max((model.eigenvalues[k] - vals[k]).abs() / top);
        e.mean = e.mean.max((model.means[k] - mean[k]).abs());
        let dot: f64 = model.components[k].iter().zip(&vecs[k]).map(|(a, b)| a * b).sum();
        let gap = (0..nb).filter(|&j| j != k).map(|j| (vals[j] - vals[k]).abs()).fold(f64::INFINITY, f64::min);
        if gap > 1e-3 * top {
            e.axis = e.axis.max((dot.abs() - 1.0).abs());
        }
    }
    let scores = model.transform(&s).unwrap();
    for i in 0..s.geometry().len() {
        let orig: Option<Vec<f64>> = s.bands().iter().map(|b| valid(b.grid.values()[i])).collect();
        let Some(orig) = orig else {
            e.reconstruction = e.reconstruction.max(dev(scores.band(0).grid.values()[i], None));
            continue;
        };
        for (b, &x) in orig.iter().enumerate() {
            let rec: f64 =
                mean[b] + (0..nb).map(|k| scores.band(k).grid.values()[i] as f64 * model.components[k][b]).sum::<f64>();
            e.reconstruction = e.reconstruction.max((rec - x).abs());
        }
    }
    e
}

/// Sentinel-2 brightness, greenness and wetness rows over
/// blue, green, red, NIR, SWIR1, SWIR2.
pub const TC_ROWS: [[f64; 6]; 3] = [
    [0.3510, 0.3813, 0.3437, 0.7196, 0.2396, 0.1949],
    [-0.3599, -0.3533, -0.4734, 0.6633, 0.0087, -0.2856],
    [0.2578, 0.2305, 0.0883, 0.1071, -0.7611, -0.5308],
];

pub fn tasseled_cap_error(seed: u64) -> f64 {
    let mut r = rng(400 + seed);
    let s = random_optical(&mut r, 6, 5);
    let out = tasseled_cap(&s, &TasseledCapCoefficients::sentinel2()).unwrap();
    let mut err = 0.0f64;
    for i in 0..s.geometry().len() {
        let px: Option<Vec<f64>> = optical_roles().iter().map(|&ro| valid(s.by_role(ro).unwrap().values()[i])).collect();
        for (k, row) in TC_ROWS.iter().enumerate() {
            let want = px.as_ref().map(|v| row.iter().zip(v).map(|(a, b)| a * b).sum());
            err = err.max(dev(out.band(k).grid.values()[i], want));
        }
    }
    err
}
