//! Brute-force reference implementations shared by the integration tests.
//! Each one is written from the textbook definition, without reusing any
//! library internals.

#![allow(dead_code)]

pub mod feature_checks;
pub mod grad;

use cryostack::raster::{BandRole, BandStack, GridGeometry, RasterGrid, DEFAULT_NODATA};
use num_rational::Ratio;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const ND: f32 = DEFAULT_NODATA;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn geometry(w: usize, h: usize, pixel: f64) -> GridGeometry {
    GridGeometry::new(w, h, 500.0, 9000.0, pixel).unwrap()
}

/// Uniform values in `[lo, hi)`; each pixel is nodata with probability `holes`.
pub fn random_grid(rng: &mut ChaCha8Rng, w: usize, h: usize, lo: f32, hi: f32, holes: f64) -> RasterGrid {
    let values = (0..w * h)
        .map(|_| if rng.gen_bool(holes) { ND } else { rng.gen_range(lo..hi) })
        .collect();
    RasterGrid::new(geometry(w, h, 10.0), ND, values).unwrap()
}

pub fn optical_roles() -> [BandRole; 6] {
    [BandRole::Blue, BandRole::Green, BandRole::Red, BandRole::Nir, BandRole::Swir1, BandRole::Swir2]
}

/// Six reflectance-like optical bands with a few nodata holes.
pub fn random_optical(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BandStack {
    let mut s = BandStack::new(geometry(w, h, 10.0), ND).unwrap();
    for role in optical_roles() {
        s.push(role.name(), Some(role), random_grid(rng, w, h, 0.0, 1.0, 0.05)).unwrap();
    }
    s
}

pub fn valid(v: f32) -> Option<f64> {
    (v != ND).then_some(v as f64)
}

pub fn nd_oracle(a: f32, b: f32) -> Option<f64> {
    let (a, b) = (valid(a)?, valid(b)?);
    if (a + b).abs() < 1e-12 {
        Some(0.0)
    } else {
        Some((a - b) / (a + b))
    }
}

/// Horn slope (degrees) and downslope azimuth (degrees clockwise from north)
/// from the named 3×3 cells
///
/// ```text
/// a b c
/// d e f
/// g h i
/// ```
///
/// with edge replication. `None` where any cell is nodata; the azimuth is
/// `None` on flat cells.
pub fn horn_oracle(grid: &RasterGrid) -> Vec<Option<(f64, Option<f64>)>> {
    let (w, h) = (grid.width() as isize, grid.height() as isize);
    let ps = grid.geometry().pixel_size;
    let at = |r: isize, c: isize| valid(grid.get(r.clamp(0, h - 1) as usize, c.clamp(0, w - 1) as usize));
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let cells = [
                at(r - 1, c - 1),
                at(r - 1, c),
                at(r - 1, c + 1),
                at(r, c - 1),
                at(r, c + 1),
                at(r + 1, c - 1),
                at(r + 1, c),
                at(r + 1, c + 1),
            ];
            if cells.iter().any(Option::is_none) || at(r, c).is_none() {
                out.push(None);
                continue;
            }
            let [a, b, cc, d, f, g, hh, i] = cells.map(Option::unwrap);
            let dzdx = ((cc + 2.0 * f + i) - (a + 2.0 * d + g)) / (8.0 * ps);
            // rows grow southward
            let dzds = ((g + 2.0 * hh + i) - (a + 2.0 * b + cc)) / (8.0 * ps);
            let slope = (dzdx * dzdx + dzds * dzds).sqrt().atan().to_degrees();
            let aspect = if dzdx.hypot(dzds) < 1e-9 {
                None
            } else {
                // downslope = -gradient; in (east, north) that is (-dzdx, +dzds)
                Some((-dzdx).atan2(dzds).to_degrees().rem_euclid(360.0))
            };
            out.push(Some((slope, aspect)));
        }
    }
    out
}

/// Circular distance between two azimuths in degrees.
pub fn angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Moving-window GLCM dissimilarity with a dense co-occurrence matrix per
/// pixel. The window is clipped to the scene and both pixels of a pair must
/// lie inside it; grey levels are equal-width bins over the valid range.
pub fn glcm_oracle(grid: &RasterGrid, window: usize, levels: usize, offsets: &[(i32, i32)]) -> Vec<Option<f64>> {
    let (w, h) = (grid.width() as i64, grid.height() as i64);
    let vals: Vec<Option<f64>> = grid.values().iter().map(|&v| valid(v)).collect();
    let lo = vals.iter().flatten().cloned().fold(f64::INFINITY, f64::min);
    let hi = vals.iter().flatten().cloned().fold(f64::NEG_INFINITY, f64::max);
    let level = |v: f64| -> usize {
        let t = (v - lo) / (hi - lo) * levels as f64;
        (t.floor() as i64).clamp(0, levels as i64 - 1) as usize
    };
    let q: Vec<Option<usize>> = vals.iter().map(|v| v.map(level)).collect();
    let half = (window / 2) as i64;
    let mut out = Vec::new();
    for r in 0..h {
        for c in 0..w {
            if q[(r * w + c) as usize].is_none() {
                out.push(None);
                continue;
            }
            let inside = |y: i64, x: i64| (y - r).abs() <= half && (x - c).abs() <= half && y >= 0 && y < h && x >= 0 && x < w;
            let mut p = vec![vec![0.0f64; levels]; levels];
            for &(dy, dx) in offsets {
                for y in r - half..=r + half {
                    for x in c - half..=c + half {
                        let (y2, x2) = (y + dy as i64, x + dx as i64);
                        if !inside(y, x) || !inside(y2, x2) {
                            continue;
                        }
                        if let (Some(a), Some(b)) = (q[(y * w + x) as usize], q[(y2 * w + x2) as usize]) {
                            p[a][b] += 1.0;
                            p[b][a] += 1.0;
                        }
                    }
                }
            }
            let total: f64 = p.iter().flatten().sum();
            let mut d = 0.0;
            if total > 0.0 {
                for (i, row) in p.iter().enumerate() {
                    for (j, &n) in row.iter().enumerate() {
                        d += n / total * (i as f64 - j as f64).abs();
                    }
                }
            }
            out.push(Some(d));
        }
    }
    out
}

/// Cyclic Jacobi eigen-decomposition of a symmetric matrix. Returns
/// eigenvalues and unit eigenvectors (as rows), sorted by decreasing value.
pub fn jacobi_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j] * a[i][j]).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[j][j].total_cmp(&a[i][i]));
    let values = order.iter().map(|&i| a[i][i]).collect();
    let vectors = order.iter().map(|&i| (0..n).map(|k| v[k][i]).collect()).collect();
    (values, vectors)
}

/// Sample mean and covariance (n − 1) over pixels valid in every band.
pub fn covariance_oracle(stack: &BandStack) -> (Vec<f64>, Vec<Vec<f64>>) {
    let nb = stack.len();
    let rows: Vec<Vec<f64>> = (0..stack.geometry().len())
        .filter_map(|i| stack.bands().iter().map(|b| valid(b.grid.values()[i])).collect::<Option<Vec<f64>>>())
        .collect();
    let n = rows.len() as f64;
    let mean: Vec<f64> = (0..nb).map(|k| rows.iter().map(|r| r[k]).sum::<f64>() / n).collect();
    let cov = (0..nb)
        .map(|a| {
            (0..nb)
                .map(|b| rows.iter().map(|r| (r[a] - mean[a]) * (r[b] - mean[b])).sum::<f64>() / (n - 1.0))
                .collect()
        })
        .collect();
    (mean, cov)
}

/// Per-class IoU / precision / recall as exact fractions, `None` for 0/0.
pub struct ExactMetrics {
    pub iou: Vec<Option<Ratio<i128>>>,
    pub precision: Vec<Option<Ratio<i128>>>,
    pub recall: Vec<Option<Ratio<i128>>>,
    pub accuracy: Ratio<i128>,
}

pub fn exact_metrics(k: usize, counts: &[u64]) -> ExactMetrics {
    let at = |t: usize, p: usize| counts[t * k + p] as i128;
    let frac = |n: i128, d: i128| (d != 0).then(|| Ratio::new(n, d));
    let mut m = ExactMetrics {
        iou: vec![],
        precision: vec![],
        recall: vec![],
        accuracy: Ratio::from_integer(0),
    };
    for c in 0..k {
        let tp = at(c, c);
        let fp: i128 = (0..k).filter(|&t| t != c).map(|t| at(t, c)).sum();
        let fn_: i128 = (0..k).filter(|&p| p != c).map(|p| at(c, p)).sum();
        m.iou.push(frac(tp, tp + fp + fn_));
        m.precision.push(frac(tp, tp + fp));
        m.recall.push(frac(tp, tp + fn_));
    }
    let total: i128 = counts.iter().map(|&n| n as i128).sum();
    let trace: i128 = (0..k).map(|c| at(c, c)).sum();
    m.accuracy = Ratio::new(trace, total.max(1));
    m
}

pub fn exact_mean(v: &[Option<Ratio<i128>>]) -> Option<Ratio<i128>> {
    let defined: Vec<_> = v.iter().flatten().collect();
    if defined.is_empty() {
        return None;
    }
    let sum = defined.iter().fold(Ratio::from_integer(0), |acc, &&x| acc + x);
    Some(sum / Ratio::from_integer(defined.len() as i128))
}

pub fn to_f64(r: Ratio<i128>) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// Differences between library metrics and the exact oracle, worst case.
pub fn metrics_error(k: usize, counts: &[u64]) -> f64 {
    use cryostack::train::{metrics, ConfusionMatrix};
    let cm = ConfusionMatrix::from_counts(k, counts.to_vec()).unwrap();
    let got = metrics(&cm);
    let want = exact_metrics(k, counts);
    let cmp = |a: Option<f64>, b: Option<Ratio<i128>>| match (a, b) {
        (None, None) => 0.0,
        (Some(x), Some(y)) => (x - to_f64(y)).abs(),
        _ => f64::INFINITY,
    };
    let mut err = 0.0f64;
    for c in 0..k {
        let pc = &got.per_class[c];
        err = err
            .max(cmp(pc.iou, want.iou[c]))
            .max(cmp(pc.precision, want.precision[c]))
            .max(cmp(pc.recall, want.recall[c]));
    }
    let nan_none = |x: f64| (!x.is_nan()).then_some(x);
    err = err
        .max(cmp(nan_none(got.mean_iou), exact_mean(&want.iou)))
        .max(cmp(nan_none(got.mean_precision), exact_mean(&want.precision)))
        .max(cmp(nan_none(got.mean_recall), exact_mean(&want.recall)))
        .max((got.accuracy - to_f64(want.accuracy)).abs());
    err
}

/// Random confusion counts; some rows and columns are zeroed out so that
/// undefined ratios occur.
pub fn random_counts(rng: &mut ChaCha8Rng, k: usize) -> Vec<u64> {
    let mut counts: Vec<u64> = (0..k * k).map(|_| if rng.gen_bool(0.3) { 0 } else { rng.gen_range(0..5000) }).collect();
    counts[0] += 1;
    if rng.gen_bool(0.3) {
        let c = rng.gen_range(1..k);
        for j in 0..k {
            counts[c * k + j] = 0;
            counts[j * k + c] = 0;
        }
    }
    counts
}

/// Tiles a random scene, merges the untouched patches back and reports the
/// worst reconstruction error. Also merges random per-patch softmax maps and
/// reports the worst deviation from the simplex.
pub fn stitch_errors(seed: u64, h: usize, w: usize, patch: usize, stride: usize) -> (f64, f64) {
    use cryostack::dataset::{merge_patches, HannWindow, PatchGrid};
    let mut r = rng(seed);
    let channels = 3;
    let mut s = BandStack::new(geometry(w, h, 10.0), ND).unwrap();
    for b in 0..channels {
        s.push(format!("b{b}"), None, random_grid(&mut r, w, h, -50.0, 50.0, 0.0)).unwrap();
    }
    let grid = PatchGrid::new(h, w, patch, stride).unwrap();
    let window = HannWindow::new(patch).unwrap();
    let images = grid.extract_images(&s);
    let pairs: Vec<(&[f32], (usize, usize))> = images.iter().map(Vec::as_slice).zip(grid.offsets.iter().copied()).collect();
    let merged = merge_patches(&pairs, channels, (h, w), &window).unwrap();
    let mut recon = 0.0f64;
    for (b, band) in s.bands().iter().enumerate() {
        for (i, &v) in band.grid.values().iter().enumerate() {
            recon = recon.max((merged[b * h * w + i] as f64 - v as f64).abs());
        }
    }

    let k = 5;
    let plane = patch * patch;
    let probs: Vec<Vec<f32>> = grid
        .offsets
        .iter()
        .map(|_| {
            let logits: Vec<f64> = (0..k * plane).map(|_| r.gen_range(-4.0..4.0)).collect();
            let mut p = vec![0.0f32; k * plane];
            for q in 0..plane {
                let m = (0..k).map(|c| logits[c * plane + q]).fold(f64::NEG_INFINITY, f64::max);
                let z: f64 = (0..k).map(|c| (logits[c * plane + q] - m).exp()).sum();
                for c in 0..k {
                    p[c * plane + q] = ((logits[c * plane + q] - m).exp() / z) as f32;
                }
            }
            p
        })
        .collect();
    let pairs: Vec<(&[f32], (usize, usize))> = probs.iter().map(Vec::as_slice).zip(grid.offsets.iter().copied()).collect();
    let merged = merge_patches(&pairs, k, (h, w), &window).unwrap();
    let mut simplex = 0.0f64;
    for q in 0..h * w {
        let col: Vec<f64> = (0..k).map(|c| merged[c * h * w + q] as f64).collect();
        simplex = simplex.max((col.iter().sum::<f64>() - 1.0).abs());
        simplex = simplex.max(col.iter().map(|&p| (-p).max(0.0)).fold(0.0, f64::max));
    }
    (recon, simplex)
}
