mod common;

use common::*;
use cryostack::dataset::*;
use cryostack::labels::{LabelMask, IGNORE, NUM_CLASSES};
use cryostack::raster::{BandStack, RasterGrid};
use proptest::prelude::*;
use rand::Rng;

fn scene(seed: u64, w: usize, h: usize) -> (BandStack, LabelMask) {
    let mut r = rng(seed);
    let mut s = BandStack::new(geometry(w, h, 10.0), ND).unwrap();
    for b in 0..2 {
        s.push(format!("b{b}"), None, random_grid(&mut r, w, h, 0.0, 1.0, 0.02)).unwrap();
    }
    let labels = (0..w * h).map(|_| r.gen_range(0..NUM_CLASSES as u8)).collect();
    (s, LabelMask::new(geometry(w, h, 10.0), labels).unwrap())
}

#[test]
fn stitching_is_exact_for_standard_strides() {
    for (seed, (h, w)) in [(40, 40), (37, 53), (16, 16), (70, 33)].into_iter().enumerate() {
        for stride in [16, 8, 4] {
            let (recon, simplex) = stitch_errors(seed as u64, h, w, 16, stride);
            assert!(recon < 1e-6, "{h}x{w} stride {stride}: {recon}");
            assert!(simplex < 1e-6, "{h}x{w} stride {stride}: {simplex}");
        }
    }
}

#[test]
fn small_scenes_are_reflection_padded() {
    let (recon, simplex) = stitch_errors(5, 10, 12, 16, 8);
    assert!(recon < 1e-6 && simplex < 1e-6);
    assert!(PatchGrid::new(5, 20, 16, 8).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn merge_of_patchify_is_identity(seed in 0u64..1000, h in 9usize..60, w in 9usize..60, div in 0usize..3) {
        let patch = 8;
        let stride = patch >> div;
        let (recon, simplex) = stitch_errors(seed, h, w, patch, stride);
        prop_assert!(recon < 1e-6);
        prop_assert!(simplex < 1e-6);
    }

    #[test]
    fn offsets_cover_every_pixel(dim in 1usize..200, patch in 1usize..40, stride_frac in 1usize..5) {
        let stride = (patch / stride_frac).max(1);
        let offs = axis_offsets(dim, patch, stride);
        prop_assert_eq!(offs[0], 0);
        prop_assert!(offs.windows(2).all(|p| p[0] < p[1] && p[1] - p[0] <= stride));
        let end = *offs.last().unwrap() + patch;
        prop_assert!(end >= dim);
        if dim >= patch {
            prop_assert_eq!(end, dim);
        }
    }

    #[test]
    fn split_partitions_patches(seed in 0u64..1000, frac in 0.05f64..0.95) {
        let (s, l) = scene(seed, 24, 24);
        let set = split(patchify(&s, &l, 8, 8, 0).unwrap(), frac, seed).unwrap();
        let (tr, te) = (set.count(Split::Train), set.count(Split::Test));
        prop_assert_eq!(tr + te, set.patches.len());
        prop_assert!(tr >= 1 && te >= 1);
        prop_assert_eq!(tr, ((set.patches.len() as f64 * frac).round() as usize).clamp(1, set.patches.len() - 1));
    }

    #[test]
    fn class_weights_are_positive_where_present(counts in proptest::collection::vec(0u64..10_000, NUM_CLASSES)) {
        let w = weights_from_counts(&counts);
        prop_assert_eq!(w.len(), NUM_CLASSES);
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                prop_assert!(w.weights[c] > 0.0 && w.weights[c].is_finite());
            }
        }
    }
}

#[test]
fn hann_window_shape() {
    let w = hann_window(16).unwrap();
    assert_eq!(w.len(), 256);
    assert!(w.iter().all(|&v| (HANN_FLOOR * HANN_FLOOR..=1.0).contains(&v)));
    assert!(HannWindow::new(1).is_err());
}

#[test]
fn nodata_pixels_become_ignore() {
    let (mut s, l) = scene(1, 8, 8);
    let mut bands = s.clone().into_bands();
    let mut vals = bands[1].grid.values().to_vec();
    vals[9] = ND;
    bands[1].grid = RasterGrid::new(*s.geometry(), ND, vals).unwrap();
    s = BandStack::from_bands(bands).unwrap();
    let set = patchify(&s, &l, 8, 8, 0).unwrap();
    assert_eq!(set.patches.len(), 1);
    assert_eq!(set.patches[0].labels[9], IGNORE);
    assert_eq!(set.patches[0].image[64 + 9], 0.0);
}

#[test]
fn patchset_store_round_trip() {
    let (s, l) = scene(2, 20, 17);
    let mut set = split(patchify(&s, &l, 8, 4, 0).unwrap(), 0.7, 11).unwrap();
    let (_, stats) = cryostack::raster::normalize_stack(&s, None).unwrap();
    set.norm_stats = Some(stats);
    let dir = tempfile::tempdir().unwrap();
    write_patchset(&set, dir.path()).unwrap();
    let back = read_patchset(dir.path()).unwrap();
    assert_eq!(back, set);
}

#[test]
fn split_is_seeded() {
    let (s, l) = scene(3, 32, 32);
    let base = patchify(&s, &l, 8, 8, 0).unwrap();
    let a = split(base.clone(), 0.5, 1).unwrap();
    let b = split(base.clone(), 0.5, 1).unwrap();
    let c = split(base, 0.5, 2).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.indices(Split::Test), c.indices(Split::Test));
}
