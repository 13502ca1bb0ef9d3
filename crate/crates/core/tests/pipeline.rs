mod common;

use std::path::Path;

use common::*;
use cryostack::features::PcaModel;
use cryostack::nn::ModelConfig;
use cryostack::pipeline::*;
use cryostack::raster::io::encode_u8_band;
use cryostack::raster::{normalize_stack, read_stack, write_stack, BandRole, BandStack};
use cryostack::synth::SynthConfig;
use cryostack::train::TrainConfig;
use cryostack::Error;

fn input_stack(seed: u64, w: usize, h: usize) -> BandStack {
    let mut r = rng(seed);
    let mut s = BandStack::new(geometry(w, h, 10.0), ND).unwrap();
    for role in INPUT_ROLES {
        let (lo, hi) = match role {
            BandRole::Elevation => (3000.0, 3400.0),
            r if BandRole::OPTICAL.contains(&r) => (0.01, 0.6),
            _ => (-1.0, 1.0),
        };
        s.push(role.name(), Some(role), random_grid(&mut r, w, h, lo, hi, 0.0)).unwrap();
    }
    s
}

fn nd_band(stack: &BandStack, a: BandRole, b: BandRole) -> Vec<Option<f64>> {
    let (ga, gb) = (stack.by_role(a).unwrap().values(), stack.by_role(b).unwrap().values());
    ga.iter().zip(gb).map(|(&x, &y)| nd_oracle(x, y)).collect()
}

fn assert_band(got: &[f32], want: &[Option<f64>]) {
    for (g, w) in got.iter().zip(want) {
        match w {
            Some(w) => assert!((*g as f64 - w).abs() < 1e-6),
            None => assert_eq!(*g, ND),
        }
    }
}

#[test]
fn feature_stack_is_in_registry_order() {
    let input = input_stack(1, 24, 20);
    let out = build_feature_stack(&input, &FeatureConfig::default()).unwrap();
    let roles: Vec<_> = out.bands().iter().map(|b| b.role.unwrap()).collect();
    assert_eq!(roles, BandRole::ALL.to_vec());
    assert_eq!(out.by_role(BandRole::Nir).unwrap(), input.by_role(BandRole::Nir).unwrap());
    assert_band(out.by_role(BandRole::Ndsi).unwrap().values(), &nd_band(&input, BandRole::Green, BandRole::Swir1));
    assert_band(out.by_role(BandRole::Ndvi).unwrap().values(), &nd_band(&input, BandRole::Nir, BandRole::Red));
}

#[test]
fn snow_index_band_is_configurable() {
    let input = input_stack(2, 16, 16);
    let cfg = FeatureConfig {
        ndsi_swir: BandRole::Swir2,
        ..FeatureConfig::default()
    };
    let out = build_feature_stack(&input, &cfg).unwrap();
    assert_band(out.by_role(BandRole::Ndsi).unwrap().values(), &nd_band(&input, BandRole::Green, BandRole::Swir2));
}

#[test]
fn standardized_pca_fits_normalized_optical_bands() {
    let input = input_stack(3, 20, 18);
    let names: Vec<String> = BandRole::OPTICAL.iter().map(|r| r.name().to_string()).collect();
    let optical = input.select(&names).unwrap();
    let normalized = normalize_stack(&optical, None).unwrap().0;
    let want = PcaModel::fit(&normalized, 3).unwrap().transform(&normalized).unwrap();
    let cfg = FeatureConfig {
        pca_standardize: true,
        ..FeatureConfig::default()
    };
    let out = build_feature_stack(&input, &cfg).unwrap();
    let raw = build_feature_stack(&input, &FeatureConfig::default()).unwrap();
    for (i, role) in [BandRole::Pca1, BandRole::Pca2, BandRole::Pca3].into_iter().enumerate() {
        assert_eq!(out.by_role(role).unwrap().values(), want.band(i).grid.values());
    }
    assert_ne!(out.by_role(BandRole::Pca1).unwrap(), raw.by_role(BandRole::Pca1).unwrap());
}

#[test]
fn missing_input_roles_are_listed() {
    let input = input_stack(4, 12, 12);
    let keep: Vec<String> = input.bands().iter().filter(|b| b.name != "Velocity").map(|b| b.name.clone()).collect();
    let err = build_feature_stack(&input.select(&keep).unwrap(), &FeatureConfig::default()).unwrap_err();
    assert!(matches!(&err, Error::RoleNotFound(m) if m.contains("Velocity")), "{err}");
}

fn write_mask(path: &Path, stack: &BandStack, f: impl Fn(usize) -> bool) {
    let g = stack.geometry();
    let v: Vec<u8> = (0..g.len()).map(|i| f(i) as u8).collect();
    std::fs::write(path, encode_u8_band(g, stack.nodata(), "mask", &v).unwrap()).unwrap();
}

#[test]
fn build_and_label_stages() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let input = input_stack(5, 16, 12);
    write_stack(&input, d.join("input.cryo")).unwrap();
    let stack = build_stack_stage(&d.join("input.cryo"), &FeatureConfig::default(), &d.join("out")).unwrap();
    assert_eq!(read_stack(&stack).unwrap().len(), 30);
    write_mask(&d.join("glacier.cryo"), &input, |i| i % 2 == 0);
    write_mask(&d.join("debris.cryo"), &input, |i| i % 4 == 0);
    let counts = make_labels_stage(&stack, &d.join("glacier.cryo"), &d.join("debris.cryo"), &d.join("out")).unwrap();
    assert_eq!(counts.total(), 16 * 12);
    assert_eq!(counts.per_class[cryostack::labels::DEBRIS as usize], 48);
    assert_eq!(counts.per_class[cryostack::labels::CLEAN_ICE as usize], 48);
    assert!(d.join("out").join(LABELS_FILE).exists());
}

#[test]
fn stages_chain_through_files() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let synth = SynthConfig {
        width: 48,
        height: 48,
        bands: 5,
        ..SynthConfig::default()
    };
    synth_stage(&synth, d).unwrap();
    let patch = PatchConfig {
        patch_size: 16,
        stride: Some(16),
        train_fraction: 0.5,
        seed: 1,
    };
    let set = patchify_stage(&d.join(STACK_FILE), &d.join(LABELS_FILE), &patch, None, d).unwrap();
    assert_eq!(set.patches.len(), 9);
    let model = ModelConfig::tiny();
    let tc = TrainConfig {
        epochs: 2,
        batch_size: 4,
        ..TrainConfig::default()
    };
    train_stage(&d.join(PATCH_DIR), &model, &tc, &d.join("model")).unwrap();
    for f in [BEST_CKPT, LAST_CKPT, HISTORY_FILE] {
        assert!(d.join("model").join(f).exists(), "{f}");
    }
    let best = d.join("model").join(BEST_CKPT);
    fine_tune_stage(&best, &d.join(PATCH_DIR), 2, &tc, &d.join("ft").join("tuned.ckpt")).unwrap();
    let labels = predict_stage(&best, &d.join(STACK_FILE), 16, 8, &d.join("pred")).unwrap();
    assert_eq!(labels.classes().len(), 48 * 48);
    let m = evaluate_stage(&d.join("pred").join(PREDICTION_FILE), &d.join(LABELS_FILE), &d.join("eval")).unwrap();
    assert!((0.0..=1.0).contains(&m.accuracy));
    let confusion = std::fs::read_to_string(d.join("eval").join(CONFUSION_CSV)).unwrap();
    assert_eq!(confusion.lines().count(), 6);
    importance_stage(&best, &d.join(PATCH_DIR), 3, 1, &d.join("imp")).unwrap();
    let csv = std::fs::read_to_string(d.join("imp").join(IMPORTANCE_CSV)).unwrap();
    assert_eq!(csv.lines().count(), 6);

    // shifted data scaled with the checkpoint's statistics
    let again = patchify_stage(&d.join(STACK_FILE), &d.join(LABELS_FILE), &patch, Some(&best), &d.join("re")).unwrap();
    assert_eq!(again.norm_stats, set.norm_stats);
}

#[test]
fn missing_artifacts_name_the_producing_stage() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let msg = |e: Error| e.to_string();
    let e = train_stage(&d.join(PATCH_DIR), &ModelConfig::tiny(), &TrainConfig::default(), d).unwrap_err();
    assert!(msg(e).contains("cryostack patchify"));
    let e = predict_stage(&d.join(BEST_CKPT), &d.join(STACK_FILE), 16, 8, d).unwrap_err();
    assert!(msg(e).contains("cryostack train"));
    let e = evaluate_stage(&d.join(PREDICTION_FILE), &d.join(LABELS_FILE), d).unwrap_err();
    assert!(msg(e).contains("cryostack predict"));
    let e = patchify_stage(&d.join(STACK_FILE), &d.join(LABELS_FILE), &PatchConfig::default(), None, d).unwrap_err();
    assert!(msg(e).contains("cryostack build-stack"));
}

#[test]
fn default_stride_is_half_the_patch() {
    assert_eq!(PatchConfig::default().stride(), 16);
    let cfg: PatchConfig = serde_json::from_str(r#"{"patch_size": 64}"#).unwrap();
    assert_eq!(cfg.stride(), 32);
    assert!(serde_json::from_str::<PatchConfig>(r#"{"patch": 64}"#).is_err());
}
