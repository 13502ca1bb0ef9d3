mod common;

use common::*;
use cryostack::dataset::{PatchSet, Split};
use cryostack::labels::{LabelMask, IGNORE, NUM_CLASSES};
use cryostack::nn::{Checkpoint, CryoNet, ModelConfig, ParamStore, Tensor, TrainingInfo};
use cryostack::pipeline::{make_patchset, PatchConfig};
use cryostack::raster::{BandStack, GridGeometry};
use cryostack::synth::{synth_scene, SynthConfig};
use cryostack::train::*;
use cryostack::Error;
use proptest::prelude::*;
use rand::Rng;

fn naive_ce(z: &[f64], n: usize, k: usize, hw: usize, t: &[u8], w: &[f64]) -> f64 {
    let mut total = 0.0;
    let mut m = 0usize;
    for s in 0..n {
        for p in 0..hw {
            let y = t[s * hw + p];
            if y == IGNORE {
                continue;
            }
            let logit = |c: usize| z[(s * k + c) * hw + p];
            let denom: f64 = (0..k).map(|c| logit(c).exp()).sum();
            total += w[y as usize] * -(logit(y as usize).exp() / denom).ln();
            m += 1;
        }
    }
    total / m as f64
}

#[test]
fn weighted_loss_matches_oracle_and_differences() {
    for seed in 0..5 {
        let mut r = rng(seed);
        let (n, k, h, w) = (2, 5, 3, 4);
        let hw = h * w;
        let z: Vec<f64> = (0..n * k * hw).map(|_| r.gen_range(-3.0..3.0)).collect();
        let t: Vec<u8> = (0..n * hw)
            .map(|_| if r.gen_bool(0.2) { IGNORE } else { r.gen_range(0..k as u8) })
            .collect();
        let wts: Vec<f64> = (0..k).map(|_| r.gen_range(0.2..3.0)).collect();
        let logits = Tensor::new(&[n, k, h, w], z.clone()).unwrap();
        let out = weighted_ce_loss(&logits, &t, &wts).unwrap();
        assert!((out.loss - naive_ce(&z, n, k, hw, &t, &wts)).abs() < 1e-12);
        assert_eq!(out.pixels, t.iter().filter(|&&y| y != IGNORE).count());
        let eps = 1e-6;
        for i in 0..z.len() {
            let mut zp = z.clone();
            zp[i] += eps;
            let mut zm = z.clone();
            zm[i] -= eps;
            let fd = (naive_ce(&zp, n, k, hw, &t, &wts) - naive_ce(&zm, n, k, hw, &t, &wts)) / (2.0 * eps);
            assert!((fd - out.grad.data()[i]).abs() < 1e-7, "seed {seed} entry {i}");
        }
    }
}

#[test]
fn loss_rejects_bad_inputs() {
    let logits = Tensor::new(&[1, 2, 1, 2], vec![0.0f64; 4]).unwrap();
    assert!(matches!(weighted_ce_loss(&logits, &[IGNORE, IGNORE], &[1.0, 1.0]), Err(Error::EmptyLoss)));
    assert!(weighted_ce_loss(&logits, &[0, 2], &[1.0, 1.0]).is_err());
    assert!(weighted_ce_loss(&logits, &[0], &[1.0, 1.0]).is_err());
    assert!(weighted_ce_loss(&logits, &[0, 1], &[1.0]).is_err());
}

fn scalar_store(v: f64) -> ParamStore<f64> {
    let mut s = ParamStore::new();
    s.insert("x", Tensor::new(&[1], vec![v]).unwrap(), true).unwrap();
    s
}

fn grad(g: f64) -> Vec<Option<Tensor<f64>>> {
    vec![Some(Tensor::new(&[1], vec![g]).unwrap())]
}

#[test]
fn adam_matches_scalar_recurrence() {
    for mode in [DecayMode::Decoupled, DecayMode::L2] {
        let cfg = AdamConfig {
            learning_rate: 0.01,
            weight_decay: 0.05,
            decay_mode: mode,
            ..AdamConfig::default()
        };
        let mut store = scalar_store(0.7);
        let mut opt = Adam::<f64>::new(cfg.clone()).unwrap();
        let (mut x, mut m, mut v) = (0.7f64, 0.0f64, 0.0f64);
        let mut r = rng(4);
        for t in 1..=10 {
            let g0 = r.gen_range(-1.0..1.0);
            opt.step(&mut store, &grad(g0)).unwrap();
            let g = if mode == DecayMode::L2 { g0 + cfg.weight_decay * x } else { g0 };
            if mode == DecayMode::Decoupled {
                x *= 1.0 - cfg.learning_rate * cfg.weight_decay;
            }
            m = cfg.beta1 * m + (1.0 - cfg.beta1) * g;
            v = cfg.beta2 * v + (1.0 - cfg.beta2) * g * g;
            let mh = m / (1.0 - cfg.beta1.powi(t));
            let vh = v / (1.0 - cfg.beta2.powi(t));
            x -= cfg.learning_rate * mh / (vh.sqrt() + cfg.eps);
            assert!((store.get("x").unwrap().data()[0] - x).abs() < 1e-7, "{mode:?} step {t}");
        }
        assert_eq!(opt.steps(), 10);
    }
}

#[test]
fn adam_edge_cases() {
    let zero_lr = AdamConfig {
        learning_rate: 0.0,
        ..AdamConfig::default()
    };
    let mut store = scalar_store(1.25);
    let mut opt = Adam::<f64>::new(zero_lr).unwrap();
    for _ in 0..5 {
        opt.step(&mut store, &grad(3.0)).unwrap();
    }
    assert_eq!(store.get("x").unwrap().data()[0], 1.25);

    let no_decay = AdamConfig {
        weight_decay: 0.0,
        ..AdamConfig::default()
    };
    let mut store = scalar_store(1.0);
    let mut opt = Adam::<f64>::new(no_decay.clone()).unwrap();
    opt.step(&mut store, &[None]).unwrap();
    assert_eq!(store.get("x").unwrap().data()[0], 1.0);
    for g in [1e-3, 5.0, -200.0] {
        let mut store = scalar_store(1.0);
        let mut opt = Adam::<f64>::new(no_decay.clone()).unwrap();
        opt.step(&mut store, &grad(g)).unwrap();
        let step = (store.get("x").unwrap().data()[0] - 1.0).abs();
        assert!(step <= no_decay.learning_rate * (1.0 + 1e-9));
    }

    let mut opt = Adam::<f64>::new(AdamConfig::default()).unwrap();
    assert!(matches!(opt.step(&mut scalar_store(1.0), &grad(f64::NAN)), Err(Error::NonFiniteGradient(_))));
    assert!(Adam::<f64>::new(AdamConfig {
        beta1: 1.0,
        ..AdamConfig::default()
    })
    .is_err());
}

#[test]
fn confusion_matches_loop_oracle() {
    let mut r = rng(8);
    let g = GridGeometry::unit(30, 20);
    let truth: Vec<u8> = (0..600).map(|_| if r.gen_bool(0.1) { IGNORE } else { r.gen_range(0..5) }).collect();
    let pred: Vec<u8> = (0..600).map(|_| r.gen_range(0..5)).collect();
    let cm = confusion(&LabelMask::new(g, pred.clone()).unwrap(), &LabelMask::new(g, truth.clone()).unwrap(), 5).unwrap();
    for t in 0..5 {
        for p in 0..5 {
            let n = truth.iter().zip(&pred).filter(|&(&a, &b)| a as usize == t && b as usize == p).count();
            assert_eq!(cm.get(t, p), n as u64);
        }
    }
    assert_eq!(cm.total(), truth.iter().filter(|&&t| t != IGNORE).count() as u64);
    let other = LabelMask::new(GridGeometry::unit(20, 30), pred).unwrap();
    assert!(confusion(&other, &LabelMask::new(g, truth).unwrap(), 5).is_err());
}

#[test]
fn metrics_match_exact_fractions() {
    let mut r = rng(21);
    for _ in 0..100 {
        let counts = random_counts(&mut r, 5);
        assert!(metrics_error(5, &counts) < 1e-12, "{counts:?}");
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn perfect_prediction_scores_one(labels in proptest::collection::vec(0u8..5, 1..200)) {
        let g = GridGeometry::unit(labels.len(), 1);
        let m = LabelMask::new(g, labels).unwrap();
        let out = metrics(&confusion(&m, &m, 5).unwrap());
        prop_assert_eq!(out.mean_iou, 1.0);
        prop_assert_eq!(out.accuracy, 1.0);
        prop_assert_eq!(out.mean_precision, 1.0);
        prop_assert_eq!(out.mean_recall, 1.0);
    }

    #[test]
    fn argmax_prefers_lowest_on_ties(k in 2usize..6, pixels in 1usize..20) {
        let probs = vec![0.5f32; k * pixels];
        prop_assert!(argmax_classes(&probs, k, pixels).iter().all(|&c| c == 0));
    }
}

#[test]
fn metrics_csv_marks_undefined_cells() {
    let cm = ConfusionMatrix::from_counts(3, vec![4, 1, 0, 2, 3, 0, 0, 0, 0]).unwrap();
    let m = metrics(&cm);
    assert_eq!(m.excluded, vec![2]);
    let csv = m.to_csv();
    let row2 = csv.lines().nth(3).unwrap();
    assert!(row2.starts_with("2,") && row2.contains("NA,NA,NA"), "{row2}");
    assert!(csv.lines().any(|l| l.starts_with("mean,,")));
    assert!(!csv.contains("NaN"));
}

fn small_set(seed: u64, width: usize) -> PatchSet {
    let scene = synth_scene(&SynthConfig {
        width,
        height: width,
        bands: 6,
        seed,
        ..SynthConfig::default()
    })
    .unwrap();
    let cfg = PatchConfig {
        patch_size: 16,
        stride: Some(16),
        train_fraction: 0.5,
        seed,
    };
    make_patchset(&scene.stack, &scene.labels, &cfg, None).unwrap()
}

fn tiny(channels: usize) -> ModelConfig {
    ModelConfig {
        in_channels: channels,
        ..ModelConfig::tiny()
    }
}

#[test]
fn permutation_moves_whole_planes() {
    let set = small_set(1, 64);
    let test = set.indices(Split::Test);
    let n = test.len();
    let perm: Vec<usize> = (0..n).map(|i| (i + 1) % n).collect();
    let out = permute_band_with(&set, 2, &perm).unwrap();
    let plane = 16 * 16;
    let band = |s: &PatchSet, i: usize, b: usize| s.patches[i].image[b * plane..(b + 1) * plane].to_vec();
    for (i, &src) in test.iter().enumerate() {
        assert_eq!(band(&out, test[perm[i]], 2), band(&set, src, 2));
        for b in [0, 1, 3, 4, 5] {
            assert_eq!(band(&out, src, b), band(&set, src, b));
        }
        assert_eq!(out.patches[src].labels, set.patches[src].labels);
    }
    for i in set.indices(Split::Train) {
        assert_eq!(out.patches[i], set.patches[i]);
    }
    let identity: Vec<usize> = (0..n).collect();
    assert_eq!(permute_band_with(&set, 2, &identity).unwrap(), set);
    let mut dup = identity.clone();
    dup[0] = 1;
    assert!(matches!(permute_band_with(&set, 2, &dup), Err(Error::Permutation(_))));
    assert!(permute_band_with(&set, 6, &identity).is_err());

    let seeded = permute_band(&set, 3, 5).unwrap();
    let mut before: Vec<Vec<u32>> = test.iter().map(|&i| band(&set, i, 3).iter().map(|v| v.to_bits()).collect()).collect();
    let mut after: Vec<Vec<u32>> = test.iter().map(|&i| band(&seeded, i, 3).iter().map(|v| v.to_bits()).collect()).collect();
    before.sort();
    after.sort();
    assert_eq!(before, after);
    assert_eq!(seeded, permute_band(&set, 3, 5).unwrap());
}

#[test]
fn constant_band_has_zero_importance() {
    let mut set = small_set(2, 64);
    let plane = 16 * 16;
    for p in &mut set.patches {
        p.image[4 * plane..5 * plane].fill(0.25);
    }
    let net = CryoNet::new(tiny(6), 3).unwrap();
    let report = channel_importance(&net, &set, 1, 2).unwrap();
    let b4 = report.bands.iter().find(|b| b.band == 4).unwrap();
    assert_eq!(b4.delta_miou, 0.0);
    assert_eq!(b4.delta_accuracy, 0.0);
    assert_eq!(report.bands.len(), 6);
    assert!(report.bands.windows(2).all(|w| w[0].delta_miou >= w[1].delta_miou));
    assert_eq!(report.to_csv().lines().count(), 7);
    assert!(channel_importance(&net, &set, 1, 0).is_err());
}

fn zero_head_checkpoint(stack: &BandStack) -> Checkpoint {
    let mut net = CryoNet::new(tiny(stack.len()), 0).unwrap();
    for name in ["head.weight", "head.bias"] {
        net.params.get_mut(name).unwrap().data_mut().fill(0.0);
    }
    let names = stack.bands().iter().map(|b| b.name.clone()).collect();
    Checkpoint::new(net, names, None, TrainingInfo::default()).unwrap()
}

#[test]
fn uniform_logits_predict_first_class() {
    let scene = synth_scene(&SynthConfig {
        width: 40,
        height: 28,
        bands: 4,
        ..SynthConfig::default()
    })
    .unwrap();
    let ckpt = zero_head_checkpoint(&scene.stack);
    let pred = predict_scene(&ckpt, &scene.stack, 16, 8).unwrap();
    assert!(pred.labels.classes().iter().all(|&c| c == 0));
    assert_eq!(pred.probabilities.len(), NUM_CLASSES);
    for band in pred.probabilities.bands() {
        assert!(band.grid.values().iter().all(|&p| (p - 0.2).abs() < 1e-6));
    }
    let fewer = scene.stack.select(&["Blue".to_string(), "Green".to_string()]).unwrap();
    assert!(matches!(predict_scene(&ckpt, &fewer, 16, 8), Err(Error::Registry(_))));
}

#[test]
fn tiled_map_reassembles_channel_maps() {
    let mut r = rng(6);
    let mut stack = BandStack::new(geometry(37, 29, 10.0), ND).unwrap();
    for b in 0..2 {
        stack.push(format!("b{b}"), None, random_grid(&mut r, 37, 29, -1.0, 1.0, 0.0)).unwrap();
    }
    let out = tiled_map(&stack, 16, 8, 2, 3, Ok).unwrap();
    for (b, band) in stack.bands().iter().enumerate() {
        let got = &out[b * 37 * 29..(b + 1) * 37 * 29];
        for (a, w) in got.iter().zip(band.grid.values()) {
            assert!((a - w).abs() < 1e-6);
        }
    }
    assert!(tiled_map(&stack, 16, 8, 3, 3, Ok).is_err());
}

#[test]
fn training_is_seeded_and_lowers_loss() {
    let set = small_set(3, 64);
    let cfg = TrainConfig {
        epochs: 6,
        batch_size: 4,
        learning_rate: 3e-3,
        seed: 9,
        ..TrainConfig::default()
    };
    let a = train(&tiny(6), &set, &cfg).unwrap();
    let b = train(&tiny(6), &set, &cfg).unwrap();
    assert_eq!(a.best.encode().unwrap(), b.best.encode().unwrap());
    assert_eq!(history_csv(&a.history), history_csv(&b.history));
    assert_eq!(a.history.len(), 6);
    assert!(a.history.last().unwrap().loss < a.history[0].loss);
    let best = a.history.iter().map(|h| h.test_miou).fold(f64::MIN, f64::max);
    assert_eq!(a.best.info.test_miou, Some(best));
    assert!(train(&tiny(5), &set, &cfg).is_err());
}

#[test]
fn fine_tune_continues_from_checkpoint() {
    let set = small_set(4, 64);
    let cfg = TrainConfig {
        epochs: 1,
        batch_size: 4,
        seed: 1,
        ..TrainConfig::default()
    };
    let out = train(&tiny(6), &set, &cfg).unwrap();
    let same = fine_tune(&out.last, &set, 0, &cfg).unwrap();
    assert_eq!(same.checkpoint, out.last);
    let ft = fine_tune(&out.last, &set, 5, &cfg).unwrap();
    assert_eq!(ft.losses.len(), 5);
    assert_eq!(ft.checkpoint.info.step, out.last.info.step + 5);
    assert_ne!(ft.checkpoint.model.params, out.last.model.params);

    let mut renamed = set.clone();
    renamed.band_names[0] = "other".into();
    assert!(fine_tune(&out.last, &renamed, 5, &cfg).is_err());
}
