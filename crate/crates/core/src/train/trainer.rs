use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{Adam, AdamConfig, DecayMode};
use super::loss::weighted_ce_loss;
use super::metrics::{metrics, ConfusionMatrix};
use crate::dataset::{PatchSet, Split};
use crate::error::{Error, Result};
use crate::labels::NUM_CLASSES;
use crate::nn::{cryonet_forward, Checkpoint, CryoNet, Graph, Mode, ModelConfig, Tensor, TrainingInfo};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WeightSource {
    /// Inverse class frequency over the training split.
    Inverse,
    Uniform,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub decay_mode: DecayMode,
    pub seed: u64,
    /// Stops training after this many optimizer steps.
    pub max_steps: Option<usize>,
    pub class_weights: WeightSource,
    pub bn_momentum: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let a = AdamConfig::default();
        Self {
            epochs: 100,
            batch_size: 16,
            learning_rate: a.learning_rate,
            weight_decay: a.weight_decay,
            beta1: a.beta1,
            beta2: a.beta2,
            eps: a.eps,
            decay_mode: a.decay_mode,
            seed: 0,
            max_steps: None,
            class_weights: WeightSource::Inverse,
            bn_momentum: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
            decay_mode: self.decay_mode,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.bn_momentum) {
            return Err(Error::Config("bn_momentum must be in [0, 1]".into()));
        }
        self.adam().validate()
    }

    fn weights(&self, set: &PatchSet) -> Vec<f64> {
        match self.class_weights {
            WeightSource::Uniform => vec![1.0; NUM_CLASSES],
            WeightSource::Inverse => set
                .class_weights
                .clone()
                .unwrap_or_else(|| set.training_weights())
                .weights,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub step: usize,
    /// Mean training-batch loss over the epoch.
    pub loss: f64,
    pub test_miou: f64,
    pub test_acc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Highest test mIoU seen at an epoch boundary.
    pub best: Checkpoint,
    pub last: Checkpoint,
    pub history: Vec<EpochRecord>,
}

/// `N×C×P×P` images and `N×P×P` labels for the given patches.
pub fn batch(set: &PatchSet, idx: &[usize]) -> Result<(Tensor<f32>, Vec<u8>)> {
    let p = set.patch_size;
    let images: Vec<&[f32]> = idx.iter().map(|&i| set.patches[i].image.as_slice()).collect();
    let x = Tensor::stack_samples(&images, (set.channels(), p, p))?;
    let labels = idx.iter().flat_map(|&i| set.patches[i].labels.iter().copied()).collect();
    Ok((x, labels))
}

/// One optimizer step on a batch; returns the batch loss.
pub fn train_step(
    net: &mut CryoNet,
    opt: &mut Adam<f32>,
    x: Tensor<f32>,
    labels: &[u8],
    weights: &[f64],
    bn_momentum: f64,
) -> Result<f64> {
    let (loss, grads, stats) = {
        let mut g = Graph::new(&net.params, Mode::Train);
        let xv = g.input(x);
        let logits = cryonet_forward(&mut g, &net.config, xv)?;
        let out = weighted_ce_loss(g.value(logits), labels, weights)?;
        if !out.loss.is_finite() {
            let at = g.first_non_finite().unwrap_or("loss").to_string();
            return Err(Error::Numerical(format!("non-finite value at {at}")));
        }
        let grads = g.backward(logits, out.grad)?;
        (out.loss, grads.into_params(), g.take_stat_updates())
    };
    opt.step(&mut net.params, &grads)?;
    net.params.apply_stat_updates(&stats, bn_momentum);
    Ok(loss)
}

/// Eval-mode class ids (lowest id wins ties) for each patch, in `idx` order.
pub fn predict_patch_labels(net: &CryoNet, set: &PatchSet, idx: &[usize], batch_size: usize) -> Result<Vec<Vec<u8>>> {
    let p = set.patch_size;
    let hw = p * p;
    let mut out = Vec::with_capacity(idx.len());
    for chunk in idx.chunks(batch_size.max(1)) {
        let (x, _) = batch(set, chunk)?;
        let logits = net.logits(x)?;
        let k = logits.shape()[1];
        let z = logits.data();
        for s in 0..chunk.len() {
            out.push(
                (0..hw)
                    .map(|q| {
                        let mut best = 0;
                        for c in 1..k {
                            if z[(s * k + c) * hw + q] > z[(s * k + best) * hw + q] {
                                best = c;
                            }
                        }
                        best as u8
                    })
                    .collect(),
            );
        }
    }
    Ok(out)
}

pub fn evaluate_indices(net: &CryoNet, set: &PatchSet, idx: &[usize]) -> Result<ConfusionMatrix> {
    let preds = predict_patch_labels(net, set, idx, 16)?;
    let mut cm = ConfusionMatrix::new(net.config.classes);
    for (&i, pred) in idx.iter().zip(&preds) {
        cm.add_slices(&set.patches[i].labels, pred)?;
    }
    Ok(cm)
}

pub fn evaluate_split(net: &CryoNet, set: &PatchSet, split: Split) -> Result<ConfusionMatrix> {
    evaluate_indices(net, set, &set.indices(split))
}

/// Eval-mode weighted loss over a split, averaged over its non-ignore pixels.
pub fn split_loss(net: &CryoNet, set: &PatchSet, split: Split, weights: &[f64]) -> Result<f64> {
    let idx = set.indices(split);
    let (mut total, mut pixels) = (0.0, 0usize);
    for chunk in idx.chunks(16) {
        let (x, labels) = batch(set, chunk)?;
        let logits = net.logits(x)?;
        match weighted_ce_loss(&logits, &labels, weights) {
            Ok(out) => {
                total += out.loss * out.pixels as f64;
                pixels += out.pixels;
            }
            Err(Error::EmptyLoss) => {}
            Err(e) => return Err(e),
        }
    }
    if pixels == 0 {
        return Err(Error::EmptyLoss);
    }
    Ok(total / pixels as f64)
}

fn check_model_matches(config: &ModelConfig, set: &PatchSet) -> Result<()> {
    if config.in_channels != set.channels() {
        return Err(Error::Registry(format!(
            "model takes {} channels, patch set has {}",
            config.in_channels,
            set.channels()
        )));
    }
    config.check_input(&[1, set.channels(), set.patch_size, set.patch_size])
}

/// Trains a freshly initialized network (seeded by `cfg.seed`).
pub fn train(config: &ModelConfig, set: &PatchSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    let net = CryoNet::new(config.clone(), cfg.seed)?;
    train_model(net, set, cfg)
}

pub fn train_model(mut net: CryoNet, set: &PatchSet, cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_model_matches(&net.config, set)?;
    let train_idx = set.indices(Split::Train);
    let test_idx = set.indices(Split::Test);
    if train_idx.is_empty() || test_idx.is_empty() {
        return Err(Error::Split(format!(
            "training needs train and test patches; have {} and {}",
            train_idx.len(),
            test_idx.len()
        )));
    }
    let weights = cfg.weights(set);
    let mut opt = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let checkpoint = |net: &CryoNet, info: TrainingInfo| {
        Checkpoint::new(net.clone(), set.band_names.clone(), set.norm_stats.clone(), info)
    };
    let mut best: Option<(f64, Checkpoint)> = None;
    let mut history = Vec::new();
    let mut step = 0usize;
    let cap = cfg.max_steps.unwrap_or(usize::MAX);

    for epoch in 1..=cfg.epochs {
        if step >= cap {
            break;
        }
        let mut order = train_idx.clone();
        order.shuffle(&mut rng);
        let (mut loss_sum, mut batches) = (0.0, 0usize);
        for chunk in order.chunks(cfg.batch_size) {
            if step >= cap {
                break;
            }
            let (x, labels) = batch(set, chunk)?;
            let loss = match train_step(&mut net, &mut opt, x, &labels, &weights, cfg.bn_momentum) {
                Ok(l) => l,
                Err(Error::EmptyLoss) => continue,
                Err(Error::Numerical(_)) => {
                    return Err(Error::Diverged {
                        epoch,
                        step,
                        loss: f64::NAN,
                    })
                }
                Err(e) => return Err(e),
            };
            step += 1;
            loss_sum += loss;
            batches += 1;
            log::debug!("epoch {epoch} step {step} loss {loss:.5}");
        }
        let m = metrics(&evaluate_indices(&net, set, &test_idx)?);
        let rec = EpochRecord {
            epoch,
            step,
            loss: if batches > 0 { loss_sum / batches as f64 } else { f64::NAN },
            test_miou: m.mean_iou,
            test_acc: m.accuracy,
        };
        log::info!(
            "epoch {epoch}: loss {:.4}, test mIoU {:.4}, acc {:.4}",
            rec.loss,
            rec.test_miou,
            rec.test_acc
        );
        let info = TrainingInfo {
            seed: cfg.seed,
            epoch,
            step,
            test_miou: m.mean_iou.is_finite().then_some(m.mean_iou),
        };
        let score = if m.mean_iou.is_finite() { m.mean_iou } else { f64::NEG_INFINITY };
        if best.as_ref().is_none_or(|(b, _)| score > *b) {
            best = Some((score, checkpoint(&net, info)?));
        }
        history.push(rec);
    }
    let last_info = TrainingInfo {
        seed: cfg.seed,
        epoch: history.last().map_or(0, |r| r.epoch),
        step,
        test_miou: history.last().and_then(|r| r.test_miou.is_finite().then_some(r.test_miou)),
    };
    let last = checkpoint(&net, last_info)?;
    let best = best.map_or_else(|| last.clone(), |(_, c)| c);
    Ok(TrainOutcome { best, last, history })
}

#[derive(Debug, Clone)]
pub struct FineTuneOutcome {
    pub checkpoint: Checkpoint,
    /// Training-batch loss per iteration.
    pub losses: Vec<f64>,
}

/// Continues training from `ckpt` for `iterations` optimizer steps with a
/// fresh optimizer state, cycling through seeded shuffles of the training
/// split.
pub fn fine_tune(ckpt: &Checkpoint, set: &PatchSet, iterations: usize, cfg: &TrainConfig) -> Result<FineTuneOutcome> {
    cfg.validate()?;
    ckpt.check_bands(&set.band_names)?;
    check_model_matches(&ckpt.model.config, set)?;
    let train_idx = set.indices(Split::Train);
    if train_idx.is_empty() && iterations > 0 {
        return Err(Error::Split("fine-tuning needs training patches".into()));
    }
    let weights = cfg.weights(set);
    let mut net = ckpt.model.clone();
    let mut opt = Adam::new(cfg.adam())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut losses = Vec::with_capacity(iterations);
    let mut queue: Vec<Vec<usize>> = Vec::new();
    while losses.len() < iterations {
        if queue.is_empty() {
            let mut order = train_idx.clone();
            order.shuffle(&mut rng);
            queue = order.chunks(cfg.batch_size).rev().map(<[usize]>::to_vec).collect();
        }
        let chunk = queue.pop().expect("refilled above");
        let (x, labels) = batch(set, &chunk)?;
        match train_step(&mut net, &mut opt, x, &labels, &weights, cfg.bn_momentum) {
            Ok(l) => losses.push(l),
            Err(Error::EmptyLoss) => continue,
            Err(Error::Numerical(_)) => {
                return Err(Error::Diverged {
                    epoch: 0,
                    step: losses.len(),
                    loss: f64::NAN,
                })
            }
            Err(e) => return Err(e),
        }
    }
    let checkpoint = if iterations == 0 {
        ckpt.clone()
    } else {
        let info = TrainingInfo {
            seed: cfg.seed,
            epoch: ckpt.info.epoch,
            step: ckpt.info.step + iterations,
            test_miou: None,
        };
        Checkpoint::new(net, ckpt.band_names.clone(), ckpt.norm_stats.clone(), info)?
    };
    Ok(FineTuneOutcome { checkpoint, losses })
}

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,step,loss,test_mIoU,test_acc\n");
    for r in history {
        writeln!(s, "{},{},{:.8},{:.8},{:.8}", r.epoch, r.step, r.loss, r.test_miou, r.test_acc).unwrap();
    }
    s
}

pub fn write_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, history_csv(history)).map_err(|e| Error::io(path, e))
}
