//! File-based pipeline stages. Each stage reads the artifacts of the previous
//! one and writes its own into an output directory.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dataset::{patchify, read_patchset, split, write_patchset, PatchSet};
use crate::error::{Error, Result};
use crate::features::{
    aspect, glcm_dissimilarity, normalized_difference_grid, slope, spectral_index, tasseled_cap, GlcmConfig,
    IndexKind, PcaModel,
    TasseledCapCoefficients,
};
use crate::labels::{labels_from_stack, BoolGrid, ClassCounts, LabelMask, NUM_CLASSES};
use crate::nn::{Checkpoint, ModelConfig};
use crate::raster::io::decode_u8_band;
use crate::raster::{normalize_stack, read_stack, write_stack, BandRole, BandStack, BandStats};
use crate::synth::{synth_scene, SynthConfig};
use crate::train::{
    channel_importance, confusion, fine_tune, metrics, predict_scene, train, write_history, Metrics, TrainConfig,
};

pub const STACK_FILE: &str = "stack.cryo";
pub const LABELS_FILE: &str = "labels.cryo";
pub const PATCH_DIR: &str = "patches";
pub const BEST_CKPT: &str = "best.ckpt";
pub const LAST_CKPT: &str = "last.ckpt";
pub const HISTORY_FILE: &str = "history.csv";
pub const PREDICTION_FILE: &str = "prediction.cryo";
pub const PROBABILITIES_FILE: &str = "probabilities.cryo";
pub const METRICS_JSON: &str = "metrics.json";
pub const METRICS_CSV: &str = "metrics.csv";
pub const CONFUSION_CSV: &str = "confusion.csv";
pub const IMPORTANCE_CSV: &str = "importance.csv";

/// Bands `build_feature_stack` expects in its input.
pub const INPUT_ROLES: [BandRole; 17] = [
    BandRole::Blue,
    BandRole::Green,
    BandRole::Red,
    BandRole::RedEdge1,
    BandRole::RedEdge2,
    BandRole::RedEdge3,
    BandRole::Nir,
    BandRole::NarrowNir,
    BandRole::WaterVapour,
    BandRole::Swir1,
    BandRole::Swir2,
    BandRole::Cirrus,
    BandRole::Elevation,
    BandRole::Lst,
    BandRole::Velocity,
    BandRole::Coherence,
    BandRole::Phase,
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FeatureConfig {
    pub glcm: GlcmConfig,
    /// Band the texture is computed on.
    pub glcm_band: BandRole,
    pub pca_components: usize,
    /// Standardize the optical bands before fitting PCA instead of using raw
    /// reflectance.
    pub pca_standardize: bool,
    /// SWIR band in the snow index.
    pub ndsi_swir: BandRole,
    /// Tasseled-cap coefficient file; the built-in Sentinel-2 table otherwise.
    pub tasseled_cap: Option<PathBuf>,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        Self {
            glcm: GlcmConfig::default(),
            glcm_band: BandRole::Nir,
            pca_components: 3,
            pca_standardize: false,
            ndsi_swir: BandRole::Swir1,
            tasseled_cap: None,
        }
    }
}

/// Derives indices, terrain, texture, principal components and
/// tasseled-cap axes and returns the full stack in registry order.
pub fn build_feature_stack(input: &BandStack, cfg: &FeatureConfig) -> Result<BandStack> {
    let missing: Vec<&str> = INPUT_ROLES
        .iter()
        .filter(|r| input.by_role(**r).is_err())
        .map(|r| r.name())
        .collect();
    if !missing.is_empty() {
        return Err(Error::RoleNotFound(format!("input stack lacks {}", missing.join(", "))));
    }
    let geom = *input.geometry();
    let mut derived = BandStack::new(geom, input.nodata())?;
    let dem = input.by_role(BandRole::Elevation)?;
    derived.push("Slope", Some(BandRole::Slope), slope(dem)?)?;
    derived.push("Aspect", Some(BandRole::Aspect), aspect(dem)?)?;
    for kind in [IndexKind::Ndvi, IndexKind::Ndsi, IndexKind::Ndwi, IndexKind::Ndgi] {
        let role = kind.output_role();
        let grid = match kind {
            IndexKind::Ndsi => {
                normalized_difference_grid(input.by_role(BandRole::Green)?, input.by_role(cfg.ndsi_swir)?)
            }
            _ => spectral_index(input, kind)?,
        };
        derived.push(role.name(), Some(role), grid)?;
    }
    let tex = glcm_dissimilarity(input.by_role(cfg.glcm_band)?, &cfg.glcm)?;
    if tex.degenerate_range {
        log::warn!("{} has a constant valid range; texture is zero", cfg.glcm_band);
    }
    derived.push("GLCM", Some(BandRole::Glcm), tex.grid)?;
    let optical = input.select(&BandRole::OPTICAL.iter().map(|r| input_name(input, *r)).collect::<Vec<_>>())?;
    let optical = if cfg.pca_standardize {
        normalize_stack(&optical, None)?.0
    } else {
        optical
    };
    derived.extend(PcaModel::fit(&optical, cfg.pca_components)?.transform(&optical)?)?;
    let coeffs = match &cfg.tasseled_cap {
        Some(p) => TasseledCapCoefficients::from_json_file(p)?,
        None => TasseledCapCoefficients::sentinel2(),
    };
    derived.extend(tasseled_cap(input, &coeffs)?)?;

    let mut out = BandStack::new(geom, input.nodata())?;
    for role in BandRole::ALL {
        let (name, grid) = match input.by_role(role) {
            Ok(g) => (input_name(input, role), g.clone()),
            Err(_) => match derived.by_role(role) {
                Ok(g) => (role.name().to_string(), g.clone()),
                Err(_) => continue,
            },
        };
        out.push(name, Some(role), grid)?;
    }
    Ok(out)
}

fn input_name(stack: &BandStack, role: BandRole) -> String {
    stack
        .bands()
        .iter()
        .find(|b| b.role == Some(role))
        .map(|b| b.name.clone())
        .unwrap_or_else(|| role.name().to_string())
}

fn missing_artifact(path: &Path, producer: &str) -> Error {
    Error::Config(format!(
        "{} not found; run `cryostack {producer}` first",
        path.display()
    ))
}

fn require(path: &Path, producer: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(missing_artifact(path, producer))
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn build_stack_stage(input: &Path, cfg: &FeatureConfig, out_dir: &Path) -> Result<PathBuf> {
    let stack = read_stack(input)?;
    let full = build_feature_stack(&stack, cfg)?;
    ensure_dir(out_dir)?;
    let path = out_dir.join(STACK_FILE);
    write_stack(&full, &path)?;
    Ok(path)
}

fn read_mask(path: &Path) -> Result<BoolGrid> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (g, _, v) = decode_u8_band(&bytes)?;
    BoolGrid::new(g, v.into_iter().map(|x| x != 0).collect())
}

/// Labels from the stack's NDWI/NDVI bands plus glacier-outline and debris
/// masks (u8 rasters, non-zero = inside).
pub fn make_labels_stage(stack: &Path, glacier: &Path, debris: &Path, out_dir: &Path) -> Result<ClassCounts> {
    require(stack, "build-stack")?;
    let s = read_stack(stack)?;
    let (labels, counts) = labels_from_stack(&s, &read_mask(glacier)?, &read_mask(debris)?)?;
    ensure_dir(out_dir)?;
    labels.write(out_dir.join(LABELS_FILE))?;
    write_text(&out_dir.join("label_counts.json"), &serde_json::to_string_pretty(&counts)?)?;
    Ok(counts)
}

pub fn synth_stage(cfg: &SynthConfig, out_dir: &Path) -> Result<()> {
    let scene = synth_scene(cfg)?;
    ensure_dir(out_dir)?;
    write_stack(&scene.stack, out_dir.join(STACK_FILE))?;
    scene.labels.write(out_dir.join(LABELS_FILE))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub patch_size: usize,
    /// Defaults to half the patch size.
    pub stride: Option<usize>,
    pub train_fraction: f64,
    pub seed: u64,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 32,
            stride: None,
            train_fraction: 0.8,
            seed: 0,
        }
    }
}

impl PatchConfig {
    pub fn stride(&self) -> usize {
        self.stride.unwrap_or((self.patch_size / 2).max(1))
    }
}

/// Normalizes the stack (with `stats`, or its own moments), tiles it, splits
/// train/test and stores the set together with the statistics used.
pub fn make_patchset(
    stack: &BandStack,
    labels: &LabelMask,
    cfg: &PatchConfig,
    stats: Option<&[BandStats]>,
) -> Result<PatchSet> {
    let (normalized, stats) = normalize_stack(stack, stats)?;
    let set = patchify(&normalized, labels, cfg.patch_size, cfg.stride(), cfg.seed)?;
    let mut set = split(set, cfg.train_fraction, cfg.seed)?;
    set.norm_stats = Some(stats);
    Ok(set)
}

/// `stats_from` reuses a checkpoint's normalization so new data is scaled
/// like the data the model was trained on.
pub fn patchify_stage(
    stack: &Path,
    labels: &Path,
    cfg: &PatchConfig,
    stats_from: Option<&Path>,
    out_dir: &Path,
) -> Result<PatchSet> {
    require(stack, "build-stack")?;
    require(labels, "make-labels")?;
    let stats = match stats_from {
        Some(p) => load_checkpoint(p)?.norm_stats,
        None => None,
    };
    let set = make_patchset(&read_stack(stack)?, &LabelMask::read(labels)?, cfg, stats.as_deref())?;
    write_patchset(&set, out_dir.join(PATCH_DIR))?;
    Ok(set)
}

fn load_patches(dir: &Path) -> Result<PatchSet> {
    require(&dir.join(crate::dataset::MANIFEST), "patchify")?;
    read_patchset(dir)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    require(path, "train")?;
    Checkpoint::load(path)
}

pub fn train_stage(patches: &Path, model: &ModelConfig, cfg: &TrainConfig, out_dir: &Path) -> Result<()> {
    let set = load_patches(patches)?;
    let mut model = model.clone();
    model.in_channels = set.channels();
    let outcome = train(&model, &set, cfg)?;
    ensure_dir(out_dir)?;
    outcome.best.save(out_dir.join(BEST_CKPT))?;
    outcome.last.save(out_dir.join(LAST_CKPT))?;
    write_history(&outcome.history, out_dir.join(HISTORY_FILE))
}

pub fn fine_tune_stage(ckpt: &Path, patches: &Path, iterations: usize, cfg: &TrainConfig, out: &Path) -> Result<()> {
    let c = load_checkpoint(ckpt)?;
    let set = load_patches(patches)?;
    let outcome = fine_tune(&c, &set, iterations, cfg)?;
    if let Some(parent) = out.parent() {
        ensure_dir(parent)?;
    }
    outcome.checkpoint.save(out)
}

pub fn predict_stage(ckpt: &Path, stack: &Path, patch: usize, stride: usize, out_dir: &Path) -> Result<LabelMask> {
    let c = load_checkpoint(ckpt)?;
    require(stack, "build-stack")?;
    let pred = predict_scene(&c, &read_stack(stack)?, patch, stride)?;
    ensure_dir(out_dir)?;
    pred.labels.write(out_dir.join(PREDICTION_FILE))?;
    write_stack(&pred.probabilities, out_dir.join(PROBABILITIES_FILE))?;
    Ok(pred.labels)
}

pub fn confusion_csv(cm: &crate::train::ConfusionMatrix) -> String {
    let k = cm.classes();
    let mut s = String::from("truth\\pred");
    for p in 0..k {
        s.push_str(&format!(",{p}"));
    }
    s.push('\n');
    for t in 0..k {
        s.push_str(&t.to_string());
        for p in 0..k {
            s.push_str(&format!(",{}", cm.get(t, p)));
        }
        s.push('\n');
    }
    s
}

pub fn evaluate_stage(pred: &Path, truth: &Path, out_dir: &Path) -> Result<Metrics> {
    require(pred, "predict")?;
    require(truth, "make-labels")?;
    let cm = confusion(&LabelMask::read(pred)?, &LabelMask::read(truth)?, NUM_CLASSES)?;
    let m = metrics(&cm);
    ensure_dir(out_dir)?;
    m.write(out_dir.join(METRICS_JSON), out_dir.join(METRICS_CSV))?;
    write_text(&out_dir.join(CONFUSION_CSV), &confusion_csv(&cm))?;
    Ok(m)
}

pub fn importance_stage(ckpt: &Path, patches: &Path, seed: u64, repeats: usize, out_dir: &Path) -> Result<()> {
    let c = load_checkpoint(ckpt)?;
    let set = load_patches(patches)?;
    c.check_bands(&set.band_names)?;
    let report = channel_importance(&c.model, &set, seed, repeats)?;
    ensure_dir(out_dir)?;
    report.write_csv(out_dir.join(IMPORTANCE_CSV))?;
    write_text(&out_dir.join("importance.json"), &serde_json::to_string_pretty(&report)?)
}
