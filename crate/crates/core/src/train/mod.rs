//! Weighted cross-entropy training with Adam, fine-tuning, tiled scene
//! prediction, segmentation metrics and permutation band importance.

mod adam;
mod importance;
mod loss;
mod metrics;
mod predict;
mod trainer;

pub use adam::{Adam, AdamConfig, DecayMode};
pub use importance::{channel_importance, permute_band, permute_band_with, BandImportance, ImportanceReport};
pub use loss::{weighted_ce_loss, LossOutput};
pub use metrics::{confusion, metrics, ClassMetrics, ConfusionMatrix, Metrics};
pub use predict::{argmax_classes, predict_scene, tiled_map, Prediction};
pub use trainer::{
    batch, evaluate_indices, evaluate_split, fine_tune, history_csv, predict_patch_labels, split_loss, train,
    train_model, train_step, write_history, EpochRecord, FineTuneOutcome, TrainConfig, TrainOutcome, WeightSource,
};
