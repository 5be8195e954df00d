//! Synthetic data, training loops, ablations and persistence.

pub mod ablation;
pub mod config;
pub mod io;
pub mod selftest;
pub mod synthetic;
pub mod train;

pub use ablation::{run_ablation, run_ablation_with, AblationConfig, AblationReport, Variant, VariantRow};
pub use config::{ExperimentConfig, TegConfig};
pub use io::{EmbeddingFile, SidecarEntry, TimedBatch};
pub use synthetic::{gen_synthetic_pairs, SyntheticPairConfig, SyntheticPairs, SyntheticSource, EVAL_BATCH, TRAIN_BATCH};
pub use train::{evaluate_retrieval, train_alignment, AlignConfig, AlignCurvePoint, LinearHeads, TrainedAlignment};

use crate::error::Result;

/// Trains heads on a fresh training batch of `data` and tracks retrieval on
/// the evaluation batch that [`gen_synthetic_pairs`] returns.
pub fn train_on_synthetic(data: &SyntheticPairConfig, align: &AlignConfig) -> Result<TrainedAlignment> {
    let source = SyntheticSource::new(data.clone())?;
    let train = source.sample(align.k, TRAIN_BATCH)?;
    let eval = source.sample(data.k, EVAL_BATCH)?;
    train_alignment(&train.batch, &eval.batch, align)
}
