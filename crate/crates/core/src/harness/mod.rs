//! Training, evaluation and robustness sweeps.
//!
//! Videos are turned into [`Clip`]s once (landmarks, frame selection,
//! crops) and then reused across epochs. Per-sample gradients are computed
//! in parallel and summed in batch order, so results do not depend on the
//! number of workers.

mod data;
mod eval;
mod metrics;
mod optim;
mod train;

use std::path::PathBuf;

use thiserror::Error;

use crate::ingest::ManifestError;
use crate::mstie::ModelError;

pub use data::{clip_from_video, prepare_clip, prepare_manifest, Clip, LandmarkSource, Skipped};
pub use eval::{comparison_table, evaluate, evaluate_clips, robustness_sweep, score_clips, EvalReport, VideoScore};
pub use metrics::{auc, average_precision};
pub use optim::Adam;
pub use train::{
    batch_gradients, fit, sample_objective, train, LogRecord, Optimizer, SampleLoss, TrainConfig, TrainJob, TrainOutcome,
    Trainer,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("SingleClassManifest: AP and AUC need both real and fake videos")]
    SingleClassManifest,
    #[error("AllVideosSkipped: none of {0} videos passed frame selection")]
    AllVideosSkipped(usize),
    #[error("NonFiniteLoss at epoch {epoch}, step {step}: {detail}")]
    NonFiniteLoss { epoch: usize, step: u64, detail: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}
