//! Training protocol: per-epoch region subsampling, early-stopped training,
//! k-fold cross-validation, staged grid search and the k-member ensemble.
//!
//! Every run's randomness comes from a seed derived from the user seed and
//! the run's coordinates (stage, config, repeat, fold), so results do not
//! depend on the number of workers.

mod config;
mod cv;
mod ensemble;
mod grid;
mod model_io;
mod train;

pub use config::{TrainConfig, DEFAULT_MAX_EPOCHS, DEFAULT_PATIENCE};
pub use cv::{fold_seed, run_cv, CvOptions, CvReport, CvResult, FoldReport, FoldResult, TestView};
pub use ensemble::{ensemble_predict, train_ensemble, Ensemble, DEFAULT_ENSEMBLE_MEMBERS};
pub use grid::{
    grid_search, load_tune_file, run_seed, write_tuning_csv, GridOptions, GridSearchResult,
    GridStage, TuneFile, TuneResult, TuneRun,
};
pub use model_io::{load_model, save_model, CONFIG_EXTENSION, MODEL_EXTENSION};
pub use train::{
    subsample_bag, subsample_indices, train_one, validation_loss, EpochRecord, TrainOutcome,
};

use crate::bagio::BagIoError;
use crate::metrics::MetricsError;
use crate::mil::ModelError;
use crate::nn::NnError;

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error("invalid config: {key}: {message}")]
    InvalidConfig { key: String, message: String },
    #[error("config file: {0}")]
    ConfigFile(String),
    #[error("training set contains only {0} bags")]
    SingleClassTraining(crate::bagio::Label),
    #[error("{0} set is empty")]
    EmptySplit(&'static str),
    #[error("grid is empty")]
    EmptyGrid,
    #[error("worker pool: {0}")]
    Pool(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    BagIo(#[from] BagIoError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    pub(crate) fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        HarnessError::InvalidConfig {
            key: key.into(),
            message: message.into(),
        }
    }
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T, F>(workers: usize, f: F) -> Result<T, HarnessError>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    if workers == 0 {
        return Err(HarnessError::config("workers", "must be at least 1"));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| HarnessError::Pool(e.to_string()))?;
    Ok(pool.install(f))
}

#[cfg(test)]
mod tests;
