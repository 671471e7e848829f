use std::path::PathBuf;

use imu_stride::augment::AugmentError;
use imu_stride::checkpoint::CheckpointError;
use imu_stride::data::DataError;
use imu_stride::model::ModelError;
use imu_stride::segment::SegmentError;
use imu_stride::train::TrainError;
use thiserror::Error;

/// Every failure maps to one stable code, printed as
/// `error[<code>]: <message>` on a single line.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("no {what} at {}; {hint}", path.display())]
    Missing {
        what: &'static str,
        path: PathBuf,
        hint: &'static str,
    },
    #[error("cannot write to {}: {source}", path.display())]
    Unwritable { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
    #[error(transparent)]
    Segment(#[from] SegmentError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

impl CliError {
    pub fn code(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Missing { what: "checkpoint", .. } => "missing-checkpoint",
            CliError::Missing { .. } => "missing-input",
            CliError::Unwritable { .. } => "unwritable",
            CliError::Data(_) | CliError::Augment(_) => "data",
            CliError::Segment(_) => "segment",
            CliError::Checkpoint(_) => "checkpoint",
            CliError::Model(_) => "model",
            CliError::Train(TrainError::NonFinite { .. }) => "non-finite",
            CliError::Train(_) => "train",
        }
    }

    /// The message with line breaks folded so it stays on one line.
    pub fn one_line(&self) -> String {
        let msg = self.to_string().split_whitespace().collect::<Vec<_>>().join(" ");
        format!("error[{}]: {msg}", self.code())
    }

    pub fn unwritable(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
        let path = path.into();
        move |source| CliError::Unwritable { path, source }
    }
}
