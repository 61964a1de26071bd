use thiserror::Error;

use crate::{ItemId, UserId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("{kind} id {id} out of range (count {count})")]
    IdOutOfRange {
        kind: &'static str,
        id: u32,
        count: u32,
    },
    #[error("user {0} has no unobserved items to sample as negatives")]
    NoNegatives(UserId),
    #[error("user profile is empty")]
    EmptyProfile,
    #[error("shape mismatch: {0}")]
    Shape(&'static str),
    #[error("invalid hyperparameter: {0}")]
    InvalidHyperparams(&'static str),
    #[error("invalid evaluation config: {0}")]
    InvalidEvalConfig(&'static str),
    #[error("test split is empty")]
    EmptyTestSet,
    #[error("user {0} has no training history")]
    MissingHistory(UserId),
    #[error("unknown user {0}")]
    UnknownUser(UserId),
    #[error("unknown item {0}")]
    UnknownItem(ItemId),
}

pub type Result<T> = core::result::Result<T, Error>;
