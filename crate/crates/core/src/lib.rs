//! Attentive item-based collaborative filtering.
//!
//! Every item carries two embeddings: a history-role vector `p` used when the
//! item appears in a user's profile, and a target-role vector `q` used when the
//! item is being scored. A user's representation is the attention-weighted sum
//! of the history vectors of the items they interacted with, where each item's
//! weight comes from a small alignment network followed by a softmax whose
//! denominator is raised to a smoothing exponent `beta`:
//!
//! ```text
//! e(p_j)  = V · g(W p_j + b)
//! a_uj    = exp(e(p_j)) / (sum_k exp(e(p_k)))^beta
//! r_ui    = b_u + b_i + (sum_j a_uj p_j) · q_i
//! ```
//!
//! The crate is `no_std` (with `alloc`) unless the `std` feature is enabled;
//! file formats, the HTTP service and the command line live in the `nairs`
//! crate.

#![cfg_attr(not(feature = "std"), no_std)]

extern crate alloc;

pub mod dataset;
pub mod error;
pub mod evaluation;
pub mod interpretation;
pub mod math;
pub mod model;
pub mod retrieval;
pub mod training;

pub use dataset::{
    build_user_histories, leave_one_out_split, sample_negatives, Histories, Interaction,
    InteractionSet, SplitPair, UserHistory,
};
pub use error::{Error, Result};
pub use evaluation::{evaluate, hit_at_n, ndcg_at_n, EvalConfig, RankingMetrics, Scorer};
pub use model::{Activation, AttentionParams, Hyperparams, Matrix, ModelKind, ModelParams};
pub use training::{fit, EpochStats, GradientSet, Optimizer, TrainReport, TrainingInstance};

/// Dense integer id of a user after remapping.
pub type UserId = u32;
/// Dense integer id of an item after remapping.
pub type ItemId = u32;
