//! Why an item was recommended: profile attention weights, per-target
//! contributions, and font sizes for a tag cloud.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::Result;
use crate::math;
use crate::model::{attended_items, Hyperparams, ModelParams};
use crate::{ItemId, UserId};

pub const DEFAULT_FONT_MIN: f64 = 12.0;
pub const DEFAULT_FONT_MAX: f64 = 32.0;

#[derive(Debug, Clone, PartialEq)]
pub struct ProfileEntry {
    pub item: ItemId,
    pub name: String,
    pub weight: f64,
    pub font_size: f64,
}

/// Target-independent view of a profile: every history item with its
/// attention weight, in history order.
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileInterpretation {
    pub entries: Vec<ProfileEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Contribution {
    pub item: ItemId,
    pub weight: f64,
    /// `α_uj · (p_j · q_i)`
    pub contribution: f64,
}

/// Decomposition of one prediction into per-history-item terms.
#[derive(Debug, Clone, PartialEq)]
pub struct ContributionBreakdown {
    pub target: ItemId,
    pub entries: Vec<Contribution>,
    /// `b_u + b_i`
    pub bias_part: f64,
}

impl ContributionBreakdown {
    /// `bias_part + Σ contributions`, which equals the model's prediction.
    pub fn total(&self) -> f64 {
        self.bias_part + self.entries.iter().map(|c| c.contribution).sum::<f64>()
    }
}

/// Attention weight of every history item.
pub fn profile_weights(params: &ModelParams, history: &[ItemId], hp: &Hyperparams) -> Result<Vec<(ItemId, f64)>> {
    params.profile_weights(history, hp)
}

/// Profile weights with display names and tag-cloud font sizes.
pub fn profile_interpretation<F>(
    params: &ModelParams,
    history: &[ItemId],
    hp: &Hyperparams,
    name_of: F,
    font_min: f64,
    font_max: f64,
) -> Result<ProfileInterpretation>
where
    F: Fn(ItemId) -> String,
{
    let weights = profile_weights(params, history, hp)?;
    let sizes = tagcloud_scale(&weights.iter().map(|w| w.1).collect::<Vec<_>>(), font_min, font_max);
    let entries = weights
        .into_iter()
        .zip(sizes)
        .map(|((item, weight), font_size)| ProfileEntry {
            item,
            name: name_of(item),
            weight,
            font_size,
        })
        .collect();
    Ok(ProfileInterpretation { entries })
}

/// Splits the score of `target` into `α_uj · (p_j · q_i)` per attended
/// history item. The target itself is excluded from the history, as in
/// prediction.
pub fn contribution_scores(
    params: &ModelParams,
    user: UserId,
    history: &[ItemId],
    target: ItemId,
    hp: &Hyperparams,
) -> Result<ContributionBreakdown> {
    params.check_item(target)?;
    let attended = attended_items(history, target);
    let weights = params.profile_weights(&attended, hp)?;
    let q = params.q.row(target as usize);
    let entries = weights
        .into_iter()
        .map(|(item, weight)| Contribution {
            item,
            weight,
            contribution: weight * math::dot(params.p.row(item as usize), q),
        })
        .collect();
    Ok(ContributionBreakdown {
        target,
        entries,
        bias_part: params.user_bias_of(user) + params.item_bias[target as usize],
    })
}

/// Linear map of `weights` onto `[font_min, font_max]`. Equal weights all get
/// the midpoint.
pub fn tagcloud_scale(weights: &[f64], font_min: f64, font_max: f64) -> Vec<f64> {
    let lo = weights.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi == lo {
        return weights.iter().map(|_| (font_min + font_max) / 2.0).collect();
    }
    weights
        .iter()
        .map(|&w| font_min + (w - lo) / (hi - lo) * (font_max - font_min))
        .collect()
}
