//! Leave-one-out top-n evaluation with sampled negatives.
//!
//! Each test user's held-out item is ranked against `num_sampled_negatives`
//! items the user never interacted with. Candidates are ordered by score,
//! descending, with ties broken by ascending item id.

use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{build_user_histories, sample_distinct_negatives, Histories, InteractionSet, SplitPair};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Hyperparams, ModelParams};
use crate::{ItemId, UserId};

/// 1 if `ground_truth` is among the first `n` entries of `ranked`, else 0.
pub fn hit_at_n(ranked: &[ItemId], ground_truth: ItemId, n: usize) -> u32 {
    ranked.iter().take(n).any(|&i| i == ground_truth) as u32
}

/// NDCG with a single relevant item: `1 / log2(pos + 2)` for a hit at
/// 0-based position `pos < n`, else 0.
pub fn ndcg_at_n(ranked: &[ItemId], ground_truth: ItemId, n: usize) -> f64 {
    ranked
        .iter()
        .take(n)
        .position(|&i| i == ground_truth)
        .map_or(0.0, ndcg_at_position)
}

#[inline]
fn ndcg_at_position(pos: usize) -> f64 {
    1.0 / math::log2(pos as f64 + 2.0)
}

/// Scores candidate items for a user; higher is better.
pub trait Scorer {
    fn score_candidates(&self, user: UserId, candidates: &[ItemId]) -> Vec<f64>;
}

/// Adapts a `(user, item) -> score` closure.
pub struct FnScorer<F>(pub F);

impl<F: Fn(UserId, ItemId) -> f64> Scorer for FnScorer<F> {
    fn score_candidates(&self, user: UserId, candidates: &[ItemId]) -> Vec<f64> {
        candidates.iter().map(|&i| (self.0)(user, i)).collect()
    }
}

/// Scores items by their number of training interactions.
pub struct PopularityScorer {
    counts: Vec<u32>,
}

impl PopularityScorer {
    pub fn new(train: &InteractionSet) -> Self {
        PopularityScorer {
            counts: train.item_counts(),
        }
    }
}

impl Scorer for PopularityScorer {
    fn score_candidates(&self, _user: UserId, candidates: &[ItemId]) -> Vec<f64> {
        candidates
            .iter()
            .map(|&i| self.counts.get(i as usize).copied().unwrap_or(0) as f64)
            .collect()
    }
}

/// Scores with a trained model (attentive or FISM, per `hp.kind`) using the
/// user's training history as the profile.
pub struct ModelScorer<'a> {
    params: &'a ModelParams,
    hp: &'a Hyperparams,
    histories: Histories,
    alignment: Vec<f64>,
}

impl<'a> ModelScorer<'a> {
    pub fn new(params: &'a ModelParams, hp: &'a Hyperparams, train: &InteractionSet) -> Self {
        Self::with_histories(params, hp, build_user_histories(train))
    }

    pub fn with_histories(params: &'a ModelParams, hp: &'a Hyperparams, histories: Histories) -> Self {
        ModelScorer {
            alignment: params.alignment_scores(hp.activation),
            params,
            hp,
            histories,
        }
    }
}

impl Scorer for ModelScorer<'_> {
    fn score_candidates(&self, user: UserId, candidates: &[ItemId]) -> Vec<f64> {
        let history = self.histories.get(user).unwrap_or(&[]);
        let profile = self
            .params
            .user_vector_with_scores(history, &self.alignment, self.hp)
            .ok();
        let b_u = self.params.user_bias_of(user);
        candidates
            .iter()
            .map(|&i| match &profile {
                Some(u) if !self.histories.contains(user, i) => {
                    b_u + self.params.item_bias[i as usize] + math::dot(u, self.params.q.row(i as usize))
                }
                _ => self.params.score(user, history, i, self.hp),
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EvalConfig {
    /// Cutoff of the top-n list.
    pub n: usize,
    pub num_sampled_negatives: usize,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            n: 10,
            num_sampled_negatives: 99,
            seed: 0,
        }
    }
}

impl EvalConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(Error::InvalidEvalConfig("n must be >= 1"));
        }
        if self.num_sampled_negatives + 1 < self.n {
            return Err(Error::InvalidEvalConfig("num_sampled_negatives must be >= n - 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UserRank {
    pub user: UserId,
    pub held_out: ItemId,
    /// 0-based position of the held-out item among the candidates.
    pub position: usize,
    pub num_candidates: usize,
    /// Another candidate had exactly the held-out item's score.
    pub tied: bool,
    /// Every candidate had the same score.
    pub all_tied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankingMetrics {
    pub n: usize,
    pub hr: f64,
    pub ndcg: f64,
    pub per_user: Vec<UserRank>,
}

impl RankingMetrics {
    pub fn hit(&self, r: &UserRank) -> bool {
        r.position < self.n
    }

    pub fn user_ndcg(&self, r: &UserRank) -> f64 {
        if self.hit(r) {
            ndcg_at_position(r.position)
        } else {
            0.0
        }
    }

    /// Users whose held-out item tied with another candidate.
    pub fn tied_users(&self) -> usize {
        self.per_user.iter().filter(|r| r.tied).count()
    }

    /// True when the scorer could not separate any user's candidates, so the
    /// ranking is decided entirely by the id tie-break.
    pub fn is_degenerate(&self) -> bool {
        !self.per_user.is_empty() && self.per_user.iter().all(|r| r.all_tied)
    }
}

/// Runs the leave-one-out protocol over `split.test`.
///
/// Negatives for each user come from a generator seeded with
/// `cfg.seed ^ user`, so results do not depend on evaluation order.
pub fn evaluate<S: Scorer + ?Sized>(scorer: &S, split: &SplitPair, cfg: &EvalConfig) -> Result<RankingMetrics> {
    cfg.validate()?;
    if split.test.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    let histories = build_user_histories(&split.train);
    let num_items = split.train.num_items();

    let mut per_user = Vec::with_capacity(split.test.len());
    for &(user, held_out) in &split.test {
        let train_items = histories.sorted(user);
        if train_items.is_empty() {
            return Err(Error::MissingHistory(user));
        }
        let mut exclude = train_items.to_vec();
        if let Err(pos) = exclude.binary_search(&held_out) {
            exclude.insert(pos, held_out);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ user as u64);
        let negatives = sample_distinct_negatives(&exclude, num_items, cfg.num_sampled_negatives, &mut rng);

        let mut candidates = Vec::with_capacity(negatives.len() + 1);
        candidates.push(held_out);
        candidates.extend(negatives);
        let scores = scorer.score_candidates(user, &candidates);
        per_user.push(rank_held_out(user, &candidates, &scores));
    }

    let count = per_user.len() as f64;
    let n = cfg.n;
    let hr = per_user.iter().filter(|r| r.position < n).count() as f64 / count;
    let ndcg = per_user
        .iter()
        .filter(|r| r.position < n)
        .map(|r| ndcg_at_position(r.position))
        .sum::<f64>()
        / count;
    Ok(RankingMetrics { n, hr, ndcg, per_user })
}

/// Position of `candidates[0]` after sorting by score descending, item id
/// ascending.
fn rank_held_out(user: UserId, candidates: &[ItemId], scores: &[f64]) -> UserRank {
    let held = candidates[0];
    let s = scores[0];
    let mut position = 0;
    let mut tied = false;
    for (&c, &sc) in candidates.iter().zip(scores).skip(1) {
        if sc > s || (sc == s && c < held) {
            position += 1;
        }
        tied |= sc == s;
    }
    let all_tied = scores.iter().all(|&x| x == s);
    UserRank {
        user,
        held_out: held,
        position,
        num_candidates: candidates.len(),
        tied,
        all_tied,
    }
}

/// Sorts `candidates` by score descending with ascending-id tie-break.
pub fn rank_candidates(candidates: &[ItemId], scores: &[f64]) -> Vec<ItemId> {
    let mut idx: Vec<usize> = (0..candidates.len()).collect();
    idx.sort_by(|&a, &b| {
        scores[b]
            .partial_cmp(&scores[a])
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(candidates[a].cmp(&candidates[b]))
    });
    idx.into_iter().map(|i| candidates[i]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::leave_one_out_split;
    use alloc::vec;

    #[test]
    fn hit_examples() {
        assert_eq!(hit_at_n(&[5, 2, 9], 2, 10), 1);
        assert_eq!(hit_at_n(&[5, 2, 9], 7, 10), 0);
        let ranked: Vec<ItemId> = (0..20).collect();
        assert_eq!(hit_at_n(&ranked, 10, 10), 0);
        assert_eq!(hit_at_n(&ranked, 9, 10), 1);
    }

    #[test]
    fn ndcg_examples() {
        assert_eq!(ndcg_at_n(&[4, 1, 2], 4, 10), 1.0);
        assert_eq!(ndcg_at_n(&[4, 1, 2], 2, 10), 0.5);
        assert_eq!(ndcg_at_n(&[4, 1, 2], 8, 10), 0.0);
        assert_eq!(ndcg_at_n(&[4, 1, 2], 2, 2), 0.0);
    }

    #[test]
    fn config_validation() {
        assert!(EvalConfig::default().validate().is_ok());
        let bad = EvalConfig { n: 10, num_sampled_negatives: 5, seed: 0 };
        assert!(bad.validate().is_err());
        assert!(EvalConfig { n: 0, ..Default::default() }.validate().is_err());
    }

    #[test]
    fn empty_test_set_is_an_error() {
        let split = SplitPair {
            train: InteractionSet::from_pairs(&[(0, 0)]),
            test: Vec::new(),
        };
        assert_eq!(
            evaluate(&FnScorer(|_, _| 0.0), &split, &EvalConfig::default()),
            Err(Error::EmptyTestSet)
        );
    }

    #[test]
    fn constant_scorer_ranks_by_item_id() {
        // 3 users, 20 items; held-out items have small and large ids.
        let data = InteractionSet::from_pairs(&[(0, 5), (0, 0), (1, 5), (1, 19), (2, 3), (2, 1), (2, 19)]);
        let split = leave_one_out_split(&data);
        let cfg = EvalConfig { n: 3, num_sampled_negatives: 99, seed: 7 };
        let m = evaluate(&FnScorer(|_, _| 0.0), &split, &cfg).unwrap();
        assert!(m.is_degenerate());
        // user 0 holds out item 0: first by id.
        assert_eq!(m.per_user[0].position, 0);
        // user 1 holds out 19, the largest id: last.
        assert_eq!(m.per_user[1].position, m.per_user[1].num_candidates - 1);
        assert!((m.hr - m.per_user.iter().filter(|r| m.hit(r)).count() as f64 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn rank_candidates_ties_by_id() {
        assert_eq!(rank_candidates(&[9, 3, 5], &[1.0, 2.0, 1.0]), vec![3, 5, 9]);
    }
}
