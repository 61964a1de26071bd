//! Implicit-feedback interactions, per-user histories, the leave-one-out split
//! and negative sampling.

use alloc::collections::BTreeSet;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};
use crate::{ItemId, UserId};

/// One observed (positive) user-item pair. Negatives are never stored.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: UserId,
    pub item: ItemId,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: UserId, item: ItemId) -> Self {
        Interaction {
            user,
            item,
            timestamp: None,
        }
    }

    pub fn at(user: UserId, item: ItemId, timestamp: i64) -> Self {
        Interaction {
            user,
            item,
            timestamp: Some(timestamp),
        }
    }
}

/// The binary user-item matrix as a de-duplicated list of positive pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionSet {
    interactions: Vec<Interaction>,
    num_users: u32,
    num_items: u32,
    item_names: Option<Vec<String>>,
    duplicates_dropped: usize,
}

impl InteractionSet {
    /// Builds a set whose dimensions are `max id + 1` over each column.
    /// Repeated `(user, item)` pairs keep their first occurrence.
    pub fn new(interactions: Vec<Interaction>) -> Self {
        let num_users = interactions.iter().map(|i| i.user + 1).max().unwrap_or(0);
        let num_items = interactions.iter().map(|i| i.item + 1).max().unwrap_or(0);
        Self::build(interactions, num_users, num_items)
    }

    /// Builds a set with explicit dimensions, e.g. a train split that must keep
    /// the id space of the full data.
    pub fn with_dims(interactions: Vec<Interaction>, num_users: u32, num_items: u32) -> Result<Self> {
        for i in &interactions {
            if i.user >= num_users {
                return Err(Error::IdOutOfRange {
                    kind: "user",
                    id: i.user,
                    count: num_users,
                });
            }
            if i.item >= num_items {
                return Err(Error::IdOutOfRange {
                    kind: "item",
                    id: i.item,
                    count: num_items,
                });
            }
        }
        Ok(Self::build(interactions, num_users, num_items))
    }

    fn build(interactions: Vec<Interaction>, num_users: u32, num_items: u32) -> Self {
        let mut seen = BTreeSet::new();
        let before = interactions.len();
        let interactions: Vec<_> = interactions
            .into_iter()
            .filter(|i| seen.insert((i.user, i.item)))
            .collect();
        InteractionSet {
            duplicates_dropped: before - interactions.len(),
            interactions,
            num_users,
            num_items,
            item_names: None,
        }
    }

    /// Convenience constructor from `(user, item)` pairs without timestamps.
    pub fn from_pairs(pairs: &[(UserId, ItemId)]) -> Self {
        Self::new(pairs.iter().map(|&(u, i)| Interaction::new(u, i)).collect())
    }

    pub fn with_item_names(mut self, names: Vec<String>) -> Self {
        self.item_names = Some(names);
        self
    }

    pub fn interactions(&self) -> &[Interaction] {
        &self.interactions
    }

    pub fn num_users(&self) -> u32 {
        self.num_users
    }

    pub fn num_items(&self) -> u32 {
        self.num_items
    }

    pub fn len(&self) -> usize {
        self.interactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.interactions.is_empty()
    }

    pub fn item_names(&self) -> Option<&[String]> {
        self.item_names.as_deref()
    }

    pub fn item_name(&self, item: ItemId) -> Option<&str> {
        self.item_names
            .as_ref()
            .and_then(|n| n.get(item as usize))
            .map(String::as_str)
    }

    /// Number of repeated `(user, item)` pairs removed at construction.
    pub fn duplicates_dropped(&self) -> usize {
        self.duplicates_dropped
    }

    /// Interaction count per item.
    pub fn item_counts(&self) -> Vec<u32> {
        let mut counts = alloc::vec![0u32; self.num_items as usize];
        for i in &self.interactions {
            counts[i.item as usize] += 1;
        }
        counts
    }
}

/// The items one user interacted with, in history order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserHistory {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

/// Per-user histories indexed by dense user id.
///
/// Each history is ordered by timestamp (missing timestamps first) and then
/// by item id. A sorted copy is kept for membership tests.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Histories {
    ordered: Vec<Vec<ItemId>>,
    sorted: Vec<Vec<ItemId>>,
    num_items: u32,
}

impl Histories {
    /// Builds histories directly from item lists; order is kept as given and
    /// repeated items are dropped.
    pub fn from_lists(lists: Vec<Vec<ItemId>>, num_items: u32) -> Self {
        let ordered: Vec<Vec<ItemId>> = lists
            .into_iter()
            .map(|l| {
                let mut seen = BTreeSet::new();
                l.into_iter().filter(|i| seen.insert(*i)).collect()
            })
            .collect();
        let sorted = ordered
            .iter()
            .map(|h| {
                let mut s = h.clone();
                s.sort_unstable();
                s
            })
            .collect();
        Histories {
            ordered,
            sorted,
            num_items,
        }
    }

    /// The user's history, or `None` when the user has no interactions.
    pub fn get(&self, user: UserId) -> Option<&[ItemId]> {
        self.ordered
            .get(user as usize)
            .filter(|h| !h.is_empty())
            .map(Vec::as_slice)
    }

    pub fn user_history(&self, user: UserId) -> Option<UserHistory> {
        self.get(user).map(|items| UserHistory {
            user,
            items: items.to_vec(),
        })
    }

    /// Sorted item ids of the user (empty for unknown users).
    pub fn sorted(&self, user: UserId) -> &[ItemId] {
        self.sorted.get(user as usize).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, user: UserId, item: ItemId) -> bool {
        self.sorted(user).binary_search(&item).is_ok()
    }

    /// Size of the user id space (including users without history).
    pub fn num_users(&self) -> u32 {
        self.ordered.len() as u32
    }

    pub fn num_items(&self) -> u32 {
        self.num_items
    }

    /// Users with a non-empty history.
    pub fn iter(&self) -> impl Iterator<Item = (UserId, &[ItemId])> + '_ {
        self.ordered
            .iter()
            .enumerate()
            .filter(|(_, h)| !h.is_empty())
            .map(|(u, h)| (u as UserId, h.as_slice()))
    }

    /// True if no user has any history.
    pub fn is_empty(&self) -> bool {
        self.ordered.iter().all(Vec::is_empty)
    }
}

/// Groups the positives of `train` by user.
pub fn build_user_histories(train: &InteractionSet) -> Histories {
    let mut grouped: Vec<Vec<(Option<i64>, ItemId)>> =
        alloc::vec![Vec::new(); train.num_users() as usize];
    for i in train.interactions() {
        grouped[i.user as usize].push((i.timestamp, i.item));
    }
    let lists = grouped
        .into_iter()
        .map(|mut h| {
            h.sort_unstable();
            h.into_iter().map(|(_, item)| item).collect()
        })
        .collect();
    Histories::from_lists(lists, train.num_items())
}

/// A leave-one-out split: one held-out positive per user with at least two
/// interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitPair {
    pub train: InteractionSet,
    /// `(user, held_out_item)` sorted by user.
    pub test: Vec<(UserId, ItemId)>,
}

/// Holds out each user's latest interaction by timestamp. When any of the
/// user's interactions lacks a timestamp, or several share the latest one,
/// the last such interaction in input order is held out. Users with a single
/// interaction stay entirely in train.
pub fn leave_one_out_split(data: &InteractionSet) -> SplitPair {
    let mut per_user: Vec<Vec<usize>> = alloc::vec![Vec::new(); data.num_users() as usize];
    for (idx, i) in data.interactions().iter().enumerate() {
        per_user[i.user as usize].push(idx);
    }

    let mut held_out = alloc::vec![false; data.len()];
    let mut test = Vec::new();
    for (user, idxs) in per_user.iter().enumerate() {
        if idxs.len() < 2 {
            continue;
        }
        let all_timed = idxs.iter().all(|&k| data.interactions()[k].timestamp.is_some());
        let chosen = if all_timed {
            // max_by_key returns the last maximum, which is the file-order tie-break.
            *idxs
                .iter()
                .max_by_key(|&&k| data.interactions()[k].timestamp)
                .expect("non-empty")
        } else {
            *idxs.last().expect("non-empty")
        };
        held_out[chosen] = true;
        test.push((user as UserId, data.interactions()[chosen].item));
    }

    let train_rows = data
        .interactions()
        .iter()
        .zip(&held_out)
        .filter(|(_, &h)| !h)
        .map(|(i, _)| *i)
        .collect();
    let mut train = InteractionSet::build(train_rows, data.num_users(), data.num_items());
    train.item_names = data.item_names.clone();
    SplitPair { train, test }
}

/// Draws `k` items the user has not interacted with in `train`, uniformly at
/// random. Each draw is independent; an observed item is rejected and redrawn.
pub fn sample_negatives<R: Rng + ?Sized>(
    train: &Histories,
    user: UserId,
    k: usize,
    rng: &mut R,
) -> Result<Vec<ItemId>> {
    let observed = train.sorted(user);
    let n = train.num_items();
    if observed.len() >= n as usize {
        return Err(Error::NoNegatives(user));
    }
    let mut out = Vec::with_capacity(k);
    if observed.len() * 2 > n as usize {
        // Dense history: rejection would spin, draw from the complement.
        let candidates = complement(observed, n);
        for _ in 0..k {
            out.push(candidates[rng.random_range(0..candidates.len())]);
        }
    } else {
        while out.len() < k {
            let item = rng.random_range(0..n);
            if observed.binary_search(&item).is_err() {
                out.push(item);
            }
        }
    }
    Ok(out)
}

/// Draws up to `k` distinct items outside `exclude` (which must be sorted),
/// uniformly without replacement. Returns fewer than `k` only when fewer
/// candidates exist.
pub fn sample_distinct_negatives<R: Rng + ?Sized>(
    exclude: &[ItemId],
    num_items: u32,
    k: usize,
    rng: &mut R,
) -> Vec<ItemId> {
    debug_assert!(exclude.windows(2).all(|w| w[0] < w[1]));
    let available = num_items as usize - exclude.len();
    if k >= available {
        return complement(exclude, num_items);
    }
    if (exclude.len() + k) * 2 > num_items as usize {
        let mut candidates = complement(exclude, num_items);
        // Partial Fisher-Yates.
        for i in 0..k {
            let j = rng.random_range(i..candidates.len());
            candidates.swap(i, j);
        }
        candidates.truncate(k);
        return candidates;
    }
    let mut chosen = BTreeSet::new();
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let item = rng.random_range(0..num_items);
        if exclude.binary_search(&item).is_err() && chosen.insert(item) {
            out.push(item);
        }
    }
    out
}

fn complement(sorted: &[ItemId], num_items: u32) -> Vec<ItemId> {
    (0..num_items)
        .filter(|i| sorted.binary_search(i).is_err())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn dedup_drops_repeated_pairs() {
        let set = InteractionSet::from_pairs(&[(0, 5), (0, 5)]);
        assert_eq!(set.len(), 1);
        assert_eq!(set.duplicates_dropped(), 1);
        assert_eq!((set.num_users(), set.num_items()), (1, 6));
    }

    #[test]
    fn dims_are_validated() {
        let err = InteractionSet::with_dims(alloc::vec![Interaction::new(0, 3)], 1, 3).unwrap_err();
        assert!(matches!(err, Error::IdOutOfRange { kind: "item", .. }));
    }

    #[test]
    fn holdout_picks_latest_timestamp() {
        let data = InteractionSet::new(alloc::vec![Interaction::at(0, 3, 10), Interaction::at(0, 7, 20)]);
        let split = leave_one_out_split(&data);
        assert_eq!(split.test, alloc::vec![(0, 7)]);
        assert_eq!(split.train.interactions(), &[Interaction::at(0, 3, 10)]);
    }

    #[test]
    fn timestamp_ties_fall_back_to_file_order() {
        let data = InteractionSet::new(alloc::vec![
            Interaction::at(0, 1, 5),
            Interaction::at(0, 2, 9),
            Interaction::at(0, 3, 9),
            Interaction::at(0, 4, 1),
        ]);
        assert_eq!(leave_one_out_split(&data).test, alloc::vec![(0, 3)]);
    }

    #[test]
    fn singleton_users_stay_in_train() {
        let data = InteractionSet::from_pairs(&[(1, 4)]);
        let split = leave_one_out_split(&data);
        assert!(split.test.is_empty());
        assert_eq!(split.train.interactions(), &[Interaction::new(1, 4)]);
    }

    #[test]
    fn untimed_split_uses_file_order() {
        // items a..e = 0..4
        let data = InteractionSet::from_pairs(&[(0, 0), (1, 2), (0, 1), (1, 3), (1, 4)]);
        let split = leave_one_out_split(&data);
        assert_eq!(split.test, alloc::vec![(0, 1), (1, 4)]);
        assert_eq!(split.train.num_items(), 5);
    }

    #[test]
    fn partially_timed_user_uses_file_order() {
        let data = InteractionSet::new(alloc::vec![Interaction::at(0, 1, 50), Interaction::new(0, 2)]);
        assert_eq!(leave_one_out_split(&data).test, alloc::vec![(0, 2)]);
    }

    #[test]
    fn histories_group_and_order() {
        let train = InteractionSet::from_pairs(&[(0, 7), (0, 3), (1, 2)]);
        let h = build_user_histories(&train);
        assert_eq!(h.get(0), Some(&[3, 7][..]));
        assert_eq!(h.get(1), Some(&[2][..]));
        assert!(build_user_histories(&InteractionSet::new(Vec::new())).is_empty());

        let shared = InteractionSet::from_pairs(&[(0, 5), (1, 5), (2, 5)]);
        let h = build_user_histories(&shared);
        assert_eq!(h.iter().filter(|(_, items)| items.contains(&5)).count(), 3);
    }

    #[test]
    fn histories_order_by_timestamp_first() {
        let train = InteractionSet::new(alloc::vec![Interaction::at(0, 1, 30), Interaction::at(0, 9, 10)]);
        assert_eq!(build_user_histories(&train).get(0), Some(&[9, 1][..]));
    }

    #[test]
    fn negatives_single_candidate_and_exhausted() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let h = Histories::from_lists(alloc::vec![alloc::vec![0, 1]], 3);
        assert_eq!(sample_negatives(&h, 0, 1, &mut rng).unwrap(), alloc::vec![2]);
        let full = Histories::from_lists(alloc::vec![alloc::vec![0, 1]], 2);
        assert_eq!(sample_negatives(&full, 0, 1, &mut rng), Err(Error::NoNegatives(0)));
    }

    #[test]
    fn negatives_are_deterministic() {
        let h = Histories::from_lists(alloc::vec![(0..10).collect()], 1000);
        let draw = || sample_negatives(&h, 0, 4, &mut ChaCha8Rng::seed_from_u64(42)).unwrap();
        let a = draw();
        assert_eq!(a.len(), 4);
        assert_eq!(a, draw());
    }

    #[test]
    fn distinct_negatives_clamp_to_available() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(sample_distinct_negatives(&[1, 3], 5, 10, &mut rng), alloc::vec![0, 2, 4]);
        let s = sample_distinct_negatives(&[0], 100, 99, &mut rng);
        assert_eq!(s.len(), 99);
        let s = sample_distinct_negatives(&[0, 1], 1000, 20, &mut rng);
        let set: BTreeSet<_> = s.iter().collect();
        assert_eq!(set.len(), 20);
        assert!(!set.contains(&0) && !set.contains(&1));
    }
}
