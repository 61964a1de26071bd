//! Similar users and similar items by adjusted cosine similarity over learned
//! representations, with a precomputed top-K cache.
//!
//! Users are represented by their attention-weighted profile vector and items
//! by their target-role embedding `q_i`.

use alloc::string::String;
use alloc::vec::Vec;
use core::cmp::Ordering;

use crate::dataset::Histories;
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Hyperparams, ModelParams};

pub const DEFAULT_ITEM_THRESHOLD: f64 = 1.0;
pub const DEFAULT_CACHE_DEPTH: usize = 50;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Similarity {
    /// In `[0, 2]`.
    pub value: f64,
    /// One of the vectors was constant, so the neutral value 1 was returned.
    pub zero_variance: bool,
}

/// `1 + cos(x − mean(x), y − mean(y))`, each vector centered by its own mean
/// over dimensions. A constant vector yields the neutral value 1.
pub fn adjusted_cosine(x: &[f64], y: &[f64]) -> Result<Similarity> {
    if x.len() != y.len() || x.is_empty() {
        return Err(Error::Shape("adjusted_cosine needs two vectors of equal, non-zero length"));
    }
    let cx = centered_unit_scale(x);
    let cy = centered_unit_scale(y);
    let (Some(cx), Some(cy)) = (cx, cy) else {
        return Ok(Similarity {
            value: 1.0,
            zero_variance: true,
        });
    };
    let sxy = math::dot(&cx, &cy);
    let sxx = math::sum_sq(&cx);
    let syy = math::sum_sq(&cy);
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Similarity {
            value: 1.0,
            zero_variance: true,
        });
    }
    let cos = (sxy / math::sqrt(sxx * syy)).clamp(-1.0, 1.0);
    Ok(Similarity {
        value: 1.0 + cos,
        zero_variance: false,
    })
}

/// Scales by the largest magnitude (cosine is scale-free, and this keeps the
/// sums finite) and subtracts the mean. `None` for an all-zero vector.
fn centered_unit_scale(x: &[f64]) -> Option<Vec<f64>> {
    let max = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if max == 0.0 {
        return None;
    }
    let scaled: Vec<f64> = x.iter().map(|v| v / max).collect();
    let mean = scaled.iter().sum::<f64>() / scaled.len() as f64;
    Some(scaled.into_iter().map(|v| v - mean).collect())
}

/// One vector per entity id; `None` for entities without a representation
/// (users with an empty history).
#[derive(Debug, Clone, PartialEq)]
pub struct Representations {
    vectors: Vec<Option<Vec<f64>>>,
}

impl Representations {
    pub fn new(vectors: Vec<Option<Vec<f64>>>) -> Self {
        Representations { vectors }
    }

    /// Profile vectors of every user with a history.
    pub fn users(params: &ModelParams, histories: &Histories, hp: &Hyperparams) -> Self {
        let alignment = params.alignment_scores(hp.activation);
        let vectors = (0..histories.num_users())
            .map(|u| {
                histories
                    .get(u)
                    .and_then(|h| params.user_vector_with_scores(h, &alignment, hp).ok())
            })
            .collect();
        Representations { vectors }
    }

    /// Target-role embeddings of every item.
    pub fn items(params: &ModelParams) -> Self {
        let vectors = (0..params.num_items()).map(|i| Some(params.q.row(i).to_vec())).collect();
        Representations { vectors }
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, id: u32) -> Option<&[f64]> {
        self.vectors.get(id as usize).and_then(|v| v.as_deref())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityResult {
    pub query: u32,
    /// `(id, similarity)`, similarity descending then id ascending.
    pub neighbors: Vec<(u32, f64)>,
    pub threshold: f64,
}

fn by_similarity(a: &(u32, f64), b: &(u32, f64)) -> Ordering {
    b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0))
}

/// Exhaustive top-`k` neighbors of an arbitrary query vector, skipping
/// `exclude` and anything below `threshold`.
pub fn scan_vector(reps: &Representations, query: &[f64], exclude: Option<u32>, k: usize, threshold: f64) -> Vec<(u32, f64)> {
    let mut all: Vec<(u32, f64)> = reps
        .vectors
        .iter()
        .enumerate()
        .filter(|(id, _)| Some(*id as u32) != exclude)
        .filter_map(|(id, v)| {
            let v = v.as_deref()?;
            let s = adjusted_cosine(query, v).ok()?;
            (s.value >= threshold).then_some((id as u32, s.value))
        })
        .collect();
    all.sort_by(by_similarity);
    all.truncate(k);
    all
}

/// Exhaustive top-`k` neighbors of entity `id`.
pub fn scan(reps: &Representations, id: u32, k: usize, threshold: f64) -> Option<SimilarityResult> {
    let query = reps.get(id)?;
    Some(SimilarityResult {
        query: id,
        neighbors: scan_vector(reps, query, Some(id), k, threshold),
        threshold,
    })
}

/// Top-K neighbor lists for every user and item of one model snapshot.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityCache {
    /// Version tag of the snapshot the lists were computed from.
    pub version: String,
    pub depth: usize,
    /// `None` for users without a representation.
    pub users: Vec<Option<Vec<(u32, f64)>>>,
    pub items: Vec<Option<Vec<(u32, f64)>>>,
}

fn all_top_k(reps: &Representations, depth: usize) -> Vec<Option<Vec<(u32, f64)>>> {
    (0..reps.len() as u32)
        .map(|id| scan(reps, id, depth, f64::NEG_INFINITY).map(|r| r.neighbors))
        .collect()
}

/// Exhaustive top-`depth` lists for every user and item.
pub fn build_cache(
    params: &ModelParams,
    histories: &Histories,
    hp: &Hyperparams,
    depth: usize,
    version: String,
) -> SimilarityCache {
    let users = Representations::users(params, histories, hp);
    let items = Representations::items(params);
    SimilarityCache::from_representations(&users, &items, depth, version)
}

impl SimilarityCache {
    pub fn from_representations(users: &Representations, items: &Representations, depth: usize, version: String) -> Self {
        SimilarityCache {
            version,
            depth,
            users: all_top_k(users, depth),
            items: all_top_k(items, depth),
        }
    }

    /// Whether a request for `k` neighbors can be served from the cache.
    pub fn covers(&self, k: usize) -> bool {
        k <= self.depth
    }

    pub fn similar_users(&self, user: u32, k: usize) -> Result<SimilarityResult> {
        let list = self
            .users
            .get(user as usize)
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownUser(user))?;
        Ok(SimilarityResult {
            query: user,
            neighbors: list.iter().take(k).copied().collect(),
            threshold: f64::NEG_INFINITY,
        })
    }

    pub fn similar_items(&self, item: u32, k: usize, threshold: f64) -> Result<SimilarityResult> {
        let list = self
            .items
            .get(item as usize)
            .and_then(Option::as_ref)
            .ok_or(Error::UnknownItem(item))?;
        Ok(SimilarityResult {
            query: item,
            neighbors: list.iter().take(k).filter(|n| n.1 >= threshold).copied().collect(),
            threshold,
        })
    }
}

/// Similar users by direct scan over profile vectors.
pub fn similar_users(reps: &Representations, user: u32, k: usize) -> Result<SimilarityResult> {
    scan(reps, user, k, f64::NEG_INFINITY).ok_or(Error::UnknownUser(user))
}

/// Similar items by direct scan over target embeddings.
pub fn similar_items(reps: &Representations, item: u32, k: usize, threshold: f64) -> Result<SimilarityResult> {
    scan(reps, item, k, threshold).ok_or(Error::UnknownItem(item))
}
