//! Parameters and the forward pass of the attentive model and of the FISM
//! baseline.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::math;
use crate::training::Optimizer;
use crate::{ItemId, UserId};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Shape("matrix data length does not match rows * cols"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// `out = self · x`
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.cols);
        for (r, o) in out.iter_mut().enumerate().take(self.rows) {
            *o = math::dot(self.row(r), x);
        }
    }

    /// `out += selfᵀ · y`
    pub fn mul_vec_t_acc(&self, y: &[f64], out: &mut [f64]) {
        debug_assert_eq!(y.len(), self.rows);
        for (r, &yr) in y.iter().enumerate() {
            if yr != 0.0 {
                math::axpy(yr, self.row(r), out);
            }
        }
    }
}

/// The nonlinearity `g` of the alignment network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => math::tanh(x),
        }
    }

    /// Derivative at pre-activation `x`; ReLU uses 0 at the kink.
    #[inline]
    pub fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = math::tanh(x);
                1.0 - t * t
            }
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "relu" => Some(Activation::Relu),
            "tanh" => Some(Activation::Tanh),
            _ => None,
        }
    }
}

/// Which profile aggregation a model is trained and scored with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ModelKind {
    /// Learned smoothed-softmax attention over the history.
    #[default]
    Attentive,
    /// Uniform `1 / |history|^fism_alpha` weights.
    Fism,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Attentive => "nairs",
            ModelKind::Fism => "fism",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "nairs" | "attentive" => Some(ModelKind::Attentive),
            "fism" => Some(ModelKind::Fism),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hyperparams {
    /// Embedding dimension.
    pub dim: usize,
    /// Hidden width of the alignment network.
    pub attention_dim: usize,
    /// Smoothing exponent of the softmax denominator; 1 is the plain softmax.
    pub beta: f64,
    /// Exponent of the FISM `1 / |history|^alpha` normalizer.
    pub fism_alpha: f64,
    /// L2 coefficient on `P`, `Q`, `W` and `V`.
    pub lambda: f64,
    pub learning_rate: f64,
    /// Negatives sampled per positive, per epoch.
    pub neg_ratio: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub activation: Activation,
    pub optimizer: Optimizer,
    pub kind: ModelKind,
    /// Standard deviation of the Gaussian initializer.
    pub init_std: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            dim: 16,
            attention_dim: 16,
            beta: 0.5,
            fism_alpha: 0.0,
            lambda: 1e-6,
            learning_rate: 0.001,
            neg_ratio: 4,
            epochs: 30,
            batch_size: 256,
            seed: 0,
            activation: Activation::Relu,
            optimizer: Optimizer::Adam,
            kind: ModelKind::Attentive,
            init_std: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn validate(&self) -> Result<()> {
        let checks: [(bool, &'static str); 9] = [
            (self.dim >= 1, "dim must be >= 1"),
            (self.attention_dim >= 1, "attention_dim must be >= 1"),
            ((0.0..=1.0).contains(&self.beta), "beta must be in [0, 1]"),
            ((0.0..=1.0).contains(&self.fism_alpha), "fism_alpha must be in [0, 1]"),
            (self.lambda >= 0.0 && self.lambda.is_finite(), "lambda must be >= 0"),
            (self.learning_rate > 0.0 && self.learning_rate.is_finite(), "learning_rate must be > 0"),
            (self.neg_ratio >= 1, "neg_ratio must be >= 1"),
            (self.batch_size >= 1, "batch_size must be >= 1"),
            (self.init_std >= 0.0 && self.init_std.is_finite(), "init_std must be >= 0"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidHyperparams(msg)),
            None => Ok(()),
        }
    }
}

/// Parameters of the alignment network `e(p) = V · g(W p + b)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `a × d`
    pub w: Matrix,
    /// length `a`
    pub v: Vec<f64>,
    /// Hidden bias, length `a`.
    pub b: Vec<f64>,
}

impl AttentionParams {
    pub fn zeros(attention_dim: usize, dim: usize) -> Self {
        AttentionParams {
            w: Matrix::zeros(attention_dim, dim),
            v: vec![0.0; attention_dim],
            b: vec![0.0; attention_dim],
        }
    }

    pub fn attention_dim(&self) -> usize {
        self.v.len()
    }

    /// Hidden pre-activations `W p + b` written into `hidden`.
    #[inline]
    pub fn hidden(&self, p: &[f64], hidden: &mut [f64]) {
        self.w.mul_vec(p, hidden);
        for (h, b) in hidden.iter_mut().zip(&self.b) {
            *h += b;
        }
    }
}

/// All learnable parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    /// History-role item embeddings, `N × d`.
    pub p: Matrix,
    /// Target-role item embeddings, `N × d`.
    pub q: Matrix,
    pub user_bias: Vec<f64>,
    pub item_bias: Vec<f64>,
    pub attn: AttentionParams,
}

impl ModelParams {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize, attention_dim: usize) -> Self {
        ModelParams {
            p: Matrix::zeros(num_items, dim),
            q: Matrix::zeros(num_items, dim),
            user_bias: vec![0.0; num_users],
            item_bias: vec![0.0; num_items],
            attn: AttentionParams::zeros(attention_dim, dim),
        }
    }

    /// Gaussian `N(0, init_std²)` embeddings and attention weights, zero biases.
    pub fn init<R: Rng + ?Sized>(num_users: usize, num_items: usize, hp: &Hyperparams, rng: &mut R) -> Self {
        let mut params = Self::zeros(num_users, num_items, hp.dim, hp.attention_dim);
        let normal = Normal::new(0.0, hp.init_std).expect("validated std");
        let tensors: [&mut [f64]; 4] = [
            params.p.as_mut_slice(),
            params.q.as_mut_slice(),
            params.attn.w.as_mut_slice(),
            &mut params.attn.v,
        ];
        for t in tensors {
            for x in t.iter_mut() {
                *x = normal.sample(rng);
            }
        }
        params
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.num_users(), self.num_items(), self.dim(), self.attn.attention_dim())
    }

    pub fn num_users(&self) -> usize {
        self.user_bias.len()
    }

    pub fn num_items(&self) -> usize {
        self.item_bias.len()
    }

    pub fn dim(&self) -> usize {
        self.p.cols()
    }

    /// Tensors in a fixed order: `P, Q, user_bias, item_bias, W, V, b`.
    pub fn tensors(&self) -> [&[f64]; 7] {
        [
            self.p.as_slice(),
            self.q.as_slice(),
            &self.user_bias,
            &self.item_bias,
            self.attn.w.as_slice(),
            &self.attn.v,
            &self.attn.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 7] {
        [
            self.p.as_mut_slice(),
            self.q.as_mut_slice(),
            &mut self.user_bias,
            &mut self.item_bias,
            self.attn.w.as_mut_slice(),
            &mut self.attn.v,
            &mut self.attn.b,
        ]
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Trained bias of `user`, or 0 for users outside the trained id range.
    #[inline]
    pub fn user_bias_of(&self, user: UserId) -> f64 {
        self.user_bias.get(user as usize).copied().unwrap_or(0.0)
    }

    pub fn check_item(&self, item: ItemId) -> Result<()> {
        if (item as usize) < self.num_items() {
            Ok(())
        } else {
            Err(Error::UnknownItem(item))
        }
    }

    /// Alignment score `e(p_j)` of every item.
    pub fn alignment_scores(&self, activation: Activation) -> Vec<f64> {
        let mut hidden = vec![0.0; self.attn.attention_dim()];
        (0..self.num_items())
            .map(|j| alignment_with_buffer(&self.attn, self.p.row(j), activation, &mut hidden))
            .collect()
    }

    /// Attention weights of `history` in history order.
    pub fn profile_weights(&self, history: &[ItemId], hp: &Hyperparams) -> Result<Vec<(ItemId, f64)>> {
        let weights = match hp.kind {
            ModelKind::Attentive => self.attentive_weights(history, hp.beta, hp.activation)?,
            ModelKind::Fism => fism_weights(history.len(), hp.fism_alpha)?,
        };
        Ok(history.iter().copied().zip(weights).collect())
    }

    fn attentive_weights(&self, history: &[ItemId], beta: f64, activation: Activation) -> Result<Vec<f64>> {
        let embeds: Vec<&[f64]> = history.iter().map(|&j| self.p.row(j as usize)).collect();
        attention_weights(&self.attn, &embeds, beta, activation)
    }

    /// The attention-weighted profile vector `Σ_j α_uj p_j`.
    pub fn user_vector(&self, history: &[ItemId], hp: &Hyperparams) -> Result<Vec<f64>> {
        let weights = self.profile_weights(history, hp)?;
        Ok(self.weighted_sum(&weights))
    }

    /// [`user_vector`](Self::user_vector) with precomputed alignment scores.
    pub fn user_vector_with_scores(&self, history: &[ItemId], scores: &[f64], hp: &Hyperparams) -> Result<Vec<f64>> {
        let weights = match hp.kind {
            ModelKind::Attentive => {
                let e: Vec<f64> = history.iter().map(|&j| scores[j as usize]).collect();
                if e.is_empty() {
                    return Err(Error::EmptyProfile);
                }
                smoothed_softmax(&e, hp.beta)
            }
            ModelKind::Fism => fism_weights(history.len(), hp.fism_alpha)?,
        };
        let pairs: Vec<(ItemId, f64)> = history.iter().copied().zip(weights).collect();
        Ok(self.weighted_sum(&pairs))
    }

    fn weighted_sum(&self, weights: &[(ItemId, f64)]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        for &(j, a) in weights {
            math::axpy(a, self.p.row(j as usize), &mut out);
        }
        out
    }

    /// Attentive prediction `b_u + b_i + (Σ_j α_uj p_j) · q_i`.
    ///
    /// The target is removed from the attended history if present. With an
    /// empty attended set the score is `b_u + b_i`.
    pub fn predict(&self, user: UserId, history: &[ItemId], target: ItemId, hp: &Hyperparams) -> f64 {
        let attended = attended_items(history, target);
        let bias = self.user_bias_of(user) + self.item_bias[target as usize];
        match self.attentive_weights(&attended, hp.beta, hp.activation) {
            Ok(w) => {
                let pairs: Vec<(ItemId, f64)> = attended.iter().copied().zip(w).collect();
                bias + math::dot(&self.weighted_sum(&pairs), self.q.row(target as usize))
            }
            Err(_) => bias,
        }
    }

    /// FISM prediction `b_u + b_i + |H|^-alpha (Σ_j p_j) · q_i`, with the same
    /// self-exclusion and empty-history rules as [`predict`](Self::predict).
    pub fn predict_fism(&self, user: UserId, history: &[ItemId], target: ItemId, fism_alpha: f64) -> f64 {
        let attended = attended_items(history, target);
        let bias = self.user_bias_of(user) + self.item_bias[target as usize];
        if attended.is_empty() {
            return bias;
        }
        let w = math::powf(attended.len() as f64, -fism_alpha);
        let mut sum = vec![0.0; self.dim()];
        for &j in &attended {
            math::axpy(1.0, self.p.row(j as usize), &mut sum);
        }
        bias + w * math::dot(&sum, self.q.row(target as usize))
    }

    /// Prediction under the aggregation selected by `hp.kind`.
    pub fn score(&self, user: UserId, history: &[ItemId], target: ItemId, hp: &Hyperparams) -> f64 {
        match hp.kind {
            ModelKind::Attentive => self.predict(user, history, target, hp),
            ModelKind::Fism => self.predict_fism(user, history, target, hp.fism_alpha),
        }
    }
}

/// `history` without `target`, order preserved.
pub fn attended_items(history: &[ItemId], target: ItemId) -> Vec<ItemId> {
    history.iter().copied().filter(|&j| j != target).collect()
}

fn fism_weights(n: usize, alpha: f64) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptyProfile);
    }
    Ok(vec![math::powf(n as f64, -alpha); n])
}

#[inline]
fn alignment_with_buffer(attn: &AttentionParams, p: &[f64], activation: Activation, hidden: &mut [f64]) -> f64 {
    attn.hidden(p, hidden);
    hidden
        .iter()
        .zip(&attn.v)
        .map(|(&h, &v)| v * activation.apply(h))
        .sum()
}

/// Alignment score `e(p) = V · g(W p + b)`.
pub fn alignment_score(attn: &AttentionParams, p: &[f64], activation: Activation) -> Result<f64> {
    if p.len() != attn.w.cols() {
        return Err(Error::Shape("embedding length does not match W columns"));
    }
    if attn.v.len() != attn.w.rows() || attn.b.len() != attn.w.rows() {
        return Err(Error::Shape("V and b must have one entry per row of W"));
    }
    let mut hidden = vec![0.0; attn.attention_dim()];
    Ok(alignment_with_buffer(attn, p, activation, &mut hidden))
}

/// Smoothed softmax `exp(e_j) / (Σ_k exp(e_k))^beta`, in input order.
///
/// Evaluated as `exp(e_j - beta·m) · S^-beta` with `m = max_k e_k` and
/// `S = Σ_k exp(e_k - m)`, which equals the direct form but cannot overflow
/// in the sum.
pub fn smoothed_softmax(scores: &[f64], beta: f64) -> Vec<f64> {
    let m = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let shifted: Vec<f64> = scores.iter().map(|&e| math::exp(e - m)).collect();
    let s: f64 = shifted.iter().sum();
    if beta == 1.0 {
        return shifted.iter().map(|&x| x / s).collect();
    }
    let scale = math::powf(s, -beta);
    scores.iter().map(|&e| math::exp(e - beta * m) * scale).collect()
}

/// Attention weights for a history given its history-role embeddings.
pub fn attention_weights(
    attn: &AttentionParams,
    history_embeds: &[&[f64]],
    beta: f64,
    activation: Activation,
) -> Result<Vec<f64>> {
    if history_embeds.is_empty() {
        return Err(Error::EmptyProfile);
    }
    let scores = history_embeds
        .iter()
        .map(|p| alignment_score(attn, p, activation))
        .collect::<Result<Vec<_>>>()?;
    Ok(smoothed_softmax(&scores, beta))
}
