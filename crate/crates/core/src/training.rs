//! Regularized log loss with sampled negatives, its analytic gradient, and the
//! mini-batch fitting loop.
//!
//! For one instance with attended history `H` (the target removed), scores
//! `e_j`, plain softmax `π_j = exp(e_j) / Σ_k exp(e_k)` and smoothed weights
//! `α_j = exp(e_j) / (Σ_k exp(e_k))^β`, the prediction is
//! `r = b_u + b_t + Σ_j α_j (p_j · q_t)` and
//!
//! ```text
//! ∂α_j/∂e_k = α_j (δ_jk − β π_k)
//! ∂r/∂e_k   = α_k s_k − β π_k Σ_j α_j s_j        with s_j = p_j · q_t
//! ```
//!
//! Alignment scores depend only on the item, so the gradient with respect to
//! `e_k` is accumulated per item over the whole batch and pushed through the
//! alignment network once per item.

use alloc::vec;
use alloc::vec::Vec;
use core::ops::{Deref, DerefMut};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::dataset::{build_user_histories, sample_negatives, Histories, InteractionSet};
use crate::error::{Error, Result};
use crate::math;
use crate::model::{Hyperparams, ModelKind, ModelParams};
use crate::{ItemId, UserId};

/// Lower clamp applied to probabilities inside the logarithms.
pub const LOG_CLAMP: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Optimizer {
    /// Adam with moments (0.9, 0.999) and ε = 1e-8.
    #[default]
    Adam,
    Sgd,
}

impl Optimizer {
    pub fn name(self) -> &'static str {
        match self {
            Optimizer::Adam => "adam",
            Optimizer::Sgd => "sgd",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "adam" => Some(Optimizer::Adam),
            "sgd" => Some(Optimizer::Sgd),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TrainingInstance {
    pub user: UserId,
    pub target: ItemId,
    pub label: bool,
}

impl TrainingInstance {
    pub fn positive(user: UserId, target: ItemId) -> Self {
        TrainingInstance { user, target, label: true }
    }

    pub fn negative(user: UserId, target: ItemId) -> Self {
        TrainingInstance { user, target, label: false }
    }
}

/// Gradient of the loss, shaped exactly like [`ModelParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet(pub ModelParams);

impl GradientSet {
    pub fn zeros_like(params: &ModelParams) -> Self {
        GradientSet(params.zeros_like())
    }
}

impl Deref for GradientSet {
    type Target = ModelParams;
    fn deref(&self) -> &ModelParams {
        &self.0
    }
}

impl DerefMut for GradientSet {
    fn deref_mut(&mut self) -> &mut ModelParams {
        &mut self.0
    }
}

/// Per-instance log loss on the raw score and its derivative with respect to
/// the score.
#[inline]
fn log_loss(score: f64, label: bool) -> (f64, f64) {
    // p is the probability assigned to the observed label.
    let (p, grad_if_unclamped) = if label {
        (math::sigmoid(score), math::sigmoid(score) - 1.0)
    } else {
        (math::sigmoid(-score), math::sigmoid(score))
    };
    if p > LOG_CLAMP {
        (-math::ln(p), grad_if_unclamped)
    } else {
        (-math::ln(LOG_CLAMP), 0.0)
    }
}

/// `λ ‖θ‖²` over `P`, `Q` and, for the attentive model, `W` and `V`.
pub fn regularizer(params: &ModelParams, hp: &Hyperparams) -> f64 {
    let mut sq = math::sum_sq(params.p.as_slice()) + math::sum_sq(params.q.as_slice());
    if hp.kind == ModelKind::Attentive {
        sq += math::sum_sq(params.attn.w.as_slice()) + math::sum_sq(&params.attn.v);
    }
    hp.lambda * sq
}

fn history_of<'a>(histories: &'a Histories, user: UserId) -> &'a [ItemId] {
    histories.get(user).unwrap_or(&[])
}

/// Mean binary cross-entropy of the batch plus the L2 term.
///
/// Scores go through [`ModelParams::score`], independently of the batched
/// gradient code.
pub fn batch_loss(params: &ModelParams, batch: &[TrainingInstance], histories: &Histories, hp: &Hyperparams) -> f64 {
    let ce: f64 = batch
        .iter()
        .map(|inst| {
            let s = params.score(inst.user, history_of(histories, inst.user), inst.target, hp);
            log_loss(s, inst.label).0
        })
        .sum();
    ce / batch.len().max(1) as f64 + regularizer(params, hp)
}

/// Analytic gradient of [`batch_loss`].
pub fn batch_gradients(params: &ModelParams, batch: &[TrainingInstance], histories: &Histories, hp: &Hyperparams) -> GradientSet {
    let mut ws = Workspace::new(params);
    let mut grads = GradientSet::zeros_like(params);
    ws.accumulate(params, batch, histories, hp, &mut grads);
    grads
}

/// Scratch buffers reused across batches.
struct Workspace {
    /// Batch-local slot of each item whose alignment was computed, or `NONE`.
    slot_of: Vec<u32>,
    slot_items: Vec<ItemId>,
    /// Hidden pre-activations, `a` per slot.
    hidden: Vec<f64>,
    /// Alignment score per slot.
    score: Vec<f64>,
    /// Accumulated `∂L/∂e` per slot.
    score_grad: Vec<f64>,
    order: Vec<usize>,
    shifted: Vec<f64>,
    uvec: Vec<f64>,
    alpha: Vec<f64>,
}

const NONE: u32 = u32::MAX;

impl Workspace {
    fn new(params: &ModelParams) -> Self {
        Workspace {
            slot_of: vec![NONE; params.num_items()],
            slot_items: Vec::new(),
            hidden: Vec::new(),
            score: Vec::new(),
            score_grad: Vec::new(),
            order: Vec::new(),
            shifted: Vec::new(),
            uvec: vec![0.0; params.dim()],
            alpha: Vec::new(),
        }
    }

    fn reset(&mut self) {
        for &item in &self.slot_items {
            self.slot_of[item as usize] = NONE;
        }
        self.slot_items.clear();
        self.hidden.clear();
        self.score.clear();
        self.score_grad.clear();
    }

    fn ensure_alignment(&mut self, params: &ModelParams, item: ItemId, hp: &Hyperparams) -> usize {
        let slot = self.slot_of[item as usize];
        if slot != NONE {
            return slot as usize;
        }
        let a = params.attn.attention_dim();
        let s = self.slot_items.len();
        self.slot_of[item as usize] = s as u32;
        self.slot_items.push(item);
        let start = self.hidden.len();
        self.hidden.resize(start + a, 0.0);
        let h = &mut self.hidden[start..];
        params.attn.hidden(params.p.row(item as usize), h);
        let e = h
            .iter()
            .zip(&params.attn.v)
            .map(|(&x, &v)| v * hp.activation.apply(x))
            .sum();
        self.score.push(e);
        self.score_grad.push(0.0);
        s
    }

    /// Adds the gradient of the batch loss into `grads` and returns the mean
    /// cross-entropy (without the regularizer).
    fn accumulate(
        &mut self,
        params: &ModelParams,
        batch: &[TrainingInstance],
        histories: &Histories,
        hp: &Hyperparams,
        grads: &mut GradientSet,
    ) -> f64 {
        self.reset();
        if batch.is_empty() {
            return 0.0;
        }
        let inv_b = 1.0 / batch.len() as f64;
        let attentive = hp.kind == ModelKind::Attentive;
        let beta = hp.beta;

        self.order.clear();
        self.order.extend(0..batch.len());
        self.order.sort_by_key(|&i| batch[i].user);

        let mut ce = 0.0;
        let mut start = 0;
        while start < self.order.len() {
            let user = batch[self.order[start]].user;
            let mut end = start;
            while end < self.order.len() && batch[self.order[end]].user == user {
                end += 1;
            }
            let history = history_of(histories, user);

            // Per-user shifted exponentials exp(e_j - m).
            let mut m = f64::NEG_INFINITY;
            if attentive {
                self.shifted.clear();
                for &j in history {
                    let s = self.ensure_alignment(params, j, hp);
                    m = m.max(self.score[s]);
                }
                for &j in history {
                    let e = self.score[self.slot_of[j as usize] as usize];
                    self.shifted.push(math::exp(e - m));
                }
            }

            for k in start..end {
                let inst = batch[self.order[k]];
                let t = inst.target as usize;
                let q_t = params.q.row(t);
                let n = history.iter().filter(|&&j| j != inst.target).count();

                let bias = params.user_bias_of(user) + params.item_bias[t];
                if n == 0 {
                    let (l, g) = log_loss(bias, inst.label);
                    ce += l;
                    let delta = g * inv_b;
                    if (user as usize) < params.num_users() {
                        grads.user_bias[user as usize] += delta;
                    }
                    grads.item_bias[t] += delta;
                    continue;
                }

                // Attention weights over the attended set, aligned with `history`
                // (the excluded target gets weight 0).
                self.alpha.clear();
                let mut sum_shifted = 0.0;
                if attentive {
                    for (&j, &x) in history.iter().zip(&self.shifted) {
                        if j != inst.target {
                            sum_shifted += x;
                        }
                    }
                    let factor = if beta == 1.0 {
                        1.0 / sum_shifted
                    } else {
                        math::exp((1.0 - beta) * m - beta * math::ln(sum_shifted))
                    };
                    for (&j, &x) in history.iter().zip(&self.shifted) {
                        self.alpha.push(if j == inst.target { 0.0 } else { x * factor });
                    }
                } else {
                    let w = math::powf(n as f64, -hp.fism_alpha);
                    self.alpha
                        .extend(history.iter().map(|&j| if j == inst.target { 0.0 } else { w }));
                }

                self.uvec.iter_mut().for_each(|x| *x = 0.0);
                for (&j, &a) in history.iter().zip(&self.alpha) {
                    if a != 0.0 {
                        math::axpy(a, params.p.row(j as usize), &mut self.uvec);
                    }
                }
                let y = math::dot(&self.uvec, q_t);
                let (l, g) = log_loss(bias + y, inst.label);
                ce += l;
                let delta = g * inv_b;
                if delta == 0.0 {
                    continue;
                }

                if (user as usize) < params.num_users() {
                    grads.user_bias[user as usize] += delta;
                }
                grads.item_bias[t] += delta;
                math::axpy(delta, &self.uvec, grads.q.row_mut(t));

                for (idx, &j) in history.iter().enumerate() {
                    if j == inst.target {
                        continue;
                    }
                    let a = self.alpha[idx];
                    math::axpy(delta * a, q_t, grads.p.row_mut(j as usize));
                    if attentive {
                        let s_j = math::dot(params.p.row(j as usize), q_t);
                        let pi_j = self.shifted[idx] / sum_shifted;
                        let slot = self.slot_of[j as usize] as usize;
                        self.score_grad[slot] += delta * (a * s_j - beta * pi_j * y);
                    }
                }
            }
            start = end;
        }

        if attentive {
            self.backprop_alignment(params, hp, grads);
        }

        let lambda2 = 2.0 * hp.lambda;
        if lambda2 != 0.0 {
            let reg_tensors: &[usize] = if attentive { &[0, 1, 4, 5] } else { &[0, 1] };
            let src = params.tensors();
            let dst = grads.tensors_mut();
            for &ti in reg_tensors {
                math::axpy(lambda2, src[ti], dst[ti]);
            }
        }
        ce * inv_b
    }

    fn backprop_alignment(&mut self, params: &ModelParams, hp: &Hyperparams, grads: &mut GradientSet) {
        let a = params.attn.attention_dim();
        let mut dh = vec![0.0; a];
        for (slot, &item) in self.slot_items.iter().enumerate() {
            let ge = self.score_grad[slot];
            if ge == 0.0 {
                continue;
            }
            let h = &self.hidden[slot * a..(slot + 1) * a];
            for r in 0..a {
                grads.attn.v[r] += ge * hp.activation.apply(h[r]);
                dh[r] = ge * params.attn.v[r] * hp.activation.derivative(h[r]);
            }
            let p = params.p.row(item as usize);
            for (r, &d) in dh.iter().enumerate() {
                if d != 0.0 {
                    math::axpy(d, p, grads.attn.w.row_mut(r));
                    grads.attn.b[r] += d;
                }
            }
            params.attn.w.mul_vec_t_acc(&dh, grads.p.row_mut(item as usize));
        }
    }
}

/// Adam / SGD state.
struct OptimizerState {
    kind: Optimizer,
    m: ModelParams,
    v: ModelParams,
    step: i32,
}

/// Moments of parameters that receive no gradient decay geometrically and
/// would otherwise end up subnormal, which is very slow on common CPUs.
#[inline]
fn flush(x: f64) -> f64 {
    if x.abs() < 1e-150 {
        0.0
    } else {
        x
    }
}

impl OptimizerState {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(kind: Optimizer, params: &ModelParams) -> Self {
        OptimizerState {
            kind,
            m: params.zeros_like(),
            v: params.zeros_like(),
            step: 0,
        }
    }

    fn apply(&mut self, params: &mut ModelParams, grads: &GradientSet, lr: f64) {
        self.step += 1;
        match self.kind {
            Optimizer::Sgd => {
                for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
                    math::axpy(-lr, g, p);
                }
            }
            Optimizer::Adam => {
                let c1 = 1.0 - math::powf(Self::BETA1, self.step as f64);
                let c2 = 1.0 - math::powf(Self::BETA2, self.step as f64);
                let step_size = lr * math::sqrt(c2) / c1;
                let tensors = params
                    .tensors_mut()
                    .into_iter()
                    .zip(grads.tensors())
                    .zip(self.m.tensors_mut())
                    .zip(self.v.tensors_mut());
                for (((p, g), m), v) in tensors {
                    for i in 0..p.len() {
                        let gi = g[i];
                        m[i] = flush(Self::BETA1 * m[i] + (1.0 - Self::BETA1) * gi);
                        v[i] = flush(Self::BETA2 * v[i] + (1.0 - Self::BETA2) * gi * gi);
                        p[i] -= step_size * m[i] / (math::sqrt(v[i]) + Self::EPS);
                    }
                }
            }
        }
    }
}

/// Validation metrics reported after an epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Validation {
    pub hr: f64,
    pub ndcg: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    /// 1-based epoch number.
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's instances plus the L2 term at the
    /// end of the epoch.
    pub loss: f64,
    pub validation: Option<Validation>,
    pub seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub hyperparams: Hyperparams,
    /// Loss of the initial parameters on the first epoch's instances.
    pub initial_loss: Option<f64>,
    pub epochs: Vec<EpochStats>,
    pub wall_seconds: f64,
}

impl TrainReport {
    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }
}

/// Hooks the fitting loop calls; the defaults do nothing.
pub trait TrainObserver {
    /// Monotonic clock in seconds, used for the report's timings.
    fn now(&self) -> f64 {
        0.0
    }

    /// Called after each epoch; may return validation metrics.
    fn on_epoch(&mut self, _epoch: usize, _params: &ModelParams) -> Option<Validation> {
        None
    }
}

/// Observer that records nothing.
pub struct Silent;

impl TrainObserver for Silent {}

#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    Invalid(Error),
    /// The loss became non-finite; the report holds the epochs completed so far.
    Diverged { epoch: usize, report: TrainReport },
}

impl core::fmt::Display for FitError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            FitError::Invalid(e) => write!(f, "{e}"),
            FitError::Diverged { epoch, .. } => {
                write!(f, "training diverged at epoch {epoch}: loss is not finite")
            }
        }
    }
}

impl core::error::Error for FitError {}

impl From<Error> for FitError {
    fn from(e: Error) -> Self {
        FitError::Invalid(e)
    }
}

/// Builds one epoch of instances: every positive followed by `neg_ratio`
/// sampled negatives, then shuffled.
pub fn epoch_instances<R: rand::Rng + ?Sized>(
    train: &InteractionSet,
    histories: &Histories,
    neg_ratio: usize,
    rng: &mut R,
) -> Vec<TrainingInstance> {
    let mut out = Vec::with_capacity(train.len() * (1 + neg_ratio));
    for i in train.interactions() {
        out.push(TrainingInstance::positive(i.user, i.item));
        // Users who interacted with every item contribute positives only.
        if let Ok(negs) = sample_negatives(histories, i.user, neg_ratio, rng) {
            out.extend(negs.into_iter().map(|j| TrainingInstance::negative(i.user, j)));
        }
    }
    out.shuffle(rng);
    out
}

/// Fits a model on `train`. Deterministic given `hp.seed`.
pub fn fit(
    train: &InteractionSet,
    hp: &Hyperparams,
    observer: &mut dyn TrainObserver,
) -> core::result::Result<(ModelParams, TrainReport), FitError> {
    hp.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyDataset.into());
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut params = ModelParams::init(train.num_users() as usize, train.num_items() as usize, hp, &mut rng);
    let histories = build_user_histories(train);
    let started = observer.now();
    let mut report = TrainReport {
        hyperparams: hp.clone(),
        initial_loss: None,
        epochs: Vec::new(),
        wall_seconds: 0.0,
    };

    let mut opt = OptimizerState::new(hp.optimizer, &params);
    let mut ws = Workspace::new(&params);
    let mut grads = GradientSet::zeros_like(&params);

    for epoch in 1..=hp.epochs {
        let epoch_start = observer.now();
        let instances = epoch_instances(train, &histories, hp.neg_ratio, &mut rng);
        if epoch == 1 {
            let mut ce = 0.0;
            for batch in instances.chunks(hp.batch_size) {
                ce += ws.accumulate(&params, batch, &histories, hp, &mut grads) * batch.len() as f64;
            }
            report.initial_loss = Some(ce / instances.len().max(1) as f64 + regularizer(&params, hp));
        }
        let mut ce_sum = 0.0;
        for batch in instances.chunks(hp.batch_size) {
            for t in grads.tensors_mut() {
                t.iter_mut().for_each(|x| *x = 0.0);
            }
            let ce = ws.accumulate(&params, batch, &histories, hp, &mut grads);
            if !ce.is_finite() {
                report.wall_seconds = observer.now() - started;
                return Err(FitError::Diverged { epoch, report });
            }
            ce_sum += ce * batch.len() as f64;
            opt.apply(&mut params, &grads, hp.learning_rate);
        }
        let loss = ce_sum / instances.len().max(1) as f64 + regularizer(&params, hp);
        if !loss.is_finite() || !params.is_finite() {
            report.wall_seconds = observer.now() - started;
            return Err(FitError::Diverged { epoch, report });
        }
        let validation = observer.on_epoch(epoch, &params);
        report.epochs.push(EpochStats {
            epoch,
            loss,
            validation,
            seconds: observer.now() - epoch_start,
        });
    }
    report.wall_seconds = observer.now() - started;
    Ok((params, report))
}

/// Convenience wrapper for callers that need the loss and the gradient of
/// the same batch.
pub fn loss_and_gradients(
    params: &ModelParams,
    batch: &[TrainingInstance],
    histories: &Histories,
    hp: &Hyperparams,
) -> Result<(f64, GradientSet)> {
    if batch.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut ws = Workspace::new(params);
    let mut grads = GradientSet::zeros_like(params);
    let ce = ws.accumulate(params, batch, histories, hp, &mut grads);
    Ok((ce + regularizer(params, hp), grads))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn hp0() -> Hyperparams {
        Hyperparams {
            lambda: 0.0,
            dim: 2,
            attention_dim: 2,
            ..Default::default()
        }
    }

    #[test]
    fn loss_at_zero_score_is_ln2() {
        let params = ModelParams::zeros(1, 2, 2, 2);
        let h = Histories::from_lists(vec![vec![0]], 2);
        let ln2 = math::ln(2.0);
        let pos = batch_loss(&params, &[TrainingInstance::positive(0, 1)], &h, &hp0());
        let neg = batch_loss(&params, &[TrainingInstance::negative(0, 1)], &h, &hp0());
        assert!((pos - ln2).abs() < 1e-12);
        assert!((neg - ln2).abs() < 1e-12);
    }

    #[test]
    fn regularizer_adds_lambda_norm() {
        let mut params = ModelParams::zeros(1, 2, 2, 2);
        params.p.row_mut(1)[0] = 2.0;
        let h = Histories::from_lists(vec![vec![0]], 2);
        let hp = Hyperparams { lambda: 1.0, ..hp0() };
        let batch = [TrainingInstance::positive(0, 1)];
        let ce = batch_loss(&params, &batch, &h, &hp0());
        assert!((batch_loss(&params, &batch, &h, &hp) - (ce + 4.0)).abs() < 1e-12);
    }

    #[test]
    fn bias_gradient_at_zero_params() {
        let params = ModelParams::zeros(1, 3, 2, 2);
        let h = Histories::from_lists(vec![vec![0]], 3);
        let g = batch_gradients(&params, &[TrainingInstance::positive(0, 2)], &h, &hp0());
        assert_eq!(g.item_bias[2], -0.5);
        assert_eq!(g.user_bias[0], -0.5);
        let g = batch_gradients(&params, &[TrainingInstance::negative(0, 2)], &h, &hp0());
        assert_eq!(g.item_bias[2], 0.5);
    }

    #[test]
    fn clamped_loss_is_finite_with_zero_gradient() {
        let mut params = ModelParams::zeros(1, 2, 1, 1);
        params.item_bias[1] = -100.0;
        let h = Histories::from_lists(vec![vec![0]], 2);
        let batch = [TrainingInstance::positive(0, 1)];
        let l = batch_loss(&params, &batch, &h, &hp0());
        assert!((l + math::ln(LOG_CLAMP)).abs() < 1e-9);
        assert_eq!(batch_gradients(&params, &batch, &h, &hp0()).item_bias[1], 0.0);
    }

    #[test]
    fn zero_epochs_returns_initialization() {
        let train = InteractionSet::from_pairs(&[(0, 0), (0, 1), (1, 1)]);
        let hp = Hyperparams { epochs: 0, ..Default::default() };
        let (params, report) = fit(&train, &hp, &mut Silent).unwrap();
        let init = ModelParams::init(2, 2, &hp, &mut ChaCha8Rng::seed_from_u64(hp.seed));
        assert_eq!(params, init);
        assert!(report.epochs.is_empty());
    }

    #[test]
    fn empty_train_is_rejected() {
        let err = fit(&InteractionSet::new(Vec::new()), &Hyperparams::default(), &mut Silent).unwrap_err();
        assert_eq!(err, FitError::Invalid(Error::EmptyDataset));
    }

    #[test]
    fn divergence_is_reported() {
        let train = InteractionSet::from_pairs(&[(0, 0), (0, 1), (1, 1), (1, 2)]);
        let hp = Hyperparams {
            optimizer: Optimizer::Sgd,
            learning_rate: 1e300,
            lambda: 1.0,
            init_std: 1.0,
            epochs: 5,
            ..Default::default()
        };
        match fit(&train, &hp, &mut Silent) {
            Err(FitError::Diverged { epoch, report }) => assert_eq!(report.epochs.len(), epoch - 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }
}
