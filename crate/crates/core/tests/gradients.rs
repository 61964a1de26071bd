//! Analytic gradients against central finite differences of the loss.

use nairs_core::dataset::Histories;
use nairs_core::model::{Activation, Hyperparams, ModelKind, ModelParams};
use nairs_core::training::{batch_gradients, batch_loss, loss_and_gradients, TrainingInstance};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-4;

/// Relative error with a floor on the denominator so that entries which are
/// zero up to rounding are compared absolutely.
fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

struct Case {
    params: ModelParams,
    batch: Vec<TrainingInstance>,
    histories: Histories,
    hp: Hyperparams,
}

fn random_case(seed: u64) -> Case {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (users, items, dim, att) = (3usize, 5usize, 4usize, 3usize);
    let hp = Hyperparams {
        dim,
        attention_dim: att,
        beta: [0.0, 0.3, 0.5, 1.0][seed as usize % 4],
        lambda: if seed % 3 == 0 { 0.0 } else { rng.random_range(0.0..0.1) },
        activation: if seed % 2 == 0 { Activation::Tanh } else { Activation::Relu },
        kind: if seed % 5 == 4 { ModelKind::Fism } else { ModelKind::Attentive },
        fism_alpha: rng.random_range(0.0..1.0),
        init_std: 0.7,
        ..Default::default()
    };
    let mut params = ModelParams::init(users, items, &hp, &mut rng);
    for t in [&mut params.user_bias, &mut params.item_bias, &mut params.attn.b] {
        t.iter_mut().for_each(|x| *x = rng.random_range(-0.5..0.5));
    }
    // Random non-empty histories; user 2 has a single item so a positive on
    // it leaves an empty attended set.
    let lists = (0..users)
        .map(|u| {
            if u == 2 {
                vec![rng.random_range(0..items as u32)]
            } else {
                (0..items as u32).filter(|_| rng.random_bool(0.6)).collect::<Vec<_>>()
            }
        })
        .map(|l: Vec<u32>| if l.is_empty() { vec![0] } else { l })
        .collect();
    let histories = Histories::from_lists(lists, items as u32);
    let batch = (0..rng.random_range(1..7))
        .map(|_| {
            let user = rng.random_range(0..users as u32);
            let h = histories.get(user).unwrap();
            if rng.random_bool(0.5) {
                TrainingInstance::positive(user, h[rng.random_range(0..h.len())])
            } else {
                TrainingInstance::negative(user, rng.random_range(0..items as u32))
            }
        })
        .collect();
    Case { params, batch, histories, hp }
}

fn max_fd_error(case: &Case) -> (f64, usize) {
    let grads = batch_gradients(&case.params, &case.batch, &case.histories, &case.hp);
    let mut worst = 0.0f64;
    let mut checked = 0;
    for (ti, g) in grads.tensors().iter().enumerate() {
        for k in 0..g.len() {
            let mut plus = case.params.clone();
            plus.tensors_mut()[ti][k] += STEP;
            let mut minus = case.params.clone();
            minus.tensors_mut()[ti][k] -= STEP;
            let fd = (batch_loss(&plus, &case.batch, &case.histories, &case.hp)
                - batch_loss(&minus, &case.batch, &case.histories, &case.hp))
                / (2.0 * STEP);
            worst = worst.max(rel_err(g[k], fd));
            checked += 1;
        }
    }
    (worst, checked)
}

#[test]
fn analytic_gradients_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..120 {
        let case = random_case(seed);
        let (err, checked) = max_fd_error(&case);
        assert!(checked > 0);
        assert!(err < 1e-4, "seed {seed}: max relative error {err:e}");
        worst = worst.max(err);
    }
    println!("max relative error over 120 configurations: {worst:e}");
}

#[test]
fn combined_loss_matches_reference_loss() {
    for seed in 0..40 {
        let c = random_case(seed);
        let (l, g) = loss_and_gradients(&c.params, &c.batch, &c.histories, &c.hp).unwrap();
        let reference = batch_loss(&c.params, &c.batch, &c.histories, &c.hp);
        assert!((l - reference).abs() < 1e-12, "seed {seed}");
        assert_eq!(g, batch_gradients(&c.params, &c.batch, &c.histories, &c.hp));
    }
}

#[test]
fn untouched_items_have_zero_rows() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let hp = Hyperparams { dim: 4, attention_dim: 3, lambda: 0.0, init_std: 0.5, ..Default::default() };
    let params = ModelParams::init(2, 6, &hp, &mut rng);
    let histories = Histories::from_lists(vec![vec![0, 1], vec![2]], 6);
    let batch = [TrainingInstance::positive(0, 1), TrainingInstance::negative(1, 3)];
    let g = batch_gradients(&params, &batch, &histories, &hp);
    for item in [4, 5] {
        assert!(g.p.row(item).iter().all(|&x| x == 0.0));
        assert!(g.q.row(item).iter().all(|&x| x == 0.0));
        assert_eq!(g.item_bias[item], 0.0);
    }
    // Item 3 is only a target: Q row touched, P row not.
    assert!(g.p.row(3).iter().all(|&x| x == 0.0));
    assert!(g.q.row(3).iter().any(|&x| x != 0.0));
}

#[test]
fn small_step_does_not_increase_loss() {
    for seed in 0..60 {
        let c = random_case(seed);
        let before = batch_loss(&c.params, &c.batch, &c.histories, &c.hp);
        let g = batch_gradients(&c.params, &c.batch, &c.histories, &c.hp);
        let mut stepped = c.params.clone();
        for (p, d) in stepped.tensors_mut().into_iter().zip(g.tensors()) {
            for (x, dx) in p.iter_mut().zip(d) {
                *x -= 1e-3 * dx;
            }
        }
        let after = batch_loss(&stepped, &c.batch, &c.histories, &c.hp);
        assert!(after <= before + 1e-9, "seed {seed}: {before} -> {after}");
    }
}

#[test]
fn regularizer_gradient_is_two_lambda_theta() {
    // History embeddings live in dims 0..2 and target embeddings in dims 2..4,
    // so every p·q product is zero. The cross-entropy signal then reaches the
    // attention network not at all, P only along q (dims 2..4) and Q only
    // along the user vector (dims 0..2); the remaining coordinates carry the
    // regularizer alone.
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let hp = Hyperparams { dim: 4, attention_dim: 3, lambda: 0.05, init_std: 0.5, ..Default::default() };
    let mut params = ModelParams::init(1, 4, &hp, &mut rng);
    for j in 0..4 {
        params.p.row_mut(j)[2..].fill(0.0);
        params.q.row_mut(j)[..2].fill(0.0);
    }
    let histories = Histories::from_lists(vec![vec![0, 1]], 4);
    let batch = [TrainingInstance::positive(0, 2), TrainingInstance::negative(0, 3)];
    let g = batch_gradients(&params, &batch, &histories, &hp);
    assert!(g.item_bias[2] != 0.0, "cross-entropy signal is present");

    let two_lambda = 2.0 * hp.lambda;
    for j in 0..4 {
        for k in 0..2 {
            assert!((g.p.row(j)[k] - two_lambda * params.p.row(j)[k]).abs() < 1e-15);
        }
        for k in 2..4 {
            assert!((g.q.row(j)[k] - two_lambda * params.q.row(j)[k]).abs() < 1e-15);
        }
    }
    for (gw, w) in g.attn.w.as_slice().iter().zip(params.attn.w.as_slice()) {
        assert!((gw - two_lambda * w).abs() < 1e-15);
    }
    for (gv, v) in g.attn.v.iter().zip(&params.attn.v) {
        assert!((gv - two_lambda * v).abs() < 1e-15);
    }
    assert!(g.attn.b.iter().all(|&x| x == 0.0));
}
