//! Property tests over random models, histories and datasets.

use nairs_core::dataset::{build_user_histories, leave_one_out_split, sample_negatives, Histories, Interaction, InteractionSet};
use nairs_core::evaluation::{evaluate, EvalConfig, FnScorer};
use nairs_core::interpretation::contribution_scores;
use nairs_core::math;
use nairs_core::model::{attended_items, attention_weights, smoothed_softmax, Activation, Hyperparams, ModelKind, ModelParams};
use nairs_core::retrieval::{adjusted_cosine, scan, SimilarityCache, Representations};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn activation() -> impl Strategy<Value = Activation> {
    prop_oneof![Just(Activation::Relu), Just(Activation::Tanh)]
}

/// A random model over `items` items with a history drawn from them.
fn model_and_history(items: usize) -> impl Strategy<Value = (ModelParams, Vec<u32>, Hyperparams)> {
    (any::<u64>(), 0.05f64..0.8, activation(), prop::sample::subsequence((0..items as u32).collect::<Vec<_>>(), 1..items))
        .prop_map(move |(seed, std, act, mut history)| {
            let hp = Hyperparams { dim: 5, attention_dim: 4, init_std: std, activation: act, ..Default::default() };
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut params = ModelParams::init(3, items, &hp, &mut rng);
            for (k, b) in params.item_bias.iter_mut().enumerate() {
                *b = (k as f64 * 0.37).sin();
            }
            params.user_bias[1] = 0.25;
            params.attn.b.iter_mut().for_each(|b| *b = std / 2.0);
            // Deterministic shuffle so histories are not always sorted.
            history.reverse();
            (params, history, hp)
        })
}

fn embeds<'a>(params: &'a ModelParams, history: &[u32]) -> Vec<&'a [f64]> {
    history.iter().map(|&j| params.p.row(j as usize)).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn plain_softmax_sums_to_one((params, history, hp) in model_and_history(12)) {
        let w = attention_weights(&params.attn, &embeds(&params, &history), 1.0, hp.activation).unwrap();
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert!(w.iter().all(|&a| a > 0.0));
    }

    #[test]
    fn shift_invariance(scores in prop::collection::vec(-30.0f64..30.0, 1..40), c in -500.0f64..500.0) {
        let a = smoothed_softmax(&scores, 1.0);
        let shifted: Vec<f64> = scores.iter().map(|e| e + c).collect();
        let b = smoothed_softmax(&shifted, 1.0);
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).abs() <= 1e-9);
        }
    }

    #[test]
    fn smoothed_weights_match_direct_formula(scores in prop::collection::vec(-5.0f64..5.0, 1..20), beta in 0.0f64..=1.0) {
        // exp(e_j) / (Σ exp(e_k))^β evaluated naively; safe for small scores.
        let denom = scores.iter().map(|e| e.exp()).sum::<f64>().powf(beta);
        for (w, e) in smoothed_softmax(&scores, beta).iter().zip(&scores) {
            let direct = e.exp() / denom;
            prop_assert!((w - direct).abs() <= 1e-12 * direct.max(1.0));
        }
    }

    #[test]
    fn order_equivariance((params, history, hp) in model_and_history(10), beta in 0.0f64..=1.0, rot in 0usize..10) {
        let w = attention_weights(&params.attn, &embeds(&params, &history), beta, hp.activation).unwrap();
        let k = rot % history.len();
        let mut permuted = history.clone();
        permuted.rotate_left(k);
        let mut expected = w.clone();
        expected.rotate_left(k);
        let wp = attention_weights(&params.attn, &embeds(&params, &permuted), beta, hp.activation).unwrap();
        for (a, b) in wp.iter().zip(&expected) {
            // Only the summation order of the normalizer differs.
            prop_assert!((a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
    }

    #[test]
    fn predict_is_bias_plus_dot((params, history, hp) in model_and_history(10), target in 0u32..10, user in 0u32..3, beta in 0.0f64..=1.0) {
        let hp = Hyperparams { beta, ..hp };
        let r = params.predict(user, &history, target, &hp);
        let attended = attended_items(&history, target);
        let bias = params.user_bias[user as usize] + params.item_bias[target as usize];
        let expected = match params.user_vector(&attended, &hp) {
            Ok(u) => bias + math::dot(&u, params.q.row(target as usize)),
            Err(_) => bias,
        };
        prop_assert!((r - expected).abs() <= 1e-9);
    }

    #[test]
    fn constant_attention_at_beta_one_is_fism((params, history, hp) in model_and_history(10), target in 0u32..10) {
        let mut params = params;
        params.attn.w.as_mut_slice().iter_mut().for_each(|w| *w = 0.0);
        let hp = Hyperparams { beta: 1.0, ..hp };
        let a = params.predict(0, &history, target, &hp);
        let b = params.predict_fism(0, &history, target, 1.0);
        prop_assert!((a - b).abs() <= 1e-9);
    }

    #[test]
    fn contributions_add_up((params, history, hp) in model_and_history(10), target in 0u32..10, beta in 0.0f64..=1.0) {
        let hp = Hyperparams { beta, ..hp };
        prop_assume!(!attended_items(&history, target).is_empty());
        let c = contribution_scores(&params, 1, &history, target, &hp).unwrap();
        prop_assert!((c.total() - params.predict(1, &history, target, &hp)).abs() <= 1e-9);
    }

    #[test]
    fn fism_kind_dispatch((params, history, hp) in model_and_history(8), target in 0u32..8, alpha in 0.0f64..=1.0) {
        let hp = Hyperparams { kind: ModelKind::Fism, fism_alpha: alpha, ..hp };
        prop_assert_eq!(params.score(0, &history, target, &hp), params.predict_fism(0, &history, target, alpha));
    }

    #[test]
    fn adjusted_cosine_range_and_symmetry(
        x in prop::collection::vec(-1e3f64..1e3, 1..24),
        seed in any::<u64>(),
    ) {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let y: Vec<f64> = x.iter().map(|_| rng.random_range(-1e3..1e3)).collect();
        let s = adjusted_cosine(&x, &y).unwrap();
        prop_assert!((0.0..=2.0).contains(&s.value));
        prop_assert_eq!(s.value, adjusted_cosine(&y, &x).unwrap().value);
    }
}

fn random_dataset(seed: u64, users: u32, items: u32, density: f64) -> InteractionSet {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rows = Vec::new();
    for u in 0..users {
        for i in 0..items {
            if rng.random_bool(density) {
                let ts = if rng.random_bool(0.9) { Some(rng.random_range(0..1000)) } else { None };
                rows.push(Interaction { user: u, item: i, timestamp: ts });
            }
        }
    }
    // Shuffle the file order too.
    for k in (1..rows.len()).rev() {
        rows.swap(k, rng.random_range(0..=k));
    }
    InteractionSet::with_dims(rows, users, items).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn leave_one_out_partitions(seed in any::<u64>(), density in 0.05f64..0.6) {
        let data = random_dataset(seed, 12, 20, density);
        let split = leave_one_out_split(&data);
        prop_assert_eq!(split.train.len() + split.test.len(), data.len());
        let mut counts = vec![0usize; 12];
        for i in data.interactions() {
            counts[i.user as usize] += 1;
        }
        for u in 0..12u32 {
            let held: Vec<_> = split.test.iter().filter(|t| t.0 == u).collect();
            prop_assert_eq!(held.len(), usize::from(counts[u as usize] >= 2));
            for &&(_, item) in &held {
                prop_assert!(!split.train.interactions().iter().any(|i| i.user == u && i.item == item));
                prop_assert!(data.interactions().iter().any(|i| i.user == u && i.item == item));
            }
        }
    }

    #[test]
    fn negatives_are_never_positives(seed in any::<u64>(), density in 0.05f64..0.95) {
        let data = random_dataset(seed, 6, 15, density);
        let histories = build_user_histories(&data);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for u in 0..6 {
            match sample_negatives(&histories, u, 10, &mut rng) {
                Ok(negs) => {
                    prop_assert_eq!(negs.len(), 10);
                    prop_assert!(negs.iter().all(|&j| !histories.contains(u, j) && j < 15));
                }
                Err(_) => prop_assert_eq!(histories.sorted(u).len(), 15),
            }
        }
    }

    #[test]
    fn evaluation_metrics_are_consistent(seed in any::<u64>()) {
        let data = random_dataset(seed, 15, 60, 0.15);
        let split = leave_one_out_split(&data);
        prop_assume!(!split.test.is_empty());
        let scorer = FnScorer(|u: u32, i: u32| ((u as f64 + 1.0) * (i as f64 + 3.0) * 0.618).sin());
        let mut prev = (0.0, 0.0);
        for n in [1, 3, 5, 10, 20] {
            let cfg = EvalConfig { n, num_sampled_negatives: 30, seed };
            let m = evaluate(&scorer, &split, &cfg).unwrap();
            prop_assert!(m.hr >= prev.0 && m.ndcg >= prev.1);
            prop_assert!((0.0..=1.0).contains(&m.hr) && (0.0..=1.0).contains(&m.ndcg));
            for r in &m.per_user {
                prop_assert_eq!(m.user_ndcg(r) > 0.0, m.hit(r));
            }
            prev = (m.hr, m.ndcg);
        }
    }

    #[test]
    fn cache_equals_exhaustive_scan(seed in any::<u64>(), depth in 1usize..12) {
        use rand::Rng;
        let hp = Hyperparams { dim: 4, attention_dim: 3, init_std: 0.5, ..Default::default() };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = ModelParams::init(30, 25, &hp, &mut rng);
        let lists = (0..30)
            .map(|_| (0..25u32).filter(|_| rng.random_bool(0.2)).collect())
            .collect();
        let histories = Histories::from_lists(lists, 25);
        let users = Representations::users(&params, &histories, &hp);
        let items = Representations::items(&params);
        let cache = SimilarityCache::from_representations(&users, &items, depth, "v".into());
        for u in 0..30 {
            let brute = scan(&users, u, depth, f64::NEG_INFINITY).map(|r| r.neighbors);
            prop_assert_eq!(cache.users[u as usize].clone(), brute);
        }
        for i in 0..25 {
            let brute = scan(&items, i, depth, 1.0).unwrap().neighbors;
            prop_assert_eq!(cache.similar_items(i, depth, 1.0).unwrap().neighbors, brute);
        }
    }
}

#[test]
fn equal_scores_give_n_to_minus_beta_exactly() {
    let params = ModelParams::zeros(1, 64, 4, 4);
    for beta in [0.0, 0.25, 0.5, 0.75, 1.0] {
        for n in 1..=64usize {
            let history: Vec<u32> = (0..n as u32).collect();
            let w = attention_weights(&params.attn, &embeds(&params, &history), beta, Activation::Relu).unwrap();
            let expected = math::powf(n as f64, -beta);
            assert!(w.iter().all(|&a| a == expected), "n={n} beta={beta}");
        }
    }
}
