//! Finite-difference checks of the hand-written ELBO gradient.

use std::sync::Arc;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use stream_etm::corpus::BowDocument;
use stream_etm::embeddings::EmbeddingMatrix;
use stream_etm::etm::{elbo, gradients, init_model, EtmModel, Noise};

const STEP: f64 = 1e-5;
const TOL: f64 = 1e-4;

fn instance(seed: u64) -> (EtmModel, Vec<BowDocument>, Noise) {
    let (v, k, l, h) = (20, 3, 8, 16);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rho = Arc::new(
        EmbeddingMatrix::new(Array2::from_shape_fn((l, v), |_| rng.sample(StandardNormal))).unwrap(),
    );
    let mut model = init_model(k, h, rho, seed).unwrap();
    // non-zero biases so every code path is exercised
    model.encoder.b1.mapv_inplace(|_| rng.random_range(-0.1..0.1));
    model.encoder.b_mu.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    model.encoder.b_sig.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let docs = (0..4)
        .map(|d| {
            let mut counts = Vec::new();
            for w in 0..v {
                if rng.random_bool(0.4) {
                    counts.push((w, rng.random_range(1..5u32)));
                }
            }
            if counts.is_empty() {
                counts.push((d, 1));
            }
            BowDocument {
                id: format!("d{d}"),
                counts,
                label: None,
            }
        })
        .collect::<Vec<_>>();
    let noise = Noise::from_shape_fn((4, 1, k), |_| rng.sample(StandardNormal));
    (model, docs, noise)
}

fn neg_elbo(model: &EtmModel, docs: &[BowDocument], noise: &Noise) -> f64 {
    -elbo(model, docs, noise).unwrap().total
}

/// Worst relative error per parameter group, in the order
/// W1, b1, Wmu, bmu, Wsig, bsig, alpha.
fn max_relative_errors(seed: u64, freeze_alpha: bool) -> [f64; 7] {
    let (model, docs, noise) = instance(seed);
    let (_, grads) = gradients(&model, &docs, &noise, freeze_alpha).unwrap();
    let analytic: Vec<Vec<f64>> = grads.groups().iter().map(|g| g.to_vec()).collect();
    let mut worst = [0.0f64; 7];
    let n_groups = if freeze_alpha { 6 } else { 7 };
    for group in 0..n_groups {
        let len = analytic[group].len();
        for i in 0..len {
            let mut plus = model.clone();
            plus.param_groups_mut()[group][i] += STEP;
            let mut minus = model.clone();
            minus.param_groups_mut()[group][i] -= STEP;
            let fd = (neg_elbo(&plus, &docs, &noise) - neg_elbo(&minus, &docs, &noise)) / (2.0 * STEP);
            let a = analytic[group][i];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
            worst[group] = worst[group].max(rel);
        }
    }
    worst
}

#[test]
fn gradients_match_finite_differences_free_alpha() {
    let worst = max_relative_errors(11, false);
    println!("max relative error per group: {worst:?}");
    assert!(worst.iter().all(|&e| e < TOL), "{worst:?}");
}

#[test]
fn gradients_match_finite_differences_frozen_alpha() {
    let worst = max_relative_errors(12, true);
    assert!(worst.iter().all(|&e| e < TOL), "{worst:?}");
    let (model, docs, noise) = instance(12);
    let (_, g) = gradients(&model, &docs, &noise, true).unwrap();
    assert!(g.alpha.iter().all(|&x| x == 0.0));
}

#[test]
fn gradients_match_with_several_mc_samples() {
    let (model, docs, _) = instance(13);
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let noise = Noise::from_shape_fn((docs.len(), 3, model.topics()), |_| rng.sample(StandardNormal));
    let (_, grads) = gradients(&model, &docs, &noise, false).unwrap();
    let a = grads.alpha[[2, 1]];
    let mut plus = model.clone();
    plus.alpha[[2, 1]] += STEP;
    let mut minus = model.clone();
    minus.alpha[[2, 1]] -= STEP;
    let fd = (neg_elbo(&plus, &docs, &noise) - neg_elbo(&minus, &docs, &noise)) / (2.0 * STEP);
    assert!((a - fd).abs() / a.abs().max(1e-6) < TOL, "{a} vs {fd}");
}
