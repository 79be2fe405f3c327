//! Independent oracles for the quantities the attribution methods are
//! supposed to approximate: random-direction baselines, brute-force
//! erasure search, path-integral completeness, and the planted synthetic
//! task itself.

mod common;

use common::bench;
use glassbox_core::alignment::{alignment_retrain, AlignConfig};
use glassbox_core::autodiff::Tensor;
use glassbox_core::interpret::{inpgrad, integrad, itergrad, vagrad};
use glassbox_core::metrics::{best_single_erasure, csa_metric, era_metric};
use glassbox_core::model::{ClassifierModel, EmbeddedText, Pooling, ScoreModel};
use glassbox_core::train::accuracy;
use glassbox_core::RationaleSpec;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

#[test]
fn trained_fixtures_generalize() {
    let b = bench();
    let att = accuracy(&b.attention, &b.test_split, &b.table).unwrap();
    let bag = accuracy(&b.bag, &b.test_split, &b.table).unwrap();
    assert!(att >= 0.95, "attention held-out accuracy {att}");
    assert!(bag >= 0.95, "bag held-out accuracy {bag}");
}

fn random_direction_drop(
    model: &ClassifierModel,
    x: &EmbeddedText,
    c: usize,
    epsilon: f64,
    draws: usize,
    rng: &mut ChaCha8Rng,
) -> f64 {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let before = model.score(x, c).unwrap();
    let mut total = 0.0;
    for _ in 0..draws {
        let mut h: Vec<f64> = (0..x.embeddings.len()).map(|_| normal.sample(rng)).collect();
        let norm = h.iter().map(|v| v * v).sum::<f64>().sqrt();
        for v in &mut h {
            *v *= epsilon / norm;
        }
        let moved: Vec<f64> = x
            .embeddings
            .data()
            .iter()
            .zip(&h)
            .map(|(a, b)| a - b)
            .collect();
        let xp = EmbeddedText::new(
            x.token_ids.clone(),
            Tensor::new(vec![x.len(), x.dim()], moved),
        )
        .unwrap();
        total += before - model.score(&xp, c).unwrap();
    }
    total / draws as f64
}

// The steepest-descent direction should beat blind directions of the same
// length on average; a large margin here means the gradient is informative.
#[test]
fn vagrad_beats_random_directions_of_equal_norm() {
    let b = bench();
    for model in [&b.attention, &b.bag] {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let mut grad_total = 0.0;
        let mut rand_total = 0.0;
        let mut n = 0;
        for x in &b.sample100 {
            let c = model.predict_class(x).unwrap();
            let Ok(attr) = vagrad(model, x, c, 0.5) else { continue };
            grad_total += csa_metric(model, x, c, &attr, 0.5).unwrap();
            rand_total += random_direction_drop(model, x, c, 0.5, 20, &mut rng);
            n += 1;
        }
        assert!(n >= 90, "too many zero-gradient instances: {}", 100 - n);
        let (grad_mean, rand_mean) = (grad_total / n as f64, rand_total / n as f64);
        assert!(
            grad_mean > rand_mean,
            "{}: gradient direction {grad_mean} vs random {rand_mean}",
            model.architecture()
        );
    }
}

// Projected ascent refines the one-shot linearization and also beats
// realizing an erasure-flavored score as a ball perturbation.
#[test]
fn itergrad_refines_one_shot_direction_choices() {
    let b = bench();
    let mut iter_total = 0.0;
    let mut va_total = 0.0;
    let mut inp_total = 0.0;
    let mut n = 0;
    for x in &b.sample100 {
        let c = b.attention.predict_class(x).unwrap();
        let Ok(it) = itergrad(&b.attention, x, c, 0.5, 25, 0.02) else { continue };
        let Ok(va) = vagrad(&b.attention, x, c, 0.5) else { continue };
        let inp = inpgrad(&b.attention, x, c).unwrap();
        let Ok(inp_drop) = csa_metric(&b.attention, x, c, &inp, 0.5) else { continue };
        iter_total += csa_metric(&b.attention, x, c, &it, 0.5).unwrap();
        va_total += csa_metric(&b.attention, x, c, &va, 0.5).unwrap();
        inp_total += inp_drop;
        n += 1;
    }
    assert!(n >= 90);
    assert!(iter_total >= va_total, "iterative {iter_total} vs one-shot {va_total}");
    assert!(iter_total > inp_total, "iterative {iter_total} vs realized signed scores {inp_total}");
}

fn completeness_residual(model: &ClassifierModel, x: &EmbeddedText, points: usize) -> f64 {
    let c = model.predict_class(x).unwrap();
    let attr = integrad(model, x, c, points).unwrap();
    let zero = EmbeddedText::new(
        x.token_ids.clone(),
        Tensor::zeros(vec![x.len(), x.dim()]),
    )
    .unwrap();
    let span = model.score(x, c).unwrap() - model.score(&zero, c).unwrap();
    (attr.scores.iter().sum::<f64>() - span).abs()
}

// The path sum should converge to the exact score difference as the grid
// refines: f(x) - f(0) is what the T-point sum approximates.
#[test]
fn integrad_path_sum_converges_to_the_score_difference() {
    let b = bench();
    let mean = |points: usize| -> f64 {
        b.sample100
            .iter()
            .map(|x| completeness_residual(&b.bag, x, points))
            .sum::<f64>()
            / b.sample100.len() as f64
    };
    let (r2, r20, r80) = (mean(2), mean(20), mean(80));
    assert!(r20 < r2, "residual at 20 points {r20} vs 2 points {r2}");
    assert!(r80 < r2, "residual at 80 points {r80} vs 2 points {r2}");
    let finer_wins = b
        .sample100
        .iter()
        .filter(|x| completeness_residual(&b.bag, x, 20) <= completeness_residual(&b.bag, x, 2))
        .count();
    assert!(finer_wins >= 70, "finer path won on only {finer_wins}/100 instances");
}

// On a binary linear model the signed input-gradient score orders words by
// their exact erasure effect, so its top pick must match exhaustive search.
#[test]
fn inpgrad_top_word_matches_brute_force_erasure_on_linear_models() {
    let b = bench();
    for seed in 0..5u64 {
        let model = ClassifierModel::bag(b.table.dim(), None, 2, Pooling::Sum, 40 + seed);
        for x in b.sample100.iter().take(20) {
            let c = model.predict_class(x).unwrap();
            let attr = inpgrad(&model, x, c).unwrap();
            let top = attr.top(1)[0];
            let (_, oracle_drop) = best_single_erasure(&model, x, c).unwrap();
            let top_drop = era_metric(&model, x, c, &attr, 1).unwrap();
            assert!(
                (top_drop - oracle_drop).abs() < 1e-12,
                "seed {seed}: top word {top} drops {top_drop}, oracle {oracle_drop}"
            );
        }
    }
}

// End-to-end sanity on the planted task: retraining toward the rationale
// should push the similarity column up, allowing at most one dip.
#[test]
fn alignment_similarity_rises_across_rounds() {
    let b = bench();
    let cfg = AlignConfig {
        rounds: 3,
        ..AlignConfig::default()
    };
    let rationale = RationaleSpec::Types(b.rationale_tokens.clone());
    let (_, report) = alignment_retrain(
        b.attention_early.clone(),
        &b.train_split,
        &b.test_split,
        &b.table,
        &rationale,
        &cfg,
    )
    .unwrap();
    let sims: Vec<f64> = report.rounds.iter().map(|r| r.similarity_mean).collect();
    assert_eq!(sims.len(), 4);
    let dips = sims.windows(2).filter(|w| w[1] < w[0]).count();
    assert!(dips <= 1, "similarity column {sims:?} dipped {dips} times");
    assert!(
        sims.last().unwrap() > sims.first().unwrap(),
        "similarity did not rise: {sims:?}"
    );
}
