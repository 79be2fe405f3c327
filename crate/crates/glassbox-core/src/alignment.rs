//! Aligning adversarial sensitivity with human-marked rationales.
//!
//! A rationale names the words a human considers decisive. Retraining then
//! pushes the model to ignore perturbations of every other word: each round
//! freezes soft labels y~ = f(x), builds an adversary x* inside the 0.5
//! ball, splices the clean rows back in at rationale positions, and fits
//! f(spliced) to y~. As rounds pass, the adversary has nowhere to go but
//! the rationale words, so the similarity ratio (perturbation mass on
//! rationale positions over total mass) climbs.
//!
//! The loop needs headroom to show movement: a model trained to saturated
//! confidence predicts the same distribution on spliced inputs as on clean
//! ones, the distillation loss starts near zero, and the ratio stays flat.
//! Start from a model that is accurate but not yet overconfident.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::collections::BTreeSet;

use crate::autodiff::Tensor;
use crate::corpus::{Corpus, EmbeddingTable, RationaleSpec};
use crate::error::{Error, Result};
use crate::interpret::{itergrad, InterpreterConfig};
use crate::metrics::mean_std;
use crate::model::{ClassifierModel, EmbeddedText, ScoreModel};
use crate::train::{accuracy, sgd_step};

/// A vocabulary-level rationale after neighbor expansion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RationaleSet {
    pub seed_ids: Vec<usize>,
    /// Seeds plus each seed's k nearest vocabulary neighbors.
    pub expanded: BTreeSet<usize>,
    pub k: usize,
}

impl RationaleSet {
    /// Word positions of `tokens` whose ids fall in the expanded set.
    pub fn positions(&self, tokens: &[usize]) -> Vec<usize> {
        tokens
            .iter()
            .enumerate()
            .filter(|(_, t)| self.expanded.contains(t))
            .map(|(n, _)| n)
            .collect()
    }
}

/// Grow a seed vocabulary by each seed's k nearest embeddings (L2), ties
/// at the cutoff going to the lower id. The pad row and the seed itself
/// are never candidates.
pub fn expand_rationale(seeds: &[String], table: &EmbeddingTable, k: usize) -> Result<RationaleSet> {
    let mut seed_ids = Vec::with_capacity(seeds.len());
    for token in seeds {
        let id = table
            .index_of(token)
            .ok_or_else(|| Error::UnknownSeedToken { token: token.clone() })?;
        seed_ids.push(id);
    }
    let mut expanded: BTreeSet<usize> = seed_ids.iter().copied().collect();
    if k > 0 {
        for &seed in &seed_ids {
            let anchor = table.embedding(seed)?;
            let mut dists: Vec<(f64, usize)> = (1..table.len())
                .filter(|&id| id != seed)
                .map(|id| {
                    let row = table.embedding(id).expect("id in range");
                    let d2: f64 = row.iter().zip(anchor).map(|(a, b)| (a - b) * (a - b)).sum();
                    (d2, id)
                })
                .collect();
            dists.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            expanded.extend(dists.iter().take(k).map(|&(_, id)| id));
        }
    }
    Ok(RationaleSet { seed_ids, expanded, k })
}

/// Original input, full adversary, and the spliced version that keeps the
/// clean rows at rationale positions.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedAdversary {
    pub original: EmbeddedText,
    pub adversary: EmbeddedText,
    pub mixed: EmbeddedText,
}

/// Splice: rationale positions take rows from `x`, all others from
/// `x_star`. Rationale rows are copied byte for byte.
pub fn craft_aligned(
    x: &EmbeddedText,
    x_star: &EmbeddedText,
    positions: &[usize],
) -> Result<AlignedAdversary> {
    Tensor::conformable(
        "aligned splice",
        &x.embeddings,
        &x_star.embeddings,
        x.embeddings.shape() == x_star.embeddings.shape(),
    )?;
    let mut mixed = x_star.embeddings.clone();
    for &p in positions {
        if p >= x.len() {
            return Err(Error::PositionOutOfRange { position: p, len: x.len() });
        }
        mixed.row_mut(p).copy_from_slice(x.embeddings.row(p));
    }
    Ok(AlignedAdversary {
        original: x.clone(),
        adversary: x_star.clone(),
        mixed: EmbeddedText::new(x.token_ids.clone(), mixed)?,
    })
}

/// Run the ball-constrained descent the whole module standardizes on
/// (default step count, step size epsilon over steps) and return the
/// adversary it lands on with the per-word movement norms.
fn standard_adversary<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    epsilon: f64,
) -> Result<(EmbeddedText, Vec<f64>)> {
    let defaults = InterpreterConfig::default();
    let c = model.best_class(x)?;
    let attr = itergrad(model, x, c, epsilon, defaults.itergrad_steps, defaults.alpha(epsilon))?;
    let h = attr.perturbation.as_ref().expect("itergrad always carries h");
    let mut moved = x.embeddings.clone();
    moved.axpy(-1.0, h);
    Ok((EmbeddedText::new(x.token_ids.clone(), moved)?, attr.scores))
}

/// Fraction of adversarial movement that lands on rationale positions:
/// sum of per-word movement norms over `positions` divided by the total.
/// All-zero movement has no defined ratio and is reported as unrealizable.
pub fn similarity<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    positions: &[usize],
    epsilon: f64,
) -> Result<f64> {
    for &p in positions {
        if p >= x.len() {
            return Err(Error::PositionOutOfRange { position: p, len: x.len() });
        }
    }
    let (_, movement) = standard_adversary(model, x, epsilon)?;
    let total: f64 = movement.iter().sum();
    if total <= 0.0 {
        return Err(Error::Unrealizable);
    }
    let on_rationale: f64 = positions.iter().map(|&p| movement[p]).sum();
    Ok(on_rationale / total)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignConfig {
    pub rounds: usize,
    /// Ball radius for the adversary.
    pub epsilon: f64,
    pub learning_rate: f64,
    /// Full passes over the spliced instances per round.
    pub epochs_per_round: usize,
    pub batch_size: usize,
    /// Neighbor count for expanding type-level rationales.
    pub neighborhood: usize,
    pub seed: u64,
}

impl Default for AlignConfig {
    fn default() -> Self {
        AlignConfig {
            rounds: 5,
            epsilon: 0.5,
            // spliced losses are small, so distillation takes a large step;
            // saturated models see ~zero loss either way (see module docs)
            learning_rate: 1.0,
            epochs_per_round: 4,
            batch_size: 16,
            neighborhood: 8,
            seed: 13,
        }
    }
}

/// One measured round. Round 0 is the untouched model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRound {
    pub round: usize,
    pub similarity_mean: f64,
    pub similarity_std: f64,
    pub heldout_accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentReport {
    pub rounds: Vec<AlignmentRound>,
    /// Instances without rationale positions or without realizable
    /// movement, per measured round.
    pub excluded_per_round: Vec<usize>,
}

fn measure_round(
    model: &ClassifierModel,
    texts: &[EmbeddedText],
    positions: &[Vec<usize>],
    heldout: &Corpus,
    table: &EmbeddingTable,
    round: usize,
    epsilon: f64,
) -> Result<(AlignmentRound, usize)> {
    let sims: Vec<Option<f64>> = texts
        .par_iter()
        .zip(positions)
        .map(|(x, pos)| {
            if pos.is_empty() {
                return Ok(None);
            }
            match similarity(model, x, pos, epsilon) {
                Ok(s) => Ok(Some(s)),
                Err(Error::Unrealizable) => Ok(None),
                Err(e) => Err(e),
            }
        })
        .collect::<Result<_>>()?;
    let kept: Vec<f64> = sims.iter().copied().flatten().collect();
    let excluded = sims.len() - kept.len();
    if kept.is_empty() {
        return Err(Error::InvalidConfig(
            "rationale positions matched no instance with measurable movement".into(),
        ));
    }
    let (similarity_mean, similarity_std) = mean_std(&kept);
    Ok((
        AlignmentRound {
            round,
            similarity_mean,
            similarity_std,
            heldout_accuracy: accuracy(model, heldout, table)?,
        },
        excluded,
    ))
}

/// Resolve a rationale spec into per-instance word positions.
fn resolve_positions(
    rationale: &RationaleSpec,
    corpus: &Corpus,
    table: &EmbeddingTable,
    neighborhood: usize,
) -> Result<Vec<Vec<usize>>> {
    match rationale {
        RationaleSpec::Types(tokens) => {
            let set = expand_rationale(tokens, table, neighborhood)?;
            Ok(corpus.instances.iter().map(|i| set.positions(&i.tokens)).collect())
        }
        RationaleSpec::Positions(map) => corpus
            .instances
            .iter()
            .enumerate()
            .map(|(i, inst)| {
                let positions = map.get(&i).cloned().unwrap_or_default();
                for &p in &positions {
                    if p >= inst.tokens.len() {
                        return Err(Error::PositionOutOfRange {
                            position: p,
                            len: inst.tokens.len(),
                        });
                    }
                }
                Ok(positions)
            })
            .collect(),
    }
}

/// The retraining loop. Per round: freeze soft labels and adversaries with
/// the current parameters, splice, then fit the spliced inputs back to the
/// frozen labels by SGD. Measurements bracket the rounds, so the report
/// has rounds + 1 rows and round 0 is the incoming model.
pub fn alignment_retrain(
    model: ClassifierModel,
    train: &Corpus,
    heldout: &Corpus,
    table: &EmbeddingTable,
    rationale: &RationaleSpec,
    cfg: &AlignConfig,
) -> Result<(ClassifierModel, AlignmentReport)> {
    if train.is_empty() || heldout.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    if !(cfg.epsilon > 0.0 && cfg.epsilon.is_finite()) {
        return Err(Error::InvalidConfig(format!(
            "ball radius must be positive, got {}",
            cfg.epsilon
        )));
    }

    let mut model = model;
    let texts = train.embed_all(table)?;
    let positions = resolve_positions(rationale, train, table, cfg.neighborhood)?;

    let mut report = AlignmentReport {
        rounds: Vec::with_capacity(cfg.rounds + 1),
        excluded_per_round: Vec::with_capacity(cfg.rounds + 1),
    };
    let (baseline, excluded) =
        measure_round(&model, &texts, &positions, heldout, table, 0, cfg.epsilon)?;
    report.rounds.push(baseline);
    report.excluded_per_round.push(excluded);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for round in 1..=cfg.rounds {
        // freeze this round's targets and adversaries before any update
        let frozen: Vec<(EmbeddedText, Vec<f64>)> = texts
            .par_iter()
            .zip(&positions)
            .map(|(x, pos)| {
                let soft = model.predict(x)?;
                let (x_star, _) = standard_adversary(&model, x, cfg.epsilon)?;
                let spliced = craft_aligned(x, &x_star, pos)?.mixed;
                Ok((spliced, soft))
            })
            .collect::<Result<_>>()?;

        let mut order: Vec<usize> = (0..frozen.len()).collect();
        for _ in 0..cfg.epochs_per_round {
            order.shuffle(&mut rng);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<(&EmbeddedText, &[f64])> = chunk
                    .iter()
                    .map(|&i| (&frozen[i].0, frozen[i].1.as_slice()))
                    .collect();
                let loss = sgd_step(&mut model, &batch, cfg.learning_rate)?;
                debug_assert!(loss >= -1e-12, "soft cross-entropy went negative: {loss}");
            }
        }

        let (row, excluded) =
            measure_round(&model, &texts, &positions, heldout, table, round, cfg.epsilon)?;
        report.rounds.push(row);
        report.excluded_per_round.push(excluded);
    }
    Ok((model, report))
}
