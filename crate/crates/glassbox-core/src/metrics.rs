//! Faithfulness metrics, one per perturbation family, and the sweep that
//! scores every method under every requested metric over a budget grid.
//!
//! All three metrics report f_before - f_after, so a larger drop means the
//! attribution found words the model actually leans on. Scoring a method
//! under a foreign family needs a realization rule; see [`csa_metric`] for
//! the one nontrivial case.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interpret::{
    run_method_at, Attribution, DefKind, DefinitionSpec, InterpreterConfig, Method,
    GRADIENT_FLOOR,
};
use crate::model::{ClassifierModel, EmbeddedText, MaskedScore, ScoreModel};

/// Budget grid for one metric: ball radii for the continuous family,
/// erasure / mask sizes for the other two.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MetricBudget {
    Csa { epsilons: Vec<f64> },
    Era { sizes: Vec<usize> },
    Mma { sizes: Vec<usize> },
}

impl MetricBudget {
    pub fn kind(&self) -> DefKind {
        match self {
            MetricBudget::Csa { .. } => DefKind::Csa,
            MetricBudget::Era { .. } => DefKind::Era,
            MetricBudget::Mma { .. } => DefKind::Mma,
        }
    }

    /// Default grids: radii 0.1 to 1.0 in steps of 0.1, sizes 1 to 5.
    pub fn default_for(kind: DefKind) -> MetricBudget {
        match kind {
            DefKind::Csa => MetricBudget::Csa {
                epsilons: (1..=10).map(|i| i as f64 / 10.0).collect(),
            },
            DefKind::Era => MetricBudget::Era { sizes: (1..=5).collect() },
            DefKind::Mma => MetricBudget::Mma { sizes: (1..=5).collect() },
        }
    }

    pub fn len(&self) -> usize {
        match self {
            MetricBudget::Csa { epsilons } => epsilons.len(),
            MetricBudget::Era { sizes } | MetricBudget::Mma { sizes } => sizes.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Budget values as plain numbers, for reporting.
    pub fn values(&self) -> Vec<f64> {
        match self {
            MetricBudget::Csa { epsilons } => epsilons.clone(),
            MetricBudget::Era { sizes } | MetricBudget::Mma { sizes } => {
                sizes.iter().map(|&s| s as f64).collect()
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.is_empty() {
            return Err(Error::InvalidConfig("budget grid is empty".into()));
        }
        match self {
            MetricBudget::Csa { epsilons } => {
                for &e in epsilons {
                    DefinitionSpec::Csa { epsilon: e }.validate()?;
                }
                if !epsilons.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidConfig("radius grid must be strictly increasing".into()));
                }
            }
            MetricBudget::Era { sizes } | MetricBudget::Mma { sizes } => {
                for &s in sizes {
                    DefinitionSpec::Era { budget: s }.validate()?;
                }
                if !sizes.windows(2).all(|w| w[0] < w[1]) {
                    return Err(Error::InvalidConfig("size grid must be strictly increasing".into()));
                }
            }
        }
        Ok(())
    }
}

/// One budget point of a curve: drop statistics over the instance sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub budget: f64,
    pub mean_drop: f64,
    pub std_drop: f64,
    /// Instances aggregated into the mean.
    pub n: usize,
    /// Instances excluded because no perturbation was realizable.
    pub n_excluded: usize,
}

/// Drop-vs-budget curve for one method under one metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationCurve {
    pub method: Method,
    pub metric: DefKind,
    pub points: Vec<CurvePoint>,
}

/// Score an attribution under the continuous-movement metric: realize a
/// perturbation of L2 norm exactly epsilon and report the drop it causes.
///
/// Methods that move the input carry their own perturbation h, which is
/// rescaled to the requested radius. Ranking-only attributions are realized
/// by moving each word toward the zero vector proportionally to its score
/// (an erasure direction weighted by the method's own output), again
/// rescaled to radius epsilon. Attributions with nothing to move
/// (all-zero scores on nonzero rows, or a stalled zero perturbation) are
/// unrealizable and the instance is excluded from aggregation.
pub fn csa_metric<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    attribution: &Attribution,
    epsilon: f64,
) -> Result<f64> {
    DefinitionSpec::Csa { epsilon }.validate()?;
    if attribution.scores.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: attribution.scores.len(),
        });
    }

    let h = match &attribution.perturbation {
        Some(h) if h.norm() >= GRADIENT_FLOOR => h.scaled(epsilon / h.norm()),
        _ => {
            let mut h = x.embeddings.clone();
            for n in 0..x.len() {
                let s = attribution.scores[n];
                for v in h.row_mut(n) {
                    *v *= s;
                }
            }
            let norm = h.norm();
            if norm < GRADIENT_FLOOR {
                return Err(Error::Unrealizable);
            }
            h.scaled(epsilon / norm)
        }
    };

    let before = model.score(x, c)?;
    let mut moved = x.embeddings.clone();
    moved.axpy(-1.0, &h);
    let after = model.score(&EmbeddedText::new(x.token_ids.clone(), moved)?, c)?;
    Ok(before - after)
}

/// Score an attribution under the erasure metric: zero the embeddings of
/// the top-s words and report the drop. `s` clamps to the word count.
pub fn era_metric<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    attribution: &Attribution,
    s: usize,
) -> Result<f64> {
    if attribution.scores.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: attribution.scores.len(),
        });
    }
    let targets = attribution.top(s);
    let before = model.score(x, c)?;
    let after = model.score(&x.erase(&targets)?, c)?;
    Ok(before - after)
}

/// Effect of erasing the single word at `position`: f_c(x without the
/// word) - f_c(x). Negative when the word supports class c.
pub fn era_word_importance<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    position: usize,
) -> Result<f64> {
    let erased = x.erase(&[position])?;
    Ok(model.score(&erased, c)? - model.score(x, c)?)
}

/// Score an attribution under the attention-masking metric: zero the
/// attention scores at the top-s positions and report the drop. Requires
/// an architecture with an attention vector.
pub fn mma_metric<M: MaskedScore + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    attribution: &Attribution,
    s: usize,
) -> Result<f64> {
    if attribution.scores.len() != x.len() {
        return Err(Error::DimensionMismatch {
            expected: x.len(),
            found: attribution.scores.len(),
        });
    }
    let mut mask = vec![true; x.len()];
    for p in attribution.top(s) {
        mask[p] = false;
    }
    let before = model.masked_score(x, c, None)?;
    let after = model.masked_score(x, c, Some(&mask))?;
    Ok(before - after)
}

/// Exhaustive single-word erasure: the position whose removal drops the
/// class score the most, with that drop. Ties go to the lower position.
pub fn best_single_erasure<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
) -> Result<(usize, f64)> {
    let before = model.score(x, c)?;
    let mut best = (0, f64::NEG_INFINITY);
    for n in 0..x.len() {
        let drop = before - model.score(&x.erase(&[n])?, c)?;
        if drop > best.1 {
            best = (n, drop);
        }
    }
    Ok(best)
}

fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let y = v - comp;
        let t = sum + y;
        comp = (t - sum) - y;
        sum = t;
    }
    sum
}

/// Compensated mean and population standard deviation.
pub(crate) fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = kahan_sum(values.iter().copied()) / n;
    let var = kahan_sum(values.iter().map(|v| (v - mean) * (v - mean))) / n;
    (mean, var.sqrt())
}

/// Run a method, turning its typed no-direction failure into an exclusion.
fn attempt_method(
    model: &ClassifierModel,
    x: &EmbeddedText,
    c: usize,
    method: Method,
    cfg: &InterpreterConfig,
    epsilon: f64,
) -> Result<Option<Attribution>> {
    match run_method_at(model, x, c, method, cfg, epsilon) {
        Ok(attr) => Ok(Some(attr)),
        Err(Error::ZeroGradient { .. }) => Ok(None),
        Err(e) => Err(e),
    }
}

fn attempt_csa(
    model: &ClassifierModel,
    x: &EmbeddedText,
    c: usize,
    attribution: &Attribution,
    epsilon: f64,
) -> Result<Option<f64>> {
    match csa_metric(model, x, c, attribution, epsilon) {
        Ok(drop) => Ok(Some(drop)),
        Err(Error::Unrealizable) => Ok(None),
        Err(e) => Err(e),
    }
}

/// Drops for one instance under one method across the whole grid; `None`
/// marks an excluded point.
fn instance_drops(
    model: &ClassifierModel,
    x: &EmbeddedText,
    method: Method,
    budget: &MetricBudget,
    cfg: &InterpreterConfig,
) -> Result<Vec<Option<f64>>> {
    let c = model.best_class(x)?;
    match budget {
        MetricBudget::Csa { epsilons } => {
            if method.native_definition() == DefKind::Csa {
                // the method's own radius tracks the metric's
                epsilons
                    .iter()
                    .map(|&eps| match attempt_method(model, x, c, method, cfg, eps)? {
                        Some(attr) => attempt_csa(model, x, c, &attr, eps),
                        None => Ok(None),
                    })
                    .collect()
            } else {
                let attr = attempt_method(model, x, c, method, cfg, cfg.epsilon)?;
                epsilons
                    .iter()
                    .map(|&eps| match &attr {
                        Some(attr) => attempt_csa(model, x, c, attr, eps),
                        None => Ok(None),
                    })
                    .collect()
            }
        }
        MetricBudget::Era { sizes } => {
            let attr = attempt_method(model, x, c, method, cfg, cfg.epsilon)?;
            sizes
                .iter()
                .map(|&s| match &attr {
                    Some(attr) => era_metric(model, x, c, attr, s).map(Some),
                    None => Ok(None),
                })
                .collect()
        }
        MetricBudget::Mma { sizes } => {
            let attr = attempt_method(model, x, c, method, cfg, cfg.epsilon)?;
            sizes
                .iter()
                .map(|&s| match &attr {
                    Some(attr) => mma_metric(model, x, c, attr, s).map(Some),
                    None => Ok(None),
                })
                .collect()
        }
    }
}

/// Evaluate every method over the sample at every budget point. Instances
/// run in parallel; aggregation is compensated and order-fixed, so results
/// are identical across thread counts and bitwise reproducible.
pub fn sweep(
    model: &ClassifierModel,
    sample: &[EmbeddedText],
    methods: &[Method],
    budget: &MetricBudget,
    cfg: &InterpreterConfig,
) -> Result<Vec<EvaluationCurve>> {
    budget.validate()?;
    if sample.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no methods requested".into()));
    }
    let needs_attention =
        budget.kind() == DefKind::Mma || methods.contains(&Method::RankMask);
    if needs_attention && model.architecture() != "attention" {
        return Err(Error::WrongArchitecture {
            found: model.architecture(),
        });
    }

    let values = budget.values();
    let mut curves = Vec::with_capacity(methods.len());
    for &method in methods {
        let per_instance: Vec<Vec<Option<f64>>> = sample
            .par_iter()
            .enumerate()
            .map(|(i, x)| {
                let mut icfg = cfg.clone();
                icfg.seed = cfg.seed.wrapping_add(i as u64);
                instance_drops(model, x, method, budget, &icfg)
            })
            .collect::<Result<_>>()?;

        let mut points = Vec::with_capacity(values.len());
        for (j, &b) in values.iter().enumerate() {
            let drops: Vec<f64> = per_instance.iter().filter_map(|row| row[j]).collect();
            let n_excluded = sample.len() - drops.len();
            if drops.is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "every instance was excluded for {method} under {} at budget {b}",
                    budget.kind()
                )));
            }
            let (mean_drop, std_drop) = mean_std(&drops);
            points.push(CurvePoint {
                budget: b,
                mean_drop,
                std_drop,
                n: drops.len(),
                n_excluded,
            });
        }
        curves.push(EvaluationCurve {
            method,
            metric: budget.kind(),
            points,
        });
    }
    Ok(curves)
}
