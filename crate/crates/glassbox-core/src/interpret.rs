//! Attribution methods: which words drove the class score?
//!
//! Three perturbation families anchor everything. Continuous methods
//! (vagrad, smoothgrad, itergrad) move the whole embedded input inside an
//! L2 ball of radius epsilon and read per-word importance off the movement
//! norms. Erasure methods (inpgrad, integrad) estimate the score change
//! from zeroing a word's embedding. The masking method (rankmask) reads the
//! attention vector directly. Each attribution records which family it
//! natively targets, so the metrics module can score it under its own or a
//! foreign family.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, EmbeddedText, MaskedScore, ScoreModel};

/// Gradient norms below this leave no usable perturbation direction.
pub const GRADIENT_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    VaGrad,
    SmoothGrad,
    IterGrad,
    InpGrad,
    InteGrad,
    RankMask,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::VaGrad,
        Method::SmoothGrad,
        Method::IterGrad,
        Method::InpGrad,
        Method::InteGrad,
        Method::RankMask,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::VaGrad => "vagrad",
            Method::SmoothGrad => "smoothgrad",
            Method::IterGrad => "itergrad",
            Method::InpGrad => "inpgrad",
            Method::InteGrad => "integrad",
            Method::RankMask => "rankmask",
        }
    }

    pub fn parse(name: &str) -> Result<Method> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method {name:?}")))
    }

    /// The perturbation family the method is derived from.
    pub fn native_definition(self) -> DefKind {
        match self {
            Method::VaGrad | Method::SmoothGrad | Method::IterGrad => DefKind::Csa,
            Method::InpGrad | Method::InteGrad => DefKind::Era,
            Method::RankMask => DefKind::Mma,
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Perturbation family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DefKind {
    /// Continuous movement inside an L2 ball.
    Csa,
    /// Embedding erasure (zero vectors).
    Era,
    /// Attention masking.
    Mma,
}

impl DefKind {
    pub const ALL: [DefKind; 3] = [DefKind::Csa, DefKind::Era, DefKind::Mma];

    pub fn name(self) -> &'static str {
        match self {
            DefKind::Csa => "csa",
            DefKind::Era => "era",
            DefKind::Mma => "mma",
        }
    }

    pub fn parse(name: &str) -> Result<DefKind> {
        DefKind::ALL
            .into_iter()
            .find(|d| d.name() == name)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown metric {name:?}")))
    }
}

impl std::fmt::Display for DefKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// One perturbation family with its budget pinned.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum DefinitionSpec {
    Csa { epsilon: f64 },
    Era { budget: usize },
    Mma { budget: usize },
}

impl DefinitionSpec {
    pub fn kind(self) -> DefKind {
        match self {
            DefinitionSpec::Csa { .. } => DefKind::Csa,
            DefinitionSpec::Era { .. } => DefKind::Era,
            DefinitionSpec::Mma { .. } => DefKind::Mma,
        }
    }

    pub fn validate(self) -> Result<()> {
        match self {
            DefinitionSpec::Csa { epsilon } => {
                if epsilon > 0.0 && epsilon.is_finite() {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig(format!("ball radius must be positive, got {epsilon}")))
                }
            }
            DefinitionSpec::Era { budget } | DefinitionSpec::Mma { budget } => {
                if budget >= 1 {
                    Ok(())
                } else {
                    Err(Error::InvalidConfig("budget must be at least 1".into()))
                }
            }
        }
    }
}

/// Per-word importance scores from one method on one instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Attribution {
    pub method: Method,
    pub definition: DefKind,
    /// One score per word. Continuous methods yield non-negative movement
    /// norms; erasure methods yield signed drop estimates.
    pub scores: Vec<f64>,
    /// Raw perturbation h = x - x* for methods that move the input.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub perturbation: Option<Tensor>,
}

impl Attribution {
    /// Word positions ordered by raw signed score, highest first; equal
    /// scores are ordered by position. Signed scores deliberately rank
    /// most-positive first: they estimate the drop from erasing the word.
    pub fn ranking(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scores.len()).collect();
        order.sort_by(|&a, &b| {
            self.scores[b]
                .partial_cmp(&self.scores[a])
                .expect("scores are finite")
                .then(a.cmp(&b))
        });
        order
    }

    /// Top `s` positions of [`Self::ranking`]; `s` clamps to N.
    pub fn top(&self, s: usize) -> Vec<usize> {
        let mut r = self.ranking();
        r.truncate(s.min(self.scores.len()));
        r
    }
}

/// Hyperparameters shared by the methods, with the defaults the whole
/// harness uses: 20 smoothing samples, 25 descent steps of epsilon/25 each,
/// 20 path points, ball radius 0.5.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpreterConfig {
    /// Ball radius used when a single attribution is requested.
    pub epsilon: f64,
    pub smoothgrad_samples: usize,
    /// Componentwise noise std. Absolute; pick it relative to the corpus
    /// embedding scale (see [`crate::corpus::mean_word_norm`]).
    pub smoothgrad_sigma: f64,
    pub itergrad_steps: usize,
    /// Step size; `None` means epsilon / itergrad_steps.
    pub itergrad_alpha: Option<f64>,
    pub integrad_points: usize,
    pub seed: u64,
}

impl Default for InterpreterConfig {
    fn default() -> Self {
        InterpreterConfig {
            epsilon: 0.5,
            smoothgrad_samples: 20,
            smoothgrad_sigma: 0.1,
            itergrad_steps: 25,
            itergrad_alpha: None,
            integrad_points: 20,
            seed: 1,
        }
    }
}

impl InterpreterConfig {
    pub fn alpha(&self, epsilon: f64) -> f64 {
        self.itergrad_alpha
            .unwrap_or(epsilon / self.itergrad_steps as f64)
    }
}

fn row_dot(a: &Tensor, b: &Tensor, row: usize) -> f64 {
    a.row(row).iter().zip(b.row(row)).map(|(x, y)| x * y).sum()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    DefinitionSpec::Csa { epsilon }.validate()
}

/// Build the continuous-family attribution from a gradient direction:
/// move distance epsilon against the gradient and read row norms.
fn from_gradient(method: Method, gradient: &Tensor, epsilon: f64, words: usize) -> Result<Attribution> {
    let norm = gradient.norm();
    if norm < GRADIENT_FLOOR {
        return Err(Error::ZeroGradient {
            threshold: GRADIENT_FLOOR,
        });
    }
    let h = gradient.scaled(epsilon / norm);
    let scores = (0..words).map(|n| h.row_norm(n)).collect();
    Ok(Attribution {
        method,
        definition: DefKind::Csa,
        scores,
        perturbation: Some(h),
    })
}

/// Single gradient step to the sphere: x* = x - epsilon g / |g|.
pub fn vagrad<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    epsilon: f64,
) -> Result<Attribution> {
    check_epsilon(epsilon)?;
    let g = model.score_gradient(x, c)?;
    from_gradient(Method::VaGrad, &g.gradient, epsilon, x.len())
}

/// Average gradients over Gaussian-jittered copies of the input, then
/// proceed as vagrad with the averaged direction.
pub fn smoothgrad<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    epsilon: f64,
    sigma: f64,
    samples: usize,
    seed: u64,
) -> Result<Attribution> {
    check_epsilon(epsilon)?;
    if samples == 0 {
        return Err(Error::InvalidConfig("smoothing needs at least one sample".into()));
    }
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidConfig(format!("noise std must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        // degenerate noise: one gradient at x, bit-for-bit the vagrad direction
        let g = model.score_gradient(x, c)?;
        return from_gradient(Method::SmoothGrad, &g.gradient, epsilon, x.len());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, sigma).expect("positive std");
    let mut acc = Tensor::zeros(x.embeddings.shape().to_vec());
    for _ in 0..samples {
        let mut jittered = x.embeddings.clone();
        for v in jittered.data_mut() {
            *v += normal.sample(&mut rng);
        }
        let noisy = EmbeddedText::new(x.token_ids.clone(), jittered)?;
        let g = model.score_gradient(&noisy, c)?;
        acc.axpy(1.0, &g.gradient);
    }
    let mean = acc.scaled(1.0 / samples as f64);
    from_gradient(Method::SmoothGrad, &mean, epsilon, x.len())
}

/// Projected gradient descent on the class score inside the epsilon ball
/// (projection over the flattened embedding matrix). A vanishing gradient
/// stalls the walk rather than erroring; the result may be the zero
/// perturbation.
pub fn itergrad<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    epsilon: f64,
    t_max: usize,
    alpha: f64,
) -> Result<Attribution> {
    check_epsilon(epsilon)?;
    if t_max == 0 {
        return Err(Error::InvalidConfig("need at least one descent step".into()));
    }
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidConfig(format!("step size must be positive, got {alpha}")));
    }

    let mut current = x.embeddings.clone();
    for _ in 0..t_max {
        let point = EmbeddedText::new(x.token_ids.clone(), current.clone())?;
        let g = model.score_gradient(&point, c)?;
        if g.gradient.norm() < GRADIENT_FLOOR {
            break;
        }
        current.axpy(-alpha, &g.gradient);

        let mut diff = current.clone();
        diff.axpy(-1.0, &x.embeddings);
        let dist = diff.norm();
        if dist > epsilon {
            let shrink = epsilon / dist;
            for ((cur, base), d) in current
                .data_mut()
                .iter_mut()
                .zip(x.embeddings.data())
                .zip(diff.data())
            {
                *cur = base + d * shrink;
            }
        }
    }

    let mut h = x.embeddings.clone();
    h.axpy(-1.0, &current);
    let scores = (0..x.len()).map(|n| h.row_norm(n)).collect();
    Ok(Attribution {
        method: Method::IterGrad,
        definition: DefKind::Csa,
        scores,
        perturbation: Some(h),
    })
}

/// Input-times-gradient: per-word inner product of the gradient row with
/// the embedding row, a first-order estimate of the drop from erasing the
/// word. Signed.
pub fn inpgrad<M: ScoreModel + ?Sized>(model: &M, x: &EmbeddedText, c: usize) -> Result<Attribution> {
    let g = model.score_gradient(x, c)?;
    let scores = (0..x.len()).map(|n| row_dot(&g.gradient, &x.embeddings, n)).collect();
    Ok(Attribution {
        method: Method::InpGrad,
        definition: DefKind::Era,
        scores,
        perturbation: None,
    })
}

/// Left-endpoint path integral of gradients from x toward the all-zero
/// text: scores[n] = x^n . (1/T) sum_t grad f_c(x (1 - t/T))^n. With one
/// point this is exactly inpgrad.
pub fn integrad<M: ScoreModel + ?Sized>(
    model: &M,
    x: &EmbeddedText,
    c: usize,
    points: usize,
) -> Result<Attribution> {
    if points == 0 {
        return Err(Error::InvalidConfig("need at least one path point".into()));
    }
    let mut acc = Tensor::zeros(x.embeddings.shape().to_vec());
    for t in 0..points {
        let factor = 1.0 - t as f64 / points as f64;
        let stop = EmbeddedText::new(x.token_ids.clone(), x.embeddings.scaled(factor))?;
        let g = model.score_gradient(&stop, c)?;
        acc.axpy(1.0, &g.gradient);
    }
    let scale = 1.0 / points as f64;
    let scores = (0..x.len())
        .map(|n| row_dot(&acc, &x.embeddings, n) * scale)
        .collect();
    Ok(Attribution {
        method: Method::InteGrad,
        definition: DefKind::Era,
        scores,
        perturbation: None,
    })
}

/// The attention vector read off as importance scores.
pub fn rankmask<M: MaskedScore + ?Sized>(model: &M, x: &EmbeddedText) -> Result<Attribution> {
    let scores = model.attention_weights(x)?;
    Ok(Attribution {
        method: Method::RankMask,
        definition: DefKind::Mma,
        scores,
        perturbation: None,
    })
}

/// Dispatch a method with an explicit ball radius for the continuous family.
pub fn run_method_at(
    model: &ClassifierModel,
    x: &EmbeddedText,
    c: usize,
    method: Method,
    cfg: &InterpreterConfig,
    epsilon: f64,
) -> Result<Attribution> {
    match method {
        Method::VaGrad => vagrad(model, x, c, epsilon),
        Method::SmoothGrad => smoothgrad(
            model,
            x,
            c,
            epsilon,
            cfg.smoothgrad_sigma,
            cfg.smoothgrad_samples,
            cfg.seed,
        ),
        Method::IterGrad => itergrad(model, x, c, epsilon, cfg.itergrad_steps, cfg.alpha(epsilon)),
        Method::InpGrad => inpgrad(model, x, c),
        Method::InteGrad => integrad(model, x, c, cfg.integrad_points),
        Method::RankMask => rankmask(model, x),
    }
}

/// Dispatch a method at the config's default radius.
pub fn run_method(
    model: &ClassifierModel,
    x: &EmbeddedText,
    c: usize,
    method: Method,
    cfg: &InterpreterConfig,
) -> Result<Attribution> {
    run_method_at(model, x, c, method, cfg, cfg.epsilon)
}

/// Wire form of an attribution: one JSON line per instance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionRecord {
    pub method: Method,
    pub definition: DefKind,
    pub tokens: Vec<usize>,
    pub scores: Vec<f64>,
}

impl AttributionRecord {
    pub fn new(attribution: &Attribution, x: &EmbeddedText) -> Self {
        AttributionRecord {
            method: attribution.method,
            definition: attribution.definition,
            tokens: x.token_ids.clone(),
            scores: attribution.scores.clone(),
        }
    }
}

pub fn write_attributions(path: &Path, records: &[AttributionRecord]) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    for record in records {
        serde_json::to_writer(&mut out, record)?;
        writeln!(out).map_err(|e| Error::io(&display, e))?;
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

pub fn read_attributions(path: &Path) -> Result<Vec<AttributionRecord>> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = std::io::BufReader::new(file);
    let mut records = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: display.clone(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Activation, LinearFunctional, Pooling};

    fn two_word_text() -> EmbeddedText {
        EmbeddedText::new(
            vec![1, 2],
            Tensor::matrix(&[vec![1.0, 1.0], vec![1.0, 1.0]]),
        )
        .unwrap()
    }

    /// f(x) = x1 . (1,0) + x2 . (0,2)
    fn anisotropic_linear() -> LinearFunctional {
        LinearFunctional::new(Tensor::matrix(&[vec![1.0, 0.0], vec![0.0, 2.0]]))
    }

    /// One-word 1-D quadratic (v - target)^2 with a hand-coded gradient.
    struct Quadratic {
        target: f64,
    }

    impl ScoreModel for Quadratic {
        fn class_count(&self) -> usize {
            1
        }

        fn score(&self, x: &EmbeddedText, _c: usize) -> Result<f64> {
            let v = x.embeddings.data()[0];
            Ok((v - self.target) * (v - self.target))
        }

        fn score_gradient(&self, x: &EmbeddedText, c: usize) -> Result<crate::autodiff::GradientResult> {
            let v = x.embeddings.data()[0];
            Ok(crate::autodiff::GradientResult {
                value: self.score(x, c)?,
                gradient: Tensor::matrix(&[vec![2.0 * (v - self.target)]]),
            })
        }
    }

    fn one_dim_text(v: f64) -> EmbeddedText {
        EmbeddedText::new(vec![1], Tensor::matrix(&[vec![v]])).unwrap()
    }

    #[test]
    fn vagrad_closed_form_scores() {
        let attr = vagrad(&anisotropic_linear(), &two_word_text(), 0, 1.0).unwrap();
        let norm = 5.0f64.sqrt();
        assert!((attr.scores[0] - 1.0 / norm).abs() < 1e-9);
        assert!((attr.scores[1] - 2.0 / norm).abs() < 1e-9);
        assert_eq!(attr.ranking(), vec![1, 0]);
        // the perturbation sits exactly on the sphere
        assert!((attr.perturbation.unwrap().norm() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn vagrad_scales_linearly_with_radius() {
        let model = anisotropic_linear();
        let x = two_word_text();
        let small = vagrad(&model, &x, 0, 0.25).unwrap();
        let large = vagrad(&model, &x, 0, 0.75).unwrap();
        for (a, b) in small.scores.iter().zip(&large.scores) {
            assert!((b - 3.0 * a).abs() < 1e-12);
        }
        assert_eq!(small.ranking(), large.ranking());
    }

    #[test]
    fn vagrad_zero_gradient_is_typed() {
        let flat = LinearFunctional::new(Tensor::zeros(vec![2, 2]));
        match vagrad(&flat, &two_word_text(), 0, 0.5) {
            Err(Error::ZeroGradient { .. }) => {}
            other => panic!("expected ZeroGradient, got {other:?}"),
        }
    }

    #[test]
    fn smoothgrad_without_noise_is_vagrad_bitwise() {
        let model = ClassifierModel::attention(2, 3, 2, Activation::Tanh, 4);
        let x = two_word_text();
        let a = vagrad(&model, &x, 0, 0.5).unwrap();
        let b = smoothgrad(&model, &x, 0, 0.5, 0.0, 20, 9).unwrap();
        assert_eq!(a.scores, b.scores);
        assert_eq!(a.perturbation, b.perturbation);
        assert_eq!(b.method, Method::SmoothGrad);
    }

    #[test]
    fn smoothgrad_on_linear_model_ranks_like_vagrad() {
        let model = anisotropic_linear();
        let x = two_word_text();
        let a = vagrad(&model, &x, 0, 0.5).unwrap();
        let b = smoothgrad(&model, &x, 0, 0.5, 0.3, 12, 5).unwrap();
        // constant gradient field: the average is the gradient itself
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn smoothgrad_same_seed_same_answer() {
        let model = ClassifierModel::attention(2, 3, 2, Activation::Tanh, 4);
        let x = two_word_text();
        let a = smoothgrad(&model, &x, 0, 0.5, 0.2, 8, 123).unwrap();
        let b = smoothgrad(&model, &x, 0, 0.5, 0.2, 8, 123).unwrap();
        assert_eq!(a, b);
        let c = smoothgrad(&model, &x, 0, 0.5, 0.2, 8, 124).unwrap();
        assert_ne!(a.scores, c.scores);
    }

    #[test]
    fn itergrad_single_full_step_matches_vagrad_on_linear() {
        let model = anisotropic_linear();
        let x = two_word_text();
        let va = vagrad(&model, &x, 0, 0.5).unwrap();
        let it = itergrad(&model, &x, 0, 0.5, 1, 0.5).unwrap();
        for (a, b) in va.scores.iter().zip(&it.scores) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn itergrad_stays_inside_the_ball() {
        let model = ClassifierModel::attention(2, 4, 2, Activation::Tanh, 8);
        let x = two_word_text();
        let attr = itergrad(&model, &x, 0, 0.3, 40, 0.05).unwrap();
        let h = attr.perturbation.unwrap();
        assert!(h.norm() <= 0.3 + 1e-9, "norm {}", h.norm());
    }

    #[test]
    fn itergrad_finds_an_interior_minimizer() {
        // minimum of (v - 0.2)^2 from v = 0 sits inside the 0.5 ball
        let model = Quadratic { target: 0.2 };
        let x = one_dim_text(0.0);
        let alpha = 0.02;
        let attr = itergrad(&model, &x, 0, 0.5, 200, alpha).unwrap();
        let moved = x.embeddings.data()[0] - attr.perturbation.as_ref().unwrap().data()[0];
        // x* = x - h
        let x_star = x.embeddings.data()[0] - attr.perturbation.unwrap().data()[0];
        assert_eq!(moved, x_star);
        assert!((x_star - 0.2).abs() <= alpha, "converged to {x_star}");
    }

    #[test]
    fn inpgrad_closed_form() {
        let attr = inpgrad(&anisotropic_linear(), &two_word_text(), 0).unwrap();
        assert_eq!(attr.scores, vec![1.0, 2.0]);
        assert_eq!(attr.definition, DefKind::Era);
        assert!(attr.perturbation.is_none());
    }

    #[test]
    fn inpgrad_zero_word_scores_zero() {
        let x = EmbeddedText::new(
            vec![1, 0],
            Tensor::matrix(&[vec![1.0, 1.0], vec![0.0, 0.0]]),
        )
        .unwrap();
        let attr = inpgrad(&anisotropic_linear(), &x, 0).unwrap();
        assert_eq!(attr.scores[1], 0.0);
    }

    #[test]
    fn integrad_single_point_is_inpgrad() {
        let model = ClassifierModel::attention(2, 3, 2, Activation::Tanh, 4);
        let x = two_word_text();
        let a = inpgrad(&model, &x, 1).unwrap();
        let b = integrad(&model, &x, 1, 1).unwrap();
        assert_eq!(a.scores, b.scores);
    }

    #[test]
    fn integrad_converges_on_the_erasure_effect() {
        // f(v) = v^2 at v = 1: erasing the word changes f by f(0)-f(1) = -1;
        // the score estimates the negated change: 1.5 at T=2, 1.25 at T=4.
        let model = Quadratic { target: 0.0 };
        let x = one_dim_text(1.0);
        let t2 = integrad(&model, &x, 0, 2).unwrap();
        let t4 = integrad(&model, &x, 0, 4).unwrap();
        assert!((t2.scores[0] - 1.5).abs() < 1e-12);
        assert!((t4.scores[0] - 1.25).abs() < 1e-12);
        let t64 = integrad(&model, &x, 0, 64).unwrap();
        assert!((t64.scores[0] - 1.0).abs() < 0.02);
    }

    #[test]
    fn rankmask_reads_attention() {
        let model = ClassifierModel::attention(2, 3, 2, Activation::Tanh, 4);
        let x = two_word_text();
        let attr = rankmask(&model, &x).unwrap();
        let (_, state) = model.predict_with_attention(&x, None).unwrap();
        assert_eq!(attr.scores, state.attention);
        assert_eq!(attr.definition, DefKind::Mma);
    }

    #[test]
    fn rankmask_needs_attention_architecture() {
        let model = ClassifierModel::bag(2, None, 2, Pooling::Mean, 4);
        assert!(matches!(
            rankmask(&model, &two_word_text()),
            Err(Error::WrongArchitecture { .. })
        ));
    }

    #[test]
    fn ranking_rules() {
        let mk = |scores: Vec<f64>| Attribution {
            method: Method::RankMask,
            definition: DefKind::Mma,
            scores,
            perturbation: None,
        };
        // argmax picks position 1
        assert_eq!(mk(vec![0.1, 0.5, 0.4]).top(1), vec![1]);
        // tie broken toward the lower index
        assert_eq!(mk(vec![0.4, 0.4, 0.2]).ranking(), vec![0, 1, 2]);
        // uniform scores keep positional order
        assert_eq!(mk(vec![0.25; 4]).ranking(), vec![0, 1, 2, 3]);
        // signed scores rank by raw value, not magnitude
        assert_eq!(mk(vec![-1.0, 3.0, 2.0]).ranking(), vec![1, 2, 0]);
        // clamped budget
        assert_eq!(mk(vec![0.5, 0.1]).top(9), vec![0, 1]);
    }

    #[test]
    fn attribution_jsonl_round_trips() {
        let x = two_word_text();
        let attr = inpgrad(&anisotropic_linear(), &x, 0).unwrap();
        let records = vec![AttributionRecord::new(&attr, &x)];
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("attr.jsonl");
        write_attributions(&path, &records).unwrap();
        assert_eq!(read_attributions(&path).unwrap(), records);
    }

    #[test]
    fn appended_pad_word_ranks_last_under_sum_pooling() {
        let model = ClassifierModel::bag(2, Some(4), 2, Pooling::Sum, 3);
        let x = EmbeddedText::new(
            vec![1, 2, 3],
            Tensor::matrix(&[vec![0.8, -0.3], vec![-0.5, 0.9], vec![0.2, 0.4]]),
        )
        .unwrap();
        let longer = EmbeddedText::new(
            vec![1, 2, 3, 0],
            Tensor::matrix(&[
                vec![0.8, -0.3],
                vec![-0.5, 0.9],
                vec![0.2, 0.4],
                vec![0.0, 0.0],
            ]),
        )
        .unwrap();
        let cfg = InterpreterConfig::default();
        for method in [Method::VaGrad, Method::SmoothGrad, Method::IterGrad, Method::InpGrad, Method::InteGrad] {
            let short = run_method(&model, &x, 0, method, &cfg).unwrap();
            let long = run_method(&model, &longer, 0, method, &cfg).unwrap();
            let min = long.scores[..3].iter().cloned().fold(f64::INFINITY, f64::min);
            assert!(
                long.scores[3] <= min + 1e-12 || long.scores[3] == 0.0,
                "{method}: appended word must score minimal or zero, scores {:?}",
                long.scores
            );
            let original_order: Vec<usize> =
                long.ranking().into_iter().filter(|&i| i < 3).collect();
            assert_eq!(original_order, short.ranking(), "{method}");
        }
    }

    #[cfg(test)]
    mod proptests {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn ranking_is_a_permutation(scores in proptest::collection::vec(-10.0f64..10.0, 1..12)) {
                let attr = Attribution {
                    method: Method::InpGrad,
                    definition: DefKind::Era,
                    scores: scores.clone(),
                    perturbation: None,
                };
                let mut r = attr.ranking();
                prop_assert_eq!(r.len(), scores.len());
                r.sort_unstable();
                prop_assert_eq!(r, (0..scores.len()).collect::<Vec<_>>());
            }

            #[test]
            fn vagrad_lands_on_the_sphere(
                w in proptest::collection::vec(-3.0f64..3.0, 6),
                eps in 0.05f64..2.0,
            ) {
                let weights = Tensor::new(vec![3, 2], w);
                prop_assume!(weights.norm() > 1e-6);
                let model = LinearFunctional::new(weights);
                let x = EmbeddedText::new(
                    vec![1, 2, 3],
                    Tensor::new(vec![3, 2], vec![0.1, -0.2, 0.3, 0.4, -0.5, 0.6]),
                ).unwrap();
                let attr = vagrad(&model, &x, 0, eps).unwrap();
                let h = attr.perturbation.unwrap();
                prop_assert!((h.norm() - eps).abs() < 1e-9);
                // scores are the row norms of h
                for n in 0..3 {
                    prop_assert!((attr.scores[n] - h.row_norm(n)).abs() < 1e-12);
                }
            }

            #[test]
            fn itergrad_never_leaves_the_ball(
                eps in 0.05f64..1.0,
                steps in 1usize..30,
                alpha in 0.01f64..0.5,
            ) {
                let model = ClassifierModel::attention(2, 3, 2, Activation::Tanh, 6);
                let x = EmbeddedText::new(
                    vec![1, 2],
                    Tensor::matrix(&[vec![0.4, -0.8], vec![1.1, 0.3]]),
                ).unwrap();
                let attr = itergrad(&model, &x, 0, eps, steps, alpha).unwrap();
                prop_assert!(attr.perturbation.unwrap().norm() <= eps + 1e-9);
            }
        }
    }
}
