//! Toy text classifiers over embedded token sequences.
//!
//! Two architectures: a pooled bag of embeddings with an optional tanh
//! hidden layer, and an additive-attention pooler with a linear head. Both
//! end in a softmax, so a class score is always a probability. The attention
//! model additionally exposes its attention vector and lets callers mask
//! attention positions; masked weights are NOT renormalized, so masking
//! genuinely removes a word's message rather than redistributing it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::autodiff::{GradientResult, NodeId, Tape, Tensor};
use crate::error::{Error, Result};

/// A tokenized text together with its embedding rows (one per word).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddedText {
    pub token_ids: Vec<usize>,
    /// N x d matrix, row n = embedding of word n.
    pub embeddings: Tensor,
}

impl EmbeddedText {
    pub fn new(token_ids: Vec<usize>, embeddings: Tensor) -> Result<Self> {
        if token_ids.is_empty() {
            return Err(Error::InvalidConfig("text must have at least one word".into()));
        }
        let ok = embeddings.shape().len() == 2 && embeddings.shape()[0] == token_ids.len();
        if !ok {
            return Err(Error::InvalidConfig(format!(
                "embeddings shape {:?} does not match {} tokens",
                embeddings.shape(),
                token_ids.len()
            )));
        }
        if !embeddings.all_finite() {
            return Err(Error::InvalidConfig("embeddings contain non-finite values".into()));
        }
        Ok(EmbeddedText { token_ids, embeddings })
    }

    /// Number of words N.
    pub fn len(&self) -> usize {
        self.token_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.token_ids.is_empty()
    }

    /// Embedding dimension d.
    pub fn dim(&self) -> usize {
        self.embeddings.shape()[1]
    }

    /// Replace the embedding rows at `positions` (0-based) with zero
    /// vectors; every other row is carried over bitwise. Erased positions
    /// get the pad token id 0.
    pub fn erase(&self, positions: &[usize]) -> Result<EmbeddedText> {
        let n = self.len();
        let mut out = self.clone();
        for &p in positions {
            if p >= n {
                return Err(Error::PositionOutOfRange { position: p, len: n });
            }
            out.embeddings.row_mut(p).fill(0.0);
            out.token_ids[p] = 0;
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Mean,
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

/// Weight matrix plus bias row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    /// in x out.
    pub weight: Tensor,
    /// 1 x out.
    pub bias: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagParams {
    pub pooling: Pooling,
    /// Optional tanh hidden layer; without it the model is linear-softmax.
    pub hidden: Option<DenseLayer>,
    pub output: DenseLayer,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttentionParams {
    /// Per-word feature map, d -> d_h.
    pub feature: DenseLayer,
    pub activation: Activation,
    /// Attention scorer, d_h x 1; scores are softmaxed over words.
    pub query: Tensor,
    pub output: DenseLayer,
}

/// Attention vector and per-word hidden features of one forward pass,
/// before any mask is applied.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionState {
    pub attention: Vec<f64>,
    /// N x d_h.
    pub hidden: Tensor,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "architecture", rename_all = "lowercase")]
pub enum ClassifierModel {
    Bag(BagParams),
    Attention(AttentionParams),
}

pub(crate) struct ForwardNodes {
    pub probs: NodeId,
    /// Pre-mask attention vector (N x 1), attention architecture only.
    pub attention: Option<NodeId>,
    /// Per-word hidden features (N x d_h), attention architecture only.
    pub hidden: Option<NodeId>,
    /// Parameter leaves in the same order as [`ClassifierModel::params`].
    pub params: Vec<NodeId>,
}

fn init_dense(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::new(vec![rows, cols], data)
}

impl ClassifierModel {
    /// Pooled bag-of-embeddings classifier with seeded random init.
    pub fn bag(dim: usize, hidden: Option<usize>, classes: usize, pooling: Pooling, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (hidden, head_in) = match hidden {
            Some(h) => (
                Some(DenseLayer {
                    weight: init_dense(&mut rng, dim, h),
                    bias: Tensor::zeros(vec![1, h]),
                }),
                h,
            ),
            None => (None, dim),
        };
        ClassifierModel::Bag(BagParams {
            pooling,
            hidden,
            output: DenseLayer {
                weight: init_dense(&mut rng, head_in, classes),
                bias: Tensor::zeros(vec![1, classes]),
            },
        })
    }

    /// Additive-attention classifier with seeded random init.
    pub fn attention(dim: usize, hidden: usize, classes: usize, activation: Activation, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ClassifierModel::Attention(AttentionParams {
            feature: DenseLayer {
                weight: init_dense(&mut rng, dim, hidden),
                bias: Tensor::zeros(vec![1, hidden]),
            },
            activation,
            query: init_dense(&mut rng, hidden, 1),
            output: DenseLayer {
                weight: init_dense(&mut rng, hidden, classes),
                bias: Tensor::zeros(vec![1, classes]),
            },
        })
    }

    pub fn architecture(&self) -> &'static str {
        match self {
            ClassifierModel::Bag(_) => "bag",
            ClassifierModel::Attention(_) => "attention",
        }
    }

    pub fn class_count(&self) -> usize {
        match self {
            ClassifierModel::Bag(p) => p.output.weight.shape()[1],
            ClassifierModel::Attention(p) => p.output.weight.shape()[1],
        }
    }

    /// Embedding dimension the model expects.
    pub fn dim(&self) -> usize {
        match self {
            ClassifierModel::Bag(p) => match &p.hidden {
                Some(l) => l.weight.shape()[0],
                None => p.output.weight.shape()[0],
            },
            ClassifierModel::Attention(p) => p.feature.weight.shape()[0],
        }
    }

    fn check_dim(&self, x: &EmbeddedText) -> Result<()> {
        if x.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: x.dim(),
            });
        }
        Ok(())
    }

    fn check_class(&self, c: usize) -> Result<()> {
        if c >= self.class_count() {
            return Err(Error::ClassOutOfRange {
                class: c,
                classes: self.class_count(),
            });
        }
        Ok(())
    }

    /// Parameter tensors in a stable order (matches the leaves recorded by
    /// the forward trace, which training relies on).
    pub(crate) fn params_mut(&mut self) -> Vec<&mut Tensor> {
        match self {
            ClassifierModel::Bag(p) => {
                let mut v = Vec::new();
                if let Some(l) = &mut p.hidden {
                    v.push(&mut l.weight);
                    v.push(&mut l.bias);
                }
                v.push(&mut p.output.weight);
                v.push(&mut p.output.bias);
                v
            }
            ClassifierModel::Attention(p) => vec![
                &mut p.feature.weight,
                &mut p.feature.bias,
                &mut p.query,
                &mut p.output.weight,
                &mut p.output.bias,
            ],
        }
    }

    /// Record the full forward pass on `tape`, starting from an already
    /// recorded N x d input leaf. `mask` (N x 1 of zeros/ones) applies only
    /// to the attention architecture and multiplies the attention vector
    /// elementwise, with no renormalization.
    pub(crate) fn trace(
        &self,
        tape: &mut Tape,
        x: NodeId,
        words: usize,
        mask: Option<&Tensor>,
    ) -> Result<ForwardNodes> {
        match self {
            ClassifierModel::Bag(p) => {
                let ow = tape.leaf(p.output.weight.clone());
                let ob = tape.leaf(p.output.bias.clone());
                let mut params = Vec::new();
                let hidden_leaves = p.hidden.as_ref().map(|l| {
                    (tape.leaf(l.weight.clone()), tape.leaf(l.bias.clone()))
                });
                if let Some((hw, hb)) = hidden_leaves {
                    params.extend([hw, hb]);
                }
                params.extend([ow, ob]);

                let ones = tape.leaf(Tensor::new(vec![1, words], vec![1.0; words]));
                let total = tape.matmul(ones, x)?;
                let pooled = match p.pooling {
                    Pooling::Mean => tape.scale(total, 1.0 / words as f64),
                    Pooling::Sum => total,
                };
                let head_in = match hidden_leaves {
                    Some((hw, hb)) => {
                        let z = tape.matmul(pooled, hw)?;
                        let z = tape.add(z, hb)?;
                        tape.tanh(z)
                    }
                    None => pooled,
                };
                let z = tape.matmul(head_in, ow)?;
                let logits = tape.add(z, ob)?;
                let probs = tape.softmax(logits);
                Ok(ForwardNodes {
                    probs,
                    attention: None,
                    hidden: None,
                    params,
                })
            }
            ClassifierModel::Attention(p) => {
                let fw = tape.leaf(p.feature.weight.clone());
                let fb = tape.leaf(p.feature.bias.clone());
                let q = tape.leaf(p.query.clone());
                let ow = tape.leaf(p.output.weight.clone());
                let ob = tape.leaf(p.output.bias.clone());
                let params = vec![fw, fb, q, ow, ob];

                let xw = tape.matmul(x, fw)?;
                let ones_col = tape.leaf(Tensor::new(vec![words, 1], vec![1.0; words]));
                let bias_rows = tape.matmul(ones_col, fb)?;
                let z = tape.add(xw, bias_rows)?;
                let features = match p.activation {
                    Activation::Tanh => tape.tanh(z),
                    Activation::Identity => z,
                };
                let scores = tape.matmul(features, q)?;
                let attention = tape.softmax(scores);
                let weights = match mask {
                    Some(m) => {
                        let mn = tape.leaf(m.clone());
                        tape.mul(attention, mn)?
                    }
                    None => attention,
                };
                let weights_row = tape.transpose(weights)?;
                let pooled = tape.matmul(weights_row, features)?;
                let z = tape.matmul(pooled, ow)?;
                let logits = tape.add(z, ob)?;
                let probs = tape.softmax(logits);
                Ok(ForwardNodes {
                    probs,
                    attention: Some(attention),
                    hidden: Some(features),
                    params,
                })
            }
        }
    }

    /// Class probabilities f(x).
    pub fn predict(&self, x: &EmbeddedText) -> Result<Vec<f64>> {
        self.check_dim(x)?;
        let mut tape = Tape::new();
        let xn = tape.leaf(x.embeddings.clone());
        let fwd = self.trace(&mut tape, xn, x.len(), None)?;
        Ok(tape.value(fwd.probs).data().to_vec())
    }

    /// Most probable class c* = argmax_c f_c(x); ties go to the lower index.
    pub fn predict_class(&self, x: &EmbeddedText) -> Result<usize> {
        let probs = self.predict(x)?;
        let mut best = 0;
        for (c, p) in probs.iter().enumerate() {
            if *p > probs[best] {
                best = c;
            }
        }
        Ok(best)
    }

    /// Probabilities under an attention mask, together with the unmasked
    /// attention state. Masked entries drop out of the pooled sum; the
    /// remaining weights are deliberately not renormalized.
    pub fn predict_with_attention(
        &self,
        x: &EmbeddedText,
        mask: Option<&[bool]>,
    ) -> Result<(Vec<f64>, AttentionState)> {
        if let ClassifierModel::Bag(_) = self {
            return Err(Error::WrongArchitecture { found: "bag" });
        }
        self.check_dim(x)?;
        let mask_tensor = match mask {
            Some(m) => {
                if m.len() != x.len() {
                    return Err(Error::DimensionMismatch {
                        expected: x.len(),
                        found: m.len(),
                    });
                }
                Some(Tensor::new(
                    vec![x.len(), 1],
                    m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
                ))
            }
            None => None,
        };
        let mut tape = Tape::new();
        let xn = tape.leaf(x.embeddings.clone());
        let fwd = self.trace(&mut tape, xn, x.len(), mask_tensor.as_ref())?;
        let probs = tape.value(fwd.probs).data().to_vec();
        let state = AttentionState {
            attention: tape.value(fwd.attention.expect("attention node")).data().to_vec(),
            hidden: tape.value(fwd.hidden.expect("hidden node")).clone(),
        };
        Ok((probs, state))
    }

    /// Gradient of the class-c probability with respect to the embeddings,
    /// as an N x d matrix, plus the probability itself.
    pub fn probability_gradient(&self, x: &EmbeddedText, c: usize) -> Result<GradientResult> {
        self.check_dim(x)?;
        self.check_class(c)?;
        let mut tape = Tape::new();
        let xn = tape.leaf(x.embeddings.clone());
        let fwd = self.trace(&mut tape, xn, x.len(), None)?;
        let mut onehot = vec![0.0; self.class_count()];
        onehot[c] = 1.0;
        let oh = tape.leaf(Tensor::new(vec![1, self.class_count()], onehot));
        let picked = tape.dot(fwd.probs, oh)?;
        tape.backward_wrt(picked, xn)
    }

    /// Gradient only; see [`Self::probability_gradient`].
    pub fn input_gradient(&self, x: &EmbeddedText, c: usize) -> Result<Tensor> {
        Ok(self.probability_gradient(x, c)?.gradient)
    }
}

/// A scalar class score with a gradient, the interface every attribution
/// method actually needs. Implemented by [`ClassifierModel`] (score =
/// post-softmax probability) and by [`LinearFunctional`] for closed-form
/// checks.
pub trait ScoreModel {
    fn class_count(&self) -> usize;
    fn score(&self, x: &EmbeddedText, c: usize) -> Result<f64>;
    fn score_gradient(&self, x: &EmbeddedText, c: usize) -> Result<GradientResult>;

    /// Class with the highest score; ties go to the lower index.
    fn best_class(&self, x: &EmbeddedText) -> Result<usize> {
        let mut best = 0;
        let mut best_score = self.score(x, 0)?;
        for c in 1..self.class_count() {
            let s = self.score(x, c)?;
            if s > best_score {
                best = c;
                best_score = s;
            }
        }
        Ok(best)
    }
}

impl ScoreModel for ClassifierModel {
    fn class_count(&self) -> usize {
        ClassifierModel::class_count(self)
    }

    fn score(&self, x: &EmbeddedText, c: usize) -> Result<f64> {
        self.check_class(c)?;
        Ok(self.predict(x)?[c])
    }

    fn score_gradient(&self, x: &EmbeddedText, c: usize) -> Result<GradientResult> {
        self.probability_gradient(x, c)
    }

    fn best_class(&self, x: &EmbeddedText) -> Result<usize> {
        self.predict_class(x)
    }
}

/// Models whose prediction decomposes through an attention vector that can
/// be masked from the outside.
pub trait MaskedScore {
    fn class_count(&self) -> usize;

    /// The attention vector over words (errors on architectures without one).
    fn attention_weights(&self, x: &EmbeddedText) -> Result<Vec<f64>>;

    /// Class-c score with the given attention positions kept (`true`) or
    /// zeroed (`false`); `None` means no mask.
    fn masked_score(&self, x: &EmbeddedText, c: usize, mask: Option<&[bool]>) -> Result<f64>;
}

impl MaskedScore for ClassifierModel {
    fn class_count(&self) -> usize {
        ClassifierModel::class_count(self)
    }

    fn attention_weights(&self, x: &EmbeddedText) -> Result<Vec<f64>> {
        Ok(self.predict_with_attention(x, None)?.1.attention)
    }

    fn masked_score(&self, x: &EmbeddedText, c: usize, mask: Option<&[bool]>) -> Result<f64> {
        self.check_class(c)?;
        Ok(self.predict_with_attention(x, mask)?.0[c])
    }
}

/// Bare linear functional f(x) = <weights, x> over the flattened embedding
/// matrix, with per-position weights. Not a probability model; it exists so
/// closed-form attribution identities can be verified exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFunctional {
    /// N x d, same shape as the texts it scores.
    pub weights: Tensor,
}

impl LinearFunctional {
    pub fn new(weights: Tensor) -> Self {
        LinearFunctional { weights }
    }

    fn check(&self, x: &EmbeddedText, c: usize) -> Result<()> {
        if c != 0 {
            return Err(Error::ClassOutOfRange { class: c, classes: 1 });
        }
        Tensor::conformable(
            "linear functional",
            &self.weights,
            &x.embeddings,
            self.weights.shape() == x.embeddings.shape(),
        )
    }
}

impl ScoreModel for LinearFunctional {
    fn class_count(&self) -> usize {
        1
    }

    fn score(&self, x: &EmbeddedText, c: usize) -> Result<f64> {
        self.check(x, c)?;
        Ok(self
            .weights
            .data()
            .iter()
            .zip(x.embeddings.data())
            .map(|(w, v)| w * v)
            .sum())
    }

    fn score_gradient(&self, x: &EmbeddedText, c: usize) -> Result<GradientResult> {
        Ok(GradientResult {
            value: self.score(x, c)?,
            gradient: self.weights.clone(),
        })
    }
}

const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    model: ClassifierModel,
}

/// Write the model to a JSON checkpoint. Floats are serialized with
/// shortest-round-trip formatting, so load/save round-trips bitwise.
pub fn save_checkpoint(model: &ClassifierModel, path: &Path) -> Result<()> {
    let text = serde_json::to_string_pretty(&Checkpoint {
        version: CHECKPOINT_VERSION,
        model: model.clone(),
    })?;
    std::fs::write(path, text).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_checkpoint(path: &Path) -> Result<ClassifierModel> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let ckpt: Checkpoint = serde_json::from_str(&text)?;
    if ckpt.version != CHECKPOINT_VERSION {
        return Err(Error::Malformed {
            path: path.display().to_string(),
            line: 1,
            message: format!(
                "unsupported checkpoint version {} (expected {})",
                ckpt.version, CHECKPOINT_VERSION
            ),
        });
    }
    Ok(ckpt.model)
}
