//! Plain stochastic gradient descent for the toy classifiers.
//!
//! Determinism is the point: a fixed seed fixes the shuffle order, and with
//! it every parameter update, so training twice from the same seed yields
//! bitwise-identical models.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor};
use crate::corpus::{Corpus, EmbeddingTable};
use crate::error::{Error, Result};
use crate::model::{ClassifierModel, EmbeddedText};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 0.5,
            epochs: 40,
            batch_size: 16,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: ClassifierModel,
    /// Mean cross-entropy per epoch.
    pub loss_trace: Vec<f64>,
}

/// Cross-entropy of one instance against a soft target distribution,
/// together with the gradients for every parameter tensor (in
/// `params_mut` order). Hard labels are the one-hot special case.
pub(crate) fn soft_loss_gradients(
    model: &ClassifierModel,
    x: &EmbeddedText,
    target: &[f64],
) -> Result<(f64, Vec<Tensor>)> {
    if target.len() != model.class_count() {
        return Err(Error::DimensionMismatch {
            expected: model.class_count(),
            found: target.len(),
        });
    }
    let mut tape = Tape::new();
    let xn = tape.leaf(x.embeddings.clone());
    let fwd = model.trace(&mut tape, xn, x.len(), None)?;
    let t = tape.leaf(Tensor::new(vec![1, target.len()], target.to_vec()));
    let log_probs = tape.ln(fwd.probs);
    let inner = tape.dot(t, log_probs)?;
    let loss = tape.scale(inner, -1.0);
    let pass = tape.backward(loss)?;
    let grads = fwd.params.iter().map(|&p| pass.gradient(p).clone()).collect();
    Ok((pass.value(), grads))
}

/// Apply one averaged gradient step over a set of (instance, target) pairs.
/// Returns the summed loss before the update.
pub(crate) fn sgd_step(
    model: &mut ClassifierModel,
    batch: &[(&EmbeddedText, &[f64])],
    learning_rate: f64,
) -> Result<f64> {
    let mut total_loss = 0.0;
    let mut acc: Option<Vec<Tensor>> = None;
    for (x, target) in batch {
        let (loss, grads) = soft_loss_gradients(model, x, target)?;
        total_loss += loss;
        match &mut acc {
            Some(acc) => {
                for (a, g) in acc.iter_mut().zip(&grads) {
                    a.axpy(1.0, g);
                }
            }
            None => acc = Some(grads),
        }
    }
    if let Some(acc) = acc {
        let step = learning_rate / batch.len() as f64;
        for (param, grad) in model.params_mut().into_iter().zip(&acc) {
            param.axpy(-step, grad);
        }
    }
    Ok(total_loss)
}

/// Train a copy of `model` on the corpus with minibatch SGD.
pub fn train(
    model: &ClassifierModel,
    corpus: &Corpus,
    table: &EmbeddingTable,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if cfg.batch_size == 0 {
        return Err(Error::InvalidConfig("batch size must be positive".into()));
    }
    let classes = model.class_count();
    for inst in &corpus.instances {
        if inst.label >= classes {
            return Err(Error::InvalidConfig(format!(
                "label {} out of range for a {classes}-class model",
                inst.label
            )));
        }
    }

    let texts = corpus.embed_all(table)?;
    let targets: Vec<Vec<f64>> = corpus
        .instances
        .iter()
        .map(|inst| {
            let mut t = vec![0.0; classes];
            t[inst.label] = 1.0;
            t
        })
        .collect();

    let mut model = model.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..texts.len()).collect();
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<(&EmbeddedText, &[f64])> = chunk
                .iter()
                .map(|&i| (&texts[i], targets[i].as_slice()))
                .collect();
            epoch_loss += sgd_step(&mut model, &batch, cfg.learning_rate)?;
        }
        loss_trace.push(epoch_loss / texts.len() as f64);
    }
    Ok(TrainOutcome { model, loss_trace })
}

/// Fraction of instances whose argmax prediction matches the label.
pub fn accuracy(model: &ClassifierModel, corpus: &Corpus, table: &EmbeddingTable) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut correct = 0usize;
    for inst in &corpus.instances {
        let x = table.embed(&inst.tokens)?;
        if model.predict_class(&x)? == inst.label {
            correct += 1;
        }
    }
    Ok(correct as f64 / corpus.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synthesize, SynthConfig};
    use crate::model::Pooling;

    fn small_task() -> (Corpus, EmbeddingTable) {
        let out = synthesize(&SynthConfig {
            instances: 200,
            seed: 42,
            ..SynthConfig::default()
        })
        .unwrap();
        (out.corpus, out.table)
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let (corpus, table) = small_task();
        let model = ClassifierModel::bag(8, Some(8), 2, Pooling::Mean, 1);
        let cfg = TrainConfig {
            learning_rate: 0.0,
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train(&model, &corpus, &table, &cfg).unwrap();
        assert_eq!(out.model, model);
    }

    #[test]
    fn same_seed_reproduces_parameters_bitwise() {
        let (corpus, table) = small_task();
        let model = ClassifierModel::bag(8, Some(8), 2, Pooling::Mean, 1);
        let cfg = TrainConfig { epochs: 5, ..TrainConfig::default() };
        let a = train(&model, &corpus, &table, &cfg).unwrap();
        let b = train(&model, &corpus, &table, &cfg).unwrap();
        assert_eq!(a.model, b.model);
        assert_eq!(a.loss_trace, b.loss_trace);
    }

    #[test]
    fn separable_task_is_learned() {
        let (corpus, table) = small_task();
        let model = ClassifierModel::bag(8, Some(8), 2, Pooling::Mean, 1);
        let cfg = TrainConfig { epochs: 50, ..TrainConfig::default() };
        let out = train(&model, &corpus, &table, &cfg).unwrap();
        let acc = accuracy(&out.model, &corpus, &table).unwrap();
        assert!(acc >= 0.98, "training accuracy {acc}");

        // smoothed loss should never rise
        let window = 5;
        let smoothed: Vec<f64> = out
            .loss_trace
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        for pair in smoothed.windows(2) {
            assert!(pair[1] <= pair[0] + 1e-6, "loss rose: {} -> {}", pair[0], pair[1]);
        }
    }

    #[test]
    fn empty_corpus_rejected() {
        let (_, table) = small_task();
        let corpus = Corpus {
            instances: vec![],
            split: crate::corpus::Split::Train,
        };
        let model = ClassifierModel::bag(8, None, 2, Pooling::Mean, 1);
        assert!(matches!(
            train(&model, &corpus, &table, &TrainConfig::default()),
            Err(Error::EmptyCorpus)
        ));
    }

    #[test]
    fn out_of_range_label_rejected() {
        let (mut corpus, table) = small_task();
        corpus.instances[0].label = 7;
        let model = ClassifierModel::bag(8, None, 2, Pooling::Mean, 1);
        match train(&model, &corpus, &table, &TrainConfig::default()) {
            Err(Error::InvalidConfig(msg)) => assert!(msg.contains("label")),
            other => panic!("expected InvalidConfig, got {other:?}"),
        }
    }
}
