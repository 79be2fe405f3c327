//! One synthetic task and two trained classifiers, built once per test
//! binary and shared across cases.

use std::sync::OnceLock;

use glassbox_core::corpus::{synthesize, SynthConfig};
use glassbox_core::model::{Activation, ClassifierModel, EmbeddedText, Pooling};
use glassbox_core::train::{train, TrainConfig};
use glassbox_core::{sample_instances, Corpus, EmbeddingTable};

pub struct Bench {
    pub train_split: Corpus,
    pub test_split: Corpus,
    pub table: EmbeddingTable,
    /// Attention classifier, held-out accuracy well above 0.95.
    pub attention: ClassifierModel,
    /// Sum-pooled bag MLP with a tanh hidden layer, same data. Sum pooling
    /// pushes pre-activations into the curved part of tanh, which the
    /// path-refinement checks rely on.
    pub bag: ClassifierModel,
    /// 100 held-out instances, embedded, order pinned by seed.
    pub sample100: Vec<EmbeddedText>,
    pub rationale_tokens: Vec<String>,
    /// Attention classifier stopped after one epoch: accurate but not yet
    /// overconfident, leaving the alignment loop headroom to move.
    pub attention_early: ClassifierModel,
}

static BENCH: OnceLock<Bench> = OnceLock::new();

pub fn bench() -> &'static Bench {
    BENCH.get_or_init(|| {
        let synth = synthesize(&SynthConfig {
            instances: 800,
            ..SynthConfig::default()
        })
        .expect("synthesis");
        let (train_split, _valid, test_split) = synth.corpus.partition(0.1, 0.2, 101);
        let dim = synth.table.dim();
        let cfg = TrainConfig {
            epochs: 30,
            ..TrainConfig::default()
        };
        let attention = train(
            &ClassifierModel::attention(dim, 16, 2, Activation::Tanh, 7),
            &train_split,
            &synth.table,
            &cfg,
        )
        .expect("attention training")
        .model;
        let bag = train(
            &ClassifierModel::bag(dim, Some(16), 2, Pooling::Sum, 7),
            &train_split,
            &synth.table,
            &cfg,
        )
        .expect("bag training")
        .model;
        let attention_early = train(
            &ClassifierModel::attention(dim, 16, 2, Activation::Tanh, 7),
            &train_split,
            &synth.table,
            &TrainConfig { learning_rate: 0.2, epochs: 1, ..TrainConfig::default() },
        )
        .expect("early-stop training")
        .model;
        let sample100 =
            sample_instances(&test_split, &synth.table, 100, 17).expect("sample");
        Bench {
            train_split,
            test_split,
            table: synth.table,
            attention,
            bag,
            sample100,
            rationale_tokens: synth.rationale_tokens,
            attention_early,
        }
    })
}
