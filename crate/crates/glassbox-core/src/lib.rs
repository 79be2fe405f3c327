//! Adversarial-perturbation word attribution for toy text classifiers.
//!
//! The crate is organized around three ways of asking "which words made the
//! model decide?": moving the whole embedded input inside a small ball
//! (continuous perturbation), deleting word vectors (erasure), and blanking
//! attention positions (masking). Each comes with attribution methods that
//! target it and a faithfulness metric that scores attributions against it.
//! The pieces:
//!
//! - [`autodiff`]: tape-based reverse-mode gradients for dense `f64` tensors.
//! - [`model`]: bag-of-words and attention classifiers with a training loop.
//! - [`interpret`]: six attribution methods producing per-word scores.
//! - [`metrics`]: faithfulness scores matched to each perturbation family,
//!   plus a budget-sweep evaluation harness.
//! - [`corpus`]: JSONL corpora, embedding tables, and a synthetic task with
//!   planted word-level rationales.
//! - [`alignment`]: retraining a model so its attributions agree with
//!   human-marked rationale words.
//! - [`report`]: CSV/SVG/manifest serialization for experiment outputs.
//! - [`harness`]: end-to-end experiment orchestration used by the CLI.

pub mod alignment;
pub mod autodiff;
pub mod corpus;
mod error;
pub mod harness;
pub mod interpret;
pub mod metrics;
pub mod model;
pub mod report;
pub mod train;

pub use alignment::{
    alignment_retrain, craft_aligned, expand_rationale, similarity, AlignConfig,
    AlignedAdversary, AlignmentReport, AlignmentRound, RationaleSet,
};
pub use corpus::{Corpus, EmbeddingTable, Instance, RationaleSpec, Split, SynthConfig};
pub use error::{Error, Result};
pub use harness::{
    attribution_records, prepare_data, run_alignment, run_experiment, run_interpret, run_synth,
    run_train, sample_instances, DataBundle, ExperimentConfig,
};
pub use interpret::{
    inpgrad, integrad, itergrad, rankmask, run_method, run_method_at, smoothgrad, vagrad,
    Attribution, AttributionRecord, DefKind, DefinitionSpec, InterpreterConfig, Method,
};
pub use metrics::{
    best_single_erasure, csa_metric, era_metric, era_word_importance, mma_metric, sweep,
    CurvePoint, EvaluationCurve, MetricBudget,
};
pub use report::{Manifest, PlotSeries, StageRecord};
pub use train::{TrainConfig, TrainOutcome};
pub use model::{
    Activation, AttentionParams, AttentionState, BagParams, ClassifierModel, DenseLayer,
    EmbeddedText, LinearFunctional, MaskedScore, Pooling, ScoreModel,
};
