//! Experiment orchestration: one config describes data, model, methods,
//! metrics, and budgets; the runner turns it into an artifact directory
//! with curves, plots, a summary, and a manifest of every seed.
//!
//! Config values come from a flat `key = value` file, overridden by
//! `key=value` pairs from the command line. Stages run in order (data,
//! train, evaluate / align); a failure surfaces as a stage-tagged error and
//! the manifest on disk shows the failed stage as incomplete.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::alignment::{alignment_retrain, AlignConfig};
use crate::corpus::{
    ingest, mean_word_norm, read_rationale, synthesize, write_corpus, write_embeddings,
    write_rationale_types, Corpus, EmbeddingTable, IngestStats, RationaleSpec, Split,
    SynthConfig,
};
use crate::error::{Error, Result};
use crate::interpret::{
    run_method, write_attributions, AttributionRecord, DefKind, InterpreterConfig, Method,
};
use crate::metrics::{sweep, EvaluationCurve, MetricBudget};
use crate::model::{
    load_checkpoint, save_checkpoint, Activation, ClassifierModel, EmbeddedText, Pooling,
};
use crate::report::{
    alignment_plot, curves_plot, write_alignment, write_curves, write_text, Manifest,
};
use crate::train::{accuracy, train, TrainConfig};

/// Everything a run needs, with defaults sized for a quick desk-scale
/// experiment. See [`ExperimentConfig::apply`] for the config keys.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    /// "attention" or "bag".
    pub arch: String,
    /// Hidden width: feature width for attention, hidden layer for bag.
    pub hidden: usize,
    pub pooling: Pooling,
    pub activation: Activation,
    pub train: TrainConfig,
    pub synth: SynthConfig,
    /// Ingest these instead of synthesizing when set (both or neither).
    pub corpus_path: Option<PathBuf>,
    pub embeddings_path: Option<PathBuf>,
    /// Load this checkpoint instead of training when set.
    pub model_path: Option<PathBuf>,
    pub rationale_path: Option<PathBuf>,
    pub methods: Vec<Method>,
    pub metrics: Vec<DefKind>,
    pub csa_grid: Vec<f64>,
    pub era_grid: Vec<usize>,
    pub mma_grid: Vec<usize>,
    pub sample_size: usize,
    pub sample_seed: u64,
    pub interpreter: InterpreterConfig,
    /// Smoothing noise std as a fraction of the corpus mean word norm;
    /// 0 uses `interpreter.smoothgrad_sigma` as an absolute value.
    pub sigma_scale: f64,
    pub align: AlignConfig,
    pub valid_frac: f64,
    pub test_frac: f64,
    pub split_seed: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            arch: "attention".into(),
            hidden: 16,
            pooling: Pooling::Mean,
            activation: Activation::Tanh,
            train: TrainConfig::default(),
            synth: SynthConfig::default(),
            corpus_path: None,
            embeddings_path: None,
            model_path: None,
            rationale_path: None,
            methods: Method::ALL.to_vec(),
            metrics: DefKind::ALL.to_vec(),
            csa_grid: match MetricBudget::default_for(DefKind::Csa) {
                MetricBudget::Csa { epsilons } => epsilons,
                _ => unreachable!(),
            },
            era_grid: (1..=5).collect(),
            mma_grid: (1..=5).collect(),
            sample_size: 300,
            sample_seed: 17,
            interpreter: InterpreterConfig::default(),
            sigma_scale: 0.1,
            align: AlignConfig::default(),
            valid_frac: 0.1,
            test_frac: 0.2,
            split_seed: 101,
        }
    }
}

fn bad_key(key: &str, value: &str, what: &str) -> Error {
    Error::InvalidConfig(format!("{key} = {value:?}: expected {what}"))
}

fn parse_num<T: std::str::FromStr>(key: &str, value: &str, what: &str) -> Result<T> {
    value.trim().parse().map_err(|_| bad_key(key, value, what))
}

fn parse_list<T, F: Fn(&str) -> Result<T>>(value: &str, f: F) -> Result<Vec<T>> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(f)
        .collect()
}

impl ExperimentConfig {
    /// Set one field from its flat config key. Unknown keys error and name
    /// themselves.
    pub fn apply(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "arch" => self.arch = v.to_string(),
            "hidden" => self.hidden = parse_num(key, v, "a positive integer")?,
            "pooling" => {
                self.pooling = match v {
                    "mean" => Pooling::Mean,
                    "sum" => Pooling::Sum,
                    _ => return Err(bad_key(key, v, "mean or sum")),
                }
            }
            "activation" => {
                self.activation = match v {
                    "tanh" => Activation::Tanh,
                    "identity" => Activation::Identity,
                    _ => return Err(bad_key(key, v, "tanh or identity")),
                }
            }
            "learning_rate" => self.train.learning_rate = parse_num(key, v, "a number")?,
            "epochs" => self.train.epochs = parse_num(key, v, "an integer")?,
            "batch_size" => self.train.batch_size = parse_num(key, v, "an integer")?,
            "train_seed" => self.train.seed = parse_num(key, v, "an integer")?,
            "vocab" => self.synth.vocab = parse_num(key, v, "an integer")?,
            "dim" => self.synth.dim = parse_num(key, v, "an integer")?,
            "min_len" => self.synth.min_len = parse_num(key, v, "an integer")?,
            "max_len" => self.synth.max_len = parse_num(key, v, "an integer")?,
            "instances" => self.synth.instances = parse_num(key, v, "an integer")?,
            "data_seed" => self.synth.seed = parse_num(key, v, "an integer")?,
            "corpus" => self.corpus_path = Some(PathBuf::from(v)),
            "embeddings" => self.embeddings_path = Some(PathBuf::from(v)),
            "model" => self.model_path = Some(PathBuf::from(v)),
            "rationale" => self.rationale_path = Some(PathBuf::from(v)),
            "methods" => self.methods = parse_list(v, Method::parse)?,
            "metrics" => self.metrics = parse_list(v, DefKind::parse)?,
            "csa_grid" => {
                self.csa_grid = parse_list(v, |s| parse_num(key, s, "a number"))?;
            }
            "era_grid" => {
                self.era_grid = parse_list(v, |s| parse_num(key, s, "an integer"))?;
            }
            "mma_grid" => {
                self.mma_grid = parse_list(v, |s| parse_num(key, s, "an integer"))?;
            }
            "sample" => self.sample_size = parse_num(key, v, "an integer")?,
            "sample_seed" => self.sample_seed = parse_num(key, v, "an integer")?,
            "epsilon" => self.interpreter.epsilon = parse_num(key, v, "a number")?,
            "smoothgrad_samples" => {
                self.interpreter.smoothgrad_samples = parse_num(key, v, "an integer")?
            }
            "smoothgrad_sigma" => {
                self.interpreter.smoothgrad_sigma = parse_num(key, v, "a number")?
            }
            "sigma_scale" => self.sigma_scale = parse_num(key, v, "a number")?,
            "itergrad_steps" => {
                self.interpreter.itergrad_steps = parse_num(key, v, "an integer")?
            }
            "itergrad_alpha" => {
                self.interpreter.itergrad_alpha = Some(parse_num(key, v, "a number")?)
            }
            "integrad_points" => {
                self.interpreter.integrad_points = parse_num(key, v, "an integer")?
            }
            "interpret_seed" => self.interpreter.seed = parse_num(key, v, "an integer")?,
            "rounds" => self.align.rounds = parse_num(key, v, "an integer")?,
            "align_learning_rate" => {
                self.align.learning_rate = parse_num(key, v, "a number")?
            }
            "epochs_per_round" => {
                self.align.epochs_per_round = parse_num(key, v, "an integer")?
            }
            "align_batch_size" => self.align.batch_size = parse_num(key, v, "an integer")?,
            "neighborhood" => self.align.neighborhood = parse_num(key, v, "an integer")?,
            "align_epsilon" => self.align.epsilon = parse_num(key, v, "a number")?,
            "align_seed" => self.align.seed = parse_num(key, v, "an integer")?,
            "valid_frac" => self.valid_frac = parse_num(key, v, "a number")?,
            "test_frac" => self.test_frac = parse_num(key, v, "a number")?,
            "split_seed" => self.split_seed = parse_num(key, v, "an integer")?,
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Read a flat `key = value` file. `#` starts a comment line; blank
    /// lines are skipped.
    pub fn load_file(&mut self, path: &Path) -> Result<()> {
        let display = path.display().to_string();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Malformed {
                path: display.clone(),
                line: i + 1,
                message: "expected key = value".into(),
            })?;
            self.apply(key.trim(), value).map_err(|e| Error::Malformed {
                path: display.clone(),
                line: i + 1,
                message: e.to_string(),
            })?;
        }
        Ok(())
    }

    /// Check cross-field requirements before any compute.
    pub fn validate(&self) -> Result<()> {
        if self.arch != "attention" && self.arch != "bag" {
            return Err(Error::InvalidConfig(format!(
                "arch must be attention or bag, got {:?}",
                self.arch
            )));
        }
        if self.methods.is_empty() {
            return Err(Error::InvalidConfig("methods list is empty".into()));
        }
        if self.metrics.is_empty() {
            return Err(Error::InvalidConfig("metrics list is empty".into()));
        }
        if self.sample_size == 0 {
            return Err(Error::InvalidConfig("sample must be positive".into()));
        }
        if self.arch == "bag" {
            if self.metrics.contains(&DefKind::Mma) {
                return Err(Error::InvalidConfig(
                    "the masking metric needs the attention architecture".into(),
                ));
            }
            if self.methods.contains(&Method::RankMask) {
                return Err(Error::InvalidConfig(
                    "rankmask needs the attention architecture".into(),
                ));
            }
        }
        for kind in &self.metrics {
            self.budget_for(*kind).validate()?;
        }
        if self.corpus_path.is_some() != self.embeddings_path.is_some() {
            return Err(Error::InvalidConfig(
                "corpus and embeddings must be given together".into(),
            ));
        }
        if !(self.valid_frac >= 0.0 && self.test_frac >= 0.0 && self.valid_frac + self.test_frac < 1.0)
        {
            return Err(Error::InvalidConfig(
                "valid_frac and test_frac must be nonnegative and sum below 1".into(),
            ));
        }
        Ok(())
    }

    pub fn budget_for(&self, kind: DefKind) -> MetricBudget {
        match kind {
            DefKind::Csa => MetricBudget::Csa { epsilons: self.csa_grid.clone() },
            DefKind::Era => MetricBudget::Era { sizes: self.era_grid.clone() },
            DefKind::Mma => MetricBudget::Mma { sizes: self.mma_grid.clone() },
        }
    }
}

/// Corpus splits plus the vocabulary that embeds them.
#[derive(Debug, Clone)]
pub struct DataBundle {
    /// The corpus before splitting, in its on-disk order.
    pub full: Corpus,
    pub train: Corpus,
    pub valid: Corpus,
    pub test: Corpus,
    pub table: EmbeddingTable,
    pub ingest_stats: Option<IngestStats>,
    /// Sentiment vocabulary when the data was synthesized.
    pub planted_rationale: Option<Vec<String>>,
}

/// Load or synthesize the corpus and split it.
pub fn prepare_data(cfg: &ExperimentConfig) -> Result<DataBundle> {
    let (corpus, table, stats, planted) = match (&cfg.corpus_path, &cfg.embeddings_path) {
        (Some(corpus_path), Some(embeddings_path)) => {
            let (corpus, table, stats) = ingest(corpus_path, embeddings_path, Split::Train)?;
            (corpus, table, Some(stats), None)
        }
        _ => {
            let synth = synthesize(&cfg.synth)?;
            (synth.corpus, synth.table, None, Some(synth.rationale_tokens))
        }
    };
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let (train, valid, test) = corpus.partition(cfg.valid_frac, cfg.test_frac, cfg.split_seed);
    Ok(DataBundle {
        full: corpus,
        train,
        valid,
        test,
        table,
        ingest_stats: stats,
        planted_rationale: planted,
    })
}

/// Deterministically pick up to `size` instances (shuffled order kept so
/// reruns pair up).
pub fn sample_instances(
    corpus: &Corpus,
    table: &EmbeddingTable,
    size: usize,
    seed: u64,
) -> Result<Vec<EmbeddedText>> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut order: Vec<usize> = (0..corpus.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    order.truncate(size.min(corpus.len()));
    order
        .iter()
        .map(|&i| table.embed(&corpus.instances[i].tokens))
        .collect()
}

/// The evaluation sample comes from the test split, falling back to the
/// training split when no test fraction was held out.
fn evaluation_pool<'a>(data: &'a DataBundle) -> &'a Corpus {
    if data.test.is_empty() {
        &data.train
    } else {
        &data.test
    }
}

fn build_model(cfg: &ExperimentConfig, dim: usize, classes: usize) -> ClassifierModel {
    if cfg.arch == "bag" {
        ClassifierModel::bag(dim, Some(cfg.hidden), classes, cfg.pooling, cfg.train.seed)
    } else {
        ClassifierModel::attention(dim, cfg.hidden, classes, cfg.activation, cfg.train.seed)
    }
}

/// Resolve the smoothing noise std against the corpus scale.
fn resolve_sigma(cfg: &ExperimentConfig, data: &DataBundle) -> Result<InterpreterConfig> {
    let mut interpreter = cfg.interpreter.clone();
    if cfg.sigma_scale > 0.0 {
        interpreter.smoothgrad_sigma = cfg.sigma_scale * mean_word_norm(&data.train, &data.table)?;
    }
    Ok(interpreter)
}

fn record_seeds(manifest: &mut Manifest, cfg: &ExperimentConfig) {
    manifest
        .seed("data", cfg.synth.seed)
        .seed("split", cfg.split_seed)
        .seed("train", cfg.train.seed)
        .seed("sample", cfg.sample_seed)
        .seed("interpret", cfg.interpreter.seed)
        .seed("align", cfg.align.seed);
    manifest
        .setting("arch", &cfg.arch)
        .setting("hidden", cfg.hidden)
        .setting("sample", cfg.sample_size)
        .setting("epsilon", cfg.interpreter.epsilon);
}

fn with_stage<T>(
    manifest: &mut Manifest,
    manifest_path: &Path,
    stage: &'static str,
    f: impl FnOnce(&mut Manifest) -> Result<(T, Vec<String>)>,
) -> Result<T> {
    manifest.begin_stage(stage);
    manifest.write(manifest_path)?;
    match f(manifest) {
        Ok((value, outputs)) => {
            manifest.complete_stage(stage, &outputs);
            manifest.write(manifest_path)?;
            Ok(value)
        }
        Err(e) => Err(e.in_stage(stage)),
    }
}

fn data_stage(
    cfg: &ExperimentConfig,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<(DataBundle, Vec<String>)> {
    let data = prepare_data(cfg)?;
    let mut outputs = Vec::new();
    if data.planted_rationale.is_some() {
        // persist the synthesized inputs so the run can be replayed from files
        write_corpus(&out.join("corpus.jsonl"), &data.full, &data.table)?;
        write_embeddings(&out.join("embeddings.txt"), &data.table)?;
        outputs.push("corpus.jsonl".to_string());
        outputs.push("embeddings.txt".to_string());
        if let Some(tokens) = &data.planted_rationale {
            write_rationale_types(&out.join("rationale.json"), tokens)?;
            outputs.push("rationale.json".to_string());
        }
    }
    if let Some(stats) = data.ingest_stats {
        manifest
            .setting("ingest_kept", stats.kept)
            .setting("ingest_dropped_short", stats.dropped_short)
            .setting("ingest_unknown_tokens", stats.unknown_tokens);
    }
    manifest
        .setting("train_instances", data.train.len())
        .setting("valid_instances", data.valid.len())
        .setting("test_instances", data.test.len());
    Ok((data, outputs))
}

fn train_stage(
    cfg: &ExperimentConfig,
    data: &DataBundle,
    out: &Path,
    manifest: &mut Manifest,
) -> Result<(ClassifierModel, Vec<String>)> {
    let classes = data.train.class_count().max(2);
    let model = match &cfg.model_path {
        Some(path) => load_checkpoint(path)?,
        None => {
            let init = build_model(cfg, data.table.dim(), classes);
            train(&init, &data.train, &data.table, &cfg.train)?.model
        }
    };
    let path = out.join("model.json");
    save_checkpoint(&model, &path)?;
    let pool = evaluation_pool(data);
    manifest.setting("eval_accuracy", format!("{:.4}", accuracy(&model, pool, &data.table)?));
    Ok((model, vec!["model.json".to_string()]))
}

/// Markdown table of mean drops, one row per method, plus the per-budget
/// winner line.
fn summarize(curves: &[EvaluationCurve], kind: DefKind) -> String {
    let group: Vec<&EvaluationCurve> = curves.iter().filter(|c| c.metric == kind).collect();
    let mut text = String::new();
    let Some(first) = group.first() else {
        return text;
    };
    let _ = writeln!(text, "## {kind} metric\n");
    let budgets: Vec<f64> = first.points.iter().map(|p| p.budget).collect();
    let _ = write!(text, "| method |");
    for b in &budgets {
        let _ = write!(text, " {b} |");
    }
    let _ = writeln!(text);
    let _ = write!(text, "|---|");
    for _ in &budgets {
        let _ = write!(text, "---|");
    }
    let _ = writeln!(text);
    for curve in &group {
        let _ = write!(text, "| {} |", curve.method);
        for p in &curve.points {
            let _ = write!(text, " {:.4} |", p.mean_drop);
        }
        let _ = writeln!(text);
    }
    let _ = write!(text, "| best |");
    for j in 0..budgets.len() {
        let winner = group
            .iter()
            .max_by(|a, b| a.points[j].mean_drop.total_cmp(&b.points[j].mean_drop))
            .map(|c| c.method.name())
            .unwrap_or("-");
        let _ = write!(text, " {winner} |");
    }
    let _ = writeln!(text);
    let _ = writeln!(text);
    text
}

fn metric_axis_label(kind: DefKind) -> &'static str {
    match kind {
        DefKind::Csa => "ball radius",
        DefKind::Era => "words erased",
        DefKind::Mma => "positions masked",
    }
}

/// Full pipeline: data, train, then one sweep per requested metric.
/// Writes curves.csv, one SVG per metric, summary.md, model.json, and
/// manifest.json into `out`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest::new();
    record_seeds(&mut manifest, cfg);

    let data = with_stage(&mut manifest, &manifest_path, "data", |m| {
        data_stage(cfg, out, m)
    })?;
    let model = with_stage(&mut manifest, &manifest_path, "train", |m| {
        train_stage(cfg, &data, out, m)
    })?;

    with_stage(&mut manifest, &manifest_path, "evaluate", |_| {
        let sample = sample_instances(
            evaluation_pool(&data),
            &data.table,
            cfg.sample_size,
            cfg.sample_seed,
        )?;
        let interpreter = resolve_sigma(cfg, &data)?;
        let mut outputs = Vec::new();
        let mut all_curves = Vec::new();
        for &kind in &cfg.metrics {
            let methods: Vec<Method> = cfg.methods.clone();
            let curves = sweep(&model, &sample, &methods, &cfg.budget_for(kind), &interpreter)?;
            let svg_name = format!("curves_{kind}.svg");
            write_text(
                &out.join(&svg_name),
                &curves_plot(
                    &curves,
                    &format!("{} metric, {} model", kind, cfg.arch),
                    metric_axis_label(kind),
                ),
            )?;
            outputs.push(svg_name);
            all_curves.extend(curves);
        }
        write_curves(&out.join("curves.csv"), &all_curves)?;
        outputs.push("curves.csv".to_string());

        let mut summary = format!(
            "# Interpretation evaluation\n\n\
             architecture: {} (hidden {}), sample {} of {} instances\n\n",
            cfg.arch,
            cfg.hidden,
            sample.len(),
            evaluation_pool(&data).len(),
        );
        for &kind in &cfg.metrics {
            summary.push_str(&summarize(&all_curves, kind));
        }
        write_text(&out.join("summary.md"), &summary)?;
        outputs.push("summary.md".to_string());
        Ok(((), outputs))
    })?;
    Ok(())
}

/// Generate a synthetic corpus and write it out with its embeddings and
/// planted rationale.
pub fn run_synth(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.corpus_path = None;
    cfg.embeddings_path = None;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest::new();
    record_seeds(&mut manifest, &cfg);
    with_stage(&mut manifest, &manifest_path, "data", |m| {
        data_stage(&cfg, out, m)
    })?;
    Ok(())
}

/// Data and training stages only; leaves model.json and manifest.json.
pub fn run_train(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest::new();
    record_seeds(&mut manifest, cfg);
    let data = with_stage(&mut manifest, &manifest_path, "data", |m| {
        data_stage(cfg, out, m)
    })?;
    with_stage(&mut manifest, &manifest_path, "train", |m| {
        train_stage(cfg, &data, out, m)
    })?;
    Ok(())
}

/// Attribute a sample under one method and write the records as JSONL.
pub fn run_interpret(cfg: &ExperimentConfig, method: Method, out: &Path) -> Result<()> {
    let mut cfg = cfg.clone();
    cfg.methods = vec![method];
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest::new();
    record_seeds(&mut manifest, &cfg);
    manifest.setting("method", method.name());

    let data = with_stage(&mut manifest, &manifest_path, "data", |m| {
        data_stage(&cfg, out, m)
    })?;
    let model = with_stage(&mut manifest, &manifest_path, "train", |m| {
        train_stage(&cfg, &data, out, m)
    })?;
    with_stage(&mut manifest, &manifest_path, "interpret", |m| {
        let sample = sample_instances(
            evaluation_pool(&data),
            &data.table,
            cfg.sample_size,
            cfg.sample_seed,
        )?;
        let interpreter = resolve_sigma(&cfg, &data)?;
        let (records, skipped) = attribution_records(&model, &sample, method, &interpreter)?;
        write_attributions(&out.join("attributions.jsonl"), &records)?;
        m.setting("attributed", records.len())
            .setting("skipped_zero_gradient", skipped);
        Ok(((), vec!["attributions.jsonl".to_string()]))
    })?;
    Ok(())
}

/// Attribution records for a sample under one method; instances with no
/// usable gradient direction are skipped and counted.
pub fn attribution_records(
    model: &ClassifierModel,
    sample: &[EmbeddedText],
    method: Method,
    interpreter: &InterpreterConfig,
) -> Result<(Vec<AttributionRecord>, usize)> {
    let mut records = Vec::with_capacity(sample.len());
    let mut skipped = 0;
    for (i, x) in sample.iter().enumerate() {
        let c = model.predict_class(x)?;
        let mut icfg = interpreter.clone();
        icfg.seed = interpreter.seed.wrapping_add(i as u64);
        match run_method(model, x, c, method, &icfg) {
            Ok(attr) => records.push(AttributionRecord::new(&attr, x)),
            Err(Error::ZeroGradient { .. }) => skipped += 1,
            Err(e) => return Err(e),
        }
    }
    Ok((records, skipped))
}

/// Rationale-guided retraining pipeline: data, train, retrain; writes
/// alignment.csv, alignment.svg, the retrained model, and manifest.json.
pub fn run_alignment(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out.display().to_string(), e))?;
    let manifest_path = out.join("manifest.json");
    let mut manifest = Manifest::new();
    record_seeds(&mut manifest, cfg);

    let data = with_stage(&mut manifest, &manifest_path, "data", |m| {
        data_stage(cfg, out, m)
    })?;
    let model = with_stage(&mut manifest, &manifest_path, "train", |m| {
        train_stage(cfg, &data, out, m)
    })?;

    with_stage(&mut manifest, &manifest_path, "align", |m| {
        let rationale = match &cfg.rationale_path {
            Some(path) => read_rationale(path)?,
            None => match &data.planted_rationale {
                Some(tokens) => RationaleSpec::Types(tokens.clone()),
                None => {
                    return Err(Error::MissingRationale {
                        path: "(no rationale configured)".into(),
                    })
                }
            },
        };
        let heldout = evaluation_pool(&data);
        let (aligned, report) =
            alignment_retrain(model, &data.train, heldout, &data.table, &rationale, &cfg.align)?;
        save_checkpoint(&aligned, &out.join("model_aligned.json"))?;
        write_alignment(&out.join("alignment.csv"), &report.rounds)?;
        write_text(&out.join("alignment.svg"), &alignment_plot(&report.rounds))?;
        let excluded: usize = report.excluded_per_round.iter().copied().max().unwrap_or(0);
        m.setting("align_excluded_max", excluded);
        Ok((
            (),
            vec![
                "model_aligned.json".to_string(),
                "alignment.csv".to_string(),
                "alignment.svg".to_string(),
            ],
        ))
    })?;
    Ok(())
}
