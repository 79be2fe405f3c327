//! Corpora, embedding tables, and a synthetic classification task.
//!
//! Wire formats are deliberately plain: corpora are JSON lines with a
//! `text` token list and integer `label`, embeddings are
//! `token v1 .. vd` per line. Both round-trip `f64` values exactly
//! (shortest-representation printing, correctly rounded parsing).
//!
//! The synthetic task plants its signal in the vocabulary: two tight
//! clusters of sentiment tokens sit at +1/-1 on embedding coordinate 0,
//! neutral tokens sit at exactly 0 there, and every sentiment word in an
//! instance carries that instance's label (ties are never generated). The
//! task is therefore linearly separable, a token-counting oracle gets 100%,
//! and the sentiment tokens form a planted word-level rationale.

use rand::seq::SliceRandom;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, BufWriter, Write};
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::EmbeddedText;

/// Ingestion drops texts shorter than this.
pub const MIN_TEXT_LEN: usize = 5;

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Vocabulary with one embedding row per token. Index 0 is always the pad
/// token with the all-zeros embedding; erasure relies on that row.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    matrix: Tensor,
}

impl EmbeddingTable {
    pub fn new(dim: usize) -> Self {
        EmbeddingTable {
            tokens: vec![PAD_TOKEN.to_string()],
            index: HashMap::from([(PAD_TOKEN.to_string(), 0)]),
            matrix: Tensor::zeros(vec![1, dim]),
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false // the pad row is always present
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens
            .get(id)
            .map(String::as_str)
            .ok_or(Error::TokenOutOfRange {
                id,
                vocab: self.tokens.len(),
            })
    }

    pub fn index_of(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Row id used for tokens outside the vocabulary: the `<unk>` row when
    /// the table has one, the pad row otherwise.
    pub fn unk_id(&self) -> usize {
        self.index_of(UNK_TOKEN).unwrap_or(0)
    }

    pub fn embedding(&self, id: usize) -> Result<&[f64]> {
        if id >= self.len() {
            return Err(Error::TokenOutOfRange {
                id,
                vocab: self.len(),
            });
        }
        Ok(self.matrix.row(id))
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn add(&mut self, token: &str, embedding: &[f64]) -> Result<usize> {
        if embedding.len() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: embedding.len(),
            });
        }
        if self.index.contains_key(token) {
            return Err(Error::InvalidConfig(format!("duplicate token {token:?}")));
        }
        let id = self.tokens.len();
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        let mut data = self.matrix.data().to_vec();
        data.extend_from_slice(embedding);
        self.matrix = Tensor::new(vec![id + 1, self.dim()], data);
        Ok(id)
    }

    /// Gather embedding rows for a token id sequence.
    pub fn embed(&self, ids: &[usize]) -> Result<EmbeddedText> {
        let mut data = Vec::with_capacity(ids.len() * self.dim());
        for &id in ids {
            data.extend_from_slice(self.embedding(id)?);
        }
        EmbeddedText::new(ids.to_vec(), Tensor::new(vec![ids.len(), self.dim()], data))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl std::fmt::Display for Split {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub tokens: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub instances: Vec<Instance>,
    pub split: Split,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    /// Highest label + 1.
    pub fn class_count(&self) -> usize {
        self.instances.iter().map(|i| i.label + 1).max().unwrap_or(0)
    }

    pub fn embed_all(&self, table: &EmbeddingTable) -> Result<Vec<EmbeddedText>> {
        self.instances.iter().map(|i| table.embed(&i.tokens)).collect()
    }

    /// Deterministically split off validation and test fractions.
    pub fn partition(&self, valid_frac: f64, test_frac: f64, seed: u64) -> (Corpus, Corpus, Corpus) {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        order.shuffle(&mut rng);
        let n_valid = (self.len() as f64 * valid_frac).round() as usize;
        let n_test = (self.len() as f64 * test_frac).round() as usize;
        let take = |ids: &[usize], split: Split| Corpus {
            instances: ids.iter().map(|&i| self.instances[i].clone()).collect(),
            split,
        };
        let (valid_ids, rest) = order.split_at(n_valid.min(order.len()));
        let (test_ids, train_ids) = rest.split_at(n_test.min(rest.len()));
        (
            take(train_ids, Split::Train),
            take(valid_ids, Split::Valid),
            take(test_ids, Split::Test),
        )
    }
}

/// What ingestion kept and dropped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IngestStats {
    pub kept: usize,
    /// Texts dropped for having fewer than [`MIN_TEXT_LEN`] tokens.
    pub dropped_short: usize,
    /// Token occurrences mapped to the unknown row.
    pub unknown_tokens: usize,
}

#[derive(Serialize, Deserialize)]
struct WireInstance {
    text: Vec<String>,
    label: usize,
}

/// Load a whitespace-separated embedding file: one `token v1 .. vd` row per
/// line. The pad row is synthesized at index 0 if the file does not list
/// one; a listed `<pad>` row must be all zeros.
pub fn read_embeddings(path: &Path) -> Result<EmbeddingTable> {
    let display = path.display().to_string();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let malformed = |line: usize, message: String| Error::Malformed {
        path: display.clone(),
        line,
        message,
    };

    let mut table: Option<EmbeddingTable> = None;
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let mut parts = raw.split_whitespace();
        let token = parts.next().expect("non-empty line");
        let values: Vec<f64> = parts
            .map(|p| {
                p.parse::<f64>()
                    .map_err(|_| malformed(line_no, format!("bad float {p:?}")))
            })
            .collect::<Result<_>>()?;
        if values.is_empty() {
            return Err(malformed(line_no, "no embedding values".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(malformed(line_no, "non-finite embedding value".into()));
        }
        let table = match &mut table {
            Some(t) => {
                if values.len() != t.dim() {
                    return Err(malformed(
                        line_no,
                        format!("expected {} values, found {}", t.dim(), values.len()),
                    ));
                }
                t
            }
            None => table.insert(EmbeddingTable::new(values.len())),
        };
        if token == PAD_TOKEN {
            if values.iter().any(|v| *v != 0.0) {
                return Err(malformed(line_no, format!("{PAD_TOKEN} row must be all zeros")));
            }
            continue; // already present at index 0
        }
        table
            .add(token, &values)
            .map_err(|e| malformed(line_no, e.to_string()))?;
    }
    table.ok_or_else(|| malformed(0, "no embedding rows".into()))
}

pub fn write_embeddings(path: &Path, table: &EmbeddingTable) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    let write = |out: &mut BufWriter<std::fs::File>, id: usize| -> std::io::Result<()> {
        write!(out, "{}", table.tokens[id])?;
        for v in table.matrix.row(id) {
            write!(out, " {v}")?;
        }
        writeln!(out)
    };
    for id in 0..table.len() {
        write(&mut out, id).map_err(|e| Error::io(&display, e))?;
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

/// Read a JSONL corpus against an existing vocabulary. Texts shorter than
/// [`MIN_TEXT_LEN`] are dropped and counted; unknown tokens map to
/// [`EmbeddingTable::unk_id`] and are counted.
pub fn read_corpus(path: &Path, table: &EmbeddingTable, split: Split) -> Result<(Corpus, IngestStats)> {
    let display = path.display().to_string();
    let file = std::fs::File::open(path).map_err(|e| Error::io(&display, e))?;
    let reader = std::io::BufReader::new(file);

    let mut stats = IngestStats::default();
    let mut instances = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| Error::io(&display, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let wire: WireInstance = serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: display.clone(),
            line: line_no,
            message: e.to_string(),
        })?;
        if wire.text.len() < MIN_TEXT_LEN {
            stats.dropped_short += 1;
            continue;
        }
        let tokens = wire
            .text
            .iter()
            .map(|t| match table.index_of(t) {
                Some(id) => id,
                None => {
                    stats.unknown_tokens += 1;
                    table.unk_id()
                }
            })
            .collect();
        instances.push(Instance {
            tokens,
            label: wire.label,
        });
        stats.kept += 1;
    }
    if instances.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    Ok((Corpus { instances, split }, stats))
}

/// Load a corpus and its embedding table together.
pub fn ingest(
    corpus_path: &Path,
    embeddings_path: &Path,
    split: Split,
) -> Result<(Corpus, EmbeddingTable, IngestStats)> {
    let table = read_embeddings(embeddings_path)?;
    let (corpus, stats) = read_corpus(corpus_path, &table, split)?;
    Ok((corpus, table, stats))
}

pub fn write_corpus(path: &Path, corpus: &Corpus, table: &EmbeddingTable) -> Result<()> {
    let display = path.display().to_string();
    let file = std::fs::File::create(path).map_err(|e| Error::io(&display, e))?;
    let mut out = BufWriter::new(file);
    for inst in &corpus.instances {
        let text = inst
            .tokens
            .iter()
            .map(|&id| table.token(id).map(str::to_string))
            .collect::<Result<Vec<_>>>()?;
        let wire = WireInstance {
            text,
            label: inst.label,
        };
        serde_json::to_writer(&mut out, &wire)?;
        writeln!(out).map_err(|e| Error::io(&display, e))?;
    }
    out.flush().map_err(|e| Error::io(&display, e))
}

/// Mean embedding-row norm over every word occurrence in the corpus; the
/// scale reference for gradient-smoothing noise.
pub fn mean_word_norm(corpus: &Corpus, table: &EmbeddingTable) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for inst in &corpus.instances {
        for &id in &inst.tokens {
            let row = table.embedding(id)?;
            total += row.iter().map(|v| v * v).sum::<f64>().sqrt();
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyCorpus);
    }
    Ok(total / count as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    /// Total vocabulary size including the pad token.
    pub vocab: usize,
    pub dim: usize,
    pub min_len: usize,
    pub max_len: usize,
    pub instances: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab: 64,
            dim: 8,
            min_len: 5,
            max_len: 12,
            instances: 1200,
            seed: 11,
        }
    }
}

/// A generated corpus plus everything tests and the alignment pipeline need
/// to know about where the signal was planted.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub table: EmbeddingTable,
    /// Sentiment token names; the planted rationale vocabulary.
    pub rationale_tokens: Vec<String>,
    pub positive_ids: Vec<usize>,
    pub negative_ids: Vec<usize>,
}

/// Generate the planted-signal binary task described in the module docs.
pub fn synthesize(cfg: &SynthConfig) -> Result<SynthOutput> {
    if cfg.vocab < 4 {
        return Err(Error::InvalidConfig(
            "synthetic vocabulary needs at least 4 tokens (pad, positive, negative, neutral)".into(),
        ));
    }
    if cfg.dim < 2 {
        return Err(Error::InvalidConfig("synthetic embeddings need dim >= 2".into()));
    }
    if cfg.min_len < 1 || cfg.min_len > cfg.max_len {
        return Err(Error::InvalidConfig(format!(
            "bad length range {}..={}",
            cfg.min_len, cfg.max_len
        )));
    }
    if cfg.instances == 0 {
        return Err(Error::InvalidConfig("instance count must be positive".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let per_class = ((cfg.vocab - 1) / 7).max(1);
    let noise = Normal::new(0.0, 0.02).expect("valid std");

    let mut table = EmbeddingTable::new(cfg.dim);
    let mut positive_ids = Vec::new();
    let mut negative_ids = Vec::new();
    let mut neutral_ids = Vec::new();
    let mut rationale_tokens = Vec::new();

    // Sentiment clusters: exactly +/-1 on coordinate 0, tight noise elsewhere,
    // so each cluster's members are mutually nearest neighbors.
    for (sign, ids, prefix) in [
        (1.0, &mut positive_ids, "pos"),
        (-1.0, &mut negative_ids, "neg"),
    ] {
        for i in 0..per_class {
            let mut row = vec![0.0; cfg.dim];
            row[0] = sign;
            for v in row.iter_mut().skip(1) {
                *v = noise.sample(&mut rng);
            }
            let name = format!("{prefix}{i}");
            ids.push(table.add(&name, &row)?);
            rationale_tokens.push(name);
        }
    }
    // Neutral tokens: exactly 0 on the sentiment coordinate.
    for i in 0..cfg.vocab - 1 - 2 * per_class {
        let mut row = vec![0.0; cfg.dim];
        for v in row.iter_mut().skip(1) {
            *v = rng.random_range(-0.6..0.6);
        }
        neutral_ids.push(table.add(&format!("w{i}"), &row)?);
    }
    if neutral_ids.is_empty() {
        // vocab barely fits the sentiment sets; reuse pad as the only filler
        neutral_ids.push(0);
    }

    let mut instances = Vec::with_capacity(cfg.instances);
    for _ in 0..cfg.instances {
        let n = rng.random_range(cfg.min_len..=cfg.max_len);
        let label = rng.random_range(0..2usize);
        // every sentiment word carries the label's polarity, so counting
        // never ties and the count oracle stays exact at any density
        let sentiment_count = rng.random_range(1..=n.min(4));
        let signal_ids = if label == 1 { &positive_ids } else { &negative_ids };
        let mut tokens = Vec::with_capacity(n);
        for _ in 0..sentiment_count {
            tokens.push(signal_ids[rng.random_range(0..signal_ids.len())]);
        }
        for _ in 0..n - sentiment_count {
            tokens.push(neutral_ids[rng.random_range(0..neutral_ids.len())]);
        }
        tokens.shuffle(&mut rng);
        instances.push(Instance { tokens, label });
    }

    Ok(SynthOutput {
        corpus: Corpus {
            instances,
            split: Split::Train,
        },
        table,
        rationale_tokens,
        positive_ids,
        negative_ids,
    })
}

/// Human-marked important words, either as vocabulary types or as explicit
/// word positions per instance index.
#[derive(Debug, Clone, PartialEq)]
pub enum RationaleSpec {
    /// Token names marked important.
    Types(Vec<String>),
    /// Instance index (0-based, in corpus order) to 0-based word positions.
    Positions(BTreeMap<usize, Vec<usize>>),
}

/// Parse a rationale file: a JSON object mapping either token -> bool
/// (type-level) or instance index -> position list (instance-level).
pub fn read_rationale(path: &Path) -> Result<RationaleSpec> {
    let display = path.display().to_string();
    if !path.exists() {
        return Err(Error::MissingRationale { path: display });
    }
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(&display, e))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let malformed = |message: &str| Error::Malformed {
        path: display.clone(),
        line: 1,
        message: message.into(),
    };
    let obj = value.as_object().ok_or_else(|| malformed("expected a JSON object"))?;
    if obj.is_empty() {
        return Err(malformed("rationale object is empty"));
    }
    if obj.values().all(|v| v.is_boolean()) {
        let tokens = obj
            .iter()
            .filter(|(_, v)| v.as_bool() == Some(true))
            .map(|(k, _)| k.clone())
            .collect();
        return Ok(RationaleSpec::Types(tokens));
    }
    if obj.values().all(|v| v.is_array()) {
        let mut map = BTreeMap::new();
        for (k, v) in obj {
            let idx: usize = k
                .parse()
                .map_err(|_| malformed(&format!("instance key {k:?} is not an index")))?;
            let positions = v
                .as_array()
                .expect("checked array")
                .iter()
                .map(|p| {
                    p.as_u64()
                        .map(|p| p as usize)
                        .ok_or_else(|| malformed("positions must be non-negative integers"))
                })
                .collect::<Result<Vec<_>>>()?;
            map.insert(idx, positions);
        }
        return Ok(RationaleSpec::Positions(map));
    }
    Err(malformed(
        "values must be all booleans (token level) or all arrays (instance level)",
    ))
}

/// Write a type-level rationale file marking each token important.
pub fn write_rationale_types(path: &Path, tokens: &[String]) -> Result<()> {
    let display = path.display().to_string();
    let map: BTreeMap<&str, bool> = tokens.iter().map(|t| (t.as_str(), true)).collect();
    let text = serde_json::to_string_pretty(&map)?;
    std::fs::write(path, text).map_err(|e| Error::io(&display, e))
}
